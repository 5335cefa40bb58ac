#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "esr/audio_io.hpp"
#include "esr/detection.hpp"
#include "esr/knowledge_base.hpp"

namespace esr {

/// Number of distinct generator classes available.
inline constexpr int kSynthClassCount = 30;

std::string synth_class_name(int class_index);

/// One parameter-jittered instance of a class, padded with quiet background noise.
SampleBuffer synth_instance(int class_index, std::mt19937_64& rng);

/// Features of a recording: its longest detected segment, or every frame when
/// nothing is detected.
FeatureVector54 recording_features(const SampleBuffer& buf, const AdmissionConfig& cfg = {});

struct SynthOptions {
  int classes = kSynthClassCount;
  int instances = 10;
  std::uint64_t seed = 1;
};

/// Builds a KB by pushing every instance through WAV encode/decode, detection and
/// feature extraction. With `out_dir`, writes WAVs and the manifest there.
KnowledgeBase synthesize_corpus(const SynthOptions& opts,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace esr
