#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "esr/audio_io.hpp"
#include "esr/dsp.hpp"

namespace esr {

struct AdmissionConfig {
  double rms_min = 0.01;
  double entropy_max_norm = 0.75;
  int hangover_frames = 14;
  double min_len_s = 0.4;
  double max_len_s = 2.7;

  /// Throws ArgumentError when a field violates its range.
  void validate() const;
  std::size_t min_frames() const;
  std::size_t max_frames() const;
};

enum class AdmitReason { amplitude, structure };

struct Admission {
  bool admitted = false;
  std::optional<AdmitReason> reason;
  double rms = 0.0;
  double entropy_norm = 1.0;
};

enum class EndReason { silence, max_length, user_stop };

std::string_view to_string(EndReason r) noexcept;
std::string_view to_string(AdmitReason r) noexcept;

struct SegmentEvent {
  std::vector<Frame> frames;
  double start_time = 0.0;
  double end_time = 0.0;
  EndReason end_reason = EndReason::silence;

  double duration() const noexcept { return end_time - start_time; }
};

double rms(const Eigen::Ref<const Eigen::ArrayXd>& frame);
/// Shannon entropy (natural log) of the magnitudes taken as a distribution.
double spectral_entropy(const MagnitudeSpectrum& spec);
Admission admit_frame(const Frame& frame, const AdmissionConfig& cfg);

/// Single-consumer segmentation state machine over an admitted-frame stream.
class Segmenter {
 public:
  explicit Segmenter(AdmissionConfig cfg = {});

  /// Feeds one frame; returns a segment when this frame closed one.
  std::optional<SegmentEvent> push(const Frame& frame);
  /// Same as push() with an admission decision computed by the caller.
  std::optional<SegmentEvent> push(const Frame& frame, const Admission& admission);
  /// Closes the open segment with end_reason user_stop (also used at end of input).
  std::optional<SegmentEvent> stop();

  bool open() const noexcept { return !frames_.empty(); }
  const AdmissionConfig& config() const noexcept { return cfg_; }

 private:
  std::optional<SegmentEvent> close(EndReason reason, std::size_t keep);

  AdmissionConfig cfg_;
  std::vector<Frame> frames_;
  std::size_t rejected_run_ = 0;
};

/// Runs a whole buffer through admission and segmentation, stopping at end of input.
std::vector<SegmentEvent> segment_buffer(const SampleBuffer& buf, const AdmissionConfig& cfg = {});

}  // namespace esr
