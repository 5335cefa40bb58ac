#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace esr {

inline constexpr int kSampleRate = 48000;
inline constexpr int kBitDepth = 16;
inline constexpr std::size_t kFrameSize = 1024;

/// Mono 48 kHz audio with samples in [-1, 1]. Immutable once built.
class SampleBuffer {
 public:
  SampleBuffer() = default;
  /// Throws ArgumentError if any sample lies outside [-1, 1] or is not finite.
  explicit SampleBuffer(std::vector<double> samples);

  std::span<const double> samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  int sample_rate() const noexcept { return kSampleRate; }
  int channels() const noexcept { return 1; }
  int bit_depth_origin() const noexcept { return kBitDepth; }
  double duration_s() const noexcept {
    return static_cast<double>(samples_.size()) / kSampleRate;
  }

  friend bool operator==(const SampleBuffer&, const SampleBuffer&) = default;

 private:
  std::vector<double> samples_;
};

/// One non-overlapping analysis window of kFrameSize samples.
struct Frame {
  Eigen::ArrayXd samples;
  std::size_t index = 0;

  double start_time() const noexcept {
    return static_cast<double>(index * kFrameSize) / kSampleRate;
  }
};

SampleBuffer decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const SampleBuffer& buf);

SampleBuffer read_wav_file(const std::filesystem::path& path);
void write_wav_file(const std::filesystem::path& path, const SampleBuffer& buf);

/// Splits into ceil(n/1024) frames; the last one is zero-padded.
std::vector<Frame> frame_stream(const SampleBuffer& buf);

/// Producer of sample chunks. next_chunk() returns nullopt at end of stream.
class AudioSource {
 public:
  virtual ~AudioSource() = default;
  virtual std::optional<std::vector<double>> next_chunk() = 0;
};

/// Replays a buffer in fixed-size chunks, optionally paced to wall-clock time.
class FileReplaySource : public AudioSource {
 public:
  explicit FileReplaySource(SampleBuffer buf, std::size_t chunk = kFrameSize,
                            bool realtime = false);
  std::optional<std::vector<double>> next_chunk() override;

 private:
  SampleBuffer buf_;
  std::size_t chunk_;
  bool realtime_;
  std::size_t pos_ = 0;
  std::optional<std::int64_t> started_ns_;
};

/// Incrementally cuts an arbitrary chunk stream into indexed frames.
class Framer {
 public:
  /// Appends samples and returns every frame completed by them.
  std::vector<Frame> push(std::span<const double> chunk);
  /// Emits the zero-padded partial frame, if any samples are pending.
  std::optional<Frame> flush();
  std::size_t frames_emitted() const noexcept { return next_index_; }

 private:
  std::vector<double> pending_;
  std::size_t next_index_ = 0;
};

}  // namespace esr
