#include "esr/audio_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <thread>

#include "esr/errors.hpp"

namespace esr {

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) |
         (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

SampleBuffer::SampleBuffer(std::vector<double> samples) : samples_(std::move(samples)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const double s = samples_[i];
    if (!std::isfinite(s) || s < -1.0 || s > 1.0) {
      throw ArgumentError("sample " + std::to_string(i) + " outside [-1, 1]");
    }
  }
}

SampleBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    throw FormatError("not a RIFF/WAVE container");
  }
  std::optional<std::size_t> fmt_at;
  std::optional<std::size_t> data_at;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, pos + 4);
    if (tag_is(bytes, pos, "fmt ")) {
      if (size < 16 || pos + 8 + size > bytes.size()) {
        throw FormatError("truncated fmt chunk");
      }
      fmt_at = pos + 8;
    } else if (tag_is(bytes, pos, "data")) {
      if (pos + 8 + size > bytes.size()) throw FormatError("truncated data chunk");
      data_at = pos + 8;
      data_size = size;
      break;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!fmt_at) throw FormatError("missing fmt chunk");
  if (!data_at) throw FormatError("missing data chunk");

  const std::uint16_t audio_format = read_u16(bytes, *fmt_at);
  const std::uint16_t channels = read_u16(bytes, *fmt_at + 2);
  const std::uint32_t rate = read_u32(bytes, *fmt_at + 4);
  const std::uint16_t bits = read_u16(bytes, *fmt_at + 14);
  if (audio_format != 1) {
    throw UnsupportedFormatError("audio_format", "unsupported audio_format " +
                                                     std::to_string(audio_format) +
                                                     " (only PCM is accepted)");
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw UnsupportedFormatError(
        "sample_rate", "unsupported sample_rate " + std::to_string(rate) + " (need 48000)");
  }
  if (channels != 1) {
    throw UnsupportedFormatError(
        "channels", "unsupported channels " + std::to_string(channels) + " (need 1)");
  }
  if (bits != kBitDepth) {
    throw UnsupportedFormatError(
        "bits_per_sample", "unsupported bits_per_sample " + std::to_string(bits) + " (need 16)");
  }
  if (data_size % 2 != 0) throw FormatError("data chunk has odd byte count");

  std::vector<double> samples(data_size / 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto raw = static_cast<std::int16_t>(read_u16(bytes, *data_at + 2 * i));
    samples[i] = static_cast<double>(raw) / 32768.0;
  }
  return SampleBuffer(std::move(samples));
}

std::vector<std::uint8_t> encode_wav(const SampleBuffer& buf) {
  const auto n = static_cast<std::uint32_t>(buf.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * n);
  put_tag(out, "RIFF");
  put_u32(out, 36 + 2 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, kBitDepth);
  put_tag(out, "data");
  put_u32(out, 2 * n);
  for (double s : buf.samples()) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

SampleBuffer read_wav_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

void write_wav_file(const std::filesystem::path& path, const SampleBuffer& buf) {
  const auto bytes = encode_wav(buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DomainError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<Frame> frame_stream(const SampleBuffer& buf) {
  Framer framer;
  auto frames = framer.push(buf.samples());
  if (auto last = framer.flush()) frames.push_back(std::move(*last));
  return frames;
}

FileReplaySource::FileReplaySource(SampleBuffer buf, std::size_t chunk, bool realtime)
    : buf_(std::move(buf)), chunk_(std::max<std::size_t>(chunk, 1)), realtime_(realtime) {}

std::optional<std::vector<double>> FileReplaySource::next_chunk() {
  if (pos_ >= buf_.size()) return std::nullopt;
  if (realtime_) {
    const std::int64_t now = steady_ns();
    if (!started_ns_) started_ns_ = now;
    const auto due = *started_ns_ + static_cast<std::int64_t>(
                                        static_cast<double>(pos_) * 1e9 / kSampleRate);
    if (due > now) std::this_thread::sleep_for(std::chrono::nanoseconds(due - now));
  }
  const auto samples = buf_.samples();
  const std::size_t end = std::min(pos_ + chunk_, samples.size());
  std::vector<double> out(samples.begin() + static_cast<std::ptrdiff_t>(pos_),
                          samples.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end;
  return out;
}

std::vector<Frame> Framer::push(std::span<const double> chunk) {
  std::vector<Frame> out;
  for (double s : chunk) {
    pending_.push_back(s);
    if (pending_.size() == kFrameSize) {
      Frame f{Eigen::Map<const Eigen::ArrayXd>(pending_.data(), kFrameSize), next_index_++};
      out.push_back(std::move(f));
      pending_.clear();
    }
  }
  return out;
}

std::optional<Frame> Framer::flush() {
  if (pending_.empty()) return std::nullopt;
  Frame f{Eigen::ArrayXd::Zero(kFrameSize), next_index_++};
  for (std::size_t i = 0; i < pending_.size(); ++i) f.samples(static_cast<Eigen::Index>(i)) = pending_[i];
  pending_.clear();
  return f;
}

}  // namespace esr
