#include "esr/detection.hpp"

#include <cmath>

#include "esr/errors.hpp"

namespace esr {

namespace {

double frame_seconds(std::size_t frames) {
  return static_cast<double>(frames * kFrameSize) / kSampleRate;
}

const Eigen::ArrayXd& admission_window() {
  static const Eigen::ArrayXd w = hann_window(kFrameSize);
  return w;
}

}  // namespace

void AdmissionConfig::validate() const {
  if (!(rms_min > 0.0 && rms_min < 1.0)) throw ArgumentError("rms_min must be in (0, 1)");
  if (!(entropy_max_norm > 0.0 && entropy_max_norm <= 1.0)) {
    throw ArgumentError("entropy_max_norm must be in (0, 1]");
  }
  if (hangover_frames < 1) throw ArgumentError("hangover_frames must be >= 1");
  if (!(min_len_s > 0.0 && min_len_s < max_len_s)) {
    throw ArgumentError("min_len_s must be positive and below max_len_s");
  }
  if (max_frames() < 1) throw ArgumentError("max_len_s shorter than one frame");
}

std::size_t AdmissionConfig::min_frames() const {
  return static_cast<std::size_t>(std::ceil(min_len_s * kSampleRate / kFrameSize - 1e-9));
}

std::size_t AdmissionConfig::max_frames() const {
  return static_cast<std::size_t>(std::floor(max_len_s * kSampleRate / kFrameSize + 1e-9));
}

std::string_view to_string(EndReason r) noexcept {
  switch (r) {
    case EndReason::silence: return "silence";
    case EndReason::max_length: return "max_length";
    case EndReason::user_stop: return "user_stop";
  }
  return "?";
}

std::string_view to_string(AdmitReason r) noexcept {
  return r == AdmitReason::amplitude ? "amplitude" : "structure";
}

double rms(const Eigen::Ref<const Eigen::ArrayXd>& frame) {
  if (frame.size() == 0) throw ArgumentError("rms of empty frame");
  return std::sqrt(frame.square().mean());
}

double spectral_entropy(const MagnitudeSpectrum& spec) {
  const Eigen::Index n = spec.size();
  if (n == 0) throw ArgumentError("entropy of empty spectrum");
  const double total = spec.magnitudes.sum();
  if (total <= 0.0) return std::log(static_cast<double>(n));
  double h = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = spec.magnitudes(i) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Admission admit_frame(const Frame& frame, const AdmissionConfig& cfg) {
  Admission out;
  out.rms = rms(frame.samples);
  const Eigen::ArrayXd windowed =
      static_cast<std::size_t>(frame.samples.size()) == kFrameSize
          ? Eigen::ArrayXd(frame.samples * admission_window())
          : Eigen::ArrayXd(frame.samples * hann_window(static_cast<std::size_t>(frame.samples.size())));
  const auto spec = fft_magnitude(windowed);
  out.entropy_norm = spectral_entropy(spec) / std::log(static_cast<double>(spec.size()));
  if (out.rms >= cfg.rms_min) {
    out.admitted = true;
    out.reason = AdmitReason::amplitude;
  } else if (out.entropy_norm <= cfg.entropy_max_norm) {
    out.admitted = true;
    out.reason = AdmitReason::structure;
  }
  return out;
}

Segmenter::Segmenter(AdmissionConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::optional<SegmentEvent> Segmenter::push(const Frame& frame) {
  return push(frame, admit_frame(frame, cfg_));
}

std::optional<SegmentEvent> Segmenter::push(const Frame& frame, const Admission& admission) {
  if (frames_.empty()) {
    if (!admission.admitted) return std::nullopt;
    frames_.push_back(frame);
    rejected_run_ = 0;
  } else {
    frames_.push_back(frame);
    rejected_run_ = admission.admitted ? 0 : rejected_run_ + 1;
  }
  if (rejected_run_ >= static_cast<std::size_t>(cfg_.hangover_frames)) {
    return close(EndReason::silence, frames_.size() - rejected_run_);
  }
  if (frames_.size() >= cfg_.max_frames()) {
    return close(EndReason::max_length, frames_.size() - rejected_run_);
  }
  return std::nullopt;
}

std::optional<SegmentEvent> Segmenter::stop() {
  if (frames_.empty()) return std::nullopt;
  return close(EndReason::user_stop, frames_.size() - rejected_run_);
}

std::optional<SegmentEvent> Segmenter::close(EndReason reason, std::size_t keep) {
  std::vector<Frame> frames = std::move(frames_);
  frames_.clear();
  rejected_run_ = 0;
  frames.resize(keep);
  if (keep < cfg_.min_frames()) return std::nullopt;
  SegmentEvent ev;
  ev.start_time = frames.front().start_time();
  ev.end_time = ev.start_time + frame_seconds(frames.size());
  ev.end_reason = reason;
  ev.frames = std::move(frames);
  return ev;
}

std::vector<SegmentEvent> segment_buffer(const SampleBuffer& buf, const AdmissionConfig& cfg) {
  Segmenter seg(cfg);
  std::vector<SegmentEvent> out;
  for (const auto& f : frame_stream(buf)) {
    if (auto ev = seg.push(f)) out.push_back(std::move(*ev));
  }
  if (auto ev = seg.stop()) out.push_back(std::move(*ev));
  return out;
}

}  // namespace esr
