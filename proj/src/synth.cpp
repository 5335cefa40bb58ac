#include "esr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>

#include "esr/dsp.hpp"
#include "esr/errors.hpp"
#include "esr/features.hpp"

namespace esr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFs = kSampleRate;

enum class Family {
  tone, harmonic, chirp, band_noise, white_noise, am, fm, clicks, bell, noisy_tone, chord,
  gated_noise, siren
};

struct ClassSpec {
  const char* name;
  Family family;
  double a = 0, b = 0, c = 0;  // family-specific parameters
};

// clang-format off
constexpr ClassSpec kClasses[kSynthClassCount] = {
    {"tone-300", Family::tone, 300},
    {"tone-700", Family::tone, 700},
    {"tone-1500", Family::tone, 1500},
    {"tone-3000", Family::tone, 3000},
    {"tone-6000", Family::tone, 6000},
    {"harmonic-150", Family::harmonic, 150},
    {"harmonic-400", Family::harmonic, 400},
    {"harmonic-900", Family::harmonic, 900},
    {"chirp-up", Family::chirp, 500, 4000},
    {"chirp-down", Family::chirp, 4000, 500},
    {"chirp-high", Family::chirp, 2000, 10000},
    {"noise-low", Family::band_noise, 100, 800},
    {"noise-mid", Family::band_noise, 1000, 3000},
    {"noise-high", Family::band_noise, 4000, 8000},
    {"noise-hiss", Family::band_noise, 8000, 16000},
    {"noise-white", Family::white_noise},
    {"am-slow", Family::am, 1000, 4},
    {"am-fast", Family::am, 2500, 12},
    {"fm-vibrato", Family::fm, 1200, 300, 5},
    {"fm-wide", Family::fm, 3500, 800, 2},
    {"clicks-slow", Family::clicks, 5},
    {"clicks-fast", Family::clicks, 20},
    {"bell-880", Family::bell, 880, 3},
    {"bell-2200", Family::bell, 2200, 6},
    {"noisy-tone", Family::noisy_tone, 500},
    {"chord-low", Family::chord, 440, 660},
    {"chord-high", Family::chord, 1000, 1300},
    {"rain", Family::gated_noise, 8},
    {"rumble", Family::band_noise, 40, 200},
    {"siren", Family::siren, 600, 1400, 0.5},
};
// clang-format on

std::vector<double> white(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

std::vector<double> band_limited(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::size_t size = 1;
  while (size < n) size <<= 1;
  const auto noise = white(size, rng);
  std::vector<std::complex<double>> spec(noise.begin(), noise.end());
  fft_in_place(spec);
  for (std::size_t k = 0; k < size; ++k) {
    const std::size_t mirrored = std::min(k, size - k);
    const double f = static_cast<double>(mirrored) * kFs / static_cast<double>(size);
    if (f < lo || f > hi) spec[k] = 0.0;
  }
  // Inverse through conjugation.
  for (auto& v : spec) v = std::conj(v);
  fft_in_place(spec);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real() / static_cast<double>(size);
  return out;
}

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (auto& v : x) v *= peak / m;
  }
}

std::vector<double> render(const ClassSpec& spec, std::size_t n, double jitter,
                           std::mt19937_64& rng) {
  std::vector<double> x(n, 0.0);
  std::uniform_real_distribution<double> phase_dist(0.0, kTwoPi);
  const double phase = phase_dist(rng);
  const auto t_of = [](std::size_t i) { return static_cast<double>(i) / kFs; };
  const double dur = static_cast<double>(n) / kFs;
  switch (spec.family) {
    case Family::tone:
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kTwoPi * spec.a * jitter * t_of(i) + phase);
      break;
    case Family::harmonic:
      for (std::size_t i = 0; i < n; ++i) {
        for (int h = 1; h <= 6; ++h) {
          x[i] += std::sin(kTwoPi * spec.a * jitter * h * t_of(i) + phase * h) / h;
        }
      }
      break;
    case Family::chirp: {
      const double f0 = spec.a * jitter;
      const double f1 = spec.b * jitter;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = t_of(i);
        x[i] = std::sin(kTwoPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t) + phase);
      }
      break;
    }
    case Family::band_noise:
      x = band_limited(n, spec.a * jitter, spec.b * jitter, rng);
      break;
    case Family::white_noise:
      x = white(n, rng);
      break;
    case Family::am:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = t_of(i);
        x[i] = (0.6 + 0.4 * std::sin(kTwoPi * spec.b * jitter * t)) *
               std::sin(kTwoPi * spec.a * jitter * t + phase);
      }
      break;
    case Family::fm:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = t_of(i);
        const double rate = spec.c * jitter;
        x[i] = std::sin(kTwoPi * spec.a * jitter * t +
                        spec.b / rate * std::sin(kTwoPi * rate * t) + phase);
      }
      break;
    case Family::clicks: {
      const auto period = static_cast<std::size_t>(kFs / (spec.a * jitter));
      const auto width = static_cast<std::size_t>(0.004 * kFs);
      const auto noise = white(n, rng);
      for (std::size_t start = 0; start < n; start += period) {
        for (std::size_t j = 0; j < width && start + j < n; ++j) {
          x[start + j] = noise[start + j] * std::exp(-static_cast<double>(j) / (0.001 * kFs));
        }
      }
      break;
    }
    case Family::bell:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = t_of(i);
        const double f = spec.a * jitter;
        x[i] = std::exp(-spec.b * t) *
               (std::sin(kTwoPi * f * t + phase) + 0.5 * std::sin(kTwoPi * 2.76 * f * t));
      }
      break;
    case Family::noisy_tone: {
      const auto noise = band_limited(n, 50, 12000, rng);
      double nmax = 0.0;
      for (double v : noise) nmax = std::max(nmax, std::abs(v));
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::sin(kTwoPi * spec.a * jitter * t_of(i) + phase) + 0.8 * noise[i] / nmax;
      }
      break;
    }
    case Family::chord:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = t_of(i);
        x[i] = std::sin(kTwoPi * spec.a * jitter * t + phase) +
               std::sin(kTwoPi * spec.b * jitter * t + 2.0 * phase);
      }
      break;
    case Family::gated_noise: {
      x = white(n, rng);
      const double rate = spec.a * jitter;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = 0.5 + 0.5 * std::sin(kTwoPi * rate * t_of(i) + phase);
        x[i] *= g * g;
      }
      break;
    }
    case Family::siren: {
      double acc = phase;
      const double mid = 0.5 * (spec.a + spec.b) * jitter;
      const double dev = 0.5 * (spec.b - spec.a) * jitter;
      for (std::size_t i = 0; i < n; ++i) {
        acc += kTwoPi * (mid + dev * std::sin(kTwoPi * spec.c * t_of(i))) / kFs;
        x[i] = std::sin(acc);
      }
      break;
    }
  }
  return x;
}

}  // namespace

std::string synth_class_name(int class_index) {
  if (class_index < 0 || class_index >= kSynthClassCount) {
    throw ArgumentError("synthetic class index out of range");
  }
  return kClasses[class_index].name;
}

SampleBuffer synth_instance(int class_index, std::mt19937_64& rng) {
  const ClassSpec& spec = kClasses[static_cast<std::size_t>(class_index)];
  (void)synth_class_name(class_index);
  std::uniform_real_distribution<double> dur_dist(0.7, 2.0);
  std::uniform_real_distribution<double> jitter_dist(0.97, 1.03);
  std::uniform_real_distribution<double> peak_dist(0.25, 0.6);
  const auto body_n = static_cast<std::size_t>(dur_dist(rng) * kFs);
  const double jitter = jitter_dist(rng);
  const double peak = peak_dist(rng);

  auto body = render(spec, body_n, jitter, rng);
  normalize_peak(body, peak);
  // 5 ms fades keep the edges from clicking.
  const auto fade = static_cast<std::size_t>(0.005 * kFs);
  for (std::size_t i = 0; i < fade && i < body.size(); ++i) {
    const double g = static_cast<double>(i) / static_cast<double>(fade);
    body[i] *= g;
    body[body.size() - 1 - i] *= g;
  }

  const auto pad = static_cast<std::size_t>(0.3 * kFs);
  auto background = white(body_n + 2 * pad, rng);
  std::vector<double> out(body_n + 2 * pad);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = 0.001 * background[i];
    if (i >= pad && i < pad + body_n) v += body[i - pad];
    out[i] = std::clamp(v, -1.0, 1.0);
  }
  return SampleBuffer(std::move(out));
}

FeatureVector54 recording_features(const SampleBuffer& buf, const AdmissionConfig& cfg) {
  const auto segments = segment_buffer(buf, cfg);
  if (segments.empty()) {
    const auto frames = frame_stream(buf);
    return extract_segment_features(frames);
  }
  const auto longest = std::max_element(
      segments.begin(), segments.end(),
      [](const SegmentEvent& a, const SegmentEvent& b) { return a.frames.size() < b.frames.size(); });
  return extract_segment_features(longest->frames);
}

KnowledgeBase synthesize_corpus(const SynthOptions& opts,
                                const std::optional<std::filesystem::path>& out_dir) {
  if (opts.classes < 1 || opts.classes > kSynthClassCount) {
    throw ArgumentError("classes must be between 1 and " + std::to_string(kSynthClassCount));
  }
  if (opts.instances < 1) throw ArgumentError("instances must be >= 1");
  if (out_dir) std::filesystem::create_directories(*out_dir / "audio");

  std::mt19937_64 rng(opts.seed);
  KnowledgeBase kb;
  for (int c = 0; c < opts.classes; ++c) {
    for (int i = 0; i < opts.instances; ++i) {
      const SampleBuffer raw = synth_instance(c, rng);
      const auto wav = encode_wav(raw);
      const SampleBuffer decoded = decode_wav(wav);
      NewRecord rec;
      rec.class_name = synth_class_name(c);
      rec.features = recording_features(decoded);
      if (out_dir) {
        const std::string rel = "audio/" + std::to_string(kb.next_id()) + ".wav";
        write_wav_file(*out_dir / rel, decoded);
        rec.audio_path = rel;
      }
      kb.add_record(std::move(rec));
    }
  }
  if (out_dir) save(kb, *out_dir);
  return kb;
}

}  // namespace esr
