#include "esr/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "esr/errors.hpp"

namespace esr {

namespace {

constexpr double kLogFloor = 1e-10;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

const Eigen::MatrixXd& analysis_filterbank() {
  static const Eigen::MatrixXd fb = mel_filterbank(static_cast<Eigen::Index>(kFrameSize / 2));
  return fb;
}

const Eigen::ArrayXd& analysis_window() {
  static const Eigen::ArrayXd w = hann_window(kFrameSize);
  return w;
}

}  // namespace

WindowVector WindowFeatures::to_vector() const {
  WindowVector v;
  v << rolloff, flux, flux_std, compactness, variability,
      Eigen::Map<const Eigen::Matrix<double, kMfccCount, 1>>(mfcc.data()),
      Eigen::Map<const Eigen::Matrix<double, kLpcOrder, 1>>(lpc.data());
  return v;
}

std::string feature_name(int i) {
  if (i < 0 || i >= kFeatureCount) throw ArgumentError("feature index out of range");
  const std::string block = i < kWindowFeatureCount ? "mean." : "std.";
  const int j = i % kWindowFeatureCount;
  static constexpr const char* kScalars[] = {"rolloff", "flux", "flux_std", "compactness",
                                             "variability"};
  if (j < 5) return block + kScalars[j];
  if (j < 5 + kMfccCount) return block + "mfcc" + std::to_string(j - 5);
  return block + "lpc" + std::to_string(j - 5 - kMfccCount + 1);
}

double spectral_rolloff(const MagnitudeSpectrum& spec, double cutoff) {
  if (!(cutoff > 0.0 && cutoff <= 1.0)) throw ArgumentError("rolloff cutoff must be in (0, 1]");
  if (spec.size() == 0) throw ArgumentError("rolloff of empty spectrum");
  const Eigen::ArrayXd power = spec.magnitudes.square();
  const double total = power.sum();
  if (total <= 0.0) return 0.0;
  const double target = cutoff * total;
  double running = 0.0;
  for (Eigen::Index k = 0; k < power.size(); ++k) {
    running += power(k);
    if (running >= target) return static_cast<double>(k) / static_cast<double>(spec.size());
  }
  // Rounding can leave the final cumulative sum a hair below cutoff * total.
  return static_cast<double>(spec.size() - 1) / static_cast<double>(spec.size());
}

double spectral_flux(const MagnitudeSpectrum& current, const MagnitudeSpectrum& previous) {
  if (current.size() != previous.size()) throw ArgumentError("flux: spectrum length mismatch");
  return (current.magnitudes - previous.magnitudes).square().sum();
}

double flux_std(std::span<const double> history) { return population_std(history); }

double compactness(const MagnitudeSpectrum& spec) {
  if (spec.size() == 0) throw ArgumentError("compactness of empty spectrum");
  const Eigen::ArrayXd level = 20.0 * (spec.magnitudes + kLogFloor).log10();
  double sum = 0.0;
  for (Eigen::Index k = 1; k + 1 < level.size(); ++k) {
    sum += std::abs(level(k) - (level(k - 1) + level(k) + level(k + 1)) / 3.0);
  }
  return sum;
}

double spectral_variability(const MagnitudeSpectrum& spec) {
  if (spec.size() == 0) throw ArgumentError("variability of empty spectrum");
  const double mean = spec.magnitudes.mean();
  return std::sqrt((spec.magnitudes - mean).square().mean());
}

Eigen::MatrixXd mel_filterbank(Eigen::Index bins) {
  if (bins < 2) throw ArgumentError("filterbank needs at least two bins");
  const double nyquist = kSampleRate / 2.0;
  const double top = hz_to_mel(nyquist);
  std::array<double, kMelFilterCount + 2> edges{};
  for (int i = 0; i < kMelFilterCount + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(top * i / (kMelFilterCount + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(kMelFilterCount, bins);
  for (int m = 0; m < kMelFilterCount; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (Eigen::Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * nyquist / static_cast<double>(bins);
      if (f > lo && f <= mid) {
        fb(m, k) = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        fb(m, k) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

std::array<double, kMfccCount> mfcc(const MagnitudeSpectrum& spec) {
  const Eigen::MatrixXd fb_owned =
      spec.size() == static_cast<Eigen::Index>(kFrameSize / 2) ? Eigen::MatrixXd()
                                                                : mel_filterbank(spec.size());
  const Eigen::MatrixXd& fb = fb_owned.size() ? fb_owned : analysis_filterbank();
  const Eigen::VectorXd energies = fb * spec.magnitudes.square().matrix();
  const Eigen::ArrayXd logs = energies.array().max(kLogFloor).log();

  std::array<double, kMfccCount> out{};
  const double n = kMelFilterCount;
  for (int i = 0; i < kMfccCount; ++i) {
    double acc = 0.0;
    for (int j = 0; j < kMelFilterCount; ++j) {
      acc += logs(j) * std::cos(std::numbers::pi * i * (2.0 * j + 1.0) / (2.0 * n));
    }
    out[static_cast<std::size_t>(i)] = acc * (i == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
  }
  return out;
}

Eigen::VectorXd levinson_durbin(const Eigen::Ref<const Eigen::VectorXd>& r, int order) {
  if (order < 1 || r.size() < order + 1) throw ArgumentError("levinson: need order+1 lags");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(order);
  double err = r(0);
  if (err <= 0.0) return a;
  Eigen::VectorXd prev(order);
  for (int i = 0; i < order; ++i) {
    double acc = r(i + 1);
    for (int j = 0; j < i; ++j) acc -= a(j) * r(i - j);
    const double k = acc / err;
    prev.head(i) = a.head(i);
    for (int j = 0; j < i; ++j) a(j) = prev(j) - k * prev(i - 1 - j);
    a(i) = k;
    err *= (1.0 - k * k);
    if (err <= 0.0) break;
  }
  return a;
}

std::array<double, kLpcOrder> lpc(const Eigen::Ref<const Eigen::ArrayXd>& windowed) {
  const Eigen::Index n = windowed.size();
  Eigen::VectorXd r(kLpcOrder + 1);
  for (int lag = 0; lag <= kLpcOrder; ++lag) {
    r(lag) = lag < n ? (windowed.head(n - lag) * windowed.tail(n - lag)).sum() : 0.0;
  }
  const Eigen::VectorXd a = levinson_durbin(r, kLpcOrder);
  std::array<double, kLpcOrder> out{};
  for (int i = 0; i < kLpcOrder; ++i) out[static_cast<std::size_t>(i)] = a(i);
  return out;
}

WindowFeatures WindowFeatureExtractor::next(const Frame& frame) {
  if (static_cast<std::size_t>(frame.samples.size()) != kFrameSize) {
    throw ArgumentError("window features need 1024-sample frames");
  }
  const Eigen::ArrayXd windowed = frame.samples * analysis_window();
  const MagnitudeSpectrum spec = fft_magnitude(windowed);
  if (count_ == 0) {
    previous_ = MagnitudeSpectrum{Eigen::ArrayXd::Zero(spec.size()), spec.fft_size};
  }

  WindowFeatures wf;
  wf.rolloff = spectral_rolloff(spec);
  wf.flux = spectral_flux(spec, previous_);
  history_[count_ % kFluxHistory] = wf.flux;
  ++count_;
  wf.flux_std = flux_std(std::span<const double>(history_.data(), std::min(count_, kFluxHistory)));
  wf.compactness = compactness(spec);
  wf.variability = spectral_variability(spec);
  wf.mfcc = mfcc(spec);
  wf.lpc = lpc(windowed);
  previous_ = spec;
  return wf;
}

FeatureVector54 aggregate(std::span<const WindowFeatures> windows) {
  if (windows.empty()) throw ArgumentError("cannot aggregate zero windows");
  Eigen::Matrix<double, kWindowFeatureCount, Eigen::Dynamic> table(
      kWindowFeatureCount, static_cast<Eigen::Index>(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    table.col(static_cast<Eigen::Index>(i)) = windows[i].to_vector();
  }
  const WindowVector mean = table.rowwise().mean();
  const WindowVector var =
      (table.colwise() - mean).array().square().rowwise().mean().matrix();
  FeatureVector54 out;
  out << mean, var.cwiseSqrt();
  return out;
}

FeatureVector54 extract_segment_features(std::span<const Frame> frames) {
  if (frames.empty()) throw ArgumentError("extract_segment_features: no frames");
  WindowFeatureExtractor extractor;
  std::vector<WindowFeatures> windows;
  windows.reserve(frames.size());
  for (const auto& f : frames) windows.push_back(extractor.next(f));
  return aggregate(windows);
}

}  // namespace esr
