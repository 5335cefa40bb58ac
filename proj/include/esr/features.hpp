#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>

#include <Eigen/Core>

#include "esr/audio_io.hpp"
#include "esr/dsp.hpp"

namespace esr {

inline constexpr int kMfccCount = 13;
inline constexpr int kLpcOrder = 9;
inline constexpr int kWindowFeatureCount = 27;
inline constexpr int kFeatureCount = 2 * kWindowFeatureCount;
inline constexpr int kMelFilterCount = 26;
inline constexpr std::size_t kFluxHistory = 10;

/// Segment descriptor: 27 per-window means followed by the 27 population stds.
using FeatureVector54 = Eigen::Matrix<double, kFeatureCount, 1>;
using WindowVector = Eigen::Matrix<double, kWindowFeatureCount, 1>;

/// Per-window features in storage order.
struct WindowFeatures {
  double rolloff = 0.0;
  double flux = 0.0;
  double flux_std = 0.0;
  double compactness = 0.0;
  double variability = 0.0;
  std::array<double, kMfccCount> mfcc{};
  std::array<double, kLpcOrder> lpc{};

  WindowVector to_vector() const;
};

/// Human-readable name of position i in a FeatureVector54 (e.g. "mean.mfcc3").
std::string feature_name(int i);

double spectral_rolloff(const MagnitudeSpectrum& spec, double cutoff = 0.85);
double spectral_flux(const MagnitudeSpectrum& current, const MagnitudeSpectrum& previous);
double flux_std(std::span<const double> history);
double compactness(const MagnitudeSpectrum& spec);
double spectral_variability(const MagnitudeSpectrum& spec);

/// Triangular mel filterbank (kMelFilterCount x bins) spanning 0-24 kHz.
Eigen::MatrixXd mel_filterbank(Eigen::Index bins);

std::array<double, kMfccCount> mfcc(const MagnitudeSpectrum& spec);

/// Levinson-Durbin solve of the autocorrelation normal equations; returns a
/// such that x[t] is predicted by sum_k a[k] x[t-1-k].
Eigen::VectorXd levinson_durbin(const Eigen::Ref<const Eigen::VectorXd>& autocorr, int order);
std::array<double, kLpcOrder> lpc(const Eigen::Ref<const Eigen::ArrayXd>& windowed);

/// Stateful per-window extractor; carries flux reference and history across windows.
class WindowFeatureExtractor {
 public:
  WindowFeatures next(const Frame& frame);

 private:
  MagnitudeSpectrum previous_;
  std::array<double, kFluxHistory> history_{};
  std::size_t count_ = 0;
};

FeatureVector54 aggregate(std::span<const WindowFeatures> windows);
FeatureVector54 extract_segment_features(std::span<const Frame> frames);

}  // namespace esr
