#include "esr/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "esr/errors.hpp"

namespace esr {

namespace {
constexpr double kLogFloor = 1e-10;
constexpr double kDisplayRangeDb = 80.0;
}  // namespace

std::string_view to_string(DisplayState s) noexcept {
  return s == DisplayState::active ? "active" : "monitor";
}

Eigen::ArrayXd hann_window(std::size_t n) {
  if (n < 2) throw ArgumentError("hann_window: n must be >= 2");
  Eigen::ArrayXd w(static_cast<Eigen::Index>(n));
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    w(static_cast<Eigen::Index>(k)) = 0.5 * (1.0 - std::cos(step * static_cast<double>(k)));
  }
  return w;
}

void fft_in_place(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (n == 0 || !std::has_single_bit(n)) {
    throw ArgumentError("fft: length must be a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    // Twiddles evaluated directly; a running product drifts past 1e-12.
    std::vector<std::complex<double>> tw(half);
    for (std::size_t k = 0; k < half; ++k) {
      tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                  static_cast<double>(len));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto u = data[i + k];
        const auto v = data[i + k + half] * tw[k];
        data[i + k] = u + v;
        data[i + k + half] = u - v;
      }
    }
  }
}

MagnitudeSpectrum fft_magnitude(const Eigen::Ref<const Eigen::ArrayXd>& frame) {
  const auto n = static_cast<std::size_t>(frame.size());
  if (n < 2 || !std::has_single_bit(n)) {
    throw ArgumentError("fft_magnitude: frame length must be a power of two");
  }
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = frame(static_cast<Eigen::Index>(i));
  fft_in_place(buf);
  MagnitudeSpectrum out{Eigen::ArrayXd(static_cast<Eigen::Index>(n / 2)), n};
  for (std::size_t k = 0; k < n / 2; ++k) out.magnitudes(static_cast<Eigen::Index>(k)) = std::abs(buf[k]);
  return out;
}

SpectrogramColumn spectrogram_column(const Eigen::Ref<const Eigen::ArrayXd>& frame,
                                     DisplayState state, double timestamp) {
  if (static_cast<std::size_t>(frame.size()) != kDisplayFftSize) {
    throw ArgumentError("spectrogram_column: expected 2048 samples");
  }
  const auto spec = fft_magnitude(frame);
  SpectrogramColumn col;
  col.values = ((20.0 * (spec.magnitudes + kLogFloor).log10() + kDisplayRangeDb) / kDisplayRangeDb)
                   .max(0.0)
                   .min(1.0);
  col.timestamp = timestamp;
  col.state = state;
  return col;
}

ColumnDecimator::ColumnDecimator(int columns_per_second) {
  switch (columns_per_second) {
    case 23: stride_ = 1; break;
    case 12: stride_ = 2; break;
    case 8: stride_ = 3; break;
    default: throw ArgumentError("columns rate must be 23, 12 or 8");
  }
}

bool ColumnDecimator::keep() noexcept { return counter_++ % stride_ == 0; }

}  // namespace esr
