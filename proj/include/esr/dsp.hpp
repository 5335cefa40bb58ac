#pragma once

#include <complex>
#include <cstddef>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace esr {

/// Magnitudes of the first fft_size/2 DFT bins of a real frame.
struct MagnitudeSpectrum {
  Eigen::ArrayXd magnitudes;
  std::size_t fft_size = 0;

  Eigen::Index size() const noexcept { return magnitudes.size(); }
};

enum class DisplayState { monitor, active };

std::string_view to_string(DisplayState s) noexcept;

inline constexpr std::size_t kDisplayFftSize = 2048;
inline constexpr std::size_t kColumnSize = kDisplayFftSize / 2;

struct SpectrogramColumn {
  Eigen::ArrayXd values;  // kColumnSize entries in [0, 1]
  double timestamp = 0.0;
  DisplayState state = DisplayState::monitor;
};

/// Periodic Hann window: w[k] = 0.5 (1 - cos(2 pi k / n)).
Eigen::ArrayXd hann_window(std::size_t n);

/// In-place radix-2 DFT. Length must be a power of two.
void fft_in_place(std::vector<std::complex<double>>& data);

MagnitudeSpectrum fft_magnitude(const Eigen::Ref<const Eigen::ArrayXd>& frame);

/// Log-compressed display column over an 80 dB range.
SpectrogramColumn spectrogram_column(const Eigen::Ref<const Eigen::ArrayXd>& frame,
                                     DisplayState state, double timestamp = 0.0);

/// Column-rate selector: 23 (every column), 12 (every 2nd) or 8 (every 3rd).
class ColumnDecimator {
 public:
  explicit ColumnDecimator(int columns_per_second = 23);
  /// True when the next produced column should be kept.
  bool keep() noexcept;
  int stride() const noexcept { return stride_; }

 private:
  int stride_;
  long counter_ = 0;
};

}  // namespace esr
