#include <doctest.h>

#include <algorithm>
#include <random>

#include <Eigen/Dense>

#include "esr/errors.hpp"
#include "esr/features.hpp"
#include "support/signals.hpp"

using namespace esr;
using esr::testing::make_frame;
using esr::testing::spectrum_of;

namespace {

std::vector<double> random_mags(std::mt19937_64& rng, std::size_t n = 512) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> m(n);
  for (auto& v : m) v = u(rng);
  return m;
}

// Reference MFCC with the same parameters, built independently: weights by
// min-of-slopes, DCT by explicit basis matrix.
std::array<double, 13> reference_mfcc(const Eigen::ArrayXd& mags) {
  const int bins = static_cast<int>(mags.size());
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  std::vector<double> pts(28);
  for (int i = 0; i < 28; ++i) pts[static_cast<std::size_t>(i)] = inv(mel(24000.0) * i / 27.0);
  Eigen::VectorXd logs(26);
  for (int m = 0; m < 26; ++m) {
    const double lo = pts[static_cast<std::size_t>(m)], c = pts[static_cast<std::size_t>(m) + 1],
                 hi = pts[static_cast<std::size_t>(m) + 2];
    double e = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = 24000.0 * k / bins;
      const double w = std::max(0.0, std::min((f - lo) / (c - lo), (hi - f) / (hi - c)));
      e += w * mags(k) * mags(k);
    }
    logs(m) = std::log(std::max(e, 1e-10));
  }
  Eigen::MatrixXd dct(13, 26);
  for (int i = 0; i < 13; ++i) {
    for (int j = 0; j < 26; ++j) {
      dct(i, j) = std::sqrt((i == 0 ? 1.0 : 2.0) / 26.0) *
                  std::cos(std::numbers::pi / 26.0 * (j + 0.5) * i);
    }
  }
  const Eigen::VectorXd c = dct * logs;
  std::array<double, 13> out{};
  for (int i = 0; i < 13; ++i) out[static_cast<std::size_t>(i)] = c(i);
  return out;
}

}  // namespace

TEST_CASE("spectral_rolloff") {
  std::vector<double> m(512, 0.0);
  m[100] = 2.0;
  CHECK(spectral_rolloff(spectrum_of(m)) == 100.0 / 512.0);
  CHECK(spectral_rolloff(spectrum_of(std::vector<double>(512, 0.0))) == 0.0);
  CHECK_THROWS_AS(spectral_rolloff(spectrum_of(m), 0.0), ArgumentError);
  CHECK_THROWS_AS(spectral_rolloff(spectrum_of(m), 1.2), ArgumentError);

  // Flat spectrum: brute-force scan recomputing each prefix sum from scratch.
  const std::vector<double> flat(512, 1.0);
  int oracle = -1;
  for (int r = 0; r < 512 && oracle < 0; ++r) {
    double prefix = 0.0;
    for (int k = 0; k <= r; ++k) prefix += flat[static_cast<std::size_t>(k)] * flat[static_cast<std::size_t>(k)];
    if (prefix >= 0.85 * 512.0) oracle = r;
  }
  CHECK(oracle == 435);
  CHECK(spectral_rolloff(spectrum_of(flat)) == oracle / 512.0);
}

TEST_CASE("spectral_flux") {
  std::mt19937_64 rng(1);
  const auto a = random_mags(rng);
  CHECK(spectral_flux(spectrum_of(a), spectrum_of(a)) == 0.0);
  std::vector<double> one(512, 0.0);
  one[3] = 1.0;
  CHECK(spectral_flux(spectrum_of(one), spectrum_of(std::vector<double>(512, 0.0))) == 1.0);
  const auto b = random_mags(rng);
  double oracle = 0.0;
  for (std::size_t k = 0; k < 512; ++k) oracle += (a[k] - b[k]) * (a[k] - b[k]);
  CHECK(spectral_flux(spectrum_of(a), spectrum_of(b)) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK_THROWS_AS(spectral_flux(spectrum_of(a), spectrum_of(std::vector<double>(10, 0.0))),
                  ArgumentError);
}

TEST_CASE("flux_std is a population std") {
  CHECK(flux_std(std::vector<double>{5.0}) == 0.0);
  CHECK(flux_std(std::vector<double>{0.0, 0.0, 0.0}) == 0.0);
  CHECK(flux_std(std::vector<double>{1.0, 3.0}) == 1.0);
}

TEST_CASE("compactness") {
  CHECK(compactness(spectrum_of(std::vector<double>(512, 0.7))) == doctest::Approx(0.0));
  CHECK(compactness(spectrum_of(std::vector<double>(512, 0.0))) == 0.0);
  std::mt19937_64 rng(2);
  const auto m = random_mags(rng);
  double oracle = 0.0;
  for (std::size_t k = 1; k + 1 < m.size(); ++k) {
    const double l0 = 20.0 * std::log10(m[k - 1] + 1e-10);
    const double l1 = 20.0 * std::log10(m[k] + 1e-10);
    const double l2 = 20.0 * std::log10(m[k + 1] + 1e-10);
    oracle += std::abs(l1 - (l0 + l1 + l2) / 3.0);
  }
  CHECK(compactness(spectrum_of(m)) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("spectral_variability") {
  CHECK(spectral_variability(spectrum_of(std::vector<double>(512, 4.0))) == 0.0);
  CHECK(spectral_variability(spectrum_of({0.0, 2.0})) == 1.0);
  std::mt19937_64 rng(3);
  const auto m = random_mags(rng);
  double mean = 0.0;
  for (double v : m) mean += v;
  mean /= static_cast<double>(m.size());
  double ss = 0.0;
  for (double v : m) ss += (v - mean) * (v - mean);
  CHECK(spectral_variability(spectrum_of(m)) ==
        doctest::Approx(std::sqrt(ss / static_cast<double>(m.size()))).epsilon(1e-12));
}

TEST_CASE("mfcc of digital silence is set by the log floor") {
  const auto c = mfcc(spectrum_of(std::vector<double>(512, 0.0)));
  CHECK(c[0] == doctest::Approx(std::sqrt(26.0) * std::log(1e-10)).epsilon(1e-12));
  for (int i = 1; i < 13; ++i) CHECK(std::abs(c[static_cast<std::size_t>(i)]) < 1e-9);
}

TEST_CASE("mfcc: scaling the input only moves c0") {
  std::mt19937_64 rng(4);
  auto m = random_mags(rng);
  for (auto& v : m) v += 0.5;
  const auto base = mfcc(spectrum_of(m));
  for (auto& v : m) v *= 3.0;
  const auto scaled = mfcc(spectrum_of(m));
  CHECK(scaled[0] - base[0] == doctest::Approx(std::sqrt(26.0) * 2.0 * std::log(3.0)).epsilon(1e-9));
  for (int i = 1; i < 13; ++i) {
    CHECK(scaled[static_cast<std::size_t>(i)] ==
          doctest::Approx(base[static_cast<std::size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("mfcc agrees with an independent reference on a 1 kHz tone") {
  const auto x = esr::testing::tone(1000.0, 1.0, 1024.0 / kSampleRate);
  const Eigen::ArrayXd windowed = make_frame(x).samples * hann_window(1024);
  const auto spec = fft_magnitude(windowed);
  const auto got = mfcc(spec);
  const auto want = reference_mfcc(spec.magnitudes);
  for (int i = 0; i < 13; ++i) {
    CHECK(std::abs(got[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)]) < 1e-4);
  }
}

TEST_CASE("mel filterbank covers the band with unit-peak triangles") {
  const auto fb = mel_filterbank(512);
  CHECK(fb.rows() == 26);
  CHECK(fb.cols() == 512);
  CHECK(fb.minCoeff() >= 0.0);
  CHECK(fb.maxCoeff() <= 1.0);
  for (int m = 0; m < 26; ++m) CHECK(fb.row(m).sum() > 0.0);
}

TEST_CASE("lpc of silence is zero") {
  const auto a = lpc(Eigen::ArrayXd::Zero(1024));
  for (double v : a) CHECK(v == 0.0);
}

TEST_CASE("Levinson-Durbin equals a dense Toeplitz solve") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto w = hann_window(1024);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::ArrayXd x(1024);
    double prev = 0.0;
    for (auto& v : x) v = prev = 0.6 * prev + g(rng);
    x *= w;
    Eigen::VectorXd r(10);
    for (int lag = 0; lag < 10; ++lag) r(lag) = (x.head(1024 - lag) * x.tail(1024 - lag)).sum();
    Eigen::MatrixXd toeplitz(9, 9);
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 9; ++j) toeplitz(i, j) = r(std::abs(i - j));
    const Eigen::VectorXd dense = toeplitz.fullPivLu().solve(r.tail(9));
    const auto fast = lpc(x);
    for (int i = 0; i < 9; ++i) CHECK(std::abs(fast[static_cast<std::size_t>(i)] - dense(i)) < 1e-8);
  }
}

TEST_CASE("lpc recovers an AR(2) process") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 0.01);
  const auto w = hann_window(1024);
  double x1 = 0.0, x2 = 0.0;
  for (int i = 0; i < 2000; ++i) {  // burn-in
    const double x = 1.5 * x1 - 0.7 * x2 + g(rng);
    x2 = x1;
    x1 = x;
  }
  double a1 = 0.0, a2 = 0.0;
  for (int f = 0; f < 50; ++f) {
    Eigen::ArrayXd frame(1024);
    for (auto& v : frame) {
      v = 1.5 * x1 - 0.7 * x2 + g(rng);
      x2 = x1;
      x1 = v;
    }
    const auto a = lpc(frame * w);
    a1 += a[0];
    a2 += a[1];
  }
  CHECK(std::abs(a1 / 50 - 1.5) < 0.1);
  CHECK(std::abs(a2 / 50 + 0.7) < 0.1);
}

TEST_CASE("extract_segment_features layout and single-window stds") {
  const auto x = esr::testing::tone(440.0, 0.5, 0.1);
  const std::vector<Frame> one{make_frame(x)};
  const auto v = extract_segment_features(one);
  CHECK(v.size() == 54);
  CHECK((v.tail(27).array() == 0.0).all());
  CHECK_THROWS_AS(extract_segment_features(std::span<const Frame>{}), ArgumentError);
  CHECK(feature_name(0) == "mean.rolloff");
  CHECK(feature_name(27 + 5) == "std.mfcc0");
  CHECK(feature_name(53) == "std.lpc9");
}

TEST_CASE("two identical frames: only flux terms vary") {
  const auto x = esr::testing::tone(440.0, 0.5, 0.1);
  const std::vector<Frame> frames{make_frame(x), make_frame(x, 0, 1)};
  WindowFeatureExtractor ex;
  const auto w0 = ex.next(frames[0]);
  const auto w1 = ex.next(frames[1]);
  CHECK(w0.flux > 0.0);
  CHECK(w1.flux == 0.0);
  CHECK(w0.flux_std == 0.0);
  CHECK(w1.flux_std == doctest::Approx(w0.flux / 2.0));

  const auto v = extract_segment_features(frames);
  for (int i = 27; i < 54; ++i) {
    const bool flux_related = i == 27 + 1 || i == 27 + 2;
    if (flux_related) {
      CHECK(v(i) > 0.0);
    } else {
      CHECK(v(i) == 0.0);
    }
  }
}

TEST_CASE("frame order only affects flux-derived components") {
  const auto x = esr::testing::concat({esr::testing::tone(300, 0.4, 0.03),
                                       esr::testing::noise(0.3, 0.03, 5),
                                       esr::testing::tone(2000, 0.2, 0.03)});
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < 4; ++i) frames.push_back(make_frame(x, i * 1024, i));
  auto reversed = frames;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = extract_segment_features(frames);
  const auto b = extract_segment_features(reversed);
  for (int i = 0; i < 27; ++i) {
    if (i == 1 || i == 2) continue;
    CHECK(a(i) == doctest::Approx(b(i)).epsilon(1e-12));
  }
  CHECK(extract_segment_features(frames) == a);  // bit-for-bit determinism
}
