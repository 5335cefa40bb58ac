#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "esr/audio_io.hpp"
#include "esr/classification.hpp"

namespace esr {

enum class Algorithm { naive_bayes, nearest_neighbor };

std::string_view to_string(Algorithm a) noexcept;
/// Accepts "nb" / "naive_bayes" and "1nn" / "nearest_neighbor".
Algorithm algorithm_from_string(std::string_view s);

struct FoldResult {
  int fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t correct = 0;
  double train_ms = 0.0;
  double classify_ms = 0.0;  // mean per query

  double accuracy() const noexcept {
    return test_size ? static_cast<double>(correct) / static_cast<double>(test_size) : 0.0;
  }
};

struct EvalReport {
  Algorithm algorithm = Algorithm::naive_bayes;
  int fold_count = 0;
  std::vector<std::string> classes;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted class
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  double train_ms = 0.0;     // mean per fold
  double classify_ms = 0.0;  // mean per query
  std::vector<FoldResult> folds;
  /// Some class had fewer records than folds.
  bool stratification_degraded = false;
  /// Only one class: accuracy is trivially 1.
  bool degenerate = false;

  friend bool operator==(const EvalReport& a, const EvalReport& b);
};

/// Stratified partition of row indices into k disjoint folds, seeded.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::string> labels, int k,
                                                       std::uint64_t seed);

struct CvOptions {
  /// Sees each fold's naive Bayes model (unused for 1-NN).
  std::function<void(int fold, const NaiveBayesModel&)> on_model;
};

EvalReport cross_validate(const TrainingSet& data, int k, Algorithm algorithm, std::uint64_t seed,
                          const CvOptions& options = {});

struct CurvePoint {
  double grid_value = 0.0;
  double accuracy = 0.0;
  double stderr_ = 0.0;
};

struct LearningCurves {
  std::vector<CurvePoint> instances;  // instances per class, all classes kept
  std::vector<CurvePoint> classes;    // number of classes, all instances kept
};

/// Per grid point: `repetitions` seeded subsamples, each cross-validated with k folds.
LearningCurves learning_curves(const TrainingSet& data, std::span<const int> instance_grid,
                               std::span<const int> class_grid, Algorithm algorithm,
                               std::uint64_t seed, int repetitions = 3, int k = 10);

struct TimingStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t samples = 0;
};

struct TimingProfile {
  TimingStats train;
  TimingStats recognize;  // feature extraction through classification
  TimingStats classify;   // classification only
};

TimingStats summarize_timings(std::vector<double> ms);

/// Times training and recognition; `probes` are frame sequences to recognize.
TimingProfile timing_profile(const TrainingSet& data, Algorithm algorithm, int repetitions,
                             std::span<const std::vector<Frame>> probes);

/// Header, one row per fold, then a summary row.
std::string report_csv(const EvalReport& report);
/// Header (grid_value,accuracy,stderr) then one row per point.
std::string curve_csv(std::span<const CurvePoint> curve);

}  // namespace esr
