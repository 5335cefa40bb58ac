#include "esr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "esr/errors.hpp"
#include "esr/features.hpp"

namespace esr {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string predict(const NaiveBayesModel* nb, const NearestNeighborModel* nn,
                    const Eigen::Ref<const Eigen::VectorXd>& v) {
  return nb ? nb->classify(v).front().class_name : nn->classify(v).class_name;
}

std::vector<std::string> sorted_classes(std::span<const std::string> labels) {
  std::set<std::string> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

}  // namespace

std::string_view to_string(Algorithm a) noexcept {
  return a == Algorithm::naive_bayes ? "nb" : "1nn";
}

Algorithm algorithm_from_string(std::string_view s) {
  if (s == "nb" || s == "naive_bayes") return Algorithm::naive_bayes;
  if (s == "1nn" || s == "nearest_neighbor") return Algorithm::nearest_neighbor;
  throw ArgumentError("unknown algorithm '" + std::string(s) + "'");
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  // Timings are wall-clock measurements and excluded from equality.
  if (a.folds.size() != b.folds.size()) return false;
  for (std::size_t i = 0; i < a.folds.size(); ++i) {
    const auto& x = a.folds[i];
    const auto& y = b.folds[i];
    if (x.fold != y.fold || x.train_size != y.train_size || x.test_size != y.test_size ||
        x.correct != y.correct) {
      return false;
    }
  }
  return a.algorithm == b.algorithm && a.fold_count == b.fold_count && a.classes == b.classes &&
         a.confusion == b.confusion && a.accuracy == b.accuracy && a.precision == b.precision &&
         a.recall == b.recall && a.stratification_degraded == b.stratification_degraded &&
         a.degenerate == b.degenerate;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::string> labels, int k,
                                                       std::uint64_t seed) {
  if (k < 2) throw ArgumentError("cross-validation needs at least 2 folds");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t offset = 0;
  for (auto& [name, rows] : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      folds[(offset + j) % folds.size()].push_back(rows[j]);
    }
    offset = (offset + rows.size()) % folds.size();
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

EvalReport cross_validate(const TrainingSet& data, int k, Algorithm algorithm, std::uint64_t seed,
                          const CvOptions& options) {
  if (k < 2) throw ArgumentError("cross-validation needs at least 2 folds");
  if (data.size() == 0) throw DomainError("cannot cross-validate an empty knowledge base");

  EvalReport report;
  report.algorithm = algorithm;
  report.fold_count = k;
  report.classes = sorted_classes(data.labels);
  std::map<std::string, int> class_id;
  for (std::size_t c = 0; c < report.classes.size(); ++c) class_id[report.classes[c]] = static_cast<int>(c);
  const auto nc = static_cast<Eigen::Index>(report.classes.size());
  report.confusion = Eigen::MatrixXi::Zero(nc, nc);
  report.degenerate = report.classes.size() == 1;
  for (const auto& c : report.classes) {
    if (std::count(data.labels.begin(), data.labels.end(), c) < k) {
      report.stratification_degraded = true;
    }
  }

  const auto folds = stratified_folds(data.labels, k, seed);
  double train_total = 0.0;
  double classify_total = 0.0;
  std::size_t queries = 0;
  int trained_folds = 0;
  for (int f = 0; f < k; ++f) {
    const auto& test = folds[static_cast<std::size_t>(f)];
    if (test.empty()) continue;
    std::vector<std::size_t> train_rows;
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      const auto& fold = folds[static_cast<std::size_t>(g)];
      train_rows.insert(train_rows.end(), fold.begin(), fold.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    if (train_rows.empty()) continue;
    const TrainingSet train = data.subset(train_rows);

    FoldResult fr;
    fr.fold = f;
    fr.train_size = train_rows.size();
    fr.test_size = test.size();
    const auto t0 = Clock::now();
    std::optional<NaiveBayesModel> nb;
    std::optional<NearestNeighborModel> nn;
    if (algorithm == Algorithm::naive_bayes) {
      nb = train_naive_bayes(train);
      if (options.on_model) options.on_model(f, *nb);
    } else {
      nn.emplace(train);
    }
    fr.train_ms = ms_since(t0);
    const auto t1 = Clock::now();
    for (std::size_t row : test) {
      const auto idx = static_cast<Eigen::Index>(row);
      const std::string predicted = predict(nb ? &*nb : nullptr, nn ? &*nn : nullptr,
                                            data.features.row(idx).transpose());
      const int truth = class_id.at(data.labels[row]);
      const int guess = class_id.at(predicted);
      ++report.confusion(truth, guess);
      if (truth == guess) ++fr.correct;
    }
    fr.classify_ms = ms_since(t1) / static_cast<double>(test.size());
    train_total += fr.train_ms;
    classify_total += fr.classify_ms * static_cast<double>(test.size());
    queries += test.size();
    ++trained_folds;
    report.folds.push_back(fr);
  }

  const int total = report.confusion.sum();
  report.accuracy = total ? static_cast<double>(report.confusion.trace()) / total : 0.0;
  report.precision.resize(report.classes.size());
  report.recall.resize(report.classes.size());
  for (Eigen::Index c = 0; c < nc; ++c) {
    const int predicted = report.confusion.col(c).sum();
    const int actual = report.confusion.row(c).sum();
    report.precision[static_cast<std::size_t>(c)] =
        predicted ? static_cast<double>(report.confusion(c, c)) / predicted : 0.0;
    report.recall[static_cast<std::size_t>(c)] =
        actual ? static_cast<double>(report.confusion(c, c)) / actual : 0.0;
  }
  report.train_ms = trained_folds ? train_total / trained_folds : 0.0;
  report.classify_ms = queries ? classify_total / static_cast<double>(queries) : 0.0;
  return report;
}

namespace {

CurvePoint average_point(double x, const std::vector<double>& accs) {
  CurvePoint p;
  p.grid_value = x;
  const double n = static_cast<double>(accs.size());
  p.accuracy = std::accumulate(accs.begin(), accs.end(), 0.0) / n;
  if (accs.size() > 1) {
    double ss = 0.0;
    for (double a : accs) ss += (a - p.accuracy) * (a - p.accuracy);
    p.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return p;
}

}  // namespace

LearningCurves learning_curves(const TrainingSet& data, std::span<const int> instance_grid,
                               std::span<const int> class_grid, Algorithm algorithm,
                               std::uint64_t seed, int repetitions, int k) {
  if (repetitions < 1) throw ArgumentError("repetitions must be >= 1");
  const auto classes = sorted_classes(data.labels);
  std::map<std::string, std::vector<std::size_t>> rows_by_class;
  for (std::size_t i = 0; i < data.labels.size(); ++i) rows_by_class[data.labels[i]].push_back(i);
  std::size_t min_per_class = data.labels.size();
  for (const auto& [name, rows] : rows_by_class) min_per_class = std::min(min_per_class, rows.size());

  LearningCurves out;
  for (int n : instance_grid) {
    if (n < 1 || static_cast<std::size_t>(n) > min_per_class) {
      throw ArgumentError("instance grid value " + std::to_string(n) + " exceeds the KB");
    }
    std::vector<double> accs;
    for (int r = 0; r < repetitions; ++r) {
      std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
      std::vector<std::size_t> picked;
      for (const auto& [name, rows] : rows_by_class) {
        std::vector<std::size_t> pool = rows;
        if (static_cast<std::size_t>(n) < pool.size()) {
          std::shuffle(pool.begin(), pool.end(), rng);
          pool.resize(static_cast<std::size_t>(n));
        }
        picked.insert(picked.end(), pool.begin(), pool.end());
      }
      std::sort(picked.begin(), picked.end());
      accs.push_back(cross_validate(data.subset(picked), k, algorithm,
                                    seed + static_cast<std::uint64_t>(r))
                         .accuracy);
    }
    out.instances.push_back(average_point(n, accs));
  }
  for (int m : class_grid) {
    if (m < 1 || static_cast<std::size_t>(m) > classes.size()) {
      throw ArgumentError("class grid value " + std::to_string(m) + " exceeds the KB");
    }
    std::vector<double> accs;
    for (int r = 0; r < repetitions; ++r) {
      std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
      std::vector<std::string> pool = classes;
      if (static_cast<std::size_t>(m) < pool.size()) {
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(static_cast<std::size_t>(m));
      }
      std::vector<std::size_t> picked;
      for (const auto& c : pool) {
        const auto& rows = rows_by_class.at(c);
        picked.insert(picked.end(), rows.begin(), rows.end());
      }
      std::sort(picked.begin(), picked.end());
      accs.push_back(cross_validate(data.subset(picked), k, algorithm,
                                    seed + static_cast<std::uint64_t>(r))
                         .accuracy);
    }
    out.classes.push_back(average_point(m, accs));
  }
  return out;
}

TimingStats summarize_timings(std::vector<double> ms) {
  TimingStats s;
  s.samples = ms.size();
  if (ms.empty()) return s;
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  if (n == 1) s.p95_ms = s.median_ms;
  return s;
}

TimingProfile timing_profile(const TrainingSet& data, Algorithm algorithm, int repetitions,
                             std::span<const std::vector<Frame>> probes) {
  if (repetitions < 1) throw ArgumentError("repetitions must be >= 1");
  std::vector<double> train_ms, recognize_ms, classify_ms;
  std::optional<NaiveBayesModel> nb;
  std::optional<NearestNeighborModel> nn;
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = Clock::now();
    if (algorithm == Algorithm::naive_bayes) {
      nb = train_naive_bayes(data);
    } else {
      nn.emplace(data);
    }
    train_ms.push_back(ms_since(t0));
  }
  for (int r = 0; r < repetitions; ++r) {
    for (const auto& frames : probes) {
      const auto t0 = Clock::now();
      const FeatureVector54 v = extract_segment_features(frames);
      const auto t1 = Clock::now();
      volatile auto sink = predict(nb ? &*nb : nullptr, nn ? &*nn : nullptr, v).size();
      (void)sink;
      recognize_ms.push_back(ms_since(t0));
      classify_ms.push_back(ms_since(t1));
    }
  }
  return {summarize_timings(std::move(train_ms)), summarize_timings(std::move(recognize_ms)),
          summarize_timings(std::move(classify_ms))};
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(6);
  os << "row,algorithm,fold,train_size,test_size,correct,accuracy,train_ms,classify_ms\n";
  for (const auto& f : report.folds) {
    os << "fold," << to_string(report.algorithm) << ',' << f.fold << ',' << f.train_size << ','
       << f.test_size << ',' << f.correct << ',' << f.accuracy() << ',' << f.train_ms << ','
       << f.classify_ms << '\n';
  }
  const int total = report.confusion.sum();
  os << "summary," << to_string(report.algorithm) << ",all,," << total << ','
     << report.confusion.trace() << ',' << report.accuracy << ',' << report.train_ms << ','
     << report.classify_ms << '\n';
  return os.str();
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::ostringstream os;
  os.precision(6);
  os << "grid_value,accuracy,stderr\n";
  for (const auto& p : curve) os << p.grid_value << ',' << p.accuracy << ',' << p.stderr_ << '\n';
  return os.str();
}

}  // namespace esr
