#include "esr/classification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "esr/errors.hpp"

namespace esr {

namespace {

double entropy_bits(std::span<const long> counts, long total) {
  if (total <= 0) return 0.0;
  double h = 0.0;
  for (long c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / static_cast<double>(total);
      h -= p * std::log2(p);
    }
  }
  return h;
}

int distinct_classes(std::span<const long> counts) {
  return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](long c) { return c > 0; }));
}

struct Point {
  double value;
  int label;
};

class MdlSplitter {
 public:
  MdlSplitter(std::vector<Point> pts, int class_count)
      : pts_(std::move(pts)), k_(class_count) {
    std::sort(pts_.begin(), pts_.end(), [](const Point& a, const Point& b) {
      return a.value < b.value || (a.value == b.value && a.label < b.label);
    });
    // A cut between adjacent distinct values is a candidate unless both
    // values carry the same single class.
    std::vector<std::set<int>> group_labels;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (i == 0 || pts_[i].value != pts_[i - 1].value) {
        group_labels.emplace_back();
        group_start_.push_back(i);
      }
      group_labels.back().insert(pts_[i].label);
    }
    for (std::size_t g = 0; g + 1 < group_labels.size(); ++g) {
      const auto& a = group_labels[g];
      const auto& b = group_labels[g + 1];
      const bool same_pure = a.size() == 1 && b.size() == 1 && a == b;
      if (!same_pure) candidate_starts_.insert(group_start_[g + 1]);
    }
  }

  std::vector<double> run() {
    std::vector<double> cuts;
    split(0, pts_.size(), cuts);
    std::sort(cuts.begin(), cuts.end());
    return cuts;
  }

 private:
  void split(std::size_t lo, std::size_t hi, std::vector<double>& cuts) {
    const long n = static_cast<long>(hi - lo);
    if (n < 2) return;
    std::vector<long> total(static_cast<std::size_t>(k_), 0);
    for (std::size_t i = lo; i < hi; ++i) ++total[static_cast<std::size_t>(pts_[i].label)];

    std::vector<long> left(static_cast<std::size_t>(k_), 0);
    std::vector<long> right = total;
    double best_e = std::numeric_limits<double>::infinity();
    std::size_t best_pos = 0;
    std::vector<long> best_left, best_right;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      const auto lab = static_cast<std::size_t>(pts_[i - 1].label);
      ++left[lab];
      --right[lab];
      if (!candidate_starts_.contains(i)) continue;
      const long nl = static_cast<long>(i - lo);
      const long nr = n - nl;
      const double e = (static_cast<double>(nl) * entropy_bits(left, nl) +
                        static_cast<double>(nr) * entropy_bits(right, nr)) /
                       static_cast<double>(n);
      if (e < best_e - 1e-12) {
        best_e = e;
        best_pos = i;
        best_left = left;
        best_right = right;
      }
    }
    if (best_pos == 0) return;

    const long nl = static_cast<long>(best_pos - lo);
    const long nr = n - nl;
    const double es = entropy_bits(total, n);
    const double e1 = entropy_bits(best_left, nl);
    const double e2 = entropy_bits(best_right, nr);
    const double gain = es - best_e;
    const int k = distinct_classes(total);
    const int k1 = distinct_classes(best_left);
    const int k2 = distinct_classes(best_right);
    const double delta = std::log2(std::pow(3.0, k) - 2.0) - (k * es - k1 * e1 - k2 * e2);
    const double threshold = (std::log2(static_cast<double>(n - 1)) + delta) / static_cast<double>(n);
    if (!(gain > threshold)) return;

    cuts.push_back((pts_[best_pos - 1].value + pts_[best_pos].value) / 2.0);
    split(lo, best_pos, cuts);
    split(best_pos, hi, cuts);
  }

  std::vector<Point> pts_;
  int k_;
  std::vector<std::size_t> group_start_;
  std::set<std::size_t> candidate_starts_;
};

}  // namespace

Eigen::MatrixXd TrainingSet::rows_of(const std::string& label) const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return features(idx, Eigen::all);
}

TrainingSet TrainingSet::subset(std::span<const std::size_t> rows) const {
  TrainingSet out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

TrainingSet training_set(const KnowledgeBase& kb, const std::optional<std::string>& environment) {
  std::vector<const SoundRecord*> picked;
  for (const auto& r : kb.records()) {
    if (kb.find_class(r.class_name).excluded) continue;
    if (!environment_matches(r, environment)) continue;
    picked.push_back(&r);
  }
  TrainingSet out;
  out.features.resize(static_cast<Eigen::Index>(picked.size()), kFeatureCount);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = picked[i]->features.transpose();
    out.labels.push_back(picked[i]->class_name);
  }
  return out;
}

std::vector<double> discretize_attribute(std::span<const double> values,
                                         std::span<const int> labels) {
  if (values.size() != labels.size()) throw ArgumentError("discretize: length mismatch");
  if (values.empty()) return {};
  std::vector<Point> pts(values.size());
  int k = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (labels[i] < 0) throw ArgumentError("discretize: negative class id");
    pts[i] = {values[i], labels[i]};
    k = std::max(k, labels[i] + 1);
  }
  return MdlSplitter(std::move(pts), k).run();
}

std::vector<double> discretize_attribute(std::span<const double> values,
                                         std::span<const std::string> labels) {
  if (values.size() != labels.size()) throw ArgumentError("discretize: length mismatch");
  std::map<std::string, int> ids;
  for (const auto& l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& [name, id] : ids) id = next++;
  std::vector<int> int_labels;
  int_labels.reserve(labels.size());
  for (const auto& l : labels) int_labels.push_back(ids.at(l));
  return discretize_attribute(values, int_labels);
}

std::size_t bin_index(std::span<const double> cuts, double value) {
  return static_cast<std::size_t>(std::lower_bound(cuts.begin(), cuts.end(), value) - cuts.begin());
}

NaiveBayesModel train_naive_bayes(const TrainingSet& data, std::uint64_t revision) {
  if (data.size() == 0) throw TrainingError("no training records (all classes excluded or KB empty)");
  NaiveBayesModel m;
  m.trained_revision_ = revision;
  std::map<std::string, int> ids;
  for (const auto& l : data.labels) ids.emplace(l, 0);
  for (auto& [name, id] : ids) {
    id = static_cast<int>(m.classes_.size());
    m.classes_.push_back(name);
  }
  std::vector<int> y;
  y.reserve(data.labels.size());
  for (const auto& l : data.labels) y.push_back(ids.at(l));

  const auto attrs = static_cast<std::size_t>(data.features.cols());
  const std::size_t classes = m.classes_.size();
  m.class_counts_.assign(classes, 0);
  for (int c : y) ++m.class_counts_[static_cast<std::size_t>(c)];
  for (std::size_t c = 0; c < classes; ++c) {
    if (m.class_counts_[c] < static_cast<long>(kMinTrainingInstances)) {
      m.underpopulated_.push_back(m.classes_[c]);
    }
  }

  m.scheme_.cuts.resize(attrs);
  m.bin_counts_.assign(classes, std::vector<std::vector<long>>(attrs));
  std::vector<double> column(static_cast<std::size_t>(data.size()));
  for (std::size_t a = 0; a < attrs; ++a) {
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      column[static_cast<std::size_t>(i)] = data.features(i, static_cast<Eigen::Index>(a));
    }
    m.scheme_.cuts[a] = discretize_attribute(column, y);
    const std::size_t bins = m.scheme_.cuts[a].size() + 1;
    for (std::size_t c = 0; c < classes; ++c) m.bin_counts_[c][a].assign(bins, 0);
    for (std::size_t i = 0; i < column.size(); ++i) {
      ++m.bin_counts_[static_cast<std::size_t>(y[i])][a][bin_index(m.scheme_.cuts[a], column[i])];
    }
  }
  return m;
}

NaiveBayesModel train_naive_bayes(const KnowledgeBase& kb,
                                  const std::optional<std::string>& environment) {
  return train_naive_bayes(training_set(kb, environment), kb.revision());
}

std::vector<double> NaiveBayesModel::log_joint(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (static_cast<std::size_t>(v.size()) != scheme_.cuts.size()) {
    throw ArgumentError("classify: vector width does not match model");
  }
  const long total = std::accumulate(class_counts_.begin(), class_counts_.end(), 0L);
  const auto classes = static_cast<double>(classes_.size());
  std::vector<double> out(classes_.size());
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    const double nc = static_cast<double>(class_counts_[c]);
    double lj = std::log((nc + 1.0) / (static_cast<double>(total) + classes));
    for (std::size_t a = 0; a < scheme_.cuts.size(); ++a) {
      const auto& counts = bin_counts_[c][a];
      const std::size_t b = bin_index(scheme_.cuts[a], v(static_cast<Eigen::Index>(a)));
      lj += std::log((static_cast<double>(counts[b]) + 1.0) /
                     (nc + static_cast<double>(counts.size())));
    }
    out[c] = lj;
  }
  return out;
}

std::vector<Posterior> NaiveBayesModel::classify(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  const auto lj = log_joint(v);
  const double top = *std::max_element(lj.begin(), lj.end());
  double norm = 0.0;
  for (double x : lj) norm += std::exp(x - top);
  std::vector<Posterior> out;
  out.reserve(lj.size());
  for (std::size_t c = 0; c < lj.size(); ++c) {
    out.push_back({classes_[c], std::exp(lj[c] - top) / norm});
  }
  std::stable_sort(out.begin(), out.end(), [](const Posterior& a, const Posterior& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.class_name < b.class_name;
  });
  return out;
}

NearestNeighborModel::NearestNeighborModel(TrainingSet data, std::uint64_t revision,
                                           Scaling scaling)
    : data_(std::move(data)), trained_revision_(revision), scaling_(scaling) {
  if (data_.size() == 0) throw TrainingError("nearest neighbor needs at least one instance");
  const auto cols = data_.features.cols();
  offset_ = Eigen::RowVectorXd::Zero(cols);
  scale_ = Eigen::RowVectorXd::Ones(cols);
  if (scaling_ == Scaling::min_max) {
    offset_ = data_.features.colwise().minCoeff();
    const Eigen::RowVectorXd range = data_.features.colwise().maxCoeff() - offset_;
    // Constant attributes carry no information and are dropped from the distance.
    scale_ = (range.array() > 0.0).select(range.array().inverse(), 0.0);
  }
  scaled_ = (data_.features.rowwise() - offset_).array().rowwise() * scale_.array();
}

NeighborMatch NearestNeighborModel::classify(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (v.size() != data_.features.cols()) throw ArgumentError("classify_1nn: width mismatch");
  const Eigen::RowVectorXd q = (v.transpose() - offset_).array() * scale_.array();
  Eigen::Index best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < scaled_.rows(); ++i) {
    const double sq = (scaled_.row(i) - q).squaredNorm();
    if (sq < best_sq) {
      best_sq = sq;
      best = i;
    }
  }
  return {data_.labels[static_cast<std::size_t>(best)], std::sqrt(best_sq), best};
}

}  // namespace esr
