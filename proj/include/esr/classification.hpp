#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "esr/features.hpp"
#include "esr/knowledge_base.hpp"

namespace esr {

/// Labeled feature rows. Rows of `features` align with `labels`.
struct TrainingSet {
  Eigen::MatrixXd features;  // m x 54 (any width is accepted by the classifiers)
  std::vector<std::string> labels;

  Eigen::Index size() const noexcept { return features.rows(); }
  /// Rows belonging to `label`, in stored order.
  Eigen::MatrixXd rows_of(const std::string& label) const;
  TrainingSet subset(std::span<const std::size_t> rows) const;
};

/// Non-excluded records (optionally restricted to an environment) in KB order.
TrainingSet training_set(const KnowledgeBase& kb,
                         const std::optional<std::string>& environment = std::nullopt);

/// Fayyad-Irani recursive entropy split with the MDL stopping rule.
std::vector<double> discretize_attribute(std::span<const double> values,
                                         std::span<const std::string> labels);
/// Same with integer class ids.
std::vector<double> discretize_attribute(std::span<const double> values,
                                         std::span<const int> labels);

/// Bin of `value` under ascending cut points; a value equal to a cut falls below it.
std::size_t bin_index(std::span<const double> cuts, double value);

struct DiscretizationScheme {
  std::vector<std::vector<double>> cuts;  // one ascending list per attribute
  friend bool operator==(const DiscretizationScheme&, const DiscretizationScheme&) = default;
};

struct Posterior {
  std::string class_name;
  double probability = 0.0;
};

class NaiveBayesModel {
 public:
  NaiveBayesModel() = default;

  const DiscretizationScheme& scheme() const noexcept { return scheme_; }
  const std::vector<std::string>& classes() const noexcept { return classes_; }
  const std::vector<long>& class_counts() const noexcept { return class_counts_; }
  /// counts[class][attribute][bin]
  const std::vector<std::vector<std::vector<long>>>& bin_counts() const noexcept {
    return bin_counts_;
  }
  std::uint64_t trained_revision() const noexcept { return trained_revision_; }
  /// Classes with fewer than kMinTrainingInstances records; trained but flagged.
  const std::vector<std::string>& underpopulated() const noexcept { return underpopulated_; }

  /// Unnormalized log P(c) + sum log P(bin | c), in classes() order.
  std::vector<double> log_joint(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  /// Posteriors sorted descending; ties broken by class name.
  std::vector<Posterior> classify(const Eigen::Ref<const Eigen::VectorXd>& v) const;

  friend bool operator==(const NaiveBayesModel&, const NaiveBayesModel&) = default;

 private:
  friend NaiveBayesModel train_naive_bayes(const TrainingSet&, std::uint64_t);

  DiscretizationScheme scheme_;
  std::vector<std::string> classes_;
  std::vector<long> class_counts_;
  std::vector<std::vector<std::vector<long>>> bin_counts_;
  std::uint64_t trained_revision_ = 0;
  std::vector<std::string> underpopulated_;
};

/// Throws TrainingError on an empty set. Laplace add-one smoothing on priors and bins.
NaiveBayesModel train_naive_bayes(const TrainingSet& data, std::uint64_t revision = 0);
NaiveBayesModel train_naive_bayes(const KnowledgeBase& kb,
                                  const std::optional<std::string>& environment = std::nullopt);

struct NeighborMatch {
  std::string class_name;
  double distance = 0.0;
  Eigen::Index index = 0;
};

class NearestNeighborModel {
 public:
  /// min_max rescales every attribute to [0, 1] over the training rows.
  enum class Scaling { none, min_max };

  /// Throws TrainingError on an empty set.
  explicit NearestNeighborModel(TrainingSet data, std::uint64_t revision = 0,
                                Scaling scaling = Scaling::min_max);

  /// Minimum Euclidean distance in the scaled space; ties go to the earliest stored instance.
  NeighborMatch classify(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  const TrainingSet& instances() const noexcept { return data_; }
  std::uint64_t trained_revision() const noexcept { return trained_revision_; }
  Scaling scaling() const noexcept { return scaling_; }

 private:
  TrainingSet data_;
  std::uint64_t trained_revision_ = 0;
  Scaling scaling_ = Scaling::min_max;
  Eigen::RowVectorXd offset_;
  Eigen::RowVectorXd scale_;
  Eigen::MatrixXd scaled_;
};

}  // namespace esr
