#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "esr/errors.hpp"

namespace esr {

/// Group pertinence index of a query against the instances of its recognized class.
template <typename Scalar>
struct GpiResult {
  Scalar g = 0;
  int level = 0;
  std::string class_name;
  Scalar centroid_distance = 0;  // d(a, c)
  Scalar nearest_distance = 0;   // d(p*, c)
  Eigen::Index nearest_index = 0;
};

/// Lower bounds of levels 4, 3, 2, 1, 0. Anything below the first bound is level 5.
struct LevelThresholds {
  std::array<double, 5> bounds{0.0, 0.5, 1.0, 1.5, 2.0};
};

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar euclidean(const Eigen::MatrixBase<DerivedA>& x,
                                    const Eigen::MatrixBase<DerivedB>& y) {
  if (x.size() != y.size()) throw ArgumentError("euclidean: length mismatch");
  return (x.derived() - y.derived()).norm();
}

/// Column-wise mean of an m x n instance matrix (one instance per row).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> centroid(
    const Eigen::MatrixBase<Derived>& instances) {
  if (instances.rows() == 0) throw ArgumentError("centroid of empty instance set");
  return instances.colwise().mean();
}

inline int confidence_level(double g, const LevelThresholds& t = {}) {
  if (!std::isfinite(g)) throw ArgumentError("confidence_level: g must be finite");
  int level = 5;
  for (double bound : t.bounds) {
    if (g >= bound) --level;
  }
  return level;
}

/// g(a, P) = d(a, c) - d(p*, c), with p* the first-stored nearest instance to a.
template <typename DerivedA, typename DerivedP>
GpiResult<typename DerivedA::Scalar> gpi(const Eigen::MatrixBase<DerivedA>& query,
                                         const Eigen::MatrixBase<DerivedP>& instances,
                                         const LevelThresholds& thresholds = {}) {
  using Scalar = typename DerivedA::Scalar;
  if (instances.rows() == 0) throw ArgumentError("gpi: recognized class has no instances");
  if (instances.cols() != query.size()) throw ArgumentError("gpi: dimension mismatch");
  const auto a = query.derived().reshaped().transpose().eval();
  const auto c = centroid(instances);

  Eigen::Index nearest = 0;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < instances.rows(); ++i) {
    const Scalar d = euclidean(instances.row(i), a);
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  GpiResult<Scalar> out;
  out.centroid_distance = euclidean(a, c);
  out.nearest_distance = euclidean(instances.row(nearest), c);
  out.g = out.centroid_distance - out.nearest_distance;
  out.level = confidence_level(static_cast<double>(out.g), thresholds);
  out.nearest_index = nearest;
  return out;
}

}  // namespace esr
