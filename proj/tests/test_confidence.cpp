#include <doctest.h>

#include <random>

#include <Eigen/Geometry>

#include "esr/confidence.hpp"

using namespace esr;

TEST_CASE("toy example from the level table") {
  Eigen::Matrix<double, 2, 2> p;
  p << 0, 0, 4, 0;
  const auto r = gpi(Eigen::Vector2d(6, 0), p);
  CHECK(r.g == doctest::Approx(2.0));
  CHECK(r.centroid_distance == doctest::Approx(4.0));
  CHECK(r.nearest_distance == doctest::Approx(2.0));
  CHECK(r.nearest_index == 1);
  CHECK(r.level == 0);
}

TEST_CASE("level boundaries are left-closed") {
  CHECK(confidence_level(-0.3) == 5);
  CHECK(confidence_level(0.0) == 4);
  CHECK(confidence_level(0.5) == 3);
  CHECK(confidence_level(0.7) == 3);
  CHECK(confidence_level(1.0) == 2);
  CHECK(confidence_level(1.5) == 1);
  CHECK(confidence_level(2.0) == 0);
  CHECK(confidence_level(2.5) == 0);
  CHECK(confidence_level(std::nextafter(0.0, -1.0)) == 5);
  CHECK(confidence_level(std::nextafter(2.0, 0.0)) == 1);
  CHECK_THROWS_AS(confidence_level(NAN), ArgumentError);
}

TEST_CASE("query at an instance or at the centroid") {
  Eigen::MatrixXd p(3, 2);
  p << 0, 0, 4, 0, 0, 3;
  const auto at_instance = gpi(Eigen::Vector2d(4, 0), p);
  CHECK(at_instance.g == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(at_instance.level == 4);
  const Eigen::RowVector2d c = centroid(p);
  const auto at_centroid = gpi(c, p);
  CHECK(at_centroid.g <= 0.0);
  CHECK(at_centroid.level == 5);
}

TEST_CASE("single instance class") {
  Eigen::RowVector3d p(1, 2, 3);
  const auto r = gpi(Eigen::Vector3d(1, 2, 5), p);
  CHECK(r.nearest_distance == 0.0);
  CHECK(r.g == doctest::Approx(2.0));
  CHECK(r.level == 0);
}

TEST_CASE("g is invariant under rigid motion") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    Eigen::MatrixXd p = Eigen::MatrixXd::NullaryExpr(6, 3, [&] { return n(rng); });
    Eigen::Vector3d a = Eigen::Vector3d::NullaryExpr([&] { return n(rng); });
    const Eigen::Matrix3d rot =
        Eigen::AngleAxisd(n(rng), Eigen::Vector3d::NullaryExpr([&] { return n(rng); }).normalized())
            .toRotationMatrix();
    const Eigen::RowVector3d shift = Eigen::RowVector3d::NullaryExpr([&] { return n(rng); });
    Eigen::MatrixXd p2 = (p * rot.transpose()).rowwise() + shift;
    Eigen::Vector3d a2 = rot * a + shift.transpose();
    CHECK(gpi(a2, p2).g == doctest::Approx(gpi(a, p).g).epsilon(1e-9));
  }
}

TEST_CASE("float scalar and error paths") {
  Eigen::MatrixXf p(2, 2);
  p << 0, 0, 4, 0;
  const auto r = gpi(Eigen::Vector2f(6, 0), p);
  static_assert(std::is_same_v<decltype(r.g), float>);
  CHECK(r.g == doctest::Approx(2.0));
  CHECK_THROWS_AS(gpi(Eigen::Vector3f(6, 0, 0), p), ArgumentError);
  CHECK_THROWS_AS(gpi(Eigen::Vector2d(6, 0), Eigen::MatrixXd(0, 2)), ArgumentError);
}
