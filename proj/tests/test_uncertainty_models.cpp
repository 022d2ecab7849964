#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_utils.hpp"
#include "uncpnp/uncertainty_models.hpp"

using namespace uncpnp;
namespace tt = uncpnp::testing;

namespace {

/// Lateral-stereo rig: world frame = first camera, second shifted by b along x.
std::vector<ViewPointObservation> stereo_views(const Eigen::Vector3d& x,
                                               double baseline, double sigma) {
  std::vector<ViewPointObservation> views(2);
  views[0].pose = Pose{};
  views[1].pose.R = Eigen::Matrix3d::Identity();
  views[1].pose.t = Eigen::Vector3d(-baseline, 0, 0);  // center at (b, 0, 0)
  for (auto& v : views) {
    v.u = project(v.pose.apply(x));
    v.sigma_u = sigma * sigma * Eigen::Matrix2d::Identity();
  }
  return views;
}

}  // namespace

TEST_CASE("pyramid_covariance: paper constants and direct evaluation") {
  PyramidDetectorSpec spec{1.2, 8, 1.0};
  auto c = pyramid_covariance(spec, 1);
  CHECK(c.sigma_l2 == doctest::Approx(1.0));
  CHECK((c.sigma_u - Eigen::Matrix2d::Identity()).norm() < 1e-15);

  c = pyramid_covariance(spec, 2);
  CHECK(c.sigma_l2 == doctest::Approx(1.44));

  c = pyramid_covariance(PyramidDetectorSpec{2.0, 8, 0.5}, 3);
  CHECK(std::sqrt(c.sigma_l2) == doctest::Approx(2.0));

  CHECK_THROWS_AS(pyramid_covariance(spec, 0), Error);
  CHECK_THROWS_AS(pyramid_covariance(spec, 9), Error);
}

TEST_CASE("pyramid_covariance: monotone in level for kappa > 1") {
  PyramidDetectorSpec spec{1.2, 8, 1.0};
  double prev = 0.0;
  for (int o = 1; o <= 8; ++o) {
    const double s = pyramid_covariance(spec, o).sigma_l2;
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("triangulate_point: exact two-view recovery") {
  const Eigen::Vector3d x(0.4, -0.7, 6.0);
  const auto views = stereo_views(x, 0.5, 1e-3);
  const auto result = triangulate_point_with_covariance(views);
  CHECK((result.x - x).norm() < 1e-9);
}

TEST_CASE("triangulate_point: depth std grows ~quadratically with depth") {
  // (d^2/b)^2 trend: doubling the depth multiplies the depth variance ~16x.
  const double b = 0.5, sigma = 2e-3;
  const auto near_views = stereo_views({0.1, 0.1, 4.0}, b, sigma);
  const auto far_views = stereo_views({0.1, 0.1, 8.0}, b, sigma);
  const double var_near =
      triangulate_point_with_covariance(near_views).sigma_x(2, 2);
  const double var_far =
      triangulate_point_with_covariance(far_views).sigma_x(2, 2);
  const double ratio = var_far / var_near;
  CHECK(ratio > 16.0 / 1.5);
  CHECK(ratio < 16.0 * 1.5);
}

TEST_CASE("triangulate_point: degenerate baseline raises") {
  // Two identical cameras: rays to any point coincide.
  std::vector<ViewPointObservation> views(2);
  const Eigen::Vector3d x(0.2, 0.1, 5.0);
  for (auto& v : views) {
    v.pose = Pose{};
    v.u = project(x);
    v.sigma_u = Eigen::Matrix2d::Identity();
  }
  CHECK_THROWS_AS(triangulate_point_with_covariance(views), Error);
  try {
    triangulate_point_with_covariance(views);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateBaseline);
  }
}

TEST_CASE("triangulate_point: Monte Carlo covariance oracle") {
  tt::Rng rng(50);
  const Eigen::Vector3d x(0.3, -0.4, 6.0);
  const double sigma = 1.5e-3;
  auto views = stereo_views(x, 0.6, sigma);
  const auto nominal = triangulate_point_with_covariance(views);

  const int draws = 10000;
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> samples;
  samples.reserve(draws);
  std::normal_distribution<double> n(0.0, sigma);
  for (int i = 0; i < draws; ++i) {
    auto noisy = views;
    for (auto& v : noisy) v.u += Eigen::Vector2d(n(rng), n(rng));
    const Eigen::Vector3d xi = triangulate_point_with_covariance(noisy).x;
    samples.push_back(xi);
    mean += xi;
  }
  mean /= draws;
  for (const auto& s : samples) acc += (s - mean) * (s - mean).transpose();
  const Eigen::Matrix3d sampled = acc / (draws - 1);
  CHECK((sampled - nominal.sigma_x).norm() / nominal.sigma_x.norm() < 0.10);
}

namespace {

/// Fixed test rig for segment triangulation: returns endpoint covariance
/// trace for a segment with given direction.
double segment_cov_trace(const Eigen::Vector3d& dir) {
  const Eigen::Vector3d mid(0.0, 0.0, 6.0);
  const Eigen::Vector3d p = mid - dir, q = mid + dir;

  LineEndpointView first;
  first.pose = Pose{};
  first.u_p = project(p);
  first.u_q = project(q);
  const double s2 = 4e-6;
  first.sigma_p = s2 * Eigen::Matrix2d::Identity();
  first.sigma_q = s2 * Eigen::Matrix2d::Identity();

  LineCoefficientView second;
  second.pose.R = Eigen::Matrix3d::Identity();
  second.pose.t = Eigen::Vector3d(-0.5, 0, 0);  // baseline along x
  const Eigen::Vector3d ph = second.pose.apply(p) / second.pose.apply(p)(2);
  const Eigen::Vector3d qh = second.pose.apply(q) / second.pose.apply(q)(2);
  Eigen::Vector3d l = ph.cross(qh);
  l /= l.head<2>().norm();
  second.l = l;
  second.sigma_l2 = s2;

  const auto result = triangulate_line_with_covariance(first, {&second, 1});
  return result.sigma_p.trace() + result.sigma_q.trace();
}

}  // namespace

TEST_CASE("triangulate_line: exact two-view segment recovery") {
  const Eigen::Vector3d p(-0.5, 0.2, 5.0), q(0.7, -0.3, 6.5);
  LineEndpointView first;
  first.pose = Pose{};
  first.u_p = project(p);
  first.u_q = project(q);
  first.sigma_p = 1e-6 * Eigen::Matrix2d::Identity();
  first.sigma_q = 1e-6 * Eigen::Matrix2d::Identity();

  LineCoefficientView second;
  second.pose.R = tt::axis_angle_oracle(Eigen::Vector3d::UnitY(), 0.1);
  second.pose.t = Eigen::Vector3d(-0.4, 0.05, 0.1);
  const Eigen::Vector3d ph = second.pose.apply(p) / second.pose.apply(p)(2);
  const Eigen::Vector3d qh = second.pose.apply(q) / second.pose.apply(q)(2);
  Eigen::Vector3d l = ph.cross(qh);
  l /= l.head<2>().norm();
  second.l = l;
  second.sigma_l2 = 1e-6;

  const auto result = triangulate_line_with_covariance(first, {&second, 1});
  CHECK((result.p - p).norm() < 1e-8);
  CHECK((result.q - q).norm() < 1e-8);
}

TEST_CASE("triangulate_line: baseline-parallel segment is less certain") {
  // Baseline is along x. An exactly parallel segment lies in the epipolar
  // plane and is unobservable; a 6-degree tilt keeps it finite but far less
  // certain than the perpendicular layout.
  const double parallel = segment_cov_trace(Eigen::Vector3d(0.8, 0.08, 0));
  const double perpendicular = segment_cov_trace(Eigen::Vector3d(0, 0.8, 0));
  CHECK(parallel >= 5.0 * perpendicular);
}

TEST_CASE("triangulate_line: Monte Carlo covariance oracle") {
  tt::Rng rng(51);
  const Eigen::Vector3d p(-0.4, 0.5, 5.5), q(0.6, 0.1, 6.0);
  LineEndpointView first;
  first.pose = Pose{};
  first.u_p = project(p);
  first.u_q = project(q);
  const double s2 = 2.25e-6;
  first.sigma_p = s2 * Eigen::Matrix2d::Identity();
  first.sigma_q = s2 * Eigen::Matrix2d::Identity();

  LineCoefficientView second;
  second.pose.R = tt::axis_angle_oracle(Eigen::Vector3d::UnitY(), -0.08);
  second.pose.t = Eigen::Vector3d(-0.5, 0.0, 0.0);
  const Eigen::Vector3d ph = second.pose.apply(p) / second.pose.apply(p)(2);
  const Eigen::Vector3d qh = second.pose.apply(q) / second.pose.apply(q)(2);
  Eigen::Vector3d l0 = ph.cross(qh);
  l0 /= l0.head<2>().norm();
  second.l = l0;
  second.sigma_l2 = s2;

  const auto nominal = triangulate_line_with_covariance(first, {&second, 1});

  const int draws = 10000;
  std::normal_distribution<double> n(0.0, std::sqrt(s2));
  Eigen::MatrixXd samples(6, draws);
  for (int i = 0; i < draws; ++i) {
    LineEndpointView nf = first;
    nf.u_p += Eigen::Vector2d(n(rng), n(rng));
    nf.u_q += Eigen::Vector2d(n(rng), n(rng));
    // Perturb the second view's line by independent normal offsets at the
    // two endpoint projections.
    LineCoefficientView ns = second;
    const Eigen::Vector2d normal_dir = l0.head<2>();
    const Eigen::Vector2d a = ph.head<2>() + n(rng) * normal_dir;
    const Eigen::Vector2d b = qh.head<2>() + n(rng) * normal_dir;
    Eigen::Vector3d lh = a.homogeneous().cross(b.homogeneous());
    lh /= lh.head<2>().norm();
    ns.l = lh;
    const auto res = triangulate_line_with_covariance(nf, {&ns, 1});
    samples.col(i) << res.p, res.q;
  }
  const Eigen::VectorXd mean = samples.rowwise().mean();
  Eigen::MatrixXd centered = samples.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / (draws - 1);
  CHECK((cov.block<3, 3>(0, 0) - nominal.sigma_p).norm() /
            nominal.sigma_p.norm() < 0.10);
  CHECK((cov.block<3, 3>(3, 3) - nominal.sigma_q).norm() /
            nominal.sigma_q.norm() < 0.10);
}

TEST_CASE("isotropic_approximation: values and grid optimality") {
  CHECK(isotropic_approximation(Eigen::Matrix3d::Identity()) == 1.0);
  CHECK(isotropic_approximation(Eigen::Vector3d(3, 0, 0).asDiagonal()) == 1.0);

  tt::Rng rng(52);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Matrix3d sigma = tt::random_psd3(rng, 1.0);
    const double s_star = isotropic_approximation(sigma);
    const double best =
        (sigma - s_star * Eigen::Matrix3d::Identity()).squaredNorm();
    for (int k = 0; k <= 20; ++k) {
      const double s = s_star * (0.5 + 1.5 * k / 20.0);
      const double dist =
          (sigma - s * Eigen::Matrix3d::Identity()).squaredNorm();
      CHECK(best <= dist + 1e-15);
    }
  }
}
