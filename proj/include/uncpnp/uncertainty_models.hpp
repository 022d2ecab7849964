#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "uncpnp/core_geometry.hpp"

namespace uncpnp {

/// Multiscale pyramidal detector: sigma_o = kappa^(o-1) * epsilon at level o.
struct PyramidDetectorSpec {
  double kappa = 1.2;
  int n_levels = 8;
  double epsilon = 1.0;
};

struct PyramidCovariance {
  Eigen::Matrix2d sigma_u;
  double sigma_l2;
};

/// Detection covariance at pyramid level `level` (1-based).
/// Throws Error(kLevelOutOfRange) outside [1, n_levels].
PyramidCovariance pyramid_covariance(const PyramidDetectorSpec& spec, int level);

/// One calibrated view of a point track.
struct ViewPointObservation {
  Pose pose;
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_u = Eigen::Matrix2d::Identity();
};

struct PointTriangulation {
  Eigen::Vector3d x;
  Eigen::Matrix3d sigma_x;
  double information_condition = 0.0;
  int iterations = 0;
};

/// Gauss-Newton triangulation from >= 2 views, midpoint initialization;
/// covariance is the inverse Gauss-Newton information matrix.
/// Throws kDegenerateBaseline (ray angle < 1e-4 rad) or kNoConvergence.
PointTriangulation triangulate_point_with_covariance(
    std::span<const ViewPointObservation> views);

/// First view of a segment track: both endpoint detections.
struct LineEndpointView {
  Pose pose;
  Eigen::Vector2d u_p = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_p = Eigen::Matrix2d::Identity();
  Eigen::Vector2d u_q = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_q = Eigen::Matrix2d::Identity();
};

/// Any further view contributes only the infinite line it detected.
struct LineCoefficientView {
  Pose pose;
  Eigen::Vector3d l = Eigen::Vector3d(1, 0, 0);
  double sigma_l2 = 1.0;
};

struct LineTriangulation {
  Eigen::Vector3d p;
  Eigen::Vector3d q;
  Eigen::Matrix3d sigma_p;
  Eigen::Matrix3d sigma_q;
  double information_condition = 0.0;
  int iterations = 0;
};

/// Endpoint triangulation mixing point reprojection residuals in the first
/// view with line-distance residuals in the remaining views. Endpoint
/// cross-covariance is computed inside the information matrix but only the
/// two 3x3 diagonal blocks are reported.
LineTriangulation triangulate_line_with_covariance(
    const LineEndpointView& first,
    std::span<const LineCoefficientView> others);

/// trace(sigma)/3, the Frobenius-optimal isotropic stand-in s*I for sigma.
double isotropic_approximation(const Eigen::Matrix3d& sigma);

}  // namespace uncpnp
