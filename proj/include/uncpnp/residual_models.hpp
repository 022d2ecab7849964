#pragma once

#include <Eigen/Dense>

#include "uncpnp/core_geometry.hpp"

namespace uncpnp {

/// One 2D-3D point correspondence with its noise model: the world point
/// carries a 3x3 covariance, the normalized detection a 2x2 covariance.
struct PointObservation {
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  Eigen::Matrix3d sigma_x = Eigen::Matrix3d::Zero();
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_u = Eigen::Matrix2d::Zero();
};

/// One 2D-3D line correspondence. The detected 2D line is stored as
/// normalized coefficients, |l(0:1)| = 1, so l . (u, v, 1) is the signed
/// point-line distance; sigma_l2 is the variance of that distance.
struct LineObservation {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d q = Eigen::Vector3d::Zero();
  Eigen::Matrix3d sigma_p = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d sigma_q = Eigen::Matrix3d::Zero();
  Eigen::Vector3d l = Eigen::Vector3d(1, 0, 0);
  double sigma_l2 = 0.0;
};

/// Stacked 2-dimensional residual with covariance and whitening factor
/// W such that W' W = sigma_reg^-1 and W sigma_reg W' = I.
struct ResidualBlock {
  Eigen::Vector2d r = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d sigma_reg = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d whitener = Eigen::Matrix2d::Identity();
};

/// Symmetrize and, when the smallest eigenvalue dips below 1e-12 * trace,
/// add 1e-10 * trace/dim * I. An all-zero covariance falls back to identity
/// (identity-weight degenerate case).
Eigen::Matrix2d regularize_covariance(const Eigen::Matrix2d& sigma);

/// Upper-triangular W from the Cholesky factor of sigma_reg^-1.
Eigen::Matrix2d whitening_factor(const Eigen::Matrix2d& sigma_reg);

ResidualBlock make_residual_block(const Eigen::Vector2d& r,
                                  const Eigen::Matrix2d& sigma);

// ---- algebraic residuals (solver side) ----

/// r = xhat(0:1) - u * xhat(2), with xhat = R x + t.
Eigen::Vector2d point_algebraic_residual(const Pose& pose,
                                         const PointObservation& obs);

/// Covariance of the algebraic point residual. `rotation` rotates sigma_x
/// into the camera frame (identity when no hypothesis is available) and
/// `depth` stands in for xhat(2).
Eigen::Matrix2d point_residual_covariance(const Eigen::Matrix3d& rotation,
                                          const PointObservation& obs,
                                          double depth);

/// r = (l . phat, l . qhat) with phat = R p + t, qhat = R q + t.
Eigen::Vector2d line_algebraic_residual(const Pose& pose,
                                        const LineObservation& obs);

/// Covariance of the algebraic line residual; diagonal by the model's
/// endpoint-independence assumption.
Eigen::Matrix2d line_residual_covariance(const Eigen::Matrix3d& rotation,
                                         const LineObservation& obs,
                                         double depth_p, double depth_q);

/// Rotation-free approximations used inside the linear solvers: isotropic
/// 3D covariance sigma_x2 plus a scalar depth (scene average or a
/// per-feature estimate from a pose hypothesis).
Eigen::Matrix2d epnp_point_residual_covariance(const PointObservation& obs,
                                               double sigma_x2, double depth);

Eigen::Matrix2d epnp_line_residual_covariance(const LineObservation& obs,
                                              double sigma_p2, double sigma_q2,
                                              double depth_p, double depth_q);

// ---- gold-standard residuals (refinement / gating side) ----

/// r = u - project(R x + t). Throws Error(kDepthZero) behind the camera plane.
Eigen::Vector2d gold_point_residual(const Pose& pose,
                                    const PointObservation& obs);

/// sigma_u + J R sigma_x R' J', J the projection Jacobian at R x + t.
Eigen::Matrix2d gold_point_covariance(const Pose& pose,
                                      const PointObservation& obs);

/// (l . hom(project(R p + t)), l . hom(project(R q + t))).
Eigen::Vector2d gold_line_residual(const Pose& pose,
                                   const LineObservation& obs);

/// sigma_l2 I + diag over endpoints of l(0:1)' J R sigma R' J' l(0:1).
Eigen::Matrix2d gold_line_covariance(const Pose& pose,
                                     const LineObservation& obs);

}  // namespace uncpnp
