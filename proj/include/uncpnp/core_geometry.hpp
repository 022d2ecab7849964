#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "uncpnp/errors.hpp"

namespace uncpnp {

/// Rigid transform mapping world coordinates into the camera frame,
/// x_cam = R * x_world + t. All image quantities downstream assume
/// normalized coordinates (calibration already applied, K = I).
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return R * x + t; }

  Pose inverse() const { return Pose{R.transpose(), -(R.transpose() * t)}; }

  /// R orthonormal with det +1, both within `tol` (Frobenius).
  bool is_valid_rotation(double tol = 1e-9) const {
    return (R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < tol &&
           std::abs(R.determinant() - 1.0) < tol;
  }
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(
    const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 3, 3> m;
  m << Scalar(0), -v(2), v(1),
       v(2), Scalar(0), -v(0),
       -v(1), v(0), Scalar(0);
  return m;
}

/// Cayley (Gibbs) vector to rotation matrix,
/// R(s) = ((1 - s's) I + 2 [s]_x + 2 s s') / (1 + |s|^2).
/// Total on finite s; covers all rotations except exactly 180 degrees.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> cayley_to_rotation(
    const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  const Scalar n2 = s.squaredNorm();
  Mat3 r = (Scalar(1) - n2) * Mat3::Identity() + Scalar(2) * skew(s) +
           Scalar(2) * (s * s.transpose());
  return r / (Scalar(1) + n2);
}

/// Inverse of cayley_to_rotation. Throws Error(kSingular180) at the
/// 180-degree singularity where trace(R) = -1.
inline Eigen::Vector3d rotation_to_cayley(const Eigen::Matrix3d& r) {
  const double denom = 1.0 + r.trace();
  if (denom < 1e-9) {
    throw Error(ErrorCode::kSingular180,
                "rotation_to_cayley: 180-degree rotation has no Cayley vector");
  }
  // R - R' = 4/(1 + trace R) [s]_x
  Eigen::Vector3d s;
  s << r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1);
  return s / denom;
}

/// Perspective division, (x, y, z) -> (x/z, y/z).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 2, 1> project(
    const Eigen::MatrixBase<Derived>& x_cam) {
  using Scalar = typename Derived::Scalar;
  if (std::abs(x_cam(2)) < Scalar(1e-12)) {
    throw Error(ErrorCode::kDepthZero, "project: point at zero depth");
  }
  return x_cam.template head<2>() / x_cam(2);
}

/// 2x3 Jacobian of project() at x_cam.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 2, 3> projection_jacobian(
    const Eigen::MatrixBase<Derived>& x_cam) {
  using Scalar = typename Derived::Scalar;
  if (std::abs(x_cam(2)) < Scalar(1e-12)) {
    throw Error(ErrorCode::kDepthZero, "projection_jacobian: zero depth");
  }
  const Scalar iz = Scalar(1) / x_cam(2);
  Eigen::Matrix<Scalar, 2, 3> j;
  j << iz, Scalar(0), -x_cam(0) * iz * iz,
       Scalar(0), iz, -x_cam(1) * iz * iz;
  return j;
}

/// Rodrigues exponential map so(3) -> SO(3).
inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d k = skew(w);
    return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  }
  const Eigen::Matrix3d k = skew(w / theta);
  return Eigen::Matrix3d::Identity() + std::sin(theta) * k +
         (1.0 - std::cos(theta)) * k * k;
}

/// Nearest rotation matrix in Frobenius norm (SVD projection).
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

/// Weighted Procrustes: rigid transform minimizing
/// sum_i w_i |dst_i - (R src_i + t)|^2. Columns are points.
inline Pose weighted_rigid_align(const Eigen::Matrix3Xd& src,
                                 const Eigen::Matrix3Xd& dst,
                                 const Eigen::VectorXd& weights) {
  const double wsum = weights.sum();
  if (src.cols() < 3 || wsum <= 0.0) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "weighted_rigid_align: need >= 3 points with positive weight");
  }
  const Eigen::Vector3d src_mean = (src * weights) / wsum;
  const Eigen::Vector3d dst_mean = (dst * weights) / wsum;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (Eigen::Index i = 0; i < src.cols(); ++i) {
    h += weights(i) * (dst.col(i) - dst_mean) * (src.col(i) - src_mean).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  Pose pose;
  pose.R = svd.matrixU() * d * svd.matrixV().transpose();
  pose.t = dst_mean - pose.R * src_mean;
  return pose;
}

inline Pose rigid_align(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  return weighted_rigid_align(src, dst, Eigen::VectorXd::Ones(src.cols()));
}

}  // namespace uncpnp
