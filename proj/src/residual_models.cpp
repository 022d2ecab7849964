#include "uncpnp/residual_models.hpp"

#include <Eigen/Cholesky>

namespace uncpnp {

Eigen::Matrix2d regularize_covariance(const Eigen::Matrix2d& sigma) {
  Eigen::Matrix2d s = 0.5 * (sigma + sigma.transpose());
  const double trace = s.trace();
  if (!(trace > 1e-300)) {
    return Eigen::Matrix2d::Identity();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(s);
  if (es.eigenvalues().minCoeff() < 1e-12 * trace) {
    s += (1e-10 * trace / 2.0) * Eigen::Matrix2d::Identity();
  }
  return s;
}

Eigen::Matrix2d whitening_factor(const Eigen::Matrix2d& sigma_reg) {
  const Eigen::Matrix2d info = sigma_reg.inverse();
  Eigen::LLT<Eigen::Matrix2d> llt(0.5 * (info + info.transpose()));
  return llt.matrixL().transpose();
}

ResidualBlock make_residual_block(const Eigen::Vector2d& r,
                                  const Eigen::Matrix2d& sigma) {
  ResidualBlock block;
  block.r = r;
  block.sigma = sigma;
  block.sigma_reg = regularize_covariance(sigma);
  block.whitener = whitening_factor(block.sigma_reg);
  return block;
}

Eigen::Vector2d point_algebraic_residual(const Pose& pose,
                                         const PointObservation& obs) {
  const Eigen::Vector3d xhat = pose.apply(obs.x);
  return xhat.head<2>() - obs.u * xhat(2);
}

Eigen::Matrix2d point_residual_covariance(const Eigen::Matrix3d& rotation,
                                          const PointObservation& obs,
                                          double depth) {
  const Eigen::Matrix3d sig_cam = rotation * obs.sigma_x * rotation.transpose();
  const Eigen::Matrix2d s = sig_cam.topLeftCorner<2, 2>();
  const Eigen::Vector2d w = sig_cam.topRightCorner<2, 1>();
  const double gamma = sig_cam(2, 2);
  Eigen::Matrix2d cov = s + gamma * (obs.u * obs.u.transpose()) +
                        depth * depth * obs.sigma_u -
                        (obs.u * w.transpose() + w * obs.u.transpose());
  return 0.5 * (cov + cov.transpose());
}

Eigen::Vector2d line_algebraic_residual(const Pose& pose,
                                        const LineObservation& obs) {
  return {obs.l.dot(pose.apply(obs.p)), obs.l.dot(pose.apply(obs.q))};
}

Eigen::Matrix2d line_residual_covariance(const Eigen::Matrix3d& rotation,
                                         const LineObservation& obs,
                                         double depth_p, double depth_q) {
  const Eigen::Matrix3d sig_p = rotation * obs.sigma_p * rotation.transpose();
  const Eigen::Matrix3d sig_q = rotation * obs.sigma_q * rotation.transpose();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  cov(0, 0) = obs.sigma_l2 * depth_p * depth_p + obs.l.dot(sig_p * obs.l);
  cov(1, 1) = obs.sigma_l2 * depth_q * depth_q + obs.l.dot(sig_q * obs.l);
  return cov;
}

Eigen::Matrix2d epnp_point_residual_covariance(const PointObservation& obs,
                                               double sigma_x2, double depth) {
  return sigma_x2 * Eigen::Matrix2d::Identity() +
         depth * depth * obs.sigma_u +
         sigma_x2 * (obs.u * obs.u.transpose());
}

Eigen::Matrix2d epnp_line_residual_covariance(const LineObservation& obs,
                                              double sigma_p2, double sigma_q2,
                                              double depth_p, double depth_q) {
  const double l2 = obs.l.squaredNorm();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  cov(0, 0) = obs.sigma_l2 * depth_p * depth_p + l2 * sigma_p2;
  cov(1, 1) = obs.sigma_l2 * depth_q * depth_q + l2 * sigma_q2;
  return cov;
}

Eigen::Vector2d gold_point_residual(const Pose& pose,
                                    const PointObservation& obs) {
  return obs.u - project(pose.apply(obs.x));
}

Eigen::Matrix2d gold_point_covariance(const Pose& pose,
                                      const PointObservation& obs) {
  const Eigen::Vector3d xhat = pose.apply(obs.x);
  const Eigen::Matrix<double, 2, 3> j = projection_jacobian(xhat);
  return obs.sigma_u +
         j * pose.R * obs.sigma_x * pose.R.transpose() * j.transpose();
}

Eigen::Vector2d gold_line_residual(const Pose& pose,
                                   const LineObservation& obs) {
  const Eigen::Vector2d pp = project(pose.apply(obs.p));
  const Eigen::Vector2d pq = project(pose.apply(obs.q));
  return {obs.l.head<2>().dot(pp) + obs.l(2), obs.l.head<2>().dot(pq) + obs.l(2)};
}

Eigen::Matrix2d gold_line_covariance(const Pose& pose,
                                     const LineObservation& obs) {
  const auto endpoint_var = [&](const Eigen::Vector3d& x,
                                const Eigen::Matrix3d& sigma) {
    const Eigen::Vector3d xhat = pose.apply(x);
    const Eigen::Matrix<double, 2, 3> j = projection_jacobian(xhat);
    const Eigen::Vector2d ln = obs.l.head<2>();
    return ln.dot(j * pose.R * sigma * pose.R.transpose() * j.transpose() * ln);
  };
  Eigen::Matrix2d cov = obs.sigma_l2 * Eigen::Matrix2d::Identity();
  cov(0, 0) += endpoint_var(obs.p, obs.sigma_p);
  cov(1, 1) += endpoint_var(obs.q, obs.sigma_q);
  return cov;
}

}  // namespace uncpnp
