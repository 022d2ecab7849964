#include "uncpnp/uncertainty_models.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "uncpnp/errors.hpp"
#include "uncpnp/residual_models.hpp"

namespace uncpnp {

namespace {

Eigen::Vector3d camera_center(const Pose& pose) {
  return -(pose.R.transpose() * pose.t);
}

Eigen::Vector3d bearing_world(const Pose& pose, const Eigen::Vector2d& u) {
  return (pose.R.transpose() * u.homogeneous()).normalized();
}

/// Closest point between two rays (midpoint of the common perpendicular).
Eigen::Vector3d midpoint_init(const Eigen::Vector3d& o1, const Eigen::Vector3d& d1,
                              const Eigen::Vector3d& o2, const Eigen::Vector3d& d2) {
  Eigen::Matrix2d a;
  a << d1.dot(d1), -d1.dot(d2), d1.dot(d2), -d2.dot(d2);
  Eigen::Vector2d b(d1.dot(o2 - o1), d2.dot(o2 - o1));
  const Eigen::Vector2d su = a.fullPivLu().solve(b);
  return 0.5 * ((o1 + su(0) * d1) + (o2 + su(1) * d2));
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

}  // namespace

PyramidCovariance pyramid_covariance(const PyramidDetectorSpec& spec, int level) {
  if (level < 1 || level > spec.n_levels) {
    throw Error(ErrorCode::kLevelOutOfRange, "pyramid_covariance: level " +
                                                 std::to_string(level) +
                                                 " outside [1, n_levels]");
  }
  const double sigma = std::pow(spec.kappa, level - 1) * spec.epsilon;
  return {sigma * sigma * Eigen::Matrix2d::Identity(), sigma * sigma};
}

PointTriangulation triangulate_point_with_covariance(
    std::span<const ViewPointObservation> views) {
  if (views.size() < 2) {
    throw Error(ErrorCode::kInvalidInput, "triangulation needs >= 2 views");
  }

  // Widest pairwise ray angle decides degeneracy and seeds the midpoint.
  double best_angle = 0.0;
  size_t bi = 0, bj = 1;
  for (size_t i = 0; i < views.size(); ++i) {
    for (size_t j = i + 1; j < views.size(); ++j) {
      const Eigen::Vector3d di = bearing_world(views[i].pose, views[i].u);
      const Eigen::Vector3d dj = bearing_world(views[j].pose, views[j].u);
      const double angle = std::acos(std::clamp(di.dot(dj), -1.0, 1.0));
      if (angle > best_angle) {
        best_angle = angle;
        bi = i;
        bj = j;
      }
    }
  }
  if (best_angle < 1e-4) {
    throw Error(ErrorCode::kDegenerateBaseline,
                "triangulate_point: ray angle below 1e-4 rad");
  }

  Eigen::Vector3d x = midpoint_init(
      camera_center(views[bi].pose), bearing_world(views[bi].pose, views[bi].u),
      camera_center(views[bj].pose), bearing_world(views[bj].pose, views[bj].u));

  PointTriangulation out;
  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    info.setZero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (const auto& view : views) {
      const Eigen::Vector3d xc = view.pose.apply(x);
      const Eigen::Vector2d r = view.u - project(xc);
      const Eigen::Matrix<double, 2, 3> j = -projection_jacobian(xc) * view.pose.R;
      const Eigen::Matrix2d w = view.sigma_u.inverse();
      info += j.transpose() * w * j;
      rhs += -j.transpose() * w * r;
    }
    const Eigen::Vector3d step = info.ldlt().solve(rhs);
    x += step;
    out.iterations = iter + 1;
    if (step.norm() < 1e-12 * (1.0 + x.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "triangulate_point: no convergence in 50 iterations");
  }

  out.x = x;
  out.sigma_x = info.inverse();
  out.information_condition = condition_number(info);
  return out;
}

LineTriangulation triangulate_line_with_covariance(
    const LineEndpointView& first, std::span<const LineCoefficientView> others) {
  if (others.empty()) {
    throw Error(ErrorCode::kInvalidInput, "line triangulation needs >= 2 views");
  }

  // Initialize by piercing the first view's endpoint rays through the plane
  // spanned by the second view's line and its camera center.
  const Eigen::Vector3d o1 = camera_center(first.pose);
  const Eigen::Vector3d o2 = camera_center(others[0].pose);
  const Eigen::Vector3d plane_n = others[0].pose.R.transpose() * others[0].l;
  if ((o1 - o2).norm() < 1e-12) {
    throw Error(ErrorCode::kDegenerateBaseline, "line triangulation: zero baseline");
  }
  const auto pierce = [&](const Eigen::Vector2d& u) {
    const Eigen::Vector3d d = bearing_world(first.pose, u);
    const double denom = plane_n.dot(d);
    if (std::abs(denom) < 1e-6 * plane_n.norm()) {
      // Ray lies (almost) in the line plane; seed at a generic depth beyond
      // the baseline and let Gauss-Newton take over.
      return Eigen::Vector3d(o1 + 10.0 * (o2 - o1).norm() * d);
    }
    return Eigen::Vector3d(o1 + (plane_n.dot(o2 - o1) / denom) * d);
  };

  Eigen::Matrix<double, 6, 1> y;
  y << pierce(first.u_p), pierce(first.u_q);

  Eigen::Matrix<double, 6, 6> info = Eigen::Matrix<double, 6, 6>::Zero();
  LineTriangulation out;
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    info.setZero();
    Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();

    // First view: plain reprojection of both endpoints.
    const auto add_point = [&](const Eigen::Vector3d& pt, const Eigen::Vector2d& u,
                               const Eigen::Matrix2d& sigma, int offset) {
      const Eigen::Vector3d xc = first.pose.apply(pt);
      const Eigen::Vector2d r = u - project(xc);
      const Eigen::Matrix<double, 2, 3> j = -projection_jacobian(xc) * first.pose.R;
      const Eigen::Matrix2d w = sigma.inverse();
      info.block<3, 3>(offset, offset) += j.transpose() * w * j;
      rhs.segment<3>(offset) += -j.transpose() * w * r;
    };
    add_point(y.head<3>(), first.u_p, first.sigma_p, 0);
    add_point(y.tail<3>(), first.u_q, first.sigma_q, 3);

    // Remaining views: signed distance of each projected endpoint to the line.
    for (const auto& view : others) {
      for (int e = 0; e < 2; ++e) {
        const int offset = 3 * e;
        const Eigen::Vector3d pt = y.segment<3>(offset);
        const Eigen::Vector3d xc = view.pose.apply(pt);
        const Eigen::Vector2d proj = project(xc);
        const double r = view.l.head<2>().dot(proj) + view.l(2);
        const Eigen::Matrix<double, 1, 3> j =
            view.l.head<2>().transpose() * projection_jacobian(xc) * view.pose.R;
        const double w = 1.0 / view.sigma_l2;
        info.block<3, 3>(offset, offset) += j.transpose() * w * j;
        rhs.segment<3>(offset) += -j.transpose() * w * r;
      }
    }

    const Eigen::Matrix<double, 6, 1> step = info.ldlt().solve(rhs);
    y += step;
    out.iterations = iter + 1;
    if (step.norm() < 1e-12 * (1.0 + y.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "triangulate_line: no convergence in 50 iterations");
  }

  const Eigen::Matrix<double, 6, 6> cov = info.inverse();
  out.p = y.head<3>();
  out.q = y.tail<3>();
  out.sigma_p = cov.block<3, 3>(0, 0);
  out.sigma_q = cov.block<3, 3>(3, 3);
  out.information_condition = condition_number(info);
  return out;
}

double isotropic_approximation(const Eigen::Matrix3d& sigma) {
  return sigma.trace() / 3.0;
}

}  // namespace uncpnp
