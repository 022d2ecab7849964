#include "uncpnp/epnpu.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "uncpnp/errors.hpp"
#include "uncpnp/uncertainty_models.hpp"

namespace uncpnp {

namespace {

constexpr double kPlanarRankThreshold = 1e-6;  // relative singular value

double depth_or_fallback(double depth, double d_bar) {
  if (depth > 1e-6) return depth;
  return d_bar > 0.0 ? d_bar : 1.0;
}

/// Effective isotropic variances with a floor so zero-covariance features do
/// not produce infinite weights; an all-zero set degrades to uniform weights.
std::vector<double> flooring_sigma2(std::span<const WeightedPoint> points) {
  double max_s2 = 0.0;
  for (const auto& p : points) max_s2 = std::max(max_s2, p.sigma2);
  std::vector<double> out(points.size());
  if (max_s2 <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0);
    return out;
  }
  const double floor = 1e-12 * max_s2;
  for (size_t i = 0; i < points.size(); ++i) {
    out[i] = std::max(points[i].sigma2, floor);
  }
  return out;
}

}  // namespace

ControlPointBasis select_control_points_weighted(
    std::span<const WeightedPoint> points, bool planar_fallback) {
  if (points.size() < 4) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "select_control_points_weighted: need >= 4 points");
  }
  const std::vector<double> sigma2 = flooring_sigma2(points);

  double wsum = 0.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < points.size(); ++i) {
    const double w = 1.0 / sigma2[i];
    mean += w * points[i].x;
    wsum += w;
  }
  mean /= wsum;

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d d = points[i].x - mean;
    scatter += (1.0 / sigma2[i]) * d * d.transpose();
  }
  scatter /= wsum;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter);
  const Eigen::Vector3d evals = es.eigenvalues();  // ascending
  const double top = evals(2);
  if (top <= 0.0 || evals(1) / top < kPlanarRankThreshold) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "control points: weighted scatter has rank < 2");
  }
  const bool planar = evals(0) / top < kPlanarRankThreshold;
  if (planar && !planar_fallback) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "control points: planar scene and fallback disabled");
  }

  ControlPointBasis basis;
  basis.count = planar ? 3 : 4;
  basis.c.col(0) = mean;
  for (int k = 1; k < basis.count; ++k) {
    // Descending order: strongest direction first.
    const int idx = 2 - (k - 1);
    Eigen::Vector3d dir = es.eigenvectors().col(idx);
    // Canonical sign from the weighted third moment along the direction
    // (first-point projection as tie break) keeps the basis SE3-equivariant.
    double moment = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
      const double proj = dir.dot(points[i].x - mean);
      moment += proj * proj * proj / sigma2[i];
    }
    if (std::abs(moment) < 1e-12 * top * std::sqrt(top)) {
      moment = dir.dot(points[0].x - mean);
    }
    if (moment < 0.0) dir = -dir;
    basis.c.col(k) = mean + std::sqrt(evals(idx)) * dir;
  }

  Eigen::MatrixXd homog(4, basis.count);
  homog.topRows(3) = basis.c.leftCols(basis.count);
  homog.bottomRows(1).setOnes();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(homog);
  basis.homog_condition =
      svd.singularValues()(0) / svd.singularValues().tail(1)(0);
  return basis;
}

Eigen::Vector4d barycentric(const ControlPointBasis& basis,
                            const Eigen::Vector3d& x) {
  Eigen::MatrixXd homog(4, basis.count);
  homog.topRows(3) = basis.c.leftCols(basis.count);
  homog.bottomRows(1).setOnes();
  Eigen::Vector4d rhs;
  rhs << x, 1.0;
  Eigen::Vector4d alpha = Eigen::Vector4d::Zero();
  if (basis.count == 4) {
    alpha = homog.fullPivLu().solve(rhs);
  } else {
    alpha.head<3>() = homog.colPivHouseholderQr().solve(rhs);
  }
  return alpha;
}

EpnpSystem build_system(std::span<const PointObservation> points,
                        std::span<const LineObservation> lines,
                        std::span<const Eigen::Matrix2d> point_sigmas,
                        std::span<const Eigen::Matrix2d> line_sigmas,
                        const ControlPointBasis& basis) {
  const int cols = 3 * basis.count;
  const Eigen::Index rows = 2 * (points.size() + lines.size());
  EpnpSystem sys;
  sys.m_u.setZero(rows, cols);

  Eigen::Index row = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector4d alpha = barycentric(basis, points[i].x);
    Eigen::MatrixXd block(2, cols);
    for (int j = 0; j < basis.count; ++j) {
      block(0, 3 * j + 0) = alpha(j);
      block(0, 3 * j + 1) = 0.0;
      block(0, 3 * j + 2) = -alpha(j) * points[i].u(0);
      block(1, 3 * j + 0) = 0.0;
      block(1, 3 * j + 1) = alpha(j);
      block(1, 3 * j + 2) = -alpha(j) * points[i].u(1);
    }
    const Eigen::Matrix2d w =
        whitening_factor(regularize_covariance(point_sigmas[i]));
    sys.m_u.middleRows(row, 2) = w * block;
    row += 2;
  }
  for (size_t i = 0; i < lines.size(); ++i) {
    const Eigen::Vector4d ap = barycentric(basis, lines[i].p);
    const Eigen::Vector4d aq = barycentric(basis, lines[i].q);
    Eigen::MatrixXd block(2, cols);
    for (int j = 0; j < basis.count; ++j) {
      block.block<1, 3>(0, 3 * j) = ap(j) * lines[i].l.transpose();
      block.block<1, 3>(1, 3 * j) = aq(j) * lines[i].l.transpose();
    }
    const Eigen::Matrix2d w =
        whitening_factor(regularize_covariance(line_sigmas[i]));
    sys.m_u.middleRows(row, 2) = w * block;
    row += 2;
  }

  sys.mtm = sys.m_u.transpose() * sys.m_u;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.mtm);
  sys.eigenvalues = es.eigenvalues();
  sys.eigenvectors = es.eigenvectors();
  return sys;
}

FeatureCovariances epnp_feature_covariances(
    std::span<const PointObservation> points,
    std::span<const LineObservation> lines, const SolverOptions& options) {
  FeatureCovariances cov;
  cov.point.reserve(points.size());
  cov.line.reserve(lines.size());
  if (options.identity_weights) {
    cov.point.assign(points.size(), Eigen::Matrix2d::Identity());
    cov.line.assign(lines.size(), Eigen::Matrix2d::Identity());
    return cov;
  }
  for (const auto& obs : points) {
    double depth = options.d_bar;
    if (options.pose_hypothesis) {
      depth = depth_or_fallback(options.pose_hypothesis->apply(obs.x)(2),
                                options.d_bar);
    }
    cov.point.push_back(epnp_point_residual_covariance(
        obs, isotropic_approximation(obs.sigma_x), depth));
  }
  for (const auto& obs : lines) {
    double depth_p = options.d_bar, depth_q = options.d_bar;
    if (options.pose_hypothesis) {
      depth_p = depth_or_fallback(options.pose_hypothesis->apply(obs.p)(2),
                                  options.d_bar);
      depth_q = depth_or_fallback(options.pose_hypothesis->apply(obs.q)(2),
                                  options.d_bar);
    }
    cov.line.push_back(epnp_line_residual_covariance(
        obs, isotropic_approximation(obs.sigma_p),
        isotropic_approximation(obs.sigma_q), depth_p, depth_q));
  }
  return cov;
}

double whitened_algebraic_cost(const Pose& pose,
                               std::span<const PointObservation> points,
                               std::span<const LineObservation> lines,
                               const FeatureCovariances& covariances) {
  double cost = 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector2d r = point_algebraic_residual(pose, points[i]);
    const Eigen::Matrix2d w =
        whitening_factor(regularize_covariance(covariances.point[i]));
    cost += (w * r).squaredNorm();
  }
  for (size_t i = 0; i < lines.size(); ++i) {
    const Eigen::Vector2d r = line_algebraic_residual(pose, lines[i]);
    const Eigen::Matrix2d w =
        whitening_factor(regularize_covariance(covariances.line[i]));
    cost += (w * r).squaredNorm();
  }
  return cost;
}

namespace {

struct BetaProblem {
  // One row per control-point pair: squared distance constraint.
  std::vector<std::array<int, 2>> pairs;
  Eigen::VectorXd rho;                      // world squared distances
  std::vector<Eigen::MatrixXd> delta;       // per null-vector endpoint gaps
  int null_count = 0;

  double pair_value(int p, const Eigen::VectorXd& beta) const {
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    for (int k = 0; k < null_count; ++k) d += beta(k) * delta[k].col(p);
    return d.squaredNorm();
  }
};

BetaProblem make_beta_problem(const EpnpSystem& sys,
                              const ControlPointBasis& basis, int null_count) {
  BetaProblem prob;
  prob.null_count = null_count;
  for (int i = 0; i < basis.count; ++i) {
    for (int j = i + 1; j < basis.count; ++j) {
      prob.pairs.push_back({i, j});
    }
  }
  prob.rho.resize(prob.pairs.size());
  for (size_t p = 0; p < prob.pairs.size(); ++p) {
    prob.rho(p) =
        (basis.c.col(prob.pairs[p][0]) - basis.c.col(prob.pairs[p][1]))
            .squaredNorm();
  }
  for (int k = 0; k < null_count; ++k) {
    const Eigen::VectorXd v = sys.eigenvectors.col(k);
    Eigen::MatrixXd d(3, prob.pairs.size());
    for (size_t p = 0; p < prob.pairs.size(); ++p) {
      d.col(p) = v.segment<3>(3 * prob.pairs[p][0]) -
                 v.segment<3>(3 * prob.pairs[p][1]);
    }
    prob.delta.push_back(std::move(d));
  }
  return prob;
}

/// Linearized distance-constraint solve for the assumed null dimension,
/// following the classical case split, then Gauss-Newton on beta.
Eigen::VectorXd initial_beta(const BetaProblem& prob) {
  const int n_pairs = static_cast<int>(prob.pairs.size());
  const int nc = prob.null_count;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(nc);
  const auto dot = [&](int a, int b, int p) {
    return prob.delta[a].col(p).dot(prob.delta[b].col(p));
  };

  if (nc == 1) {
    double num = 0.0, den = 0.0;
    for (int p = 0; p < n_pairs; ++p) {
      num += dot(0, 0, p) * prob.rho(p);
      den += dot(0, 0, p) * dot(0, 0, p);
    }
    beta(0) = std::sqrt(std::max(0.0, num / den));
    return beta;
  }

  if (nc == 2) {
    Eigen::MatrixXd l(n_pairs, 3);  // monomials b11, b12, b22
    for (int p = 0; p < n_pairs; ++p) {
      l(p, 0) = dot(0, 0, p);
      l(p, 1) = 2.0 * dot(0, 1, p);
      l(p, 2) = dot(1, 1, p);
    }
    const Eigen::Vector3d b = l.colPivHouseholderQr().solve(prob.rho);
    beta(0) = std::sqrt(std::abs(b(0)));
    beta(1) = std::sqrt(std::abs(b(2)));
    if (b(1) < 0.0) beta(1) = -beta(1);
    return beta;
  }

  if (nc == 3) {
    Eigen::MatrixXd l(n_pairs, 5);  // b11, b12, b22, b13, b23
    for (int p = 0; p < n_pairs; ++p) {
      l(p, 0) = dot(0, 0, p);
      l(p, 1) = 2.0 * dot(0, 1, p);
      l(p, 2) = dot(1, 1, p);
      l(p, 3) = 2.0 * dot(0, 2, p);
      l(p, 4) = 2.0 * dot(1, 2, p);
    }
    const Eigen::VectorXd b = l.colPivHouseholderQr().solve(prob.rho);
    beta(0) = std::sqrt(std::abs(b(0)));
    beta(1) = std::sqrt(std::abs(b(2)));
    if (b(1) < 0.0) beta(1) = -beta(1);
    if (beta(0) > 1e-12) beta(2) = b(3) / (2.0 * beta(0));
    return beta;
  }

  // nc == 4: relinearize keeping the products with beta_1.
  Eigen::MatrixXd l(n_pairs, 4);  // b11, b12, b13, b14
  for (int p = 0; p < n_pairs; ++p) {
    l(p, 0) = dot(0, 0, p);
    l(p, 1) = 2.0 * dot(0, 1, p);
    l(p, 2) = 2.0 * dot(0, 2, p);
    l(p, 3) = 2.0 * dot(0, 3, p);
  }
  Eigen::Vector4d b = l.colPivHouseholderQr().solve(prob.rho);
  if (b(0) < 0.0) b = -b;
  beta(0) = std::sqrt(b(0));
  if (beta(0) > 1e-12) {
    beta(1) = b(1) / beta(0);
    beta(2) = b(2) / beta(0);
    beta(3) = b(3) / beta(0);
  }
  return beta;
}

void gauss_newton_beta(const BetaProblem& prob, Eigen::VectorXd& beta,
                       int iterations = 10) {
  const int n_pairs = static_cast<int>(prob.pairs.size());
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd jac(n_pairs, prob.null_count);
    Eigen::VectorXd res(n_pairs);
    for (int p = 0; p < n_pairs; ++p) {
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      for (int k = 0; k < prob.null_count; ++k) {
        d += beta(k) * prob.delta[k].col(p);
      }
      res(p) = d.squaredNorm() - prob.rho(p);
      for (int k = 0; k < prob.null_count; ++k) {
        jac(p, k) = 2.0 * d.dot(prob.delta[k].col(p));
      }
    }
    const Eigen::VectorXd step =
        (jac.transpose() * jac)
            .ldlt()
            .solve(-jac.transpose() * res);
    beta += step;
    if (step.norm() < 1e-14) break;
  }
}

}  // namespace

Pose solve_epnpu(std::span<const PointObservation> points,
                 std::span<const LineObservation> lines,
                 const SolverOptions& options, EpnpuDiagnostics* diagnostics) {
  if (points.size() + lines.size() < 4) {
    throw Error(ErrorCode::kInvalidInput,
                "solve_epnpu: need at least 4 features");
  }

  // Control points over the union of 3D features (weights from the
  // isotropic variances; identical weights for the baseline).
  std::vector<WeightedPoint> cloud;
  cloud.reserve(points.size() + 2 * lines.size());
  for (const auto& obs : points) {
    cloud.push_back({obs.x, options.identity_weights
                                ? 1.0
                                : isotropic_approximation(obs.sigma_x)});
  }
  for (const auto& obs : lines) {
    if (options.identity_weights) {
      cloud.push_back({obs.p, 1.0});
      cloud.push_back({obs.q, 1.0});
    } else {
      cloud.push_back({obs.p, isotropic_approximation(obs.sigma_p)});
      cloud.push_back({obs.q, isotropic_approximation(obs.sigma_q)});
    }
  }
  const ControlPointBasis basis =
      select_control_points_weighted(cloud, options.planar_fallback);

  const FeatureCovariances covariances =
      epnp_feature_covariances(points, lines, options);
  const EpnpSystem sys =
      build_system(points, lines, covariances.point, covariances.line, basis);

  // Feature barycentric coordinates and per-feature whitening mass, reused
  // by the candidate evaluation below.
  const size_t n_feat = points.size() + lines.size() * 2;
  Eigen::MatrixXd alphas(4, n_feat);
  Eigen::VectorXd info_mass(n_feat);
  {
    size_t f = 0;
    for (size_t i = 0; i < points.size(); ++i, ++f) {
      alphas.col(f) = barycentric(basis, points[i].x);
      info_mass(f) =
          regularize_covariance(covariances.point[i]).inverse().trace();
    }
    for (size_t i = 0; i < lines.size(); ++i) {
      const double mass =
          regularize_covariance(covariances.line[i]).inverse().trace();
      alphas.col(f) = barycentric(basis, lines[i].p);
      info_mass(f++) = mass;
      alphas.col(f) = barycentric(basis, lines[i].q);
      info_mass(f++) = mass;
    }
  }

  const int max_null = basis.planar() ? 2 : 4;
  Pose best_pose;
  double best_cost = std::numeric_limits<double>::infinity();
  int best_null = 0;
  std::vector<double> candidate_costs;

  for (int null_dim = 1; null_dim <= max_null; ++null_dim) {
    BetaProblem prob = make_beta_problem(sys, basis, null_dim);
    Eigen::VectorXd beta = initial_beta(prob);
    gauss_newton_beta(prob, beta);

    Eigen::VectorXd chat = Eigen::VectorXd::Zero(3 * basis.count);
    for (int k = 0; k < null_dim; ++k) {
      chat += beta(k) * sys.eigenvectors.col(k);
    }

    // Sign disambiguation by mean feature depth.
    double mean_depth = 0.0;
    for (size_t f = 0; f < n_feat; ++f) {
      for (int j = 0; j < basis.count; ++j) {
        mean_depth += alphas(j, f) * chat(3 * j + 2);
      }
    }
    if (mean_depth < 0.0) chat = -chat;

    // Weighted Procrustes over the control points themselves; each control
    // point weighted by the whitened barycentric mass it carries.
    Eigen::Matrix3Xd world(3, basis.count), camera(3, basis.count);
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(basis.count);
    for (int j = 0; j < basis.count; ++j) {
      world.col(j) = basis.c.col(j);
      camera.col(j) = chat.segment<3>(3 * j);
      for (size_t f = 0; f < n_feat; ++f) {
        weights(j) += info_mass(f) * alphas(j, f) * alphas(j, f);
      }
    }
    if (weights.maxCoeff() <= 0.0) weights.setOnes();

    Pose pose;
    try {
      pose = weighted_rigid_align(world, camera, weights);
    } catch (const Error&) {
      candidate_costs.push_back(std::numeric_limits<double>::infinity());
      continue;
    }

    double depth_sum = 0.0;
    for (const auto& obs : points) depth_sum += pose.apply(obs.x)(2);
    for (const auto& obs : lines) {
      depth_sum += 0.5 * (pose.apply(obs.p)(2) + pose.apply(obs.q)(2));
    }
    const double cost = whitened_algebraic_cost(pose, points, lines, covariances);
    candidate_costs.push_back(cost);
    if (depth_sum <= 0.0) continue;

    // Relative margin keeps the lowest usable null dimension on numerical
    // ties (exact data drives every candidate cost to roundoff level).
    if (cost < best_cost * (1.0 - 1e-6) ||
        !std::isfinite(best_cost)) {
      best_cost = cost;
      best_pose = pose;
      best_null = null_dim;
    }
  }

  if (!std::isfinite(best_cost)) {
    throw Error(ErrorCode::kAllCandidatesBehindCamera,
                "solve_epnpu: no candidate places the scene in front");
  }
  if (diagnostics) {
    diagnostics->whitened_cost = best_cost;
    diagnostics->null_dim = best_null;
    diagnostics->planar = basis.planar();
    diagnostics->candidate_costs = candidate_costs;
  }
  return best_pose;
}

}  // namespace uncpnp
