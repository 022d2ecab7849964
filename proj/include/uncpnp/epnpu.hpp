#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "uncpnp/residual_models.hpp"
#include "uncpnp/solver_options.hpp"

namespace uncpnp {

struct WeightedPoint {
  Eigen::Vector3d x;
  double sigma2;  // isotropic 3D variance, used as inverse weight
};

/// Four control points spanning the feature cloud (three when the cloud is
/// planar and the fallback branch is active).
struct ControlPointBasis {
  Eigen::Matrix<double, 3, 4> c = Eigen::Matrix<double, 3, 4>::Zero();
  int count = 4;
  double homog_condition = 0.0;
  bool planar() const { return count == 3; }
};

/// Inverse-variance weighted mean plus principal directions of the weighted
/// scatter, each scaled by the weighted standard deviation along it.
/// Throws kDegenerateGeometry when the scatter has rank < 2, or on planar
/// clouds when `planar_fallback` is off.
ControlPointBasis select_control_points_weighted(
    std::span<const WeightedPoint> points, bool planar_fallback = true);

/// Barycentric coordinates: basis.c * alpha = x and sum(alpha) = 1.
/// Entry 3 is zero for a planar basis.
Eigen::Vector4d barycentric(const ControlPointBasis& basis,
                            const Eigen::Vector3d& x);

/// Whitened linear system on the stacked camera-frame control points.
struct EpnpSystem {
  Eigen::MatrixXd m_u;           // (2 n_p + 2 n_l) x 3*count
  Eigen::MatrixXd mtm;           // 3*count square
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
};

/// Every 2-row block realizes the algebraic point/line residual in
/// control-point unknowns, premultiplied by the block's whitening factor.
EpnpSystem build_system(std::span<const PointObservation> points,
                        std::span<const LineObservation> lines,
                        std::span<const Eigen::Matrix2d> point_sigmas,
                        std::span<const Eigen::Matrix2d> line_sigmas,
                        const ControlPointBasis& basis);

/// Residual covariances the EPnP-family solver whitens with: Eq-style
/// isotropic 3D terms, depths from d_bar or (starred) from the hypothesis.
struct FeatureCovariances {
  std::vector<Eigen::Matrix2d> point;
  std::vector<Eigen::Matrix2d> line;
};

FeatureCovariances epnp_feature_covariances(
    std::span<const PointObservation> points,
    std::span<const LineObservation> lines, const SolverOptions& options);

struct EpnpuDiagnostics {
  double whitened_cost = 0.0;
  int null_dim = 0;
  bool planar = false;
  std::vector<double> candidate_costs;
};

/// EPnPU / EPnPLU and starred variants; identity_weights recovers classical
/// EPnP(L) on the same path. Throws kDegenerateGeometry or
/// kAllCandidatesBehindCamera.
Pose solve_epnpu(std::span<const PointObservation> points,
                 std::span<const LineObservation> lines,
                 const SolverOptions& options,
                 EpnpuDiagnostics* diagnostics = nullptr);

/// Whitened algebraic cost of a pose under given residual covariances; the
/// quantity solve_epnpu minimizes over its candidate set.
double whitened_algebraic_cost(const Pose& pose,
                               std::span<const PointObservation> points,
                               std::span<const LineObservation> lines,
                               const FeatureCovariances& covariances);

}  // namespace uncpnp
