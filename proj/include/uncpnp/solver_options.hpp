#pragma once

#include <optional>

#include "uncpnp/core_geometry.hpp"

namespace uncpnp {

/// Shared knobs for the linear pose solvers. A set pose_hypothesis selects
/// the starred variants (per-feature depths, and for the DLS family fully
/// rotated 3D covariances); otherwise residual covariances fall back to the
/// average scene depth d_bar with isotropic 3D noise. identity_weights
/// reproduces the uncertainty-free baselines on the same code path.
struct SolverOptions {
  std::optional<Pose> pose_hypothesis;
  double d_bar = 0.0;
  bool identity_weights = false;
  bool planar_fallback = true;   // EPnP family: 3-control-point branch
  bool polish = true;            // DLS family: Newton polish of the weighted cost
};

}  // namespace uncpnp
