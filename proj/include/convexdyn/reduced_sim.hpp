#pragma once

#include "convexdyn/common.hpp"
#include "convexdyn/convex_field.hpp"
#include "convexdyn/materials.hpp"
#include "convexdyn/skinning.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace convexdyn {

/// Reduced coordinates: z = flat(Z) with 12 entries per handle.
struct ReducedState {
  VecX z;
  VecX z_dot;
  double time = 0.0;
  double dt = 0.0;

  static ReducedState rest(int num_handles, double dt);
  int num_handles() const { return static_cast<int>(z.size()) / kDofsPerHandle; }
  void validate() const;
};

/// Plane n.x = height + (n.velocity) t, moving with the given velocity.
struct Floor {
  double height = 0.0;
  Vec3 normal = Vec3::UnitY();
  Vec3 velocity = Vec3::Zero();
};

/// Body force per unit mass, active for t in [start, end).
struct ExternalForce {
  Vec3 force_density = Vec3::Zero();
  double start = 0.0;
  double end = std::numeric_limits<double>::infinity();
};

struct SceneConditions {
  Vec3 gravity = Vec3(0.0, -9.8, 0.0);
  std::optional<Floor> floor;
  std::optional<ExternalForce> external_force;
  /// Contact penalty per unit mass (1/s^2): E = k/2 sum_i m_i min(gap_i, 0)^2.
  double penalty_stiffness = 1e5;

  void validate() const;
};

struct MassMatrix {
  MatX matrix;
};

/// x = X + sum_m W_m(X) Z_m [X;1].
Vec3 deform_point(const Vec3& X, const VecX& z, const SkinningBasis& skinning);

/// M = sum_i m_i J_i^T J_i with J_i = dx(X_i)/dz (independent of z).
MassMatrix assemble_mass_matrix(const CubatureSet& cubature, const SkinningBasis& skinning);

struct EnergyBreakdown {
  double kinetic = 0.0;
  double elastic = 0.0;
  double gravity = 0.0;
  double contact = 0.0;
  double external = 0.0;

  double total() const { return kinetic + elastic + gravity + contact + external; }
};

struct SolveReport {
  int iterations = 0;
  /// Incremental potential at the start and after every accepted step.
  std::vector<double> potentials;
  double initial_gradient_norm = 0.0;
  double final_gradient_norm = 0.0;
};

struct Frame {
  ReducedState state;
  ConvexField field;
};

/// Reduced-order implicit Euler model. All skinning evaluations happen at
/// construction: because the deformation map is linear in z, each cubature
/// point keeps only its weight row and its constant dF/dz map.
class ReducedSimulator {
 public:
  ReducedSimulator(const ConvexField& rest_field, const SkinningBasis& skinning,
                   const MaterialParams& material, const CubatureSet& cubature,
                   SceneConditions conditions);

  int num_handles() const { return handles_; }
  int num_dofs() const { return kDofsPerHandle * handles_; }
  const MassMatrix& mass_matrix() const { return mass_; }
  const SceneConditions& conditions() const { return conditions_; }
  const MaterialParams& material() const { return material_; }

  /// z~ = z_t + dt z_dot_t.
  VecX predictor(const ReducedState& state) const;

  /// 1/2 |z - z~|_M^2 + dt^2 (E_elastic + E_gravity + E_contact + E_external),
  /// with forces and floor evaluated at the end-of-step time. Throws ElementInversion.
  double incremental_potential(const VecX& z, const ReducedState& state) const;
  VecX incremental_potential_gradient(const VecX& z, const ReducedState& state) const;
  /// Newton matrix: exact mass and penalty terms, per-sample PSD-projected elastic blocks.
  MatX incremental_potential_hessian(const VecX& z, const ReducedState& state) const;

  double elastic_energy(const VecX& z) const;
  EnergyBreakdown energies(const ReducedState& state) const;

  /// One implicit Euler step by projected Newton with Armijo backtracking.
  /// Throws SolverDiverged or NonFinite.
  ReducedState solve_timestep(const ReducedState& state, SolveReport* report = nullptr) const;

  /// Rest field advected by z; hulls rebuilt from the moved points.
  ConvexField advect(const VecX& z) const;

  /// Mass-weighted mean of the cubature points under z.
  Vec3 center_of_mass(const VecX& z) const;

 private:
  struct Terms {
    double value = 0.0;
    MatX grad;  // 4M x 3, column r = row-r DOFs
    MatX hess;  // 12M x 12M in row-grouped order
  };
  // Potential energy (without inertia) in row-grouped coordinates.
  Terms potential_terms(const MatX& Zr, double time, bool want_grad, bool want_hess) const;
  double time_of_solve(const ReducedState& state) const { return state.time + state.dt; }

  MatX to_rows(const VecX& z) const;
  VecX from_rows(const MatX& Zr) const;
  MatX hessian_to_flat(const MatX& Hr) const;

  int handles_ = 0;
  MaterialParams material_;
  SceneConditions conditions_;
  ConvexField rest_field_;

  // Cubature: weights, masses, rest positions, position rows j_i (4M each,
  // stored as columns) and F maps G_i (3 x 4M, stacked).
  std::vector<double> weights_;
  std::vector<double> masses_;
  std::vector<Vec3> rest_points_;
  MatX position_rows_;
  MatX f_maps_;
  MatX mass_rows_;  // 4M x 4M, sum_i m_i j_i j_i^T
  VecX mass_weighted_row_;  // sum_i m_i j_i
  Vec3 mass_weighted_rest_ = Vec3::Zero();
  double total_mass_ = 0.0;
  MassMatrix mass_;

  // Hull points of the rest field and their position rows.
  std::vector<Vec3> hull_rest_points_;
  MatX hull_rows_;
};

struct Trajectory {
  std::vector<Frame> frames;
};

/// steps implicit Euler steps from the rest state (z = 0, z_dot = 0).
/// Frame 0 is the rest frame. Errors carry the failing frame index.
Trajectory simulate(const ReducedSimulator& simulator, int steps, double dt);

/// Convenience wrapper building a simulator for one evaluation.
double incremental_potential(const VecX& z, const ReducedState& state,
                             const SceneConditions& conditions, const MaterialParams& material,
                             const CubatureSet& cubature, const SkinningBasis& skinning,
                             const ConvexField& rest_field);

}  // namespace convexdyn
