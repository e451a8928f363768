#include "convexdyn/reduced_sim.hpp"

#include "convexdyn/parallel.hpp"

#include <cmath>
#include <string>

namespace convexdyn {

namespace {

constexpr std::size_t kChunk = 32;
constexpr int kMaxNewtonIterations = 50;
constexpr int kMaxHalvings = 40;
constexpr double kArmijo = 1e-4;
constexpr double kGradientTolerance = 1e-6;

// Position row j (4M) of a point: j[4m + c] = W_m [X;1]_c.
VecX position_row(const VecX& w, const Vec3& X) {
  const Vec4 Xh = homogeneous(X);
  VecX j(4 * w.size());
  for (Eigen::Index m = 0; m < w.size(); ++m) j.segment<4>(4 * m) = w[m] * Xh;
  return j;
}

bool inversion(const Error& e) { return e.kind() == ErrorKind::ElementInversion; }

Error with_frame(const Error& e, int frame) {
  return Error(e.kind(), "frame " + std::to_string(frame) + ": " + e.what());
}

}  // namespace

ReducedState ReducedState::rest(int num_handles, double dt) {
  ReducedState s;
  s.z = VecX::Zero(kDofsPerHandle * num_handles);
  s.z_dot = VecX::Zero(kDofsPerHandle * num_handles);
  s.dt = dt;
  return s;
}

void ReducedState::validate() const {
  if (z.size() == 0 || z.size() % kDofsPerHandle != 0 || z_dot.size() != z.size())
    throw Error(ErrorKind::ShapeMismatch, "reduced state length must be 12 * handles");
  if (!z.allFinite() || !z_dot.allFinite() || !std::isfinite(time))
    throw Error(ErrorKind::NonFinite, "reduced state has non-finite entries");
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "timestep must be positive");
}

void SceneConditions::validate() const {
  if (!gravity.allFinite()) throw Error(ErrorKind::InvalidArgument, "gravity must be finite");
  if (floor) {
    if (!(penalty_stiffness > 0.0))
      throw Error(ErrorKind::InvalidArgument, "penalty stiffness must be positive with a floor");
    if (std::abs(floor->normal.norm() - 1.0) > 1e-9)
      throw Error(ErrorKind::InvalidArgument, "floor normal must be a unit vector");
  }
}

Vec3 deform_point(const Vec3& X, const VecX& z, const SkinningBasis& skinning) {
  const VecX w = skinning.weights(X);
  const Vec4 Xh = homogeneous(X);
  Vec3 x = X;
  for (int m = 0; m < skinning.num_handles(); ++m) x += w[m] * (handle_block(z, m) * Xh);
  return x;
}

MassMatrix assemble_mass_matrix(const CubatureSet& cubature, const SkinningBasis& skinning) {
  const int M = skinning.num_handles();
  const int n = kDofsPerHandle * M;
  MassMatrix out{MatX::Zero(n, n)};
  VecX w(M);
  MatX J(3, n);
  for (std::size_t i = 0; i < cubature.size(); ++i) {
    skinning.evaluate(cubature.points[i], w, nullptr);
    const Vec4 Xh = homogeneous(cubature.points[i]);
    J.setZero();
    for (int m = 0; m < M; ++m)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) J(r, dof_index(m, r, c)) = w[m] * Xh[c];
    out.matrix.noalias() += cubature.masses[i] * J.transpose() * J;
  }
  return out;
}

ReducedSimulator::ReducedSimulator(const ConvexField& rest_field, const SkinningBasis& skinning,
                                   const MaterialParams& material, const CubatureSet& cubature,
                                   SceneConditions conditions)
    : handles_(skinning.num_handles()),
      material_(material),
      conditions_(std::move(conditions)),
      rest_field_(rest_field) {
  conditions_.validate();
  rest_field_.validate();
  if (handles_ < 1) throw Error(ErrorKind::InvalidArgument, "skinning has no handles");
  if (cubature.weights.size() != cubature.size() || cubature.masses.size() != cubature.size())
    throw Error(ErrorKind::ShapeMismatch, "cubature arrays have inconsistent lengths");

  const int R = 4 * handles_;
  const std::size_t N = cubature.size();
  weights_ = cubature.weights;
  masses_ = cubature.masses;
  rest_points_ = cubature.points;
  position_rows_.resize(R, static_cast<Eigen::Index>(N));
  f_maps_.resize(3 * static_cast<Eigen::Index>(N), R);
  mass_rows_ = MatX::Zero(R, R);
  mass_weighted_row_ = VecX::Zero(R);

  VecX w(handles_);
  MatX3 dw(handles_, 3);
  for (std::size_t i = 0; i < N; ++i) {
    const Vec3& X = cubature.points[i];
    skinning.evaluate(X, w, &dw);
    const Vec4 Xh = homogeneous(X);
    const VecX j = position_row(w, X);
    position_rows_.col(i) = j;
    // G[c, 4m + c'] = W_m delta(c, c') + [X;1]_c' dW_m/dX_c
    auto G = f_maps_.block(3 * static_cast<Eigen::Index>(i), 0, 3, R);
    for (int m = 0; m < handles_; ++m)
      for (int cp = 0; cp < 4; ++cp)
        for (int c = 0; c < 3; ++c) G(c, 4 * m + cp) = (c == cp ? w[m] : 0.0) + Xh[cp] * dw(m, c);
    mass_rows_.noalias() += masses_[i] * j * j.transpose();
    mass_weighted_row_ += masses_[i] * j;
    mass_weighted_rest_ += masses_[i] * X;
    total_mass_ += masses_[i];
  }

  mass_.matrix = MatX::Zero(num_dofs(), num_dofs());
  for (int r = 0; r < 3; ++r)
    for (int a = 0; a < R; ++a)
      for (int b = 0; b < R; ++b)
        mass_.matrix(dof_index(a / 4, r, a % 4), dof_index(b / 4, r, b % 4)) = mass_rows_(a, b);

  for (const ConvexPrimitive& p : rest_field_.rest_primitives)
    for (const Vec3& X : p.points()) hull_rest_points_.push_back(X);
  hull_rows_.resize(R, static_cast<Eigen::Index>(hull_rest_points_.size()));
  for (std::size_t k = 0; k < hull_rest_points_.size(); ++k) {
    skinning.evaluate(hull_rest_points_[k], w, nullptr);
    hull_rows_.col(k) = position_row(w, hull_rest_points_[k]);
  }
}

MatX ReducedSimulator::to_rows(const VecX& z) const {
  if (z.size() != num_dofs())
    throw Error(ErrorKind::ShapeMismatch, "reduced vector length does not match handle count");
  MatX Zr(4 * handles_, 3);
  for (int m = 0; m < handles_; ++m)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) Zr(4 * m + c, r) = z[dof_index(m, r, c)];
  return Zr;
}

VecX ReducedSimulator::from_rows(const MatX& Zr) const {
  VecX z(num_dofs());
  for (int m = 0; m < handles_; ++m)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) z[dof_index(m, r, c)] = Zr(4 * m + c, r);
  return z;
}

MatX ReducedSimulator::hessian_to_flat(const MatX& Hr) const {
  const int R = 4 * handles_;
  MatX H(num_dofs(), num_dofs());
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < R; ++a)
        for (int b = 0; b < R; ++b)
          H(dof_index(a / 4, r, a % 4), dof_index(b / 4, s, b % 4)) = Hr(r * R + a, s * R + b);
  return H;
}

ReducedSimulator::Terms ReducedSimulator::potential_terms(const MatX& Zr, double time,
                                                          bool want_grad, bool want_hess) const {
  const int R = 4 * handles_;
  const std::size_t N = weights_.size();
  const Lame lame = lame_of(material_);
  const std::optional<Floor>& floor = conditions_.floor;
  const double k = conditions_.penalty_stiffness;
  const double floor_level = floor ? floor->height + floor->normal.dot(floor->velocity) * time : 0.0;

  const std::size_t chunks = chunk_count(N, kChunk);
  std::vector<Terms> partial(chunks);
  parallel_chunks(N, kChunk, [&](std::size_t begin, std::size_t end, std::size_t c) {
    Terms t;
    if (want_grad) t.grad = MatX::Zero(R, 3);
    if (want_hess) t.hess = MatX::Zero(3 * R, 3 * R);
    MatX GtH(R, 3);
    for (std::size_t i = begin; i < end; ++i) {
      const auto G = f_maps_.block(3 * static_cast<Eigen::Index>(i), 0, 3, R);
      const Mat3 F = Mat3::Identity() + (G * Zr).transpose();
      const double w = weights_[i];
      t.value += w * neo_hookean_energy(F, lame);
      if (want_grad) t.grad.noalias() += w * G.transpose() * first_piola_stress(F, lame).transpose();
      if (want_hess) {
        const Mat9 H = project_psd(neo_hookean_hessian(F, lame));
        for (int r = 0; r < 3; ++r)
          for (int s = r; s < 3; ++s) {
            GtH.noalias() = G.transpose() * H.block<3, 3>(3 * r, 3 * s);
            t.hess.block(r * R, s * R, R, R).noalias() += w * GtH * G;
          }
      }

      if (floor) {
        const auto j = position_rows_.col(i);
        const Vec3 x = rest_points_[i] + (Zr.transpose() * j);
        const double gap = floor->normal.dot(x) - floor_level;
        if (gap < 0.0) {
          const double m = masses_[i];
          t.value += 0.5 * k * m * gap * gap;
          if (want_grad)
            for (int r = 0; r < 3; ++r) t.grad.col(r) += (k * m * gap * floor->normal[r]) * j;
          if (want_hess) {
            const MatX jj = j * j.transpose();
            for (int r = 0; r < 3; ++r)
              for (int s = r; s < 3; ++s)
                t.hess.block(r * R, s * R, R, R) += (k * m * floor->normal[r] * floor->normal[s]) * jj;
          }
        }
      }
    }
    partial[c] = std::move(t);
  });

  Terms out;
  if (want_grad) out.grad = MatX::Zero(R, 3);
  if (want_hess) out.hess = MatX::Zero(3 * R, 3 * R);
  for (const Terms& t : partial) {
    out.value += t.value;
    if (want_grad) out.grad += t.grad;
    if (want_hess) out.hess += t.hess;
  }
  if (want_hess)
    for (int r = 0; r < 3; ++r)
      for (int s = r + 1; s < 3; ++s)
        out.hess.block(s * R, r * R, R, R) = out.hess.block(r * R, s * R, R, R).transpose();

  // Uniform body forces: E = -sum_i m_i a . x_i.
  Vec3 accel = conditions_.gravity;
  if (conditions_.external_force && time >= conditions_.external_force->start &&
      time < conditions_.external_force->end)
    accel += conditions_.external_force->force_density;
  out.value -= accel.dot(mass_weighted_rest_);
  for (int r = 0; r < 3; ++r) {
    out.value -= accel[r] * mass_weighted_row_.dot(Zr.col(r));
    if (want_grad) out.grad.col(r) -= accel[r] * mass_weighted_row_;
  }
  return out;
}

VecX ReducedSimulator::predictor(const ReducedState& state) const {
  return state.z + state.dt * state.z_dot;
}

double ReducedSimulator::incremental_potential(const VecX& z, const ReducedState& state) const {
  const MatX D = to_rows(z) - to_rows(predictor(state));
  double inertia = 0.0;
  for (int r = 0; r < 3; ++r) inertia += 0.5 * D.col(r).dot(mass_rows_ * D.col(r));
  const double dt2 = state.dt * state.dt;
  return inertia + dt2 * potential_terms(to_rows(z), time_of_solve(state), false, false).value;
}

VecX ReducedSimulator::incremental_potential_gradient(const VecX& z, const ReducedState& state) const {
  const MatX Zr = to_rows(z);
  const MatX D = Zr - to_rows(predictor(state));
  const double dt2 = state.dt * state.dt;
  const Terms t = potential_terms(Zr, time_of_solve(state), true, false);
  return from_rows(mass_rows_ * D + dt2 * t.grad);
}

MatX ReducedSimulator::incremental_potential_hessian(const VecX& z, const ReducedState& state) const {
  const int R = 4 * handles_;
  const double dt2 = state.dt * state.dt;
  MatX Hr = dt2 * potential_terms(to_rows(z), time_of_solve(state), false, true).hess;
  for (int r = 0; r < 3; ++r) Hr.block(r * R, r * R, R, R) += mass_rows_;
  return hessian_to_flat(Hr);
}

double ReducedSimulator::elastic_energy(const VecX& z) const {
  const MatX Zr = to_rows(z);
  const Lame lame = lame_of(material_);
  const int R = 4 * handles_;
  const std::size_t N = weights_.size();
  std::vector<double> partial(chunk_count(N, kChunk), 0.0);
  parallel_chunks(N, kChunk, [&](std::size_t begin, std::size_t end, std::size_t c) {
    double e = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto G = f_maps_.block(3 * static_cast<Eigen::Index>(i), 0, 3, R);
      e += weights_[i] * neo_hookean_energy(Mat3::Identity() + (G * Zr).transpose(), lame);
    }
    partial[c] = e;
  });
  double total = 0.0;
  for (double e : partial) total += e;
  return total;
}

EnergyBreakdown ReducedSimulator::energies(const ReducedState& state) const {
  EnergyBreakdown e;
  const MatX V = to_rows(state.z_dot);
  for (int r = 0; r < 3; ++r) e.kinetic += 0.5 * V.col(r).dot(mass_rows_ * V.col(r));
  e.elastic = elastic_energy(state.z);

  const MatX Zr = to_rows(state.z);
  Vec3 mx = mass_weighted_rest_;
  for (int r = 0; r < 3; ++r) mx[r] += mass_weighted_row_.dot(Zr.col(r));
  e.gravity = -conditions_.gravity.dot(mx);
  if (conditions_.external_force && state.time >= conditions_.external_force->start &&
      state.time < conditions_.external_force->end)
    e.external = -conditions_.external_force->force_density.dot(mx);
  if (conditions_.floor) {
    const Floor& f = *conditions_.floor;
    const double level = f.height + f.normal.dot(f.velocity) * state.time;
    for (std::size_t i = 0; i < rest_points_.size(); ++i) {
      const Vec3 x = rest_points_[i] + Zr.transpose() * position_rows_.col(i);
      const double gap = f.normal.dot(x) - level;
      if (gap < 0.0) e.contact += 0.5 * conditions_.penalty_stiffness * masses_[i] * gap * gap;
    }
  }
  return e;
}

ReducedState ReducedSimulator::solve_timestep(const ReducedState& state, SolveReport* report) const {
  state.validate();
  if (state.num_handles() != handles_)
    throw Error(ErrorKind::ShapeMismatch, "state handle count does not match the simulator");

  const int R = 4 * handles_;
  const int n = num_dofs();
  const double dt2 = state.dt * state.dt;
  const double time = time_of_solve(state);
  const MatX Zt = to_rows(state.z);
  const MatX Zpred = to_rows(predictor(state));

  auto inertia = [&](const MatX& Zr) {
    const MatX D = Zr - Zpred;
    double v = 0.0;
    for (int r = 0; r < 3; ++r) v += 0.5 * D.col(r).dot(mass_rows_ * D.col(r));
    return v;
  };
  auto value_at = [&](const MatX& Zr) {
    try {
      return inertia(Zr) + dt2 * potential_terms(Zr, time, false, false).value;
    } catch (const Error& e) {
      if (inversion(e)) return std::numeric_limits<double>::infinity();
      throw;
    }
  };

  MatX Z = Zpred;
  double value = value_at(Z);
  if (!std::isfinite(value)) {
    Z = Zt;
    value = value_at(Z);
  }
  if (!std::isfinite(value))
    throw Error(ErrorKind::NonFinite, "incremental potential is not finite at the initial guess");

  SolveReport rep;
  rep.potentials.push_back(value);
  double g0 = -1.0;
  for (;;) {
    Terms t = potential_terms(Z, time, true, true);
    MatX grad = mass_rows_ * (Z - Zpred) + dt2 * t.grad;
    if (!grad.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite gradient in Newton solve");
    const double gnorm = grad.cwiseAbs().maxCoeff();
    if (g0 < 0.0) g0 = gnorm;
    rep.final_gradient_norm = gnorm;
    if (gnorm < kGradientTolerance * (1.0 + g0) || rep.iterations >= kMaxNewtonIterations) break;

    MatX H = dt2 * t.hess;
    for (int r = 0; r < 3; ++r) H.block(r * R, r * R, R, R) += mass_rows_;
    const Eigen::Map<const VecX> g(grad.data(), n);
    VecX d;
    Eigen::LLT<MatX> llt(H);
    double shift = 1e-12 * H.diagonal().cwiseAbs().maxCoeff();
    while (llt.info() != Eigen::Success && shift < 1e30) {
      llt.compute(H + shift * MatX::Identity(n, n));
      shift *= 10.0;
    }
    d = llt.info() == Eigen::Success ? VecX(llt.solve(-g)) : VecX(-g);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      d = -g;
      slope = g.dot(d);
    }

    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= kMaxHalvings; ++halving) {
      MatX trial = Z;
      Eigen::Map<VecX>(trial.data(), n) += step * d;
      const double v = value_at(trial);
      if (std::isnan(v)) throw Error(ErrorKind::NonFinite, "NaN incremental potential");
      if (v <= value + kArmijo * step * slope) {
        Z = std::move(trial);
        value = v;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // A step that cannot lower the potential at all is only acceptable once
      // the gradient is at round-off level.
      if (gnorm < 1e3 * std::numeric_limits<double>::epsilon() * (1.0 + g0)) break;
      throw Error(ErrorKind::SolverDiverged,
                  "line search failed after " + std::to_string(kMaxHalvings) + " halvings");
    }
    ++rep.iterations;
    rep.potentials.push_back(value);
  }
  rep.initial_gradient_norm = g0;

  ReducedState next;
  next.z = from_rows(Z);
  next.z_dot = (next.z - state.z) / state.dt;
  next.time = time;
  next.dt = state.dt;
  if (!next.z.allFinite() || !next.z_dot.allFinite())
    throw Error(ErrorKind::NonFinite, "non-finite reduced state after solve");
  if (report) *report = std::move(rep);
  return next;
}

ConvexField ReducedSimulator::advect(const VecX& z) const {
  const MatX Zr = to_rows(z);
  ConvexField field;
  field.rest_primitives = rest_field_.rest_primitives;
  field.primitives.reserve(rest_field_.rest_primitives.size());
  std::size_t k = 0;
  for (const ConvexPrimitive& rest : rest_field_.rest_primitives) {
    std::vector<Vec3> moved;
    moved.reserve(rest.points().size());
    for (std::size_t p = 0; p < rest.points().size(); ++p, ++k)
      moved.push_back(hull_rest_points_[k] + Zr.transpose() * hull_rows_.col(k));
    field.primitives.push_back(ConvexPrimitive::create(std::move(moved), rest.color(), rest.opacity(),
                                                       rest.smoothness(), rest.sharpness()));
  }
  return field;
}

Vec3 ReducedSimulator::center_of_mass(const VecX& z) const {
  const MatX Zr = to_rows(z);
  Vec3 mx = mass_weighted_rest_;
  for (int r = 0; r < 3; ++r) mx[r] += mass_weighted_row_.dot(Zr.col(r));
  return mx / total_mass_;
}

Trajectory simulate(const ReducedSimulator& simulator, int steps, double dt) {
  if (steps < 0) throw Error(ErrorKind::InvalidArgument, "step count must be non-negative");
  Trajectory traj;
  ReducedState state = ReducedState::rest(simulator.num_handles(), dt);
  traj.frames.push_back({state, simulator.advect(state.z)});
  for (int s = 1; s <= steps; ++s) {
    try {
      state = simulator.solve_timestep(state);
      traj.frames.push_back({state, simulator.advect(state.z)});
    } catch (const Error& e) {
      throw with_frame(e, s);
    }
  }
  return traj;
}

double incremental_potential(const VecX& z, const ReducedState& state,
                             const SceneConditions& conditions, const MaterialParams& material,
                             const CubatureSet& cubature, const SkinningBasis& skinning,
                             const ConvexField& rest_field) {
  const ReducedSimulator sim(rest_field, skinning, material, cubature, conditions);
  return sim.incremental_potential(z, state);
}

}  // namespace convexdyn
