#pragma once

// Forward Euler evolution of the particle and the backward adjoint recursion.
//
// Every adjoint problem at a given instant is linear in its net force and
// torque targets, so the forward pass also solves, on the same factorization,
// three unit-target problems and the two functional-specific data problems.
// The backward pass then only combines stored traces.
//
// The recursion is the exact adjoint of the Euler scheme in the particle
// configuration (c, phi).  The adjoint solved at t_n carries the targets
// -lambda_{n+1}, where lambda is the costate of (c, phi), and
//   lambda_n = lambda_{n+1} + dt (<n.E, 1>, -<h_s hh_s, n.r(x - c)>)_{gamma_n}.

#include "peristalsis/periodic_solver.hpp"

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace peri {

struct TimeGrid {
  double T = 1.0;
  int N = 20;

  void validate() const {
    if (!(T > 0.0)) throw ConfigError("time grid: T must be positive");
    if (N < 1) throw ConfigError("time grid: N must be at least 1");
  }
  double dt() const { return T / N; }
  double t(int n) const { return T * n / N; }
};

enum class Functional { Dissipation, NetMotion, MassFlow };

inline std::string to_string(Functional f) {
  switch (f) {
    case Functional::Dissipation: return "dissipation";
    case Functional::NetMotion: return "net_motion";
    case Functional::MassFlow: return "mass_flow";
  }
  return "?";
}

// Boundary traces of one solve.
struct Traces {
  std::vector<Vec2> f_wall;
  std::vector<double> p_wall;
  std::vector<Vec2> h;
  RigidVelocity motion;

  static Traces from(const FlowSolution& s) { return {s.f_wall, s.p_wall, s.h_particle, s.motion}; }

  void axpy(double a, const Traces& o) {
    for (std::size_t i = 0; i < f_wall.size(); ++i) f_wall[i] += a * o.f_wall[i];
    for (std::size_t i = 0; i < p_wall.size(); ++i) p_wall[i] += a * o.p_wall[i];
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += a * o.h[i];
    motion.w += a * o.motion.w;
    motion.rho += a * o.motion.rho;
  }
  static Traces zeros_like(const Traces& o) {
    Traces z;
    z.f_wall.assign(o.f_wall.size(), Vec2::Zero());
    z.p_wall.assign(o.p_wall.size(), 0.0);
    z.h.assign(o.h.size(), Vec2::Zero());
    return z;
  }
};

// Adjoint basis problems solved at every step.
enum AdjointBasis { kUnitFx = 0, kUnitFy, kUnitTorque, kDissipationData, kMassFlowData, kNumBases };

struct StepRecord {
  double t = 0.0;
  RigidConfig q;
  RigidVelocity v;
  Vec2 centroid = Vec2::Zero();  // unwrapped
  // Particle nodes with unwrapped positions.
  std::vector<Vec2> px, ptau, pn;
  std::vector<double> pw;
  Traces forward;
  double flux0 = 0.0, fluxL = 0.0;
  double residual = 0.0;
  bool has_basis = false;
  std::array<Traces, kNumBases> basis;
};

struct ForwardTrajectory {
  TimeGrid grid;
  std::shared_ptr<const ChannelGeometry> geo;
  ParticleShape shape;
  std::vector<StepRecord> steps;  // N + 1 records, t_0 .. t_N

  std::vector<RigidConfig> configs() const {
    std::vector<RigidConfig> c;
    for (const auto& s : steps) c.push_back(s.q);
    return c;
  }
};

struct EvolutionOptions {
  bool adjoint_bases = true;
  // Called after every forward solve.
  std::function<void(int, const StepRecord&)> on_step;
};

inline ForwardTrajectory run_forward(std::shared_ptr<const ChannelGeometry> geo, const ParticleShape& shape,
                                     const TimeGrid& grid, const EvolutionOptions& opt = {}) {
  grid.validate();
  shape.validate();
  ForwardTrajectory traj;
  traj.grid = grid;
  traj.geo = geo;
  traj.shape = shape;
  const auto& g = *geo;
  const double dt = grid.dt();
  const std::vector<Vec2> slip = wall_slip(g);
  std::vector<Vec2> wdata = slip;
  for (auto& u : wdata) u += Vec2(1.0, 0.0);

  RigidConfig q;
  for (int n = 0; n <= grid.N; ++n) {
    std::unique_ptr<InstantSystem> sys;
    try {
      sys = std::make_unique<InstantSystem>(geo, ParticleState{shape, q});
    } catch (const ContactError& e) {
      throw ContactError("step " + std::to_string(n) + ": " + e.what());
    }
    InstantBC bc;
    bc.u_wall = slip;
    FlowSolution s;
    try {
      s = sys->solve(bc);
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(n) + ": " + e.what());
    }
    StepRecord r;
    r.t = grid.t(n);
    r.q = q;
    r.v = s.motion;
    r.centroid = sys->centroid_unwrapped();
    const auto& pm = sys->particle_mesh();
    const Vec2 shift = r.centroid - sys->centroid_wrapped();
    r.px.resize(pm.size());
    for (int i = 0; i < pm.size(); ++i) r.px[i] = pm.x[i] + shift;
    r.ptau = pm.tau;
    r.pn = pm.n;
    r.pw = pm.w;
    r.forward = Traces::from(s);
    r.flux0 = s.flux0;
    r.fluxL = s.fluxL;
    r.residual = s.residual;

    if (opt.adjoint_bases) {
      r.has_basis = true;
      const std::vector<Vec2> zero(g.wall_nodes(), Vec2::Zero());
      auto solve = [&](const std::vector<Vec2>& u, double dp, Vec2 F, double Tq) {
        InstantBC a;
        a.u_wall = u;
        a.dp = dp;
        a.force = F;
        a.torque = Tq;
        return Traces::from(sys->solve(a));
      };
      r.basis[kUnitFx] = solve(zero, 0.0, Vec2(1.0, 0.0), 0.0);
      r.basis[kUnitFy] = solve(zero, 0.0, Vec2(0.0, 1.0), 0.0);
      r.basis[kUnitTorque] = solve(zero, 0.0, Vec2::Zero(), 1.0);
      r.basis[kDissipationData] = solve(wdata, 0.0, Vec2::Zero(), 0.0);
      r.basis[kMassFlowData] = solve(zero, g.L() / grid.T, Vec2::Zero(), 0.0);
    }
    if (opt.on_step) opt.on_step(n, r);
    traj.steps.push_back(std::move(r));
    if (n < grid.N) q = advance(q, s.motion, dt);
  }
  return traj;
}

// n.E on the particle from forward and adjoint traces at one instant.
inline std::vector<Vec2> eshelby_trace(const std::vector<Vec2>& h, double rho, const std::vector<Vec2>& hh,
                                       double rho_hat, const std::vector<Vec2>& tau, const std::vector<Vec2>& n) {
  std::vector<Vec2> e(h.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    e[i] = rot90(rho_hat * h[i] + rho * hh[i]) - h[i].dot(tau[i]) * hh[i].dot(tau[i]) * n[i];
  return e;
}

struct AdjointStep {
  Traces traces;
  Vec2 force_target = Vec2::Zero();
  double torque_target = 0.0;  // about the centroid
};

struct AdjointTrajectory {
  Functional functional = Functional::Dissipation;
  std::vector<AdjointStep> steps;  // t_0 .. t_N; the last one carries the final condition
};

// Adjoint traces at one step for given targets, torque about the centroid.
inline Traces combine_basis(const StepRecord& r, Functional fn, const Vec2& F, double Tc) {
  Traces t = Traces::zeros_like(r.basis[kUnitFx]);
  if (fn == Functional::Dissipation) t.axpy(1.0, r.basis[kDissipationData]);
  if (fn == Functional::MassFlow) t.axpy(1.0, r.basis[kMassFlowData]);
  t.axpy(F.x(), r.basis[kUnitFx]);
  t.axpy(F.y(), r.basis[kUnitFy]);
  t.axpy(Tc + F.dot(rot90(r.centroid)), r.basis[kUnitTorque]);
  return t;
}

// Gradient of the step Lagrangian with respect to (c, phi).
inline Vec3 configuration_gradient(const StepRecord& r, const Traces& a) {
  const auto e = eshelby_trace(r.forward.h, r.v.rho, a.h, a.motion.rho, r.ptau, r.pn);
  Vec3 g = Vec3::Zero();
  for (std::size_t i = 0; i < e.size(); ++i) {
    g.head<2>() += r.pw[i] * e[i];
    const double hs = r.forward.h[i].dot(r.ptau[i]), hhs = a.h[i].dot(r.ptau[i]);
    g(2) -= r.pw[i] * hs * hhs * r.pn[i].dot(rot90(r.px[i] - r.centroid));
  }
  return g;
}

inline AdjointTrajectory run_adjoint(const ForwardTrajectory& traj, Functional fn) {
  const int N = traj.grid.N;
  if (static_cast<int>(traj.steps.size()) != N + 1) throw SolverError("adjoint: incomplete forward trajectory");
  for (const auto& s : traj.steps)
    if (!s.has_basis) throw SolverError("adjoint: forward trajectory lacks adjoint bases");
  const double dt = traj.grid.dt();
  AdjointTrajectory adj;
  adj.functional = fn;
  adj.steps.resize(N + 1);
  Vec3 lambda = Vec3::Zero();
  if (fn == Functional::NetMotion) lambda(0) = 1.0;
  for (int n = N; n >= 0; --n) {
    const StepRecord& r = traj.steps[n];
    const Vec2 F = -lambda.head<2>();
    const double Tc = -lambda(2);
    adj.steps[n] = {combine_basis(r, fn, F, Tc), F, Tc};
    if (n < N) lambda += dt * configuration_gradient(r, adj.steps[n].traces);
  }
  return adj;
}

}  // namespace peri
