#pragma once

// Functional values and boundary-only shape gradients along the spline
// control-point directions.

#include "peristalsis/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>

namespace peri {

// Everything needed to run the pipeline for one control-point vector.
struct Problem {
  SplineConfig spline;
  std::vector<double> ps;
  ParticleShape particle = ParticleShape::circle(0.3, Vec2(kPi, 0.0));
  TimeGrid grid;
  SolverOptions solver;

  Walls walls() const { return make_spline_walls(spline, ps); }
  std::shared_ptr<const ChannelGeometry> geometry() const {
    return std::make_shared<ChannelGeometry>(walls(), spline.L, solver);
  }
  Problem with_ps(std::vector<double> p) const {
    Problem q = *this;
    q.ps = std::move(p);
    return q;
  }
};

struct FunctionalValues {
  double JW = 0.0, D = 0.0, V = 0.0, Q = 0.0, C = 0.0;
};

inline double dissipation(const ForwardTrajectory& traj) {
  const auto& g = *traj.geo;
  const auto slip = wall_slip(g);
  const double dt = traj.grid.dt();
  double J = 0.0;
  for (int n = 0; n < traj.grid.N; ++n) {
    const auto& f = traj.steps[n].forward.f_wall;
    double rate = 0.0;
    for (int w = 0; w < 2; ++w)
      for (int i = 0; i < g.wall(w).size(); ++i) {
        const int k = g.wall_offset(w) + i;
        rate += g.wall(w).w[i] * f[k].dot(slip[k] + Vec2(1.0, 0.0));
      }
    J += dt * rate;
  }
  return J;
}

inline double net_motion(const ForwardTrajectory& traj) {
  return traj.steps.back().centroid.x() - traj.steps.front().centroid.x();
}

// Fluid area of the cell, ∫_Γ x2 n2 ds - |ω|.
inline double volume(const ChannelGeometry& g, const ParticleShape& s) {
  double V = 0.0;
  for (int w = 0; w < 2; ++w) {
    const auto& m = g.wall(w);
    for (int i = 0; i < m.size(); ++i) V += m.w[i] * m.x[i].y() * m.n[i].y();
  }
  return V - s.area();
}

inline double mass_flow(const ForwardTrajectory& traj) {
  double C = 0.0;
  for (int n = 0; n < traj.grid.N; ++n) C += traj.grid.dt() * traj.steps[n].fluxL;
  return traj.geo->L() / traj.grid.T * C;
}

inline FunctionalValues functionals(const ForwardTrajectory& traj) {
  FunctionalValues v;
  v.JW = dissipation(traj);
  v.D = net_motion(traj);
  v.V = volume(*traj.geo, traj.shape);
  v.C = mass_flow(traj);
  v.Q = v.V + v.C - traj.shape.area() / traj.grid.T * v.D;
  return v;
}

// Boundary samples of one perturbation field θ at the wall nodes.
struct PerturbationSamples {
  std::vector<double> theta_n;     // all wall nodes, upper first
  std::vector<double> ds_theta_n;  // ∂s θ_n
  double dell[2] = {0.0, 0.0};     // dℓ* per wall
  double theta2_end[2] = {0.0, 0.0};  // θ2 at t = 0
};

inline PerturbationSamples sample_perturbation(const ChannelGeometry& g, const Walls& theta) {
  PerturbationSamples s;
  s.theta_n.resize(g.wall_nodes());
  s.ds_theta_n.resize(g.wall_nodes());
  for (int w = 0; w < 2; ++w) {
    const auto& m = g.wall(w);
    const Curve& th = theta.wall(w);
    const int o = m.curve->orientation();
    double kap = 0.0;
    for (int i = 0; i < m.size(); ++i) {
      const CurvePoint x = m.curve->eval_base(m.t[i]);
      const CurvePoint d = th.eval_base(m.t[i]);
      const Vec2& tau = m.tau[i];
      const Vec2 dtau = (x.ddx - tau * tau.dot(x.ddx)) / m.speed[i];
      const Vec2 dn = o * rot90(dtau);
      const int k = g.wall_offset(w) + i;
      s.theta_n[k] = d.x.dot(m.n[i]);
      s.ds_theta_n[k] = (d.dx.dot(m.n[i]) + d.x.dot(dn)) / m.speed[i];
      kap += m.w[i] * m.kappa[i] * s.theta_n[k];
    }
    s.dell[w] = -kap / g.L();
    s.theta2_end[w] = th.eval_base(0.0).x.y();
  }
  return s;
}

inline std::vector<PerturbationSamples> basis_perturbations(const ChannelGeometry& g, const SplineConfig& cfg) {
  std::vector<PerturbationSamples> out;
  for (int j = 0; j < cfg.num_ps(); ++j) {
    std::vector<double> delta(cfg.num_ps(), 0.0);
    delta[j] = 1.0;
    out.push_back(sample_perturbation(g, transformation_field(cfg, delta)));
  }
  return out;
}

// Time-integrated coefficients of a wall gradient expression:
//   G(θ) = Σ_i a_i θ_n,i + Σ_w b_w dℓ*_w + Σ_i c_i ∂sθ_n,i.
struct WallCoefficients {
  std::vector<double> a, c;
  double b[2] = {0.0, 0.0};

  double apply(const PerturbationSamples& s) const {
    double v = b[0] * s.dell[0] + b[1] * s.dell[1];
    for (std::size_t i = 0; i < a.size(); ++i) v += a[i] * s.theta_n[i] + c[i] * s.ds_theta_n[i];
    return v;
  }
};

// The forward traction enters the dissipation expression twice: once as the
// functional's own density and once through the adjoint pairing.
inline WallCoefficients wall_coefficients(const ForwardTrajectory& traj, const AdjointTrajectory& adj,
                                          bool dissipation_density) {
  const auto& g = *traj.geo;
  const int nw = g.wall_nodes();
  WallCoefficients W;
  W.a.assign(nw, 0.0);
  W.c.assign(nw, 0.0);
  const double dt = traj.grid.dt();
  for (int n = 0; n < traj.grid.N; ++n) {
    const Traces& F = traj.steps[n].forward;
    const Traces& A = adj.steps[n].traces;
    for (int w = 0; w < 2; ++w) {
      const auto& m = g.wall(w);
      const double ell = g.ell(w);
      for (int i = 0; i < m.size(); ++i) {
        const int k = g.wall_offset(w) + i;
        const double fs = F.f_wall[k].dot(m.tau[i]);
        const double fhs = A.f_wall[k].dot(m.tau[i]);
        const double S = dissipation_density ? fs + fhs : fhs;
        const double P = dissipation_density ? F.p_wall[k] + A.p_wall[k] : A.p_wall[k];
        W.a[k] += dt * m.w[i] * (m.kappa[i] * ell * S - fs * fhs);
        W.b[w] += dt * m.w[i] * S;
        W.c[k] -= dt * m.w[i] * ell * P;
      }
    }
  }
  return W;
}

struct ShapeGradient {
  VecX JW, D, V, C, Q;
};

struct GradientRequest {
  bool dissipation = true;
  bool net_motion = true;
  bool mass_flow = false;
};

inline VecX apply_all(const WallCoefficients& W, const std::vector<PerturbationSamples>& P) {
  VecX g(P.size());
  for (std::size_t j = 0; j < P.size(); ++j) g(j) = W.apply(P[j]);
  return g;
}

inline VecX volume_gradient(const ChannelGeometry& g, const std::vector<PerturbationSamples>& P) {
  VecX out = VecX::Zero(P.size());
  for (std::size_t j = 0; j < P.size(); ++j)
    for (int w = 0; w < 2; ++w)
      for (int i = 0; i < g.wall(w).size(); ++i)
        out(j) += g.wall(w).w[i] * P[j].theta_n[g.wall_offset(w) + i];
  return out;
}

// End-section contribution of the mass flow: L/T Σ dt [u1 θ2(z+) - u1 θ2(z-)].
inline double mass_flow_end_term(const ForwardTrajectory& traj, const PerturbationSamples& s) {
  const auto& g = *traj.geo;
  double v = 0.0;
  for (int w = 0; w < 2; ++w) {
    const FrenetPoint z = frenet(g.walls().wall(w).eval_base(0.0), g.walls().wall(w).orientation());
    const double u1 = g.ell(w) * z.tau.x();
    v += (w == 0 ? 1.0 : -1.0) * u1 * s.theta2_end[w];
  }
  return g.L() * v;
}

// Adjoint gradients; the three adjoint passes run concurrently.
inline ShapeGradient shape_gradient(const Problem& prob, const ForwardTrajectory& traj,
                                    const GradientRequest& req = {}) {
  const auto& g = *traj.geo;
  const auto P = basis_perturbations(g, prob.spline);
  ShapeGradient G;
  G.V = volume_gradient(g, P);
  auto job = [&](Functional fn, VecX& out) {
    const AdjointTrajectory adj = run_adjoint(traj, fn);
    out = apply_all(wall_coefficients(traj, adj, fn == Functional::Dissipation), P);
  };
  std::vector<std::thread> pool;
  std::exception_ptr err[3];
  auto launch = [&](int slot, Functional fn, VecX& out) {
    pool.emplace_back([&, slot, fn] {
      try {
        job(fn, out);
      } catch (...) {
        err[slot] = std::current_exception();
      }
    });
  };
  const bool need_D = req.net_motion || req.mass_flow;
  if (req.dissipation) launch(0, Functional::Dissipation, G.JW);
  if (need_D) launch(1, Functional::NetMotion, G.D);
  if (req.mass_flow) launch(2, Functional::MassFlow, G.C);
  for (auto& t : pool) t.join();
  for (auto& e : err)
    if (e) std::rethrow_exception(e);
  if (req.mass_flow) {
    for (std::size_t j = 0; j < P.size(); ++j) G.C(j) += mass_flow_end_term(traj, P[j]);
    G.Q = G.V + G.C - prob.particle.area() / prob.grid.T * G.D;
  }
  return G;
}

struct Evaluation {
  FunctionalValues values;
  ForwardTrajectory traj;
};

inline Evaluation evaluate(const Problem& prob, bool adjoint_bases = true) {
  Evaluation e;
  EvolutionOptions opt;
  opt.adjoint_bases = adjoint_bases;
  e.traj = run_forward(prob.geometry(), prob.particle, prob.grid, opt);
  e.values = functionals(e.traj);
  return e;
}

// Central differences of every functional along one control-point direction.
inline FunctionalValues fd_gradient(const Problem& prob, const std::vector<double>& delta, double eta = 1e-4) {
  if (!(eta > 0.0)) throw ConfigError("fd_gradient: eta must be positive");
  std::vector<double> pp = prob.ps, pm = prob.ps;
  for (std::size_t i = 0; i < pp.size(); ++i) {
    pp[i] += eta * delta[i];
    pm[i] -= eta * delta[i];
  }
  const auto a = evaluate(prob.with_ps(pp), false).values;
  const auto b = evaluate(prob.with_ps(pm), false).values;
  const double s = 0.5 / eta;
  return {(a.JW - b.JW) * s, (a.D - b.D) * s, (a.V - b.V) * s, (a.Q - b.Q) * s, (a.C - b.C) * s};
}

// Runs f(j) for j in [0, n) on up to `threads` workers.
inline void parallel_for(int n, int threads, const std::function<void(int)>& f) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int j = 0; j < n; ++j) f(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> err(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int j = next++; j < n; j = next++) f(j);
      } catch (...) {
        err[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : err)
    if (e) std::rethrow_exception(e);
}

inline std::vector<FunctionalValues> fd_gradients(const Problem& prob, double eta = 1e-4, int threads = 1) {
  const int n = prob.spline.num_ps();
  std::vector<FunctionalValues> out(n);
  parallel_for(n, threads, [&](int j) {
    std::vector<double> delta(n, 0.0);
    delta[j] = 1.0;
    out[j] = fd_gradient(prob, delta, eta);
  });
  return out;
}

}  // namespace peri
