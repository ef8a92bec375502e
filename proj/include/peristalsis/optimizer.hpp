#pragma once

// Augmented-Lagrangian outer loop with dense BFGS inner solves.

#include "peristalsis/sensitivity.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace peri {

// Thrown by an objective when a trial point is not admissible; the line
// search backtracks.
struct TrialRejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Objective = std::function<double(const VecX& x, VecX& grad)>;

struct BfgsOptions {
  double c1 = 1e-4;
  double c2 = 0.9;
  double gtol = 1e-5;          // relative to 1 + |f|
  int max_iter = 200;
  int max_trials = 20;         // line-search trials per iteration
  double max_step = 0.1;       // infinity-norm cap of the first trial step
  double stagnation = 1e-14;   // relative change of f below which the solve stops
};

enum class BfgsStatus { Converged, MaxIterations, LineSearchFailed, Stagnated };

inline std::string to_string(BfgsStatus s) {
  switch (s) {
    case BfgsStatus::Converged: return "converged";
    case BfgsStatus::MaxIterations: return "max_iterations";
    case BfgsStatus::LineSearchFailed: return "line_search_failed";
    case BfgsStatus::Stagnated: return "stagnated";
  }
  return "?";
}

struct BfgsResult {
  VecX x, g;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  BfgsStatus status = BfgsStatus::Converged;
};

// Called at the start point and after every accepted iterate with (iteration, x, f, g).
using IterateCallback = std::function<void(int, const VecX&, double, const VecX&)>;

namespace bfgs_detail {

struct Sample {
  double a, f, d;  // step, value, directional derivative
  VecX x, g;
};

// Minimizer of the cubic through two samples, safeguarded into the bracket.
inline double cubic_step(const Sample& lo, const Sample& hi) {
  const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
  const double disc = d1 * d1 - lo.d * hi.d;
  double a = 0.5 * (lo.a + hi.a);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
    const double t = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    if (std::isfinite(t)) a = t;
  }
  const double lo_a = std::min(lo.a, hi.a), hi_a = std::max(lo.a, hi.a);
  const double margin = 0.1 * (hi_a - lo_a);
  return std::clamp(a, lo_a + margin, hi_a - margin);
}

}  // namespace bfgs_detail

// Strong-Wolfe line search (bracketing and zoom) along p from (x, f, g).
// Returns false when no acceptable point was found within max_trials.
inline bool wolfe_search(const Objective& obj, const VecX& x, double f, const VecX& g, const VecX& p, double a0,
                         const BfgsOptions& opt, bfgs_detail::Sample& out, int& evals) {
  using bfgs_detail::Sample;
  const double d0 = g.dot(p);
  auto eval = [&](double a, Sample& s) {
    s.a = a;
    s.x = x + a * p;
    ++evals;
    try {
      s.f = obj(s.x, s.g);
      s.d = s.g.dot(p);
    } catch (const TrialRejected&) {
      s.f = std::numeric_limits<double>::infinity();
      s.d = std::numeric_limits<double>::quiet_NaN();
    }
    return std::isfinite(s.f);
  };
  Sample prev{0.0, f, d0, x, g};
  double a = a0;
  int trials = 0;
  auto zoom = [&](Sample lo, Sample hi) {
    while (trials < opt.max_trials) {
      Sample s;
      ++trials;
      const double at = std::isfinite(hi.f) && std::isfinite(hi.d) ? bfgs_detail::cubic_step(lo, hi)
                                                                    : 0.5 * (lo.a + hi.a);
      if (!eval(at, s) || s.f > f + opt.c1 * at * d0 || s.f >= lo.f) {
        hi = s;
        continue;
      }
      if (std::abs(s.d) <= -opt.c2 * d0) {
        out = s;
        return true;
      }
      if (s.d * (hi.a - lo.a) >= 0.0) hi = lo;
      lo = s;
    }
    return false;
  };
  while (trials < opt.max_trials) {
    Sample s;
    ++trials;
    if (!eval(a, s)) {
      // Inadmissible trial: shrink towards the last good point.
      Sample bad = s;
      bad.a = a;
      return zoom(prev, bad);
    }
    if (s.f > f + opt.c1 * a * d0 || (trials > 1 && s.f >= prev.f)) return zoom(prev, s);
    if (std::abs(s.d) <= -opt.c2 * d0) {
      out = s;
      return true;
    }
    if (s.d >= 0.0) return zoom(s, prev);
    prev = s;
    a *= 2.0;
  }
  return false;
}

inline BfgsResult bfgs_minimize(const Objective& obj, const VecX& x0, const BfgsOptions& opt = {},
                                const IterateCallback& cb = {}) {
  const int n = static_cast<int>(x0.size());
  BfgsResult r;
  r.x = x0;
  r.f = obj(r.x, r.g);
  r.evaluations = 1;
  if (cb) cb(0, r.x, r.f, r.g);
  MatX H = MatX::Identity(n, n);
  bool scaled = false;
  for (;;) {
    if (r.g.norm() <= opt.gtol * (1.0 + std::abs(r.f))) {
      r.status = BfgsStatus::Converged;
      return r;
    }
    if (r.iterations >= opt.max_iter) {
      r.status = BfgsStatus::MaxIterations;
      return r;
    }
    VecX p = -H * r.g;
    if (p.dot(r.g) >= 0.0) {
      H.setIdentity();
      p = -r.g;
    }
    double a0 = 1.0;
    if (!scaled) a0 = std::min(1.0, opt.max_step / std::max(p.lpNorm<Eigen::Infinity>(), 1e-300));
    bfgs_detail::Sample s;
    if (!wolfe_search(obj, r.x, r.f, r.g, p, a0, opt, s, r.evaluations)) {
      r.status = BfgsStatus::LineSearchFailed;
      return r;
    }
    const VecX dx = s.x - r.x, dg = s.g - r.g;
    const double df = r.f - s.f;
    r.x = s.x;
    r.g = s.g;
    r.f = s.f;
    ++r.iterations;
    if (cb) cb(r.iterations, r.x, r.f, r.g);
    const double sy = dx.dot(dg);
    if (sy > 1e-300) {
      if (!scaled) {
        H *= sy / dg.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const MatX V = MatX::Identity(n, n) - rho * dx * dg.transpose();
      H = V * H * V.transpose() + rho * dx * dx.transpose();
    }
    if (std::abs(df) <= opt.stagnation * std::max(1.0, std::abs(r.f))) {
      r.status = BfgsStatus::Stagnated;
      return r;
    }
  }
}

// Objective and two equality constraints with gradients.
struct ConstrainedEval {
  double f = 0.0, cV = 0.0, cD = 0.0;
  VecX gf, gV, gD;
};

using ConstrainedEvaluator = std::function<ConstrainedEval(const VecX&)>;

struct AlState {
  double lambda1 = 0.0, lambda2 = 0.0;
  double sigma = 10.0;
  double zeta = 0.0;
  int outer = 0;
};

// L_A = f - λ1 cV - λ2 cD + σ/2 (cV² + cD²) and its gradient.
inline double al_value_and_gradient(const ConstrainedEval& e, const AlState& s, VecX& g) {
  g = e.gf + (-s.lambda1 + s.sigma * e.cV) * e.gV + (-s.lambda2 + s.sigma * e.cD) * e.gD;
  return e.f - s.lambda1 * e.cV - s.lambda2 * e.cD + 0.5 * s.sigma * (e.cV * e.cV + e.cD * e.cD);
}

struct AlOptions {
  double zeta_star = 0.01;
  double lambda1 = 0.0, lambda2 = 0.0;
  double sigma0 = 10.0;
  int outer_cap = 25;
  BfgsOptions inner;
};

enum class AlBranch { UpdateMultiplier, IncreasePenalty, Converged };

struct AlHistoryRow {
  int outer = 0, inner = 0;
  double f = 0.0, cV = 0.0, cD = 0.0, gnorm = 0.0, sigma = 0.0, lambda1 = 0.0, lambda2 = 0.0;
};

struct AlResult {
  VecX x;
  ConstrainedEval at_x;
  AlState state;
  std::vector<AlHistoryRow> history;
  std::vector<AlBranch> branches;
  std::vector<BfgsStatus> inner_status;
  bool converged = false;
  int inner_iterations = 0;
};

struct AlCallbacks {
  std::function<void(const AlHistoryRow&, const VecX&)> on_iterate;
  std::function<void(AlBranch, const AlState&)> on_outer;
};

inline AlResult optimize_al(const ConstrainedEvaluator& ev, const VecX& x0, const AlOptions& opt = {},
                            const AlCallbacks& cb = {}) {
  if (!(opt.sigma0 > 0.0)) throw ConfigError("optimizer: sigma0 must be positive");
  if (opt.outer_cap < 1) throw ConfigError("optimizer: outer cap must be at least 1");
  AlResult res;
  AlState& st = res.state;
  st.lambda1 = opt.lambda1;
  st.lambda2 = opt.lambda2;
  st.sigma = opt.sigma0;
  st.zeta = std::pow(opt.sigma0, -0.1);
  res.x = x0;
  for (int m = 1; m <= opt.outer_cap; ++m) {
    st.outer = m;
    ConstrainedEval last, accepted;
    auto obj = [&](const VecX& x, VecX& g) {
      last = ev(x);
      return al_value_and_gradient(last, st, g);
    };
    // The accepted point is always the most recent evaluation.
    auto record = [&](int inner, const VecX& x, double, const VecX& g) {
      accepted = last;
      AlHistoryRow row{m, inner, last.f, last.cV, last.cD, g.norm(), st.sigma, st.lambda1, st.lambda2};
      res.history.push_back(row);
      if (cb.on_iterate) cb.on_iterate(row, x);
    };
    const BfgsResult br = bfgs_minimize(obj, res.x, opt.inner, record);
    res.inner_status.push_back(br.status);
    res.inner_iterations += br.iterations;
    res.x = br.x;
    res.at_x = accepted;
    const double viol = std::max(std::abs(res.at_x.cV), std::abs(res.at_x.cD));
    AlBranch b;
    if (viol < st.zeta) {
      if (viol < opt.zeta_star) {
        b = AlBranch::Converged;
        res.converged = true;
      } else {
        b = AlBranch::UpdateMultiplier;
        st.lambda1 -= st.sigma * res.at_x.cV;
        st.lambda2 -= st.sigma * res.at_x.cD;
        st.zeta *= std::pow(st.sigma, -0.9);
      }
    } else {
      b = AlBranch::IncreasePenalty;
      st.sigma *= 10.0;
      st.zeta = std::pow(st.sigma, -0.1);
    }
    res.branches.push_back(b);
    if (cb.on_outer) cb.on_outer(b, st);
    if (res.converged) break;
  }
  return res;
}

// Shape problem: minimize J_W subject to V = V0 and D = D0.
struct ShapeOptProblem {
  Problem base;
  double V0 = 12.26;
  double D0 = 0.0;

  ConstrainedEval evaluate(const VecX& ps) const {
    const Problem p = base.with_ps(std::vector<double>(ps.data(), ps.data() + ps.size()));
    Evaluation e;
    try {
      check_walls(p);
      e = peri::evaluate(p);
    } catch (const ContactError& ex) {
      throw TrialRejected(ex.what());
    }
    const ShapeGradient G = shape_gradient(p, e.traj, {true, true, false});
    ConstrainedEval out;
    out.f = e.values.JW;
    out.cV = e.values.V - V0;
    out.cD = e.values.D - D0;
    out.gf = G.JW;
    out.gV = G.V;
    out.gD = G.D;
    return out;
  }

  // Rejects walls that cross each other or fold back in x1.
  static void check_walls(const Problem& p) {
    const Walls w = p.walls();
    const int n = 400;
    for (int i = 0; i <= n; ++i) {
      const double t = kTwoPi * i / n;
      const CurvePoint u = w.upper->eval_base(t), l = w.lower->eval_base(t);
      if (!(u.dx.x() < 0.0) || !(l.dx.x() < 0.0)) throw ContactError("walls: x1 is not monotone");
    }
    for (int i = 0; i <= n; ++i) {
      const double x1 = p.spline.L * i / n;
      if (!(wall_height_at(*w.upper, x1) > wall_height_at(*w.lower, x1)))
        throw ContactError("walls: channel pinched shut");
    }
  }

  // x2 of a wall with monotone x1 at abscissa x1, by bisection in t.
  static double wall_height_at(const Curve& c, double x1) {
    double lo = 0.0, hi = kTwoPi;
    for (int k = 0; k < 60; ++k) {
      const double mid = 0.5 * (lo + hi);
      if (c.eval_base(mid).x.x() > x1) lo = mid; else hi = mid;
    }
    return c.eval_base(0.5 * (lo + hi)).x.y();
  }
};

}  // namespace peri
