#pragma once

// Parametric boundary curves.  Walls are parametrized on [0, 2π] with
// x(t + 2π) = x(t) + shift; closed curves have shift = 0.

#include "peristalsis/types.hpp"

#include <cmath>
#include <memory>

namespace peri {

struct CurvePoint {
  Vec2 x;
  Vec2 dx;
  Vec2 ddx;
};

class Curve {
 public:
  virtual ~Curve() = default;
  // t in [0, 2π].
  virtual CurvePoint eval_base(double t) const = 0;
  // Added to x when t advances by one period.
  virtual Vec2 period_shift() const { return Vec2::Zero(); }
  // n = orientation * rot90(tau).
  virtual int orientation() const = 0;

  // Any real t, using the period shift.
  CurvePoint eval(double t) const {
    const double k = std::floor(t / kTwoPi);
    double tb = t - k * kTwoPi;
    double kk = k;
    if (tb >= kTwoPi) {
      tb -= kTwoPi;
      kk += 1.0;
    }
    CurvePoint p = eval_base(tb);
    if (kk != 0.0) p.x += kk * period_shift();
    return p;
  }
};

struct FrenetPoint {
  Vec2 x;
  Vec2 tau;
  Vec2 n;
  double kappa;
  double speed;
};

inline FrenetPoint frenet(const CurvePoint& p, int orientation) {
  const double sp = p.dx.norm();
  if (!(sp > 0.0)) throw SolverError("degenerate curve geometry: vanishing speed");
  FrenetPoint f;
  f.x = p.x;
  f.speed = sp;
  f.tau = p.dx / sp;
  f.n = orientation * rot90(f.tau);
  f.kappa = orientation * cross(p.dx, p.ddx) / (sp * sp * sp);
  return f;
}

// Analytic wall x = (L(2π - t)/2π, offset + amp sin t) used by tests and presets.
class SineWall final : public Curve {
 public:
  SineWall(double L, double offset, double amp, int orientation, double phase = 0.0)
      : L_(L), offset_(offset), amp_(amp), orient_(orientation), phase_(phase) {}
  CurvePoint eval_base(double t) const override {
    const double a = L_ / kTwoPi;
    return {Vec2(a * (kTwoPi - t), offset_ + amp_ * std::sin(t + phase_)),
            Vec2(-a, amp_ * std::cos(t + phase_)), Vec2(0.0, -amp_ * std::sin(t + phase_))};
  }
  Vec2 period_shift() const override { return Vec2(-L_, 0.0); }
  int orientation() const override { return orient_; }

 private:
  double L_, offset_, amp_;
  int orient_;
  double phase_;
};

}  // namespace peri
