#pragma once

// Rigid particle: reference shape, configuration (c, phi) and explicit update.
// Angular velocity is taken about the current centroid.

#include "peristalsis/curve.hpp"
#include "peristalsis/types.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace peri {

inline Mat2 rotation(double phi) {
  Mat2 R;
  R << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return R;
}

struct ParticleShape {
  enum class Kind { Circle, Ellipse };
  Kind kind = Kind::Circle;
  double a = 0.3;  // radius, or first semi-axis
  double b = 0.3;  // second semi-axis
  double tilt = 0.0;
  Vec2 center0 = Vec2(kPi, 0.0);

  static ParticleShape circle(double r, Vec2 center) {
    return {Kind::Circle, r, r, 0.0, center};
  }
  static ParticleShape ellipse(double a, double b, double tilt, Vec2 center) {
    return {Kind::Ellipse, a, b, tilt, center};
  }

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("particle: semi-axes must be positive");
  }
  double area() const { return kPi * a * b; }

  // Body-frame boundary relative to the centroid, counter-clockwise in θ.
  CurvePoint body(double th) const {
    const Mat2 R = rotation(tilt);
    const Vec2 p(a * std::cos(th), b * std::sin(th));
    const Vec2 dp(-a * std::sin(th), b * std::cos(th));
    return {R * p, R * dp, -(R * p)};
  }
};

struct RigidConfig {
  Vec2 c = Vec2::Zero();  // displacement of the centroid from its initial placement
  double phi = 0.0;
};

struct RigidVelocity {
  Vec2 w = Vec2::Zero();
  double rho = 0.0;
};

inline Vec2 centroid(const ParticleShape& s, const RigidConfig& q) { return s.center0 + q.c; }

inline Vec2 rigid_velocity_field(const RigidVelocity& v, const Vec2& x, const Vec2& center) {
  return v.w + v.rho * rot90(x - center);
}

inline RigidConfig advance(const RigidConfig& q, const RigidVelocity& v, double dt) {
  return {q.c + dt * v.w, q.phi + dt * v.rho};
}

// Torque about the origin from a centroid torque and total force, and back.
inline double torque_about_origin(double torque_centroid, const Vec2& force, const Vec2& center) {
  return torque_centroid + force.dot(rot90(center));
}
inline double torque_about_centroid(double torque_origin, const Vec2& force, const Vec2& center) {
  return torque_origin - force.dot(rot90(center));
}

inline double net_motion(const std::vector<RigidConfig>& traj) {
  if (traj.empty()) throw ConfigError("net_motion: empty trajectory");
  return traj.back().c.x() - traj.front().c.x();
}

// World-frame particle boundary placed at `center` (possibly a wrapped image).
class ParticleCurve final : public Curve {
 public:
  ParticleCurve(const ParticleShape& s, double phi, const Vec2& center)
      : shape_(s), R_(rotation(phi)), center_(center) {}
  CurvePoint eval_base(double th) const override {
    const CurvePoint b = shape_.body(th);
    return {center_ + R_ * b.x, R_ * b.dx, R_ * b.ddx};
  }
  int orientation() const override { return 1; }
  const Vec2& center() const { return center_; }

 private:
  ParticleShape shape_;
  Mat2 R_;
  Vec2 center_;
};

// Image of the centroid in [0, L).
inline Vec2 wrap_center(const Vec2& c, double L) {
  return Vec2(c.x() - L * std::floor(c.x() / L), c.y());
}

}  // namespace peri
