#include "peristalsis/bie_discretization.hpp"
#include "peristalsis/particle.hpp"

#include <gtest/gtest.h>

using namespace peri;

TEST(Particle, CircleGeometry) {
  const auto s = ParticleShape::circle(0.3, Vec2(1.0, 0.2));
  const auto c = std::make_shared<ParticleCurve>(s, 0.4, Vec2(1.0, 0.2));
  const PanelMesh m = make_mesh(c, 5, 12);
  EXPECT_NEAR(mesh_length(m), kTwoPi * 0.3, 1e-13);
  Vec2 nsum = Vec2::Zero();
  for (int i = 0; i < m.size(); ++i) {
    // n points into the particle, out of the fluid.
    EXPECT_LT(m.n[i].dot(m.x[i] - Vec2(1.0, 0.2)), 0.0);
    EXPECT_NEAR(m.kappa[i], 1.0 / 0.3, 1e-12);
    nsum += m.w[i] * m.n[i];
  }
  EXPECT_LT(nsum.norm(), 1e-13);
}

TEST(Particle, EllipseAreaAndRotation) {
  const auto s = ParticleShape::ellipse(0.4, 0.2, kPi / 4, Vec2(kPi, 0.0));
  EXPECT_NEAR(s.area(), kPi * 0.08, 1e-15);
  const auto c = std::make_shared<ParticleCurve>(s, 0.0, Vec2(kPi, 0.0));
  const PanelMesh m = make_mesh(c, 8, 12);
  double area = 0.0;
  for (int i = 0; i < m.size(); ++i) area -= 0.5 * m.w[i] * (m.x[i] - Vec2(kPi, 0.0)).dot(m.n[i]);
  EXPECT_NEAR(area, s.area(), 1e-12);
  const Vec2 tip = c->eval_base(0.0).x - Vec2(kPi, 0.0);
  EXPECT_NEAR(tip.x(), 0.4 * std::cos(kPi / 4), 1e-15);
  EXPECT_NEAR(tip.y(), 0.4 * std::sin(kPi / 4), 1e-15);
}

TEST(Particle, RigidKinematics) {
  const RigidConfig q{Vec2(0.1, -0.2), 0.3};
  const RigidVelocity v{Vec2(-1.0, 0.5), 2.0};
  const RigidConfig r = advance(q, v, 0.1);
  EXPECT_NEAR(r.c.x(), 0.0, 1e-15);
  EXPECT_NEAR(r.c.y(), -0.15, 1e-15);
  EXPECT_NEAR(r.phi, 0.5, 1e-15);
  const Vec2 u = rigid_velocity_field(v, Vec2(1.0, 1.0), Vec2(1.0, 0.0));
  EXPECT_NEAR(u.x(), -3.0, 1e-15);
  EXPECT_NEAR(u.y(), 0.5, 1e-15);
}

TEST(Particle, TorqueConversionRoundTrip) {
  const Vec2 F(0.3, -1.1), c(2.0, 0.4);
  const double T0 = torque_about_origin(0.7, F, c);
  EXPECT_NEAR(T0, 0.7 + cross(c, F), 1e-15);
  EXPECT_NEAR(torque_about_centroid(T0, F, c), 0.7, 1e-15);
}

TEST(Particle, WrappingAndNetMotion) {
  const Vec2 w = wrap_center(Vec2(-0.5, 0.1), kTwoPi);
  EXPECT_NEAR(w.x(), kTwoPi - 0.5, 1e-15);
  EXPECT_NEAR(wrap_center(Vec2(3 * kTwoPi + 1.0, 0.0), kTwoPi).x(), 1.0, 1e-12);
  std::vector<RigidConfig> tr{{Vec2(0.0, 0.0), 0.0}, {Vec2(-7.0, 0.3), 1.0}};
  EXPECT_DOUBLE_EQ(net_motion(tr), -7.0);
  EXPECT_THROW(net_motion({}), ConfigError);
  EXPECT_THROW(ParticleShape::circle(-1.0, Vec2::Zero()).validate(), ConfigError);
}
