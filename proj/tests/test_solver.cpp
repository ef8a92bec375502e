#include "peristalsis/periodic_solver.hpp"

#include <gtest/gtest.h>

using namespace peri;

namespace {

SolverOptions lean() {
  SolverOptions o;
  o.wall_panels = 7;
  o.particle_panels = 4;
  o.p = 10;
  return o;
}

std::shared_ptr<ChannelGeometry> channel(double h, double a, const SolverOptions& o = lean()) {
  SplineConfig cfg;
  return std::make_shared<ChannelGeometry>(make_spline_walls(cfg, sine_channel_ps(cfg, h, a)), cfg.L, o);
}

double max_lab_velocity(const std::vector<Vec2>& u) {
  double m = 0.0;
  for (const auto& v : u) m = std::max(m, (v + Vec2(1.0, 0.0)).norm());
  return m;
}

}  // namespace

TEST(Solver, FlatChannelSlipIsUniformFlow) {
  const auto g = channel(1.0, 0.0);
  for (int w = 0; w < 2; ++w) EXPECT_NEAR(g->ell(w), 1.0, 1e-13);
  InstantSystem sys(g, std::nullopt);
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  const FlowSolution s = sys.solve(bc);
  EXPECT_LT(max_lab_velocity(s.u_wall), 1e-10);
  EXPECT_LT(max_lab_velocity(s.u_section0), 1e-10);
  double fmax = 0.0;
  for (const auto& f : s.f_wall) fmax = std::max(fmax, f.norm());
  EXPECT_LT(fmax, 1e-9);
  EXPECT_NEAR(s.flux0, -2.0, 1e-10);
  EXPECT_NEAR(s.fluxL, -2.0, 1e-10);
}

TEST(Solver, FlatChannelParticleIsCarriedRigidly) {
  const auto g = channel(1.0, 0.0);
  InstantSystem sys(g, ParticleState{ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {}});
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  const FlowSolution s = sys.solve(bc);
  EXPECT_NEAR(s.motion.w.x(), -1.0, 1e-10);
  EXPECT_NEAR(s.motion.w.y(), 0.0, 1e-10);
  EXPECT_NEAR(s.motion.rho, 0.0, 1e-10);
  double hmax = 0.0;
  for (const auto& h : s.h_particle) hmax = std::max(hmax, h.norm());
  EXPECT_LT(hmax, 1e-8);
}

TEST(Solver, PoiseuilleFlow) {
  // Pressure drop G L with no-slip walls: u1 = G (h² - x2²) / 2, p = -G x1.
  const double h = 0.9, G = 0.6;
  const auto g = channel(h, 0.0);
  InstantSystem sys(g, std::nullopt);
  InstantBC bc;
  bc.u_wall.assign(g->wall_nodes(), Vec2::Zero());
  bc.dp = -G * g->L();
  const FlowSolution s = sys.solve(bc);
  EXPECT_NEAR(s.flux0, 2.0 / 3.0 * G * h * h * h, 1e-9);
  EXPECT_NEAR(s.fluxL, s.flux0, 1e-10);
  for (int k = 0; k < g->section_nodes(); ++k) {
    const double y = g->section0()[k].y();
    EXPECT_NEAR(s.u_section0[k].x(), 0.5 * G * (h * h - y * y), 1e-9);
    EXPECT_NEAR(s.u_section0[k].y(), 0.0, 1e-9);
  }
  for (int w = 0; w < 2; ++w) {
    const auto& m = g->wall(w);
    for (int i = 0; i < m.size(); ++i) {
      const int k = g->wall_offset(w) + i;
      EXPECT_NEAR(s.p_wall[k], -G * m.x[i].x(), 1e-8);
      // σ n with n out of the fluid: shear -G h along x1, normal -p n.
      const Vec2 want = Vec2(-G * h, 0.0) - s.p_wall[k] * m.n[i];
      EXPECT_LT((s.f_wall[k] - want).norm(), 1e-8);
    }
  }
}

TEST(Solver, ClosureIdentitiesOnSineChannel) {
  const auto g = channel(1.0, 0.3);
  for (Vec2 c : {Vec2(kPi, 0.2), Vec2(0.2, -0.3), Vec2(5.0, 0.0)}) {
    InstantSystem sys(g, ParticleState{ParticleShape::ellipse(0.35, 0.2, 0.6, c), {}});
    InstantBC bc;
    bc.u_wall = wall_slip(*g);
    const FlowSolution s = sys.solve(bc);
    const auto d = closure_diagnostics(sys, s);
    EXPECT_LE(d.net_force, 1e-8 * d.h_norm);
    EXPECT_LE(d.net_torque, 1e-8 * d.h_norm);
    EXPECT_LE(d.power, 1e-8 * d.h_norm);
    EXPECT_LE(d.flux_mismatch, 1e-8 * d.opening);
    EXPECT_LT(s.residual, 1e-10);
  }
}

TEST(Solver, PrescribedTargetsAreMet) {
  const auto g = channel(1.0, 0.3);
  InstantSystem sys(g, ParticleState{ParticleShape::circle(0.3, Vec2(2.0, 0.1)), {}});
  InstantBC bc;
  bc.u_wall.assign(g->wall_nodes(), Vec2::Zero());
  bc.force = Vec2(0.4, -0.7);
  bc.torque = 0.25;
  const FlowSolution s = sys.solve(bc);
  const auto& m = sys.particle_mesh();
  Vec2 F = Vec2::Zero();
  double T = 0.0;
  const Vec2 c = sys.centroid_wrapped();
  for (int i = 0; i < m.size(); ++i) {
    F += m.w[i] * s.h_particle[i];
    T += m.w[i] * cross(m.x[i] - c, s.h_particle[i]);
  }
  EXPECT_LT((F - bc.force).norm(), 1e-9);
  EXPECT_NEAR(T, torque_about_centroid(bc.torque, bc.force, sys.centroid_unwrapped()), 1e-9);
}

TEST(Solver, PrescribedMotionInvertsMobility) {
  const auto g = channel(1.0, 0.3);
  InstantSystem sys(g, ParticleState{ParticleShape::circle(0.3, Vec2(2.0, 0.1)), {}});
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  const FlowSolution free = sys.solve(bc);
  bc.prescribed_motion = true;
  bc.motion = free.motion;
  const FlowSolution fixed = sys.solve(bc);
  const auto d = closure_diagnostics(sys, fixed);
  EXPECT_LE(d.net_force, 1e-8 * d.h_norm);
}

TEST(Solver, SymmetricChannelKeepsAxialParticleOnAxis) {
  const auto g = channel(1.0, 0.3);
  InstantSystem sys(g, ParticleState{ParticleShape::circle(0.3, Vec2(1.3, 0.0)), {}});
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  const FlowSolution s = sys.solve(bc);
  EXPECT_NEAR(s.motion.w.y(), 0.0, 1e-10);
  EXPECT_NEAR(s.motion.rho, 0.0, 1e-10);
}

TEST(Solver, PeriodicImagesGiveTheSameMotion) {
  const auto g = channel(1.0, 0.3);
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  const auto shape = ParticleShape::circle(0.3, Vec2(1.0, 0.15));
  InstantSystem a(g, ParticleState{shape, {}});
  InstantSystem b(g, ParticleState{shape, RigidConfig{Vec2(-g->L(), 0.0), 0.0}});
  const auto sa = a.solve(bc), sb = b.solve(bc);
  EXPECT_LT((sa.motion.w - sb.motion.w).norm(), 1e-11);
  EXPECT_NEAR(sa.motion.rho, sb.motion.rho, 1e-11);
}

TEST(Solver, MirrorSymmetryOfVaricoseChannel) {
  const auto g = channel(1.0, 0.3);
  InstantBC bc;
  bc.u_wall = wall_slip(*g);
  InstantSystem a(g, ParticleState{ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {}});
  InstantSystem b(g, ParticleState{ParticleShape::circle(0.3, Vec2(kPi, -0.2)), {}});
  const auto sa = a.solve(bc), sb = b.solve(bc);
  EXPECT_NEAR(sa.motion.w.x(), sb.motion.w.x(), 1e-10);
  EXPECT_NEAR(sa.motion.w.y(), -sb.motion.w.y(), 1e-10);
  EXPECT_NEAR(sa.motion.rho, -sb.motion.rho, 1e-10);
}

TEST(Solver, NearContactIsRejected) {
  const auto g = channel(1.0, 0.0);
  EXPECT_THROW(InstantSystem(g, ParticleState{ParticleShape::circle(0.3, Vec2(kPi, 0.69)), {}}), ContactError);
}

TEST(Solver, InvalidOptionsAreConfigErrors) {
  SolverOptions o = lean();
  o.p = 2;
  EXPECT_THROW(o.validate(), ConfigError);
  const auto g = channel(1.0, 0.0);
  InstantSystem sys(g, std::nullopt);
  InstantBC bc;
  bc.u_wall.assign(3, Vec2::Zero());
  EXPECT_THROW(sys.solve(bc), ConfigError);
}
