#include "peristalsis/evolution.hpp"

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

std::shared_ptr<ChannelGeometry> channel(double a) {
  SplineConfig cfg;
  return std::make_shared<ChannelGeometry>(make_spline_walls(cfg, sine_channel_ps(cfg, 1.0, a)), cfg.L, lean());
}

// Net force and centroid torque of an adjoint traction.
std::pair<Vec2, double> moments(const StepRecord& r, const Traces& t) {
  Vec2 F = Vec2::Zero();
  double T = 0.0;
  for (std::size_t i = 0; i < t.h.size(); ++i) {
    F += r.pw[i] * t.h[i];
    T += r.pw[i] * cross(r.px[i] - r.centroid, t.h[i]);
  }
  return {F, T};
}

}  // namespace

TEST(Evolution, FlatChannelCarriesParticleWithTheWave) {
  const auto traj = run_forward(channel(0.0), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 8});
  ASSERT_EQ(traj.steps.size(), 9u);
  for (const auto& s : traj.steps) {
    EXPECT_NEAR(s.v.w.x(), -1.0, 1e-10);
    EXPECT_NEAR(s.v.w.y(), 0.0, 1e-10);
    EXPECT_NEAR(s.v.rho, 0.0, 1e-10);
  }
  EXPECT_NEAR(traj.steps.back().centroid.x() - traj.steps.front().centroid.x(), -1.0, 1e-9);
  EXPECT_NEAR(traj.steps.back().t, 1.0, 1e-15);
}

TEST(Evolution, AxialParticleStaysOnAxis) {
  const auto traj = run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(2.0, 0.0)), {1.0, 6}, {false, {}});
  for (const auto& s : traj.steps) {
    EXPECT_NEAR(s.centroid.y(), 0.0, 1e-10);
    EXPECT_NEAR(s.q.phi, 0.0, 1e-10);
  }
}

TEST(Evolution, EulerIsFirstOrder) {
  const auto shape = ParticleShape::circle(0.3, Vec2(kPi, 0.2));
  const auto g = channel(0.3);
  std::vector<Vec2> c;
  for (int N : {5, 10, 20, 40}) c.push_back(run_forward(g, shape, {1.0, N}, {false, {}}).steps.back().centroid);
  const double r1 = (c[1] - c[0]).norm() / (c[2] - c[1]).norm();
  const double r2 = (c[2] - c[1]).norm() / (c[3] - c[2]).norm();
  EXPECT_NEAR(std::log2(r1), 1.0, 0.2);
  EXPECT_NEAR(std::log2(r2), 1.0, 0.1);
}

TEST(Evolution, StepCallbackAndContactReporting) {
  int calls = 0;
  EvolutionOptions opt;
  opt.adjoint_bases = false;
  opt.on_step = [&](int n, const StepRecord& r) {
    EXPECT_EQ(n, calls);
    EXPECT_GE(r.residual, 0.0);
    ++calls;
  };
  run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 3}, opt);
  EXPECT_EQ(calls, 4);
  // Starting next to the bulge of the wall.
  try {
    run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(1.5, 0.3)), {1.0, 3}, {false, {}});
    FAIL() << "expected contact";
  } catch (const ContactError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
  EXPECT_THROW(TimeGrid({1.0, 0}).validate(), ConfigError);
  EXPECT_THROW(TimeGrid({-1.0, 4}).validate(), ConfigError);
}

TEST(Evolution, AdjointTractionsCarryTheTargets) {
  const auto traj = run_forward(channel(0.3), ParticleShape::ellipse(0.35, 0.2, 0.4, Vec2(kPi, 0.1)), {1.0, 5});
  for (Functional fn : {Functional::Dissipation, Functional::NetMotion, Functional::MassFlow}) {
    const auto adj = run_adjoint(traj, fn);
    ASSERT_EQ(adj.steps.size(), traj.steps.size());
    for (std::size_t n = 0; n < adj.steps.size(); ++n) {
      const auto [F, T] = moments(traj.steps[n], adj.steps[n].traces);
      EXPECT_LT((F - adj.steps[n].force_target).norm(), 1e-8) << to_string(fn) << " n=" << n;
      EXPECT_NEAR(T, adj.steps[n].torque_target, 1e-8) << to_string(fn) << " n=" << n;
    }
  }
}

TEST(Evolution, FinalConditions) {
  const auto traj = run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 4});
  const auto net = run_adjoint(traj, Functional::NetMotion);
  EXPECT_NEAR(net.steps.back().force_target.x(), -1.0, 1e-15);
  EXPECT_NEAR(net.steps.back().force_target.y(), 0.0, 1e-15);
  const auto dis = run_adjoint(traj, Functional::Dissipation);
  EXPECT_EQ(dis.steps.back().force_target.norm(), 0.0);
  EXPECT_EQ(dis.steps.back().torque_target, 0.0);
}

TEST(Evolution, CostateRecursionMatchesStepGradients) {
  const auto traj = run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 4});
  const auto adj = run_adjoint(traj, Functional::NetMotion);
  const double dt = traj.grid.dt();
  // Targets at step n carry the costate of step n + 1.
  for (int n = 0; n < traj.grid.N; ++n) {
    const Vec3 g = n + 1 < traj.grid.N ? configuration_gradient(traj.steps[n + 1], adj.steps[n + 1].traces)
                                       : Vec3::Zero();
    const Vec2 dF = adj.steps[n].force_target - adj.steps[n + 1].force_target;
    EXPECT_LT((dF + dt * g.head<2>()).norm(), 1e-13);
    EXPECT_NEAR(adj.steps[n].torque_target - adj.steps[n + 1].torque_target, -dt * g(2), 1e-13);
  }
}

TEST(Evolution, FlatDissipationAdjointVanishes) {
  const auto traj = run_forward(channel(0.0), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 3});
  const auto adj = run_adjoint(traj, Functional::Dissipation);
  for (const auto& s : adj.steps) {
    for (const auto& f : s.traces.f_wall) EXPECT_LT(f.norm(), 1e-9);
    for (const auto& h : s.traces.h) EXPECT_LT(h.norm(), 1e-9);
  }
}

TEST(Evolution, EshelbyTraceVanishesForZeroTraces) {
  const std::vector<Vec2> tau{Vec2(0.0, 1.0), Vec2(-1.0, 0.0)}, n{Vec2(-1.0, 0.0), Vec2(0.0, -1.0)};
  const std::vector<Vec2> zero(2, Vec2::Zero()), h{Vec2(0.3, 0.1), Vec2(-0.2, 0.5)};
  for (const auto& e : eshelby_trace(zero, 0.0, zero, 0.0, tau, n)) EXPECT_EQ(e.norm(), 0.0);
  for (const auto& e : eshelby_trace(h, 0.0, zero, 0.0, tau, n)) EXPECT_EQ(e.norm(), 0.0);
  // Purely normal tractions leave only the rotational terms.
  const std::vector<Vec2> hn{Vec2(2.0, 0.0), Vec2(0.0, 1.0)};
  const auto e = eshelby_trace(hn, 0.5, hn, 0.0, tau, n);
  EXPECT_LT((e[0] - rot90(0.5 * hn[0])).norm(), 1e-15);
}

TEST(Evolution, AdjointNeedsBases) {
  const auto traj =
      run_forward(channel(0.3), ParticleShape::circle(0.3, Vec2(kPi, 0.2)), {1.0, 2}, {false, {}});
  EXPECT_THROW(run_adjoint(traj, Functional::NetMotion), SolverError);
}
