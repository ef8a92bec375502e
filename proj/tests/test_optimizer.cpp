#include "peristalsis/optimizer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace peri;

namespace {

struct Quadratic {
  MatX A;
  VecX a;
  explicit Quadratic(int n) {
    std::mt19937 rng(4);
    std::normal_distribution<double> g;
    MatX B(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = g(rng);
    A = B * B.transpose() + n * MatX::Identity(n, n);
    a = VecX::LinSpaced(n, -1.0, 2.0);
  }
  double operator()(const VecX& x, VecX& gr) const {
    const VecX d = x - a;
    gr = 2.0 * A * d;
    return d.dot(A * d);
  }
};

double rosenbrock(const VecX& x, VecX& g) {
  const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
  g.resize(2);
  g(0) = -2.0 * a - 400.0 * x(0) * b;
  g(1) = 200.0 * b;
  return a * a + 100.0 * b * b;
}

}  // namespace

TEST(Bfgs, QuadraticDimensionTen) {
  const Quadratic q(10);
  BfgsOptions opt;
  opt.gtol = 1e-12;
  const auto r = bfgs_minimize(std::cref(q), VecX::Zero(10), opt);
  EXPECT_LT((r.x - q.a).norm(), 1e-8);
  EXPECT_LE(r.iterations, 30);
}

TEST(Bfgs, Rosenbrock) {
  BfgsOptions opt;
  opt.gtol = 1e-10;
  opt.max_step = 1.0;
  VecX x0(2);
  x0 << -1.2, 1.0;
  const auto r = bfgs_minimize(rosenbrock, x0, opt);
  EXPECT_LT(r.f, 1e-8);
}

TEST(Bfgs, OptimalStartTakesNoIterations) {
  const Quadratic q(4);
  const auto r = bfgs_minimize(std::cref(q), q.a);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.status, BfgsStatus::Converged);
}

TEST(Bfgs, AcceptedIteratesSatisfyWolfeAndDescend) {
  BfgsOptions opt;
  opt.gtol = 1e-10;
  opt.max_step = 1.0;
  VecX x0(2);
  x0 << -1.2, 1.0;
  std::vector<double> f;
  bfgs_minimize(rosenbrock, x0, opt, [&](int, const VecX&, double v, const VecX&) { f.push_back(v); });
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i], f[i - 1]);
}

TEST(Bfgs, RejectedTrialsBacktrack) {
  // Points with x0 > 0.5 are inadmissible; the minimizer of the quadratic lies inside.
  int rejected = 0;
  auto obj = [&](const VecX& x, VecX& g) {
    if (x(0) > 0.5) {
      ++rejected;
      throw TrialRejected("outside");
    }
    g = 2.0 * (x - VecX::Constant(2, 0.4));
    return (x - VecX::Constant(2, 0.4)).squaredNorm();
  };
  BfgsOptions opt;
  opt.max_step = 10.0;
  opt.gtol = 1e-10;
  const auto r = bfgs_minimize(obj, VecX::Constant(2, -3.0), opt);
  EXPECT_GT(rejected, 0);
  EXPECT_LT((r.x - VecX::Constant(2, 0.4)).norm(), 1e-8);
}

TEST(AugmentedLagrangian, ValueAndGradient) {
  ConstrainedEval e;
  e.f = 2.0;
  e.cV = 0.3;
  e.cD = -0.1;
  e.gf = VecX::Constant(3, 1.0);
  e.gV = VecX::LinSpaced(3, 0.0, 1.0);
  e.gD = VecX::Constant(3, -2.0);
  AlState s;
  s.lambda1 = 0.0;
  s.lambda2 = 0.0;
  s.sigma = 0.0;
  VecX g;
  EXPECT_DOUBLE_EQ(al_value_and_gradient(e, s, g), 2.0);
  EXPECT_EQ((g - e.gf).norm(), 0.0);
  s.lambda1 = 1.5;
  s.lambda2 = -0.5;
  s.sigma = 10.0;
  const double v = al_value_and_gradient(e, s, g);
  EXPECT_NEAR(v, 2.0 - 1.5 * 0.3 - 0.5 * 0.1 + 5.0 * (0.09 + 0.01), 1e-14);
  const VecX want = e.gf + (-1.5 + 3.0) * e.gV + (0.5 - 1.0) * e.gD;
  EXPECT_LT((g - want).norm(), 1e-14);
}

TEST(AugmentedLagrangian, ChainRuleMatchesFiniteDifferences) {
  // f = x·x, C_V = x0 + x1² - 1, C_D = sin x2.
  auto ev = [](const VecX& x) {
    ConstrainedEval e;
    e.f = x.squaredNorm();
    e.gf = 2.0 * x;
    e.cV = x(0) + x(1) * x(1) - 1.0;
    e.gV = VecX::Zero(3);
    e.gV << 1.0, 2.0 * x(1), 0.0;
    e.cD = std::sin(x(2));
    e.gD = VecX::Zero(3);
    e.gD(2) = std::cos(x(2));
    return e;
  };
  AlState s{0.7, -0.3, 10.0, 0.0, 1};
  VecX x(3);
  x << 0.2, -0.6, 0.4;
  VecX g, dummy;
  al_value_and_gradient(ev(x), s, g);
  for (int j = 0; j < 3; ++j) {
    VecX xp = x, xm = x;
    xp(j) += 1e-4;
    xm(j) -= 1e-4;
    const double fd = (al_value_and_gradient(ev(xp), s, dummy) - al_value_and_gradient(ev(xm), s, dummy)) / 2e-4;
    EXPECT_NEAR(g(j), fd, 1e-2 * std::max(1.0, std::abs(fd)));
  }
}

TEST(AugmentedLagrangian, ToyProblemRecoversMultiplier) {
  // min x² subject to x = 1: x* = 1 with multiplier 2.
  auto ev = [](const VecX& x) {
    ConstrainedEval e;
    e.f = x(0) * x(0);
    e.gf = VecX::Constant(1, 2.0 * x(0));
    e.cV = x(0) - 1.0;
    e.gV = VecX::Constant(1, 1.0);
    e.cD = 0.0;
    e.gD = VecX::Zero(1);
    return e;
  };
  AlOptions opt;
  opt.zeta_star = 1e-9;
  opt.inner.gtol = 1e-14;
  const auto r = optimize_al(ev, VecX::Zero(1), opt);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.x(0), 1.0, 1e-6);
  EXPECT_NEAR(r.state.lambda1, 2.0, 1e-6);
}

TEST(AugmentedLagrangian, ScriptedBranchSequence) {
  // Stationary objective with scripted constraint values per outer iteration.
  const std::vector<double> script{0.5, 0.3, 0.05, 0.02, 0.005};
  int outer = 0;
  auto ev = [&](const VecX&) {
    ConstrainedEval e;
    e.f = 0.0;
    e.gf = e.gV = e.gD = VecX::Zero(2);
    e.cV = script.at(outer);
    e.cD = -0.5 * script.at(outer);
    return e;
  };
  std::vector<AlState> states;
  AlCallbacks cb;
  cb.on_outer = [&](AlBranch, const AlState& s) {
    states.push_back(s);
    ++outer;
  };
  const auto r = optimize_al(ev, VecX::Zero(2), {}, cb);
  using B = AlBranch;
  const std::vector<B> want{B::UpdateMultiplier, B::IncreasePenalty, B::UpdateMultiplier, B::IncreasePenalty,
                            B::Converged};
  EXPECT_EQ(r.branches, want);
  ASSERT_EQ(states.size(), 5u);
  // ζ¹ = 10^-0.1; update: λ -= σC, ζ *= σ^-0.9; increase: σ *= 10, ζ = σ^-0.1.
  const double z1 = std::pow(10.0, -0.1);
  EXPECT_NEAR(states[0].sigma, 10.0, 0);
  EXPECT_NEAR(states[0].lambda1, -5.0, 1e-14);
  EXPECT_NEAR(states[0].lambda2, 2.5, 1e-14);
  EXPECT_NEAR(states[0].zeta, z1 * std::pow(10.0, -0.9), 1e-14);
  EXPECT_NEAR(states[1].sigma, 100.0, 0);
  EXPECT_NEAR(states[1].zeta, std::pow(100.0, -0.1), 1e-14);
  EXPECT_NEAR(states[2].lambda1, -5.0 - 100.0 * 0.05, 1e-12);
  EXPECT_NEAR(states[2].lambda2, 2.5 + 100.0 * 0.025, 1e-12);
  EXPECT_NEAR(states[2].zeta, std::pow(100.0, -0.1) * std::pow(100.0, -0.9), 1e-14);
  EXPECT_NEAR(states[3].sigma, 1000.0, 0);
  EXPECT_NEAR(states[3].zeta, std::pow(1000.0, -0.1), 1e-14);
  EXPECT_NEAR(states[3].lambda1, states[2].lambda1, 0);
  EXPECT_TRUE(r.converged);
  // One restart row per outer iteration.
  int restarts = 0;
  for (const auto& h : r.history) restarts += h.inner == 0;
  EXPECT_EQ(restarts, 5);
}

TEST(AugmentedLagrangian, OuterCapReported) {
  auto ev = [](const VecX&) {
    ConstrainedEval e;
    e.f = 0.0;
    e.gf = e.gV = e.gD = VecX::Zero(1);
    e.cV = 1.0;
    return e;
  };
  AlOptions opt;
  opt.outer_cap = 3;
  const auto r = optimize_al(ev, VecX::Zero(1), opt);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.branches.size(), 3u);
  EXPECT_NEAR(r.state.sigma, 1e4, 1e-9);
}

TEST(ShapeOptimization, WallChecks) {
  Problem p;
  p.ps = sine_channel_ps(p.spline, 1.0, 0.3);
  EXPECT_NO_THROW(ShapeOptProblem::check_walls(p));
  auto pinched = p.ps;
  pinched[2 * (p.spline.M - 1) + 3] = -1.5;  // upper wall below the lower one
  EXPECT_THROW(ShapeOptProblem::check_walls(p.with_ps(pinched)), ContactError);
  auto folded = p.ps;
  folded[1] = folded[0] + 0.5;  // x1 no longer decreasing
  EXPECT_THROW(ShapeOptProblem::check_walls(p.with_ps(folded)), ContactError);
}
