#pragma once

// Quintic cardinal B-spline walls.  Each wall is
//   x1(t) = L(2π - t)/2π + sum_k xi1_k B_k(t),   x2(t) = sum_k xi2_k B_k(t),
// with B_k(t) = B_{k,5}(M t / 2π), k = -5..M-1.

#include "peristalsis/curve.hpp"
#include "peristalsis/types.hpp"

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace peri {

inline constexpr int kSplineDegree = 5;

struct SplineConfig {
  int M = 7;
  int degree = kSplineDegree;
  double L = kTwoPi;

  void validate() const {
    if (M < 2) throw ConfigError("spline: M must be at least 2");
    if (degree != kSplineDegree) throw ConfigError("spline: only degree 5 is supported");
    if (!(L > 0.0)) throw ConfigError("spline: L must be positive");
  }
  int num_coeffs() const { return M + kSplineDegree; }
  int num_ps() const { return 4 * M - 2; }
};

// Cardinal B-spline by the degree recurrence; B_{k,0} is the indicator of [k, k+1).
inline double bspline_basis(int k, int n, double t) {
  if (n == 0) return (t >= k && t < k + 1) ? 1.0 : 0.0;
  if (t < k || t >= k + n + 1) return 0.0;
  return (t - k) / n * bspline_basis(k, n - 1, t) +
         (n + k + 1 - t) / n * bspline_basis(k + 1, n - 1, t);
}

namespace spline_detail {

using Poly = std::array<double, kSplineDegree + 1>;  // coefficients in v = u - floor(u)

// Pieces of B_{0,5} on [i, i+1], i = 0..5, as polynomials in v.
inline const std::array<Poly, kSplineDegree + 1>& cardinal_pieces() {
  static const auto pieces = [] {
    std::vector<std::vector<std::vector<double>>> cur(1, std::vector<std::vector<double>>(1, {1.0}));
    // cur[n][i] = piece i of B_{0,n}, coefficients in v.
    for (int n = 1; n <= kSplineDegree; ++n) {
      std::vector<std::vector<double>> next(n + 1, std::vector<double>(n + 1, 0.0));
      const auto& prev = cur.back();
      for (int i = 0; i <= n; ++i) {
        // (u/n) B_{0,n-1}(u) + ((n+1-u)/n) B_{0,n-1}(u-1), u = i + v.
        auto acc = [&](const std::vector<double>& p, double c0, double c1) {
          for (std::size_t d = 0; d < p.size(); ++d) {
            next[i][d] += c0 * p[d] / n;
            next[i][d + 1] += c1 * p[d] / n;
          }
        };
        if (i <= n - 1) acc(prev[i], static_cast<double>(i), 1.0);
        if (i >= 1) acc(prev[i - 1], static_cast<double>(n + 1 - i), -1.0);
      }
      cur.push_back(next);
    }
    std::array<Poly, kSplineDegree + 1> out{};
    for (int i = 0; i <= kSplineDegree; ++i)
      for (int d = 0; d <= kSplineDegree; ++d) out[i][d] = cur.back()[i][d];
    return out;
  }();
  return pieces;
}

// d-th v-derivative of a piece at v.
inline double poly_eval(const Poly& p, double v, int d) {
  double acc = 0.0;
  for (int k = kSplineDegree; k >= d; --k) {
    double c = p[k];
    for (int j = 0; j < d; ++j) c *= (k - j);
    acc = acc * v + c;
  }
  return acc;
}

// All M+5 basis values (u-derivative of order d) at u in [0, M]; `left` picks
// the left limit at interior breakpoints and at u = M.
inline std::vector<double> basis_all(int M, double u, int d, bool left) {
  int j = static_cast<int>(std::floor(u));
  if (left && u == std::floor(u)) j -= 1;
  j = std::clamp(j, 0, M - 1);
  const double v = u - j;
  std::vector<double> out(M + kSplineDegree, 0.0);
  const auto& pieces = cardinal_pieces();
  for (int k = j - kSplineDegree; k <= j; ++k) out[k + kSplineDegree] = poly_eval(pieces[j - k], v, d);
  return out;
}

struct Factor {
  Eigen::FullPivLU<MatX> x1;
  Eigen::FullPivLU<MatX> x2;
};

inline MatX condition_matrix(int M, bool x1_rows) {
  const int n = M + kSplineDegree;
  MatX A = MatX::Zero(n, n);
  auto set_row = [&](int r, const std::vector<double>& v) {
    for (int c = 0; c < n; ++c) A(r, c) = v[c];
  };
  for (int j = 1; j <= M - 1; ++j) set_row(j - 1, basis_all(M, j, 0, false));
  const auto b0 = basis_all(M, 0.0, 0, false);
  const auto bM = basis_all(M, M, 0, true);
  set_row(M - 1, b0);
  std::vector<double> r(n);
  for (int c = 0; c < n; ++c) r[c] = x1_rows ? bM[c] : bM[c] - b0[c];
  set_row(M, r);
  for (int d = 1; d <= kSplineDegree - 1; ++d) {
    const auto a0 = basis_all(M, 0.0, d, false);
    const auto aM = basis_all(M, M, d, true);
    for (int c = 0; c < n; ++c) r[c] = aM[c] - a0[c];
    set_row(M + d, r);
  }
  return A;
}

inline const Factor& factor(int M) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<Factor>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(M);
  if (it == cache.end()) {
    auto f = std::make_unique<Factor>();
    f->x1.compute(condition_matrix(M, true));
    f->x2.compute(condition_matrix(M, false));
    if (!f->x1.isInvertible() || !f->x2.isInvertible())
      throw ConfigError("spline: singular interpolation matrix for M=" + std::to_string(M));
    it = cache.emplace(M, std::move(f)).first;
  }
  return *it->second;
}

}  // namespace spline_detail

// Coefficients ordered x1+, x1-, x2+, x2-, each of length M+5.
struct SplineCoeffs {
  std::vector<double> xi;
};

namespace spline_detail {
inline SplineCoeffs solve(const SplineConfig& cfg, const std::vector<double>& ps, bool affine) {
  cfg.validate();
  const int M = cfg.M;
  const int n = cfg.num_coeffs();
  if (static_cast<int>(ps.size()) != cfg.num_ps())
    throw ConfigError("spline: expected " + std::to_string(cfg.num_ps()) + " control values, got " +
                      std::to_string(ps.size()));
  const auto& f = factor(M);
  SplineCoeffs out;
  out.xi.assign(4 * n, 0.0);
  auto lin = [&](double t) { return cfg.L / kTwoPi * (kTwoPi - t); };
  for (int w = 0; w < 2; ++w) {
    VecX b = VecX::Zero(n);
    for (int j = 1; j <= M - 1; ++j) b(j - 1) = ps[w * (M - 1) + j - 1] - (affine ? lin(kTwoPi * j / M) : 0.0);
    const VecX c = f.x1.solve(b);
    for (int k = 0; k < n; ++k) out.xi[w * n + k] = c(k);
  }
  const int off2 = 2 * (M - 1);
  for (int w = 0; w < 2; ++w) {
    VecX b = VecX::Zero(n);
    for (int j = 1; j <= M - 1; ++j) b(j - 1) = ps[off2 + w * M + j - 1];
    b(M - 1) = ps[off2 + w * M + M - 1];
    const VecX c = f.x2.solve(b);
    for (int k = 0; k < n; ++k) out.xi[(2 + w) * n + k] = c(k);
  }
  return out;
}
}  // namespace spline_detail

inline SplineCoeffs solve_coeffs(const SplineConfig& cfg, const std::vector<double>& ps) {
  return spline_detail::solve(cfg, ps, true);
}

// One wall as a curve.  `affine` adds the L(2π - t)/2π term to x1; without it
// the curve is a perturbation field θ(t).
class SplineWall final : public Curve {
 public:
  SplineWall(const SplineConfig& cfg, const std::vector<double>& xi1, const std::vector<double>& xi2,
             int orientation, bool affine = true)
      : M_(cfg.M), L_(cfg.L), orient_(orientation), affine_(affine) {
    const auto& pieces = spline_detail::cardinal_pieces();
    pp_.assign(M_, {});
    for (int j = 0; j < M_; ++j) {
      for (int k = j - kSplineDegree; k <= j; ++k) {
        const auto& p = pieces[j - k];
        for (int d = 0; d <= kSplineDegree; ++d) {
          pp_[j][0][d] += xi1[k + kSplineDegree] * p[d];
          pp_[j][1][d] += xi2[k + kSplineDegree] * p[d];
        }
      }
    }
  }

  CurvePoint eval_base(double t) const override {
    const double u = M_ * t / kTwoPi;
    int j = std::clamp(static_cast<int>(std::floor(u)), 0, M_ - 1);
    const double v = u - j;
    const double s = M_ / kTwoPi;
    CurvePoint p;
    for (int c = 0; c < 2; ++c) {
      p.x[c] = spline_detail::poly_eval(pp_[j][c], v, 0);
      p.dx[c] = s * spline_detail::poly_eval(pp_[j][c], v, 1);
      p.ddx[c] = s * s * spline_detail::poly_eval(pp_[j][c], v, 2);
    }
    if (affine_) {
      p.x[0] += L_ / kTwoPi * (kTwoPi - t);
      p.dx[0] -= L_ / kTwoPi;
    }
    return p;
  }
  Vec2 period_shift() const override { return affine_ ? Vec2(-L_, 0.0) : Vec2::Zero(); }
  int orientation() const override { return orient_; }

  // Parameter breakpoints 2πj/M.
  int intervals() const { return M_; }

 private:
  int M_;
  double L_;
  int orient_;
  bool affine_;
  std::vector<std::array<spline_detail::Poly, 2>> pp_;
};

// Both walls of the channel.  Upper wall has n pointing up (orientation -1).
struct Walls {
  std::shared_ptr<const Curve> upper;
  std::shared_ptr<const Curve> lower;
  const Curve& wall(int w) const { return w == 0 ? *upper : *lower; }
};

inline constexpr int kUpperOrientation = -1;
inline constexpr int kLowerOrientation = 1;

inline Walls make_spline_walls(const SplineConfig& cfg, const SplineCoeffs& c, bool affine = true) {
  const int n = cfg.num_coeffs();
  auto seg = [&](int b) { return std::vector<double>(c.xi.begin() + b * n, c.xi.begin() + (b + 1) * n); };
  Walls w;
  w.upper = std::make_shared<SplineWall>(cfg, seg(0), seg(2), kUpperOrientation, affine);
  w.lower = std::make_shared<SplineWall>(cfg, seg(1), seg(3), kLowerOrientation, affine);
  return w;
}

inline Walls make_spline_walls(const SplineConfig& cfg, const std::vector<double>& ps) {
  return make_spline_walls(cfg, solve_coeffs(cfg, ps));
}

// Perturbation field θ for a control-point direction delta (η = 1).
inline Walls transformation_field(const SplineConfig& cfg, const std::vector<double>& delta) {
  return make_spline_walls(cfg, spline_detail::solve(cfg, delta, false), false);
}

// Control values of the flat or varicose channel x2 = ±(h + a sin t), x1 at uniform knots.
inline std::vector<double> sine_channel_ps(const SplineConfig& cfg, double h, double a) {
  const int M = cfg.M;
  std::vector<double> ps(cfg.num_ps());
  for (int w = 0; w < 2; ++w)
    for (int j = 1; j <= M - 1; ++j) ps[w * (M - 1) + j - 1] = cfg.L * (1.0 - static_cast<double>(j) / M);
  const int off2 = 2 * (M - 1);
  for (int w = 0; w < 2; ++w) {
    const double s = (w == 0) ? 1.0 : -1.0;
    for (int j = 1; j <= M - 1; ++j) ps[off2 + w * M + j - 1] = s * (h + a * std::sin(kTwoPi * j / M));
    ps[off2 + w * M + M - 1] = s * h;
  }
  return ps;
}

}  // namespace peri
