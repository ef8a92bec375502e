#pragma once

// Gauss-Legendre rules, Lagrange interpolation on Gauss nodes, and
// product-integration weights for log|u - a| on [-1, 1].

#include "peristalsis/types.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

namespace peri::quad {

struct Rule {
  std::vector<double> x;
  std::vector<double> w;
  int size() const { return static_cast<int>(x.size()); }
};

// P_0..P_{n-1} at u.
inline void legendre_values(int n, double u, double* out) {
  if (n <= 0) return;
  out[0] = 1.0;
  if (n == 1) return;
  out[1] = u;
  for (int k = 1; k + 1 < n; ++k) out[k + 1] = ((2 * k + 1) * u * out[k] - k * out[k - 1]) / (k + 1);
}

namespace detail {
// P_n(u) and P_{n-1}(u).
inline std::pair<double, double> legendre_pair(int n, double u) {
  double p0 = 1.0, p1 = u;
  if (n == 0) return {1.0, 0.0};
  for (int k = 1; k < n; ++k) {
    const double p2 = ((2 * k + 1) * u * p1 - k * p0) / (k + 1);
    p0 = p1;
    p1 = p2;
  }
  return {p1, p0};
}
}  // namespace detail

inline Rule compute_gauss_legendre(int n) {
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = -std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      const auto [pn, pm] = detail::legendre_pair(n, u);
      dp = n * (u * pn - pm) / (u * u - 1.0);
      const double du = pn / dp;
      u -= du;
      if (std::abs(du) < 1e-15) break;
    }
    const auto [pn, pm] = detail::legendre_pair(n, u);
    dp = n * (u * pn - pm) / (u * u - 1.0);
    r.x[i] = u;
    r.w[i] = 2.0 / ((1.0 - u * u) * dp * dp);
  }
  return r;
}

// Cached n-point rule on [-1, 1], nodes ascending.
inline const Rule& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, Rule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_gauss_legendre(n)).first;
  return it->second;
}

inline std::vector<double> barycentric_weights(const std::vector<double>& nodes) {
  const int n = static_cast<int>(nodes.size());
  std::vector<double> bw(n, 1.0);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (k != j) bw[j] /= (nodes[j] - nodes[k]);
  return bw;
}

// Values of the Lagrange basis on `nodes` at u.
inline void lagrange_row(const std::vector<double>& nodes, const std::vector<double>& bw, double u,
                         double* out) {
  const int n = static_cast<int>(nodes.size());
  double denom = 0.0;
  for (int j = 0; j < n; ++j) {
    const double d = u - nodes[j];
    if (d == 0.0) {
      for (int k = 0; k < n; ++k) out[k] = (k == j) ? 1.0 : 0.0;
      return;
    }
    out[j] = bw[j] / d;
    denom += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= denom;
}

inline MatX interpolation_matrix(const std::vector<double>& nodes, const std::vector<double>& at) {
  const auto bw = barycentric_weights(nodes);
  MatX m(at.size(), nodes.size());
  std::vector<double> row(nodes.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    lagrange_row(nodes, bw, at[i], row.data());
    for (std::size_t j = 0; j < nodes.size(); ++j) m(i, j) = row[j];
  }
  return m;
}

// Differentiation matrix for polynomials sampled on `nodes`.
inline MatX differentiation_matrix(const std::vector<double>& nodes) {
  const int n = static_cast<int>(nodes.size());
  const auto bw = barycentric_weights(nodes);
  MatX d = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      d(i, j) = (bw[j] / bw[i]) / (nodes[i] - nodes[j]);
      diag -= d(i, j);
    }
    d(i, i) = diag;
  }
  return d;
}

namespace detail {

// q[k] = integral over [-1, 1] of P_k(u) / (u - a), principal value when |a| < 1.
inline std::vector<double> cauchy_moments(int n, double a) {
  std::vector<double> q(n + 1);
  if (std::abs(a) < 1.0) {
    q[0] = std::log(1.0 - a) - std::log(1.0 + a);
    if (n >= 1) q[1] = 2.0 + a * q[0];
    for (int k = 1; k + 1 <= n; ++k) q[k + 1] = ((2 * k + 1) * a * q[k] - k * q[k - 1]) / (k + 1);
    return q;
  }
  // Outside the interval the moments are -2 Q_k(a) with Q_k the Legendre
  // function of the second kind; Miller's backward recurrence.
  const double s = (a > 0) ? 1.0 : -1.0;
  const double b = std::abs(a);
  const double rho = b + std::sqrt(b * b - 1.0);
  int top = n + 40 + static_cast<int>(40.0 / std::log(rho));
  std::vector<double> v(top + 2, 0.0);
  v[top + 1] = 0.0;
  v[top] = 1e-300;
  for (int k = top; k >= 1; --k) {
    v[k - 1] = ((2 * k + 1) * b * v[k] - (k + 1) * v[k + 1]) / k;
    if (std::abs(v[k - 1]) > 1e250) {
      for (int j = k - 1; j <= top + 1; ++j) v[j] *= 1e-250;
    }
  }
  const double q0 = 0.5 * std::log((b + 1.0) / (b - 1.0));
  const double scale = q0 / v[0];
  for (int k = 0; k <= n; ++k) {
    const double qk = v[k] * scale;
    const double par = (k % 2 == 0) ? -1.0 : 1.0;  // Q_k(-b) = (-1)^{k+1} Q_k(b)
    q[k] = -2.0 * ((s > 0) ? qk : par * qk);
  }
  return q;
}

}  // namespace detail

// m[k] = integral over [-1, 1] of log|u - a| P_k(u), k < n.
inline std::vector<double> log_moments(int n, double a) {
  std::vector<double> m(n);
  auto xlogx = [](double x) { return x == 0.0 ? 0.0 : x * std::log(std::abs(x)); };
  m[0] = xlogx(1.0 - a) + xlogx(1.0 + a) - 2.0;
  if (n == 1) return m;
  if (std::abs(a) == 1.0) {
    // Endpoint singularity: integral of log|1 - u| P_k(u) is -2 / (k (k + 1)).
    for (int k = 1; k < n; ++k) m[k] = ((a < 0 && k % 2 == 1) ? 2.0 : -2.0) / (k * (k + 1.0));
    return m;
  }
  const auto q = detail::cauchy_moments(n, a);
  for (int k = 1; k < n; ++k) m[k] = -(q[k + 1] - q[k - 1]) / (2 * k + 1);
  return m;
}

// Weights W with sum_j W_j g(x_j) = integral of log|u - a| g(u) over [-1, 1]
// for polynomials g of degree below the rule size.
inline std::vector<double> log_weights(const Rule& rule, double a) {
  const int n = rule.size();
  const auto m = log_moments(n, a);
  std::vector<double> w(n, 0.0), p(n);
  for (int j = 0; j < n; ++j) {
    legendre_values(n, rule.x[j], p.data());
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += 0.5 * (2 * k + 1) * p[k] * m[k];
    w[j] = rule.w[j] * s;
  }
  return w;
}

}  // namespace peri::quad
