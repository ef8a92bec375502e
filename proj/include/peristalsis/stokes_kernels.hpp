#pragma once

// Free-space 2D Stokes kernels (unit viscosity).  z = x - y is target minus
// source; n_y is the source normal and n_x the target normal.  In the
// double-layer traction, dx = z.n_x/z^2 and dy = z.n_y/z^2.

#include "peristalsis/types.hpp"

#include <cmath>

namespace peri::kernels {

struct KernelEval {
  Mat2 S = Mat2::Zero();
  Mat2 D = Mat2::Zero();
  Vec2 PS = Vec2::Zero();
  Vec2 PD = Vec2::Zero();
  Mat2 TS = Mat2::Zero();
  Mat2 TD = Mat2::Zero();
};

namespace detail {
inline void require_separated(const Vec2& z) {
  if (z.squaredNorm() == 0.0) throw SingularEvaluation("kernel evaluated at coincident points");
}
}  // namespace detail

// Unchecked hot-loop forms.  Each writes a 2x2 block (row-major) or a 1x2 row.
inline void sl_velocity(double z1, double z2, double out[4]) {
  const double r2 = z1 * z1 + z2 * z2;
  const double c = 1.0 / (4.0 * kPi);
  const double lg = -0.5 * std::log(r2);
  const double a = c / r2;
  out[0] = c * lg + a * z1 * z1;
  out[1] = a * z1 * z2;
  out[2] = out[1];
  out[3] = c * lg + a * z2 * z2;
}

inline void dl_velocity(double z1, double z2, double ny1, double ny2, double out[4]) {
  const double r2 = z1 * z1 + z2 * z2;
  const double a = (z1 * ny1 + z2 * ny2) / (kPi * r2 * r2);
  out[0] = a * z1 * z1;
  out[1] = a * z1 * z2;
  out[2] = out[1];
  out[3] = a * z2 * z2;
}

inline void sl_pressure(double z1, double z2, double out[2]) {
  const double a = 1.0 / (2.0 * kPi * (z1 * z1 + z2 * z2));
  out[0] = a * z1;
  out[1] = a * z2;
}

inline void dl_pressure(double z1, double z2, double ny1, double ny2, double out[2]) {
  const double r2 = z1 * z1 + z2 * z2;
  const double inv = 1.0 / r2;
  const double dn = 2.0 * (z1 * ny1 + z2 * ny2) * inv * inv;
  out[0] = (-ny1 * inv + dn * z1) / kPi;
  out[1] = (-ny2 * inv + dn * z2) / kPi;
}

inline void sl_traction(double z1, double z2, double nx1, double nx2, double out[4]) {
  const double r2 = z1 * z1 + z2 * z2;
  const double a = -(z1 * nx1 + z2 * nx2) / (kPi * r2 * r2);
  out[0] = a * z1 * z1;
  out[1] = a * z1 * z2;
  out[2] = out[1];
  out[3] = a * z2 * z2;
}

inline void dl_traction(double z1, double z2, double nx1, double nx2, double ny1, double ny2,
                        double out[4]) {
  const double r2 = z1 * z1 + z2 * z2;
  const double inv = 1.0 / r2;
  const double dx = (z1 * nx1 + z2 * nx2) * inv;
  const double dy = (z1 * ny1 + z2 * ny2) * inv;
  const double nn = (nx1 * ny1 + nx2 * ny2) * inv;
  const double a = (nn - 8.0 * dx * dy) * inv;
  const double z[2] = {z1, z2};
  const double nx[2] = {nx1, nx2};
  const double ny[2] = {ny1, ny2};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      double v = a * z[i] * z[j] + nx[i] * ny[j] * inv + dx * z[j] * ny[i] * inv +
                 dy * z[i] * nx[j] * inv;
      if (i == j) v += dx * dy;
      out[2 * i + j] = v / kPi;
    }
  }
}

inline Mat2 single_layer(const Vec2& x, const Vec2& y) {
  const Vec2 z = x - y;
  detail::require_separated(z);
  double b[4];
  sl_velocity(z.x(), z.y(), b);
  Mat2 m;
  m << b[0], b[1], b[2], b[3];
  return m;
}

inline Mat2 double_layer(const Vec2& x, const Vec2& y, const Vec2& ny) {
  const Vec2 z = x - y;
  detail::require_separated(z);
  double b[4];
  dl_velocity(z.x(), z.y(), ny.x(), ny.y(), b);
  Mat2 m;
  m << b[0], b[1], b[2], b[3];
  return m;
}

struct PressurePair {
  Vec2 PS;
  Vec2 PD;
};

inline PressurePair pressure_kernels(const Vec2& x, const Vec2& y, const Vec2& ny) {
  const Vec2 z = x - y;
  detail::require_separated(z);
  double s[2], d[2];
  sl_pressure(z.x(), z.y(), s);
  dl_pressure(z.x(), z.y(), ny.x(), ny.y(), d);
  return {Vec2(s[0], s[1]), Vec2(d[0], d[1])};
}

struct TractionPair {
  Mat2 TS;
  Mat2 TD;
};

inline TractionPair traction_kernels(const Vec2& x, const Vec2& y, const Vec2& nx, const Vec2& ny) {
  const Vec2 z = x - y;
  detail::require_separated(z);
  double s[4], d[4];
  sl_traction(z.x(), z.y(), nx.x(), nx.y(), s);
  dl_traction(z.x(), z.y(), nx.x(), nx.y(), ny.x(), ny.y(), d);
  TractionPair t;
  t.TS << s[0], s[1], s[2], s[3];
  t.TD << d[0], d[1], d[2], d[3];
  return t;
}

// All six kernels for one pair.
inline KernelEval evaluate(const Vec2& x, const Vec2& y, const Vec2& nx, const Vec2& ny) {
  KernelEval k;
  k.S = single_layer(x, y);
  k.D = double_layer(x, y, ny);
  const auto p = pressure_kernels(x, y, ny);
  k.PS = p.PS;
  k.PD = p.PD;
  const auto t = traction_kernels(x, y, nx, ny);
  k.TS = t.TS;
  k.TD = t.TD;
  return k;
}

}  // namespace peri::kernels
