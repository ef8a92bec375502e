#pragma once

// Panel discretization of boundary curves and dense assembly of layer
// potentials with on-curve, near and far quadrature.
//
// On-curve targets receive the limit from the fluid side, which lies opposite
// to the curve normal.

#include "peristalsis/curve.hpp"
#include "peristalsis/quadrature.hpp"
#include "peristalsis/stokes_kernels.hpp"
#include "peristalsis/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace peri {

struct PanelMesh {
  std::shared_ptr<const Curve> curve;
  int p = 12;
  int npan = 0;
  std::vector<double> t;
  std::vector<Vec2> x, tau, n;
  std::vector<double> kappa, speed, w;

  int size() const { return static_cast<int>(x.size()); }
  double half_width() const { return kPi / npan; }
  double panel_start(int k) const { return kTwoPi * k / npan; }
  bool periodic() const { return curve->period_shift().squaredNorm() > 0.0; }
  int panel_of(int i) const { return i / p; }
};

inline PanelMesh make_mesh(std::shared_ptr<const Curve> curve, int npan, int p) {
  if (npan < 1 || p < 2) throw ConfigError("mesh: need at least one panel and two nodes per panel");
  PanelMesh m;
  m.curve = std::move(curve);
  m.p = p;
  m.npan = npan;
  const auto& g = quad::gauss_legendre(p);
  const double hw = m.half_width();
  const int n = npan * p;
  m.t.resize(n);
  m.x.resize(n);
  m.tau.resize(n);
  m.n.resize(n);
  m.kappa.resize(n);
  m.speed.resize(n);
  m.w.resize(n);
  for (int k = 0; k < npan; ++k) {
    const double c = m.panel_start(k) + hw;
    for (int j = 0; j < p; ++j) {
      const int i = k * p + j;
      m.t[i] = c + hw * g.x[j];
      const FrenetPoint f = frenet(m.curve->eval_base(m.t[i]), m.curve->orientation());
      m.x[i] = f.x;
      m.tau[i] = f.tau;
      m.n[i] = f.n;
      m.kappa[i] = f.kappa;
      m.speed[i] = f.speed;
      m.w[i] = g.w[j] * hw * f.speed;
    }
  }
  return m;
}

inline double mesh_length(const PanelMesh& m) {
  double s = 0.0;
  for (double wi : m.w) s += wi;
  return s;
}

enum class Layer { Single, Double };
enum class Field { Velocity, Traction, Pressure };

struct Targets {
  std::vector<Vec2> x;
  std::vector<Vec2> n;              // target normals, needed for traction
  const PanelMesh* on = nullptr;    // targets are the nodes of this mesh
  int size() const { return static_cast<int>(x.size()); }
};

inline Targets targets_on(const PanelMesh& m) { return {m.x, m.n, &m}; }
inline Targets targets_at(std::vector<Vec2> x, std::vector<Vec2> n = {}) {
  return {std::move(x), std::move(n), nullptr};
}

struct QuadratureOptions {
  double far_ratio = 1.0;      // plain Gauss once distance >= far_ratio * panel length
  double split_ratio = 0.7;    // adaptive split while distance < split_ratio * sub-panel length
  int sub_order = 16;
  int max_depth = 40;
  int extrap_points = 16;
  double extrap_min = 0.04;    // checkpoint distances as fractions of the local panel length
  double extrap_max = 0.6;
};

namespace bie_detail {

inline int rows_of(Field f) { return f == Field::Pressure ? 1 : 2; }

// Kernel block for one source point, row-major rows_of(f) x 2.
inline void kernel(Layer l, Field f, const Vec2& z, const Vec2& nx, const Vec2& ny, double* out) {
  switch (f) {
    case Field::Velocity:
      if (l == Layer::Single)
        kernels::sl_velocity(z.x(), z.y(), out);
      else
        kernels::dl_velocity(z.x(), z.y(), ny.x(), ny.y(), out);
      return;
    case Field::Traction:
      if (l == Layer::Single)
        kernels::sl_traction(z.x(), z.y(), nx.x(), nx.y(), out);
      else
        kernels::dl_traction(z.x(), z.y(), nx.x(), nx.y(), ny.x(), ny.y(), out);
      return;
    case Field::Pressure:
      if (l == Layer::Single)
        kernels::sl_pressure(z.x(), z.y(), out);
      else
        kernels::dl_pressure(z.x(), z.y(), ny.x(), ny.y(), out);
      return;
  }
}

// Per-(order) cached tables for the log-singular self and neighbour panels.
struct LogTables {
  // W[o][i][j]: source panel offset o in {-1, 0, 1} relative to the target panel.
  std::vector<std::vector<double>> W[3];
};

inline const LogTables& log_tables(int p) {
  static std::mutex mu;
  static std::map<int, LogTables> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(p);
  if (it != cache.end()) return it->second;
  const auto& g = quad::gauss_legendre(p);
  LogTables t;
  for (int o = -1; o <= 1; ++o) {
    auto& W = t.W[o + 1];
    W.resize(p);
    for (int i = 0; i < p; ++i) W[i] = quad::log_weights(g, g.x[i] - 2.0 * o);
  }
  return cache.emplace(p, std::move(t)).first->second;
}

struct Panel {
  const PanelMesh* mesh;
  int k;
  Vec2 offset;
};

// Adds the contribution of one panel, integrated adaptively, at an arbitrary
// point x to `out` (rows_of(f) x 2p, row-major with leading dimension ld).
inline void near_panel(const Panel& P, Layer l, Field f, const Vec2& x, const Vec2& nx,
                       const QuadratureOptions& opt, double* out, int ld) {
  const PanelMesh& m = *P.mesh;
  const int p = m.p;
  const auto& g = quad::gauss_legendre(p);
  static thread_local std::vector<double> bw_cache;
  static thread_local int bw_p = -1;
  if (bw_p != p) {
    bw_cache = quad::barycentric_weights(g.x);
    bw_p = p;
  }
  const auto& sub = quad::gauss_legendre(opt.sub_order);
  const double hw = m.half_width();
  const double t0 = m.panel_start(P.k) + hw;
  const int orient = m.curve->orientation();
  const int r = rows_of(f);
  std::vector<double> lag(p);
  double blk[4];

  struct Iv {
    double a, b;
    int depth;
  };
  std::vector<Iv> stack{{-1.0, 1.0, 0}};
  std::vector<CurvePoint> pts(sub.size());
  while (!stack.empty()) {
    const Iv iv = stack.back();
    stack.pop_back();
    const double c = 0.5 * (iv.a + iv.b), h = 0.5 * (iv.b - iv.a);
    double len = 0.0, dmin = 1e300;
    for (int q = 0; q < sub.size(); ++q) {
      pts[q] = m.curve->eval_base(t0 + hw * (c + h * sub.x[q]));
      pts[q].x += P.offset;
      len += sub.w[q] * h * hw * pts[q].dx.norm();
      dmin = std::min(dmin, (pts[q].x - x).norm());
    }
    if (dmin < opt.split_ratio * len && iv.depth < opt.max_depth) {
      stack.push_back({iv.a, c, iv.depth + 1});
      stack.push_back({c, iv.b, iv.depth + 1});
      continue;
    }
    for (int q = 0; q < sub.size(); ++q) {
      const double u = c + h * sub.x[q];
      const double sp = pts[q].dx.norm();
      const Vec2 ny = orient * rot90(pts[q].dx / sp);
      const Vec2 z = x - pts[q].x;
      if (z.squaredNorm() == 0.0) throw SingularEvaluation("near quadrature hit a source point");
      kernel(l, f, z, nx, ny, blk);
      const double wq = sub.w[q] * h * hw * sp;
      quad::lagrange_row(g.x, bw_cache, u, lag.data());
      for (int j = 0; j < p; ++j) {
        const double s = wq * lag[j];
        for (int a = 0; a < r; ++a) {
          out[a * ld + 2 * j] += s * blk[2 * a];
          out[a * ld + 2 * j + 1] += s * blk[2 * a + 1];
        }
      }
    }
  }
}

inline void far_panel(const Panel& P, Layer l, Field f, const Vec2& x, const Vec2& nx, double* out,
                      int ld) {
  const PanelMesh& m = *P.mesh;
  const int r = rows_of(f);
  double blk[4];
  for (int j = 0; j < m.p; ++j) {
    const int s = P.k * m.p + j;
    const Vec2 z = x - (m.x[s] + P.offset);
    kernel(l, f, z, nx, m.n[s], blk);
    const double wj = m.w[s];
    for (int a = 0; a < r; ++a) {
      out[a * ld + 2 * j] += wj * blk[2 * a];
      out[a * ld + 2 * j + 1] += wj * blk[2 * a + 1];
    }
  }
}

inline double panel_distance(const Panel& P, const Vec2& x, double* length) {
  const PanelMesh& m = *P.mesh;
  double d = 1e300, len = 0.0;
  for (int j = 0; j < m.p; ++j) {
    const int s = P.k * m.p + j;
    d = std::min(d, (m.x[s] + P.offset - x).norm());
    len += m.w[s];
  }
  *length = len;
  return d;
}

inline void off_curve_panel(const Panel& P, Layer l, Field f, const Vec2& x, const Vec2& nx,
                            const QuadratureOptions& opt, double* out, int ld) {
  double len;
  const double d = panel_distance(P, x, &len);
  if (d >= opt.far_ratio * len)
    far_panel(P, l, f, x, nx, out, ld);
  else
    near_panel(P, l, f, x, nx, opt, out, ld);
}

// Extrapolation weights from checkpoint distances to zero.
inline std::vector<double> extrapolation_weights(const std::vector<double>& d) {
  const int n = static_cast<int>(d.size());
  std::vector<double> e(n, 1.0);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      if (j != k) e[k] *= (0.0 - d[j]) / (d[k] - d[j]);
  return e;
}

inline std::vector<double> checkpoint_fractions(const QuadratureOptions& opt) {
  std::vector<double> d(opt.extrap_points);
  const int n = opt.extrap_points;
  for (int k = 0; k < n; ++k) {
    const double c = 0.5 * (1.0 - std::cos(kPi * (k + 0.5) / n));
    d[k] = opt.extrap_min + (opt.extrap_max - opt.extrap_min) * c;
  }
  return d;
}

}  // namespace bie_detail

// Dense block mapping source densities (2 per node, interleaved) to the field
// at the targets (rows interleaved per target).  `offsets` lists the spatial
// shifts of source copies as integer multiples of L e1.
inline MatX layer_block(const PanelMesh& src, Layer layer, Field field, const Targets& tg,
                        const std::vector<int>& copies, double L, const QuadratureOptions& opt = {}) {
  using namespace bie_detail;
  const int r = rows_of(field);
  const int nt = tg.size();
  const int ns = src.size();
  const int p = src.p;
  if (field == Field::Traction && static_cast<int>(tg.n.size()) != nt)
    throw ConfigError("layer_block: traction targets need normals");
  MatX out = MatX::Zero(r * nt, 2 * ns);
  // Row-major scratch for one target.
  std::vector<double> row(static_cast<std::size_t>(r) * 2 * ns);
  const int ld = 2 * ns;
  const bool same = (tg.on == &src);
  const double hw = src.half_width();
  const auto& g = quad::gauss_legendre(p);

  for (int i = 0; i < nt; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    const Vec2& x = tg.x[i];
    const Vec2 nx = tg.n.empty() ? Vec2::Zero() : tg.n[i];
    const int ki = same ? src.panel_of(i) : -1;
    bool extrapolate_done = false;
    for (int s : copies) {
      const Vec2 offset(s * L, 0.0);
      for (int k = 0; k < src.npan; ++k) {
        double* blk = row.data() + 2 * k * p;
        const Panel P{&src, k, offset};
        int o = 100;
        if (same) {
          if (src.periodic()) {
            o = (k - s * src.npan) - ki;
          } else if (s == 0) {
            o = ((k - ki) % src.npan + src.npan) % src.npan;
            if (o > src.npan / 2) o -= src.npan;
            if (src.npan == 1 && k == ki) o = 0;
          }
        }
        if (std::abs(o) > 1) {
          off_curve_panel(P, layer, field, x, nx, opt, blk, ld);
          continue;
        }
        // On-curve singular or nearly singular panel.
        const int ii = i - ki * p;  // local index of the target in its panel
        if (field == Field::Velocity && layer == Layer::Double) {
          double b[4];
          for (int j = 0; j < p; ++j) {
            const int sj = k * p + j;
            if (o == 0 && j == ii) {
              const double c = src.kappa[sj] / kTwoPi * src.w[sj];
              const Vec2& t = src.tau[sj];
              blk[2 * j] += c * t.x() * t.x() - 0.5;
              blk[2 * j + 1] += c * t.x() * t.y();
              blk[ld + 2 * j] += c * t.y() * t.x();
              blk[ld + 2 * j + 1] += c * t.y() * t.y() - 0.5;
              continue;
            }
            kernel(layer, field, x - (src.x[sj] + offset), nx, src.n[sj], b);
            for (int a = 0; a < 2; ++a) {
              blk[a * ld + 2 * j] += src.w[sj] * b[2 * a];
              blk[a * ld + 2 * j + 1] += src.w[sj] * b[2 * a + 1];
            }
          }
        } else if (field == Field::Traction && layer == Layer::Single) {
          double b[4];
          for (int j = 0; j < p; ++j) {
            const int sj = k * p + j;
            if (o == 0 && j == ii) {
              const double c = src.kappa[sj] / kTwoPi * src.w[sj];
              const Vec2& t = src.tau[sj];
              blk[2 * j] += c * t.x() * t.x() + 0.5;
              blk[2 * j + 1] += c * t.x() * t.y();
              blk[ld + 2 * j] += c * t.y() * t.x();
              blk[ld + 2 * j + 1] += c * t.y() * t.y() + 0.5;
              continue;
            }
            kernel(layer, field, x - (src.x[sj] + offset), nx, src.n[sj], b);
            for (int a = 0; a < 2; ++a) {
              blk[a * ld + 2 * j] += src.w[sj] * b[2 * a];
              blk[a * ld + 2 * j + 1] += src.w[sj] * b[2 * a + 1];
            }
          }
        } else if (field == Field::Velocity && layer == Layer::Single) {
          const auto& W = log_tables(p).W[o + 1][ii];
          const double c4 = 1.0 / (4.0 * kPi);
          for (int j = 0; j < p; ++j) {
            const int sj = k * p + j;
            const Vec2 z = x - (src.x[sj] + offset);
            const double r2 = z.squaredNorm();
            const double uj = g.x[j];
            const double a = g.x[ii] - 2.0 * o;
            // log|z| = log|u - a| + log(|z| / |u - a|), the second part smooth.
            double smooth_log;
            Mat2 zz;
            if (o == 0 && j == ii) {
              smooth_log = std::log(src.speed[sj] * hw);
              zz = src.tau[sj] * src.tau[sj].transpose();
            } else {
              smooth_log = 0.5 * std::log(r2) - std::log(std::abs(uj - a));
              zz = z * z.transpose() / r2;
            }
            const double g_j = src.speed[sj] * hw;  // ds/du
            const double lg = W[j] * g_j + g.w[j] * g_j * smooth_log;
            const double wj = src.w[sj];
            blk[2 * j] += c4 * (-lg + wj * zz(0, 0));
            blk[2 * j + 1] += c4 * (wj * zz(0, 1));
            blk[ld + 2 * j] += c4 * (wj * zz(1, 0));
            blk[ld + 2 * j + 1] += c4 * (-lg + wj * zz(1, 1));
          }
        } else if (layer == Layer::Double) {
          // Hypersingular: extrapolate the three local panels from points
          // inside the fluid; done once per target for all three.
          if (extrapolate_done) continue;
          extrapolate_done = true;
          double len;
          panel_distance(Panel{&src, ki, Vec2::Zero()}, x, &len);
          const auto frac = checkpoint_fractions(opt);
          std::vector<double> d(frac.size());
          for (std::size_t q = 0; q < frac.size(); ++q) d[q] = frac[q] * len;
          const auto e = extrapolation_weights(d);
          const Vec2 nin = -src.n[i];
          for (int oo = -1; oo <= 1; ++oo) {
            int kk = ki + oo;
            Vec2 off = Vec2::Zero();
            if (src.periodic()) {
              // Unrolled panel index maps to base panel and copy shift.
              // Copy sc of base panel kk has unrolled index kk - sc*npan.
              int sc = 0;
              while (kk < 0) kk += src.npan, sc += 1;
              while (kk >= src.npan) kk -= src.npan, sc -= 1;
              off = Vec2(sc * L, 0.0);
            } else {
              kk = (kk % src.npan + src.npan) % src.npan;
            }
            // Skip panels whose copy is not part of the requested sum.
            const int want = static_cast<int>(std::lround(off.x() / (L == 0 ? 1.0 : L)));
            if (std::find(copies.begin(), copies.end(), want) == copies.end()) continue;
            if (!src.periodic() && oo != 0 && kk == ki) continue;
            double* b2 = row.data() + 2 * kk * p;
            for (std::size_t q = 0; q < d.size(); ++q) {
              const int r0 = rows_of(field);
              std::vector<double> tmp(static_cast<std::size_t>(r0) * 2 * p, 0.0);
              near_panel(Panel{&src, kk, off}, layer, field, x + d[q] * nin, nx, opt, tmp.data(),
                         2 * p);
              for (int a = 0; a < r0; ++a)
                for (int c = 0; c < 2 * p; ++c) b2[a * ld + c] += e[q] * tmp[a * 2 * p + c];
            }
          }
        } else {
          throw SolverError("layer_block: single-layer pressure on its own curve is not supported");
        }
      }
    }
    for (int a = 0; a < r; ++a)
      for (int c = 0; c < 2 * ns; ++c) out(r * i + a, c) = row[a * ld + c];
  }
  return out;
}

// Field at arbitrary points from a density on `src`.
inline MatX evaluate_layer(const PanelMesh& src, Layer layer, Field field, const Targets& tg,
                           const VecX& density, const std::vector<int>& copies, double L,
                           const QuadratureOptions& opt = {}) {
  const MatX B = layer_block(src, layer, field, tg, copies, L, opt);
  const VecX v = B * density;
  const int r = bie_detail::rows_of(field);
  MatX out(tg.size(), r);
  for (int i = 0; i < tg.size(); ++i)
    for (int a = 0; a < r; ++a) out(i, a) = v(r * i + a);
  return out;
}

}  // namespace peri
