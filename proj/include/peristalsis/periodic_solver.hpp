#pragma once

// Periodic Stokes solve in one channel cell [0, L] with an optional rigid
// particle.  Velocity representation:
//   u = D_walls[τ_Γ] + S_particle[τ_γ] + sum_m S(x, y_m) c_m,
// wall and particle layers summed over the copies shifted by -L, 0, L.
// Periodicity of u and of the traction on vertical sections is enforced at
// Gauss points of the section x1 = 0, with f(L) - f(0) = -Δp e1.

#include "peristalsis/bie_discretization.hpp"
#include "peristalsis/particle.hpp"
#include "peristalsis/wall_spline.hpp"

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace peri {

struct SolverOptions {
  int p = 12;
  int wall_panels = 14;      // per wall; a multiple of M keeps panels inside spline intervals
  int particle_panels = 5;
  int proxies = 64;
  double proxy_radius_factor = 1.8;
  double contact_factor = 0.25;  // abort when dist(γ, Γ) < factor * max particle panel length
  double residual_tol = 1e-8;
  int section_points = 32;       // collocation points on the end section
  double rank_tol = 1e-13;       // pivot threshold of the rank-revealing QR
  QuadratureOptions quad;

  void validate() const {
    if (p < 4) throw ConfigError("solver: need at least 4 nodes per panel");
    if (wall_panels < 2 || particle_panels < 2) throw ConfigError("solver: need at least 2 panels");
    if (proxies < 32) throw ConfigError("solver: need at least 32 proxy sources");
    if (!(contact_factor > 0.0)) throw ConfigError("solver: contact factor must be positive");
    if (section_points < 4) throw ConfigError("solver: need at least 4 section points");
  }
};

inline const std::vector<int>& near_copies() {
  static const std::vector<int> c{-1, 0, 1};
  return c;
}

// Wall meshes, end sections, proxies and every operator that depends only on
// the wall shape.  Static columns are [τ_upper, τ_lower, c].
class ChannelGeometry {
 public:
  ChannelGeometry(Walls walls, double L, const SolverOptions& opt) : walls_(std::move(walls)), L_(L), opt_(opt) {
    opt_.validate();
    mesh_[0] = make_mesh(walls_.upper, opt_.wall_panels, opt_.p);
    mesh_[1] = make_mesh(walls_.lower, opt_.wall_panels, opt_.p);
    build_sections();
    build_proxies();
    build_static();
  }

  double L() const { return L_; }
  const SolverOptions& options() const { return opt_; }
  const Walls& walls() const { return walls_; }
  const PanelMesh& wall(int w) const { return mesh_[w]; }
  int wall_nodes() const { return mesh_[0].size() + mesh_[1].size(); }
  int wall_offset(int w) const { return w == 0 ? 0 : mesh_[0].size(); }
  int proxies() const { return static_cast<int>(proxy_.size()); }
  const std::vector<Vec2>& proxy_points() const { return proxy_; }
  int section_nodes() const { return static_cast<int>(sec0_.size()); }
  const std::vector<Vec2>& section0() const { return sec0_; }
  const std::vector<Vec2>& sectionL() const { return secL_; }
  const std::vector<double>& section_weights() const { return secw_; }
  double opening() const { return height_; }
  int static_cols() const { return 2 * wall_nodes() + 2 * proxies(); }

  // Wall length over L.
  double ell(int w) const { return mesh_length(mesh_[w]) / L_; }

  // Static operator blocks over the static columns.
  const MatX& wall_velocity() const { return wall_vel_; }
  const MatX& wall_traction() const { return wall_tr_; }
  const MatX& wall_pressure() const { return wall_pr_; }
  const MatX& section_velocity(int end) const { return sec_vel_[end]; }
  const MatX& section_traction(int end) const { return sec_tr_[end]; }
  const MatX& section_pressure(int end) const { return sec_pr_[end]; }
  // Wall-only system [wall velocity; u-match; f-match] over the static columns.
  const MatX& static_system() const { return sys_; }
  int static_rank() const { return rank_; }

  // Basic least-squares solution of the static system, column by column.
  MatX static_solve(const MatX& B) const {
    const MatX y = r11_.triangularView<Eigen::Upper>().solve(qrt_ * B);
    MatX x = MatX::Zero(sys_.cols(), B.cols());
    x.topRows(rank_) = y;
    return perm_ * x;
  }

  // Proxy block for a field at arbitrary targets.
  MatX proxy_block(Field f, const Targets& tg) const {
    const int r = bie_detail::rows_of(f);
    MatX B(r * tg.size(), 2 * proxies());
    double blk[4];
    for (int i = 0; i < tg.size(); ++i) {
      const Vec2 nx = tg.n.empty() ? Vec2::Zero() : tg.n[i];
      for (int m = 0; m < proxies(); ++m) {
        bie_detail::kernel(Layer::Single, f, tg.x[i] - proxy_[m], nx, Vec2::Zero(), blk);
        for (int a = 0; a < r; ++a) {
          B(r * i + a, 2 * m) = blk[2 * a];
          B(r * i + a, 2 * m + 1) = blk[2 * a + 1];
        }
      }
    }
    return B;
  }

  // Wall layers plus proxies at arbitrary targets, over the static columns.
  MatX static_block(Field f, const Targets& tg) const {
    const int r = bie_detail::rows_of(f);
    MatX B(r * tg.size(), static_cols());
    for (int w = 0; w < 2; ++w)
      B.middleCols(2 * wall_offset(w), 2 * mesh_[w].size()) =
          layer_block(mesh_[w], Layer::Double, f, tg, near_copies(), L_, opt_.quad);
    B.rightCols(2 * proxies()) = proxy_block(f, tg);
    return B;
  }

 private:
  void build_sections() {
    const CurvePoint up = walls_.upper->eval_base(kTwoPi);
    const CurvePoint lo = walls_.lower->eval_base(kTwoPi);
    const double y0 = lo.x.y(), y1 = up.x.y();
    height_ = y1 - y0;
    if (!(height_ > 0.0)) throw ConfigError("geometry: walls cross at the end section");
    const int m = opt_.section_points;
    const auto& g = quad::gauss_legendre(m);
    sec0_.resize(m);
    secL_.resize(m);
    secw_.resize(m);
    for (int k = 0; k < m; ++k) {
      const double y = 0.5 * (y0 + y1) + 0.5 * height_ * g.x[k];
      sec0_[k] = Vec2(lo.x.x(), y);
      secL_[k] = Vec2(lo.x.x() + L_, y);
      secw_[k] = 0.5 * height_ * g.w[k];
    }
  }

  void build_proxies() {
    double ymin = 1e300, ymax = -1e300;
    for (int w = 0; w < 2; ++w)
      for (const auto& x : mesh_[w].x) ymin = std::min(ymin, x.y()), ymax = std::max(ymax, x.y());
    const Vec2 center(0.5 * L_, 0.5 * (ymin + ymax));
    const double half_diag = 0.5 * std::hypot(L_, ymax - ymin);
    const double R = opt_.proxy_radius_factor * half_diag;
    proxy_.resize(opt_.proxies);
    for (int m = 0; m < opt_.proxies; ++m) {
      const double a = kTwoPi * m / opt_.proxies;
      proxy_[m] = center + R * Vec2(std::cos(a), std::sin(a));
    }
  }

  void build_static() {
    const int nw = wall_nodes();
    wall_vel_.resize(2 * nw, static_cols());
    wall_tr_.resize(2 * nw, static_cols());
    wall_pr_.resize(nw, static_cols());
    for (int w = 0; w < 2; ++w) {
      const Targets tg = targets_on(mesh_[w]);
      const int r0 = wall_offset(w);
      const int nr = mesh_[w].size();
      wall_vel_.middleRows(2 * r0, 2 * nr) = static_block(Field::Velocity, tg);
      wall_tr_.middleRows(2 * r0, 2 * nr) = static_block(Field::Traction, tg);
      wall_pr_.middleRows(r0, nr) = static_block(Field::Pressure, tg);
    }
    const std::vector<Vec2> e1(sec0_.size(), Vec2(1.0, 0.0));
    for (int end = 0; end < 2; ++end) {
      const Targets tg = targets_at(end == 0 ? sec0_ : secL_, e1);
      sec_vel_[end] = static_block(Field::Velocity, tg);
      sec_tr_[end] = static_block(Field::Traction, tg);
      sec_pr_[end] = static_block(Field::Pressure, tg);
    }
    const int m = section_nodes();
    sys_.resize(2 * nw + 4 * m, static_cols());
    sys_.topRows(2 * nw) = wall_vel_;
    sys_.middleRows(2 * nw, 2 * m) = sec_vel_[1] - sec_vel_[0];
    sys_.bottomRows(2 * m) = sec_tr_[1] - sec_tr_[0];
    // The proxy sources are redundant, so the system is rank deficient but
    // consistent; a rank-revealing QR gives a basic solution.
    Eigen::ColPivHouseholderQR<MatX> qr;
    qr.setThreshold(opt_.rank_tol);
    qr.compute(sys_);
    rank_ = static_cast<int>(qr.rank());
    const MatX q = qr.householderQ() * MatX::Identity(sys_.rows(), rank_);
    qrt_ = q.transpose();
    r11_ = qr.matrixR().topLeftCorner(rank_, rank_).triangularView<Eigen::Upper>();
    perm_ = qr.colsPermutation();
  }

  Walls walls_;
  double L_;
  SolverOptions opt_;
  PanelMesh mesh_[2];
  std::vector<Vec2> sec0_, secL_;
  std::vector<double> secw_;
  double height_ = 0.0;
  std::vector<Vec2> proxy_;
  MatX wall_vel_, wall_tr_, wall_pr_;
  MatX sec_vel_[2], sec_tr_[2], sec_pr_[2];
  MatX sys_, qrt_, r11_;
  Eigen::PermutationMatrix<Eigen::Dynamic> perm_;
  int rank_ = 0;
};

// Particle condition: free (prescribed net force and torque) or prescribed motion.
struct InstantBC {
  std::vector<Vec2> u_wall;  // all wall nodes, upper first
  double dp = 0.0;           // p(L) - p(0)
  bool prescribed_motion = false;
  Vec2 force = Vec2::Zero();     // net force target
  double torque = 0.0;           // net torque target about the origin (unwrapped)
  RigidVelocity motion;          // used when prescribed_motion
};

struct FlowSolution {
  VecX x;                        // raw unknown vector
  std::vector<Vec2> tau_wall, tau_particle, proxy_c;
  RigidVelocity motion;
  std::vector<Vec2> u_wall, f_wall;
  std::vector<double> p_wall;
  std::vector<Vec2> u_particle, h_particle;
  std::vector<Vec2> u_section0, u_sectionL;
  double p_gauge = 0.0;          // subtracted so that p averages to zero on Γ0
  double flux0 = 0.0, fluxL = 0.0;
  double residual = 0.0;
  double solve_seconds = 0.0;
};

struct ParticleState {
  ParticleShape shape;
  RigidConfig q;
};

// One configuration: the extended system, reusable for many BCs.
class InstantSystem {
 public:
  InstantSystem(std::shared_ptr<const ChannelGeometry> geo, std::optional<ParticleState> particle)
      : geo_(std::move(geo)), particle_(std::move(particle)) {
    const auto t0 = std::chrono::steady_clock::now();
    layout();
    if (particle_) build_particle();
    assemble();
    schur_.build(A_, *this);
    setup_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  const ChannelGeometry& geometry() const { return *geo_; }
  bool has_particle() const { return particle_.has_value(); }
  const PanelMesh& particle_mesh() const { return pmesh_; }
  // Unwrapped centroid used for torques about the origin.
  Vec2 centroid_unwrapped() const { return centroid(particle_->shape, particle_->q); }
  Vec2 centroid_wrapped() const { return center_wrapped_; }
  int unknowns() const { return n_; }
  const MatX& matrix() const { return A_; }
  double setup_seconds() const { return setup_seconds_; }

  // Right-hand side for a boundary condition.
  VecX rhs(const InstantBC& bc) const {
    const auto& g = *geo_;
    const int nw = g.wall_nodes();
    if (static_cast<int>(bc.u_wall.size()) != nw) throw ConfigError("solver: wall velocity size mismatch");
    VecX b = VecX::Zero(n_);
    for (int i = 0; i < nw; ++i) b.segment<2>(2 * i) = bc.u_wall[i];
    for (int k = 0; k < g.section_nodes(); ++k) b(rf_ + 2 * k) = -bc.dp;
    if (particle_) {
      if (bc.prescribed_motion) {
        b(rc_) = bc.motion.w.x();
        b(rc_ + 1) = bc.motion.w.y();
        b(rc_ + 2) = bc.motion.rho;
      } else {
        b(rc_) = bc.force.x();
        b(rc_ + 1) = bc.force.y();
        b(rc_ + 2) = torque_about_centroid(bc.torque, bc.force, centroid_unwrapped());
      }
    }
    return b;
  }

  static constexpr double kAbsoluteResidualTol = 1e-10;

  FlowSolution solve(const InstantBC& bc) const {
    const auto t0 = std::chrono::steady_clock::now();
    const VecX b = rhs(bc);
    const bool motion = bc.prescribed_motion && particle_;
    const MatX& A = motion ? motion_matrix() : A_;
    VecX x = motion ? motion_schur_.solve(b) : schur_.solve(b);
    if (!x.allFinite()) throw SolverError("solver: non-finite solution");
    FlowSolution s = traces(x);
    const double err = (A * x - b).norm();
    s.residual = err / std::max(b.norm(), 1e-300);
    s.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double tol = geo_->options().residual_tol;
    // Relative tolerance, with an absolute floor for vanishing data.
    if (s.residual > tol && err > kAbsoluteResidualTol)
      throw SolverError("solver: relative residual " + std::to_string(s.residual) + " above tolerance");
    return s;
  }

  // Traces of a raw unknown vector.
  FlowSolution traces(const VecX& x) const {
    const auto& g = *geo_;
    const int nw = g.wall_nodes();
    const int K = g.proxies();
    FlowSolution s;
    s.x = x;
    VecX xs(g.static_cols());
    xs << x.head(2 * nw), x.segment(cc_, 2 * K);
    auto unpack = [](const VecX& v, int off, int cnt) {
      std::vector<Vec2> out(cnt);
      for (int i = 0; i < cnt; ++i) out[i] = v.segment<2>(off + 2 * i);
      return out;
    };
    s.tau_wall = unpack(x, 0, nw);
    s.proxy_c = unpack(x, cc_, K);
    VecX uw = g.wall_velocity() * xs;
    VecX fw = g.wall_traction() * xs;
    VecX pw = g.wall_pressure() * xs;
    VecX us0 = g.section_velocity(0) * xs;
    VecX usL = g.section_velocity(1) * xs;
    VecX ps0 = g.section_pressure(0) * xs;
    if (particle_) {
      const int np = pmesh_.size();
      const VecX tp = x.segment(cp_, 2 * np);
      s.tau_particle = unpack(x, cp_, np);
      s.motion.w = x.segment<2>(cr_);
      s.motion.rho = x(cr_ + 2);
      uw += p_wall_vel_ * tp;
      fw += p_wall_tr_ * tp;
      pw += p_wall_pr_ * tp;
      us0 += p_sec_vel_[0] * tp;
      usL += p_sec_vel_[1] * tp;
      ps0 += p_sec_pr0_ * tp;
      const VecX h = H_ * x;
      s.h_particle = unpack(h, 0, np);
      s.u_particle.resize(np);
      for (int i = 0; i < np; ++i)
        s.u_particle[i] = rigid_velocity_field(s.motion, pmesh_.x[i], center_wrapped_);
    }
    s.u_wall = unpack(uw, 0, nw);
    s.f_wall = unpack(fw, 0, nw);
    s.p_wall.resize(nw);
    const int m = g.section_nodes();
    double pmean = 0.0;
    for (int k = 0; k < m; ++k) pmean += ps0(k);
    pmean /= m;
    s.p_gauge = pmean;
    for (int i = 0; i < nw; ++i) s.p_wall[i] = pw(i) - pmean;
    for (int w = 0; w < 2; ++w)
      for (int i = 0; i < g.wall(w).size(); ++i) s.f_wall[g.wall_offset(w) + i] += pmean * g.wall(w).n[i];
    for (std::size_t i = 0; i < s.h_particle.size(); ++i) s.h_particle[i] += pmean * pmesh_.n[i];
    s.u_section0 = unpack(us0, 0, m);
    s.u_sectionL = unpack(usL, 0, m);
    // Points inside the particle take the rigid velocity.
    for (int k = 0; k < m; ++k) {
      if (inside_particle(g.section0()[k])) s.u_section0[k] = rigid_velocity_field(s.motion, g.section0()[k], center_wrapped_);
      if (inside_particle(g.sectionL()[k])) s.u_sectionL[k] = rigid_velocity_field(s.motion, g.sectionL()[k], center_wrapped_);
    }
    for (int k = 0; k < m; ++k) {
      s.flux0 += g.section_weights()[k] * s.u_section0[k].x();
      s.fluxL += g.section_weights()[k] * s.u_sectionL[k].x();
    }
    return s;
  }

  // Whether x lies inside any periodic image of the particle.
  bool inside_particle(const Vec2& x) const {
    if (!particle_) return false;
    const auto& sh = particle_->shape;
    const Mat2 R = rotation(particle_->q.phi + sh.tilt);
    for (int c : near_copies()) {
      const Vec2 d = R.transpose() * (x - center_wrapped_ - Vec2(c * geo_->L(), 0.0));
      if ((d.x() / sh.a) * (d.x() / sh.a) + (d.y() / sh.b) * (d.y() / sh.b) < 1.0) return true;
    }
    return false;
  }

  // Row block mapping unknowns to particle traction h (2 per node).
  const MatX& traction_rows() const { return H_; }

 private:
  void layout() {
    const auto& g = *geo_;
    const int nw = g.wall_nodes();
    const int K = g.proxies();
    const int m = g.section_nodes();
    np_ = 0;
    if (particle_) {
      particle_->shape.validate();
      np_ = g.options().particle_panels * g.options().p;
    }
    cp_ = 2 * nw;
    cc_ = cp_ + 2 * np_;
    cr_ = cc_ + 2 * K;
    n_ = cr_ + (particle_ ? 3 : 0);
    rp_ = 2 * nw;
    ru_ = rp_ + 2 * np_;
    rf_ = ru_ + 2 * m;
    rc_ = rf_ + 2 * m;
    if (rc_ + (particle_ ? 3 : 0) != n_) throw SolverError("solver: system is not square");
  }

  void build_particle() {
    const auto& g = *geo_;
    const double L = g.L();
    const auto& st = *particle_;
    center_wrapped_ = wrap_center(centroid(st.shape, st.q), L);
    auto curve = std::make_shared<ParticleCurve>(st.shape, st.q.phi, center_wrapped_);
    pmesh_ = make_mesh(curve, g.options().particle_panels, g.options().p);
    check_contact();
  }

  void check_contact() const {
    const auto& g = *geo_;
    double hmax = 0.0;
    for (int k = 0; k < pmesh_.npan; ++k) {
      double len = 0.0;
      for (int j = 0; j < pmesh_.p; ++j) len += pmesh_.w[k * pmesh_.p + j];
      hmax = std::max(hmax, len);
    }
    double dmin = 1e300;
    for (int w = 0; w < 2; ++w)
      for (const auto& xw : g.wall(w).x)
        for (int c : near_copies())
          for (const auto& xp : pmesh_.x) dmin = std::min(dmin, (xw - xp - Vec2(c * g.L(), 0.0)).norm());
    if (dmin < g.options().contact_factor * hmax)
      throw ContactError("particle within " + std::to_string(dmin) + " of a wall (threshold " +
                         std::to_string(g.options().contact_factor * hmax) + ")");
  }

  void assemble() {
    const auto& g = *geo_;
    const double L = g.L();
    const int nw = g.wall_nodes();
    const int K = g.proxies();
    const int m = g.section_nodes();
    const auto& qo = g.options().quad;
    A_ = MatX::Zero(n_, n_);
    auto put_static = [&](int r0, const MatX& S) {
      A_.block(r0, 0, S.rows(), 2 * nw) = S.leftCols(2 * nw);
      A_.block(r0, cc_, S.rows(), 2 * K) = S.rightCols(2 * K);
    };
    put_static(0, g.wall_velocity());
    put_static(ru_, g.section_velocity(1) - g.section_velocity(0));
    put_static(rf_, g.section_traction(1) - g.section_traction(0));
    if (!particle_) return;

    const int np = pmesh_.size();
    // Particle layer at the walls, sections and particle nodes.
    std::vector<Vec2> wx, wn;
    for (int w = 0; w < 2; ++w) {
      wx.insert(wx.end(), g.wall(w).x.begin(), g.wall(w).x.end());
      wn.insert(wn.end(), g.wall(w).n.begin(), g.wall(w).n.end());
    }
    const Targets wt = targets_at(wx, wn);
    p_wall_vel_ = layer_block(pmesh_, Layer::Single, Field::Velocity, wt, near_copies(), L, qo);
    p_wall_tr_ = layer_block(pmesh_, Layer::Single, Field::Traction, wt, near_copies(), L, qo);
    p_wall_pr_ = layer_block(pmesh_, Layer::Single, Field::Pressure, wt, near_copies(), L, qo);
    const std::vector<Vec2> e1(m, Vec2(1.0, 0.0));
    MatX sec_tr[2];
    for (int end = 0; end < 2; ++end) {
      const Targets st = targets_at(end == 0 ? g.section0() : g.sectionL(), e1);
      p_sec_vel_[end] = layer_block(pmesh_, Layer::Single, Field::Velocity, st, near_copies(), L, qo);
      sec_tr[end] = layer_block(pmesh_, Layer::Single, Field::Traction, st, near_copies(), L, qo);
      if (end == 0) p_sec_pr0_ = layer_block(pmesh_, Layer::Single, Field::Pressure, st, near_copies(), L, qo);
    }
    A_.block(0, cp_, 2 * nw, 2 * np) = p_wall_vel_;
    A_.block(ru_, cp_, 2 * m, 2 * np) = p_sec_vel_[1] - p_sec_vel_[0];
    A_.block(rf_, cp_, 2 * m, 2 * np) = sec_tr[1] - sec_tr[0];

    // Particle no-slip rows.
    const Targets pt = targets_on(pmesh_);
    const MatX sv = g.static_block(Field::Velocity, pt);
    A_.block(rp_, 0, 2 * np, 2 * nw) = sv.leftCols(2 * nw);
    A_.block(rp_, cc_, 2 * np, 2 * K) = sv.rightCols(2 * K);
    MatX self = layer_block(pmesh_, Layer::Single, Field::Velocity, pt, near_copies(), L, qo);
    // Completion removing the single-layer null vector n (zero velocity, zero
    // external traction): adds n(x) <n, τ_γ>, which vanishes at solutions.
    for (int i = 0; i < np; ++i)
      for (int j = 0; j < np; ++j) {
        const double wj = pmesh_.w[j];
        self.block<2, 2>(2 * i, 2 * j) += wj * pmesh_.n[i] * pmesh_.n[j].transpose();
      }
    A_.block(rp_, cp_, 2 * np, 2 * np) = self;
    for (int i = 0; i < np; ++i) {
      A_.block<2, 2>(rp_ + 2 * i, cr_) = -Mat2::Identity();
      A_.block<2, 1>(rp_ + 2 * i, cr_ + 2) = -rot90(pmesh_.x[i] - center_wrapped_);
    }

    // Traction on the particle and closure rows.
    H_ = MatX::Zero(2 * np, n_);
    const MatX st = g.static_block(Field::Traction, pt);
    H_.leftCols(2 * nw) = st.leftCols(2 * nw);
    H_.middleCols(cc_, 2 * K) = st.rightCols(2 * K);
    H_.middleCols(cp_, 2 * np) = layer_block(pmesh_, Layer::Single, Field::Traction, pt, near_copies(), L, qo);
    for (int i = 0; i < np; ++i) {
      const double wi = pmesh_.w[i];
      const Vec2 arm = rot90(pmesh_.x[i] - center_wrapped_);
      A_.row(rc_) += wi * H_.row(2 * i);
      A_.row(rc_ + 1) += wi * H_.row(2 * i + 1);
      A_.row(rc_ + 2) += wi * (arm.x() * H_.row(2 * i) + arm.y() * H_.row(2 * i + 1));
    }
  }

  const MatX& motion_matrix() const {
    if (!motion_ready_) {
      motion_A_ = A_;
      motion_A_.middleRows(rc_, 3).setZero();
      for (int k = 0; k < 3; ++k) motion_A_(rc_ + k, cr_ + k) = 1.0;
      motion_schur_.build(motion_A_, *this);
      motion_ready_ = true;
    }
    return motion_A_;
  }

  // Block elimination of the wall and proxy unknowns through the cached
  // static solve G: x_s = G (b_s - B x_p), leaving a small dense system for
  // the particle density and rigid unknowns.
  struct Schur {
    std::vector<int> srow, scol, prow, pcol;
    const ChannelGeometry* geo = nullptr;
    MatX GB;  // G * A[s, p]
    MatX Cp;  // A[p, s]
    Eigen::PartialPivLU<MatX> lu;

    void build(const MatX& A, const InstantSystem& sys) {
      srow.clear(), scol.clear(), prow.clear(), pcol.clear();
      for (int i = 0; i < sys.n_; ++i) {
        ((i >= sys.rp_ && i < sys.ru_) || i >= sys.rc_ ? prow : srow).push_back(i);
        ((i >= sys.cp_ && i < sys.cc_) || i >= sys.cr_ ? pcol : scol).push_back(i);
      }
      geo = sys.geo_.get();
      if (pcol.empty()) return;
      GB = geo->static_solve(A(srow, pcol));
      refresh(A);
    }

    // Recomputes the reduced matrix after a change confined to particle rows.
    void refresh(const MatX& A) {
      Cp = A(prow, scol);
      MatX R = A(prow, pcol);
      R.noalias() -= Cp * GB;
      lu.compute(R);
    }

    VecX solve(const VecX& b) const {
      VecX x(b.size());
      const VecX xs0 = geo->static_solve(b(srow));
      if (pcol.empty()) {
        x(scol) = xs0;
        return x;
      }
      const VecX xp = lu.solve(b(prow) - Cp * xs0);
      x(scol) = xs0 - GB * xp;
      x(pcol) = xp;
      return x;
    }
  };

  std::shared_ptr<const ChannelGeometry> geo_;
  std::optional<ParticleState> particle_;
  PanelMesh pmesh_;
  Vec2 center_wrapped_ = Vec2::Zero();
  int np_ = 0, n_ = 0;
  int cp_ = 0, cc_ = 0, cr_ = 0;
  int rp_ = 0, ru_ = 0, rf_ = 0, rc_ = 0;
  MatX A_, H_;
  MatX p_wall_vel_, p_wall_tr_, p_wall_pr_, p_sec_vel_[2], p_sec_pr0_;
  Schur schur_;
  mutable MatX motion_A_;
  mutable Schur motion_schur_;
  mutable bool motion_ready_ = false;
  double setup_seconds_ = 0.0;
};

// Equilibrium and conservation checks of one free-particle solve.  Norms of h
// are ∫|h| ds.
struct ClosureDiagnostics {
  double h_norm = 0.0;
  double net_force = 0.0;    // |∫ h ds|
  double net_torque = 0.0;   // |∫ (x - c) × h ds|
  double power = 0.0;        // |<h, u + e1>|
  double flux_mismatch = 0.0;
  double opening = 0.0;
};

inline ClosureDiagnostics closure_diagnostics(const InstantSystem& sys, const FlowSolution& s) {
  ClosureDiagnostics d;
  d.flux_mismatch = std::abs(s.fluxL - s.flux0);
  d.opening = sys.geometry().opening();
  if (!sys.has_particle()) return d;
  const auto& m = sys.particle_mesh();
  const Vec2 c = sys.centroid_wrapped();
  Vec2 F = Vec2::Zero();
  double T = 0.0, P = 0.0;
  for (int i = 0; i < m.size(); ++i) {
    const Vec2& h = s.h_particle[i];
    d.h_norm += m.w[i] * h.norm();
    F += m.w[i] * h;
    T += m.w[i] * cross(m.x[i] - c, h);
    P += m.w[i] * h.dot(s.u_particle[i] + Vec2(1.0, 0.0));
  }
  d.net_force = F.norm();
  d.net_torque = std::abs(T);
  d.power = std::abs(P);
  return d;
}

// Slip velocity ℓ τ at every wall node, upper wall first.
inline std::vector<Vec2> wall_slip(const ChannelGeometry& g) {
  std::vector<Vec2> u;
  for (int w = 0; w < 2; ++w) {
    const double ell = g.ell(w);
    for (const auto& t : g.wall(w).tau) u.push_back(ell * t);
  }
  return u;
}

}  // namespace peri
