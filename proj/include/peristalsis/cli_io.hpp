#pragma once

// Run configuration, result serialization and the command implementations
// behind the command-line driver.

#include "peristalsis/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace peri {

using json = nlohmann::json;

// Exit codes of the driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitSolver = 3,
  kExitContact = 4,
  kExitGradientCheck = 5,
  kExitOuterCap = 6,
};

struct GradientCheckConfig {
  double eta = 1e-4;
  double threshold = 1e-2;
  double floor = 1e-8;
  std::vector<std::string> functionals{"JW", "D"};
};

struct RunConfig {
  Problem problem;
  double V0 = 12.26;
  double D0 = 0.0;
  AlOptions optimizer;
  GradientCheckConfig gradient_check;
  std::string out = "out";
  bool verbose = false;
};

namespace config_detail {

// Typed access to a JSON object that reports the field path on failure and
// rejects unknown keys.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  std::string child(const std::string& k) const { return path_ + "/" + k; }

  const json& at(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError(child(k) + ": missing required field");
    return j_.at(k);
  }
  double number(const std::string& k, double dflt) { return has(k) ? as_number(j_.at(k), child(k)) : dflt; }
  int integer(const std::string& k, int dflt) { return has(k) ? as_integer(j_.at(k), child(k)) : dflt; }
  bool boolean(const std::string& k, bool dflt) {
    if (!has(k)) return dflt;
    if (!j_.at(k).is_boolean()) throw ConfigError(child(k) + ": expected a boolean");
    return j_.at(k).get<bool>();
  }
  std::string string(const std::string& k, const std::string& dflt) {
    if (!has(k)) return dflt;
    if (!j_.at(k).is_string()) throw ConfigError(child(k) + ": expected a string");
    return j_.at(k).get<std::string>();
  }
  std::vector<double> numbers(const std::string& k) {
    const json& a = at(k);
    if (!a.is_array()) throw ConfigError(child(k) + ": expected an array");
    std::vector<double> v;
    for (std::size_t i = 0; i < a.size(); ++i) v.push_back(as_number(a[i], child(k) + "/" + std::to_string(i)));
    return v;
  }
  Vec2 vec2(const std::string& k, const Vec2& dflt) {
    if (!has(k)) return dflt;
    const auto v = numbers(k);
    if (v.size() != 2) throw ConfigError(child(k) + ": expected two numbers");
    return {v[0], v[1]};
  }
  // Call once all fields are read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()) + ": unknown field");
  }
  const std::string& path() const { return path_; }

  static double as_number(const json& v, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p + ": expected a number");
    return v.get<double>();
  }
  static int as_integer(const json& v, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    return v.get<int>();
  }

 private:
  std::string where() const { return path_.empty() ? "/" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

// Shape snapshot: control values with the spline metadata.
inline json shape_to_json(const SplineConfig& cfg, const std::vector<double>& ps) {
  return {{"M", cfg.M}, {"L", cfg.L}, {"ps", ps}};
}

inline std::vector<double> shape_from_json(const json& j, const SplineConfig& cfg, const std::string& path) {
  config_detail::Reader r(j, path);
  const int M = r.integer("M", cfg.M);
  const double L = r.number("L", cfg.L);
  if (M != cfg.M) throw ConfigError(r.child("M") + ": does not match the configured spline");
  if (L != cfg.L) throw ConfigError(r.child("L") + ": does not match the configured period");
  auto ps = r.numbers("ps");
  r.finish();
  if (static_cast<int>(ps.size()) != cfg.num_ps())
    throw ConfigError(r.child("ps") + ": expected " + std::to_string(cfg.num_ps()) + " values");
  return ps;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Geometry presets: flat (height h) and sine (height h, amplitude a).
inline RunConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  using config_detail::Reader;
  RunConfig c;
  Reader root(j, "");
  Problem& p = c.problem;

  if (root.has("spline")) {
    Reader r(root.at("spline"), "/spline");
    p.spline.M = r.integer("M", p.spline.M);
    r.finish();
  }
  p.spline.validate();

  {
    Reader r(root.at("geometry"), "/geometry");
    const bool has_ps = r.has("ps");
    const bool has_file = r.has("shape_file");
    const bool has_preset = r.has("preset");
    if (has_ps + has_file + has_preset != 1)
      throw ConfigError("/geometry: give exactly one of preset, ps, shape_file");
    if (has_preset) {
      const std::string preset = r.string("preset", "");
      const double h = r.number("height", 1.0);
      if (!(h > 0.0)) throw ConfigError("/geometry/height: must be positive");
      if (preset == "flat") {
        p.ps = sine_channel_ps(p.spline, h, 0.0);
      } else if (preset == "sine") {
        p.ps = sine_channel_ps(p.spline, h, r.number("amplitude", 0.3));
      } else {
        throw ConfigError("/geometry/preset: unknown preset '" + preset + "'");
      }
    } else if (has_ps) {
      p.ps = r.numbers("ps");
      if (static_cast<int>(p.ps.size()) != p.spline.num_ps())
        throw ConfigError("/geometry/ps: expected " + std::to_string(p.spline.num_ps()) + " values");
    } else {
      std::filesystem::path f = r.string("shape_file", "");
      if (f.is_relative()) f = base_dir / f;
      p.ps = shape_from_json(read_json_file(f.string()), p.spline, f.string());
    }
    r.finish();
  }

  if (root.has("particle")) {
    Reader r(root.at("particle"), "/particle");
    const std::string shape = r.string("shape", "circle");
    const Vec2 c0 = r.vec2("center", Vec2(kPi, 0.0));
    if (shape == "circle") {
      p.particle = ParticleShape::circle(r.number("radius", 0.3), c0);
    } else if (shape == "ellipse") {
      p.particle = ParticleShape::ellipse(r.number("a", 0.4), r.number("b", 0.2), r.number("tilt", 0.0), c0);
    } else {
      throw ConfigError("/particle/shape: unknown shape '" + shape + "'");
    }
    r.finish();
    try {
      p.particle.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("/particle: ") + e.what());
    }
  }

  if (root.has("resolution")) {
    Reader r(root.at("resolution"), "/resolution");
    p.solver.wall_panels = r.integer("wall_panels", p.solver.wall_panels);
    p.solver.particle_panels = r.integer("particle_panels", p.solver.particle_panels);
    p.solver.p = r.integer("p", p.solver.p);
    p.solver.proxies = r.integer("proxies", p.solver.proxies);
    r.finish();
  }
  try {
    p.solver.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("/resolution: ") + e.what());
  }

  if (root.has("time")) {
    Reader r(root.at("time"), "/time");
    p.grid.T = r.number("T", p.grid.T);
    p.grid.N = r.integer("N", p.grid.N);
    r.finish();
  }
  try {
    p.grid.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("/time: ") + e.what());
  }

  if (root.has("targets")) {
    Reader r(root.at("targets"), "/targets");
    c.V0 = r.number("V0", c.V0);
    c.D0 = r.number("D0", c.D0);
    r.finish();
  }
  if (!(c.V0 > p.particle.area())) throw ConfigError("/targets/V0: must exceed the particle area");

  if (root.has("optimizer")) {
    Reader r(root.at("optimizer"), "/optimizer");
    AlOptions& o = c.optimizer;
    o.zeta_star = r.number("zeta_star", o.zeta_star);
    const Vec2 l0 = r.vec2("lambda0", Vec2(o.lambda1, o.lambda2));
    o.lambda1 = l0.x();
    o.lambda2 = l0.y();
    o.sigma0 = r.number("sigma0", o.sigma0);
    o.outer_cap = r.integer("outer_cap", o.outer_cap);
    o.inner.max_iter = r.integer("inner_max_iter", o.inner.max_iter);
    o.inner.gtol = r.number("gtol", o.inner.gtol);
    r.finish();
    if (!(o.sigma0 > 0.0)) throw ConfigError("/optimizer/sigma0: must be positive");
    if (o.outer_cap < 1) throw ConfigError("/optimizer/outer_cap: must be at least 1");
    if (!(o.zeta_star > 0.0)) throw ConfigError("/optimizer/zeta_star: must be positive");
  }

  if (root.has("gradient_check")) {
    Reader r(root.at("gradient_check"), "/gradient_check");
    auto& g = c.gradient_check;
    g.eta = r.number("eta", g.eta);
    g.threshold = r.number("threshold", g.threshold);
    g.floor = r.number("floor", g.floor);
    if (r.has("functionals")) {
      const json& a = r.at("functionals");
      if (!a.is_array()) throw ConfigError("/gradient_check/functionals: expected an array");
      g.functionals.clear();
      for (const auto& v : a) {
        if (!v.is_string()) throw ConfigError("/gradient_check/functionals: expected strings");
        const std::string s = v.get<std::string>();
        if (s != "JW" && s != "D" && s != "V" && s != "C" && s != "Q")
          throw ConfigError("/gradient_check/functionals: unknown functional '" + s + "'");
        g.functionals.push_back(s);
      }
    }
    r.finish();
    if (!(g.eta > 0.0)) throw ConfigError("/gradient_check/eta: must be positive");
  }

  c.out = root.string("output", c.out);
  c.verbose = root.boolean("verbose", c.verbose);
  root.finish();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  return parse_config(read_json_file(path), std::filesystem::path(path).parent_path());
}

// Wall shape summaries sampled on a uniform x1 grid.
struct WallMetrics {
  double mean_height = 0.0;   // mean wall-to-wall gap
  double flatness = 0.0;      // max over walls of max |x2 - mean x2|
  double asymmetry = 0.0;     // max |x2+ + x2-|
  double gap_max = 0.0, gap_min = 0.0;
  double gap_max_x1 = 0.0;    // abscissa of the widest gap
};

inline WallMetrics wall_metrics(const Problem& p, int samples = 512) {
  const Walls w = p.walls();
  const double L = p.spline.L;
  std::vector<double> up(samples), lo(samples);
  for (int i = 0; i < samples; ++i) {
    const double x1 = L * i / samples;
    up[i] = ShapeOptProblem::wall_height_at(*w.upper, x1);
    lo[i] = ShapeOptProblem::wall_height_at(*w.lower, x1);
  }
  WallMetrics m;
  double mu = 0.0, ml = 0.0;
  for (int i = 0; i < samples; ++i) {
    mu += up[i] / samples;
    ml += lo[i] / samples;
  }
  m.mean_height = mu - ml;
  m.gap_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    m.flatness = std::max({m.flatness, std::abs(up[i] - mu), std::abs(lo[i] - ml)});
    m.asymmetry = std::max(m.asymmetry, std::abs(up[i] + lo[i]));
    const double gap = up[i] - lo[i];
    if (gap > m.gap_max) {
      m.gap_max = gap;
      m.gap_max_x1 = L * i / samples;
    }
    m.gap_min = std::min(m.gap_min, gap);
  }
  return m;
}

// Periodic distance between two abscissae.
inline double periodic_distance(double a, double b, double L) {
  double d = std::fmod(std::abs(a - b), L);
  return std::min(d, L - d);
}

inline json to_json(const FunctionalValues& v) {
  return {{"J_W", v.JW}, {"D", v.D}, {"V", v.V}, {"Q", v.Q}, {"C", v.C}};
}

inline json to_json(const WallMetrics& m) {
  return {{"mean_height", m.mean_height}, {"flatness", m.flatness},     {"asymmetry", m.asymmetry},
          {"gap_max", m.gap_max},         {"gap_min", m.gap_min},       {"gap_max_x1", m.gap_max_x1}};
}

inline json to_json(const ClosureDiagnostics& d) {
  return {{"h_norm", d.h_norm}, {"net_force", d.net_force},         {"net_torque", d.net_torque},
          {"power", d.power},   {"flux_mismatch", d.flux_mismatch}, {"opening", d.opening}};
}

struct CommandOptions {
  std::string out;             // overrides the config output directory when set
  int threads = 0;             // 0: all cores
  double eta = 0.0;            // overrides the config FD step when positive
  bool verbose = false;
  std::ostream* log = &std::cerr;
};

namespace cli_detail {

inline std::filesystem::path out_dir(const RunConfig& c, const CommandOptions& o) {
  std::filesystem::path d = o.out.empty() ? c.out : o.out;
  std::filesystem::create_directories(d);
  return d;
}

inline int threads(const CommandOptions& o) {
  if (o.threads > 0) return o.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

inline std::ofstream open(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << std::setprecision(17);
  return f;
}

inline void write_json(const std::filesystem::path& p, const json& j) { open(p) << j.dump(2) << "\n"; }

// Per-step solve records written with --verbose.
class SolveLog {
 public:
  SolveLog(const std::filesystem::path& dir, bool on) {
    if (on) f_ = open(dir / "solves.jsonl");
  }
  void add(const json& rec) {
    if (f_.is_open()) f_ << rec.dump() << "\n";
  }
  bool on() const { return f_.is_open(); }

 private:
  std::ofstream f_;
};

inline json step_record(int n, const StepRecord& r) {
  return {{"step", n},
          {"t", r.t},
          {"residual", r.residual},
          {"c", {r.centroid.x(), r.centroid.y()}},
          {"phi", r.q.phi},
          {"w", {r.v.w.x(), r.v.w.y()}},
          {"rho", r.v.rho}};
}

inline ForwardTrajectory forward(const RunConfig& c, SolveLog& slog, bool bases) {
  EvolutionOptions eo;
  eo.adjoint_bases = bases;
  eo.on_step = [&](int n, const StepRecord& r) { slog.add(step_record(n, r)); };
  return run_forward(c.problem.geometry(), c.problem.particle, c.problem.grid, eo);
}

inline void write_trajectory(const std::filesystem::path& p, const ForwardTrajectory& traj) {
  auto f = open(p);
  f << "t,c1,c2,phi,w1,w2,rho\n";
  for (const auto& s : traj.steps)
    f << s.t << "," << s.centroid.x() << "," << s.centroid.y() << "," << s.q.phi << "," << s.v.w.x() << ","
      << s.v.w.y() << "," << s.v.rho << "\n";
}

}  // namespace cli_detail

// One instantaneous solve in the initial configuration.
inline int cmd_solve(const RunConfig& c, const CommandOptions& o) {
  using namespace cli_detail;
  const auto dir = out_dir(c, o);
  const auto geo = c.problem.geometry();
  const InstantSystem sys(geo, ParticleState{c.problem.particle, {}});
  InstantBC bc;
  bc.u_wall = wall_slip(*geo);
  const FlowSolution s = sys.solve(bc);

  auto f = open(dir / "traces.csv");
  f << "boundary,index,x1,x2,u1,u2,f1,f2,p\n";
  const char* names[2] = {"upper", "lower"};
  double umax = 0.0;
  for (int w = 0; w < 2; ++w) {
    const auto& m = geo->wall(w);
    for (int i = 0; i < m.size(); ++i) {
      const int k = geo->wall_offset(w) + i;
      const Vec2& u = s.u_wall[k];
      const Vec2& t = s.f_wall[k];
      umax = std::max(umax, (u + Vec2(1.0, 0.0)).norm());
      f << names[w] << "," << i << "," << m.x[i].x() << "," << m.x[i].y() << "," << u.x() << "," << u.y() << ","
        << t.x() << "," << t.y() << "," << s.p_wall[k] << "\n";
    }
  }
  const auto& pm = sys.particle_mesh();
  for (int i = 0; i < pm.size(); ++i) {
    const Vec2& u = s.u_particle[i];
    const Vec2& h = s.h_particle[i];
    umax = std::max(umax, (u + Vec2(1.0, 0.0)).norm());
    f << "particle," << i << "," << pm.x[i].x() << "," << pm.x[i].y() << "," << u.x() << "," << u.y() << ","
      << h.x() << "," << h.y() << ",\n";
  }
  json d = {{"residual", s.residual},
            {"max_lab_velocity", umax},
            {"motion", {{"w", {s.motion.w.x(), s.motion.w.y()}}, {"rho", s.motion.rho}}},
            {"flux0", s.flux0},
            {"fluxL", s.fluxL},
            {"closure", to_json(closure_diagnostics(sys, s))},
            {"setup_seconds", sys.setup_seconds()},
            {"solve_seconds", s.solve_seconds}};
  write_json(dir / "diagnostics.json", d);
  SolveLog slog(dir, o.verbose || c.verbose);
  slog.add({{"step", 0}, {"residual", s.residual}, {"setup_seconds", sys.setup_seconds()},
            {"solve_seconds", s.solve_seconds}});
  *o.log << "solve: residual " << s.residual << ", max|u + e1| " << umax << "\n";
  return kExitOk;
}

inline int cmd_forward(const RunConfig& c, const CommandOptions& o) {
  using namespace cli_detail;
  const auto dir = out_dir(c, o);
  SolveLog slog(dir, o.verbose || c.verbose);
  const ForwardTrajectory traj = forward(c, slog, false);
  write_trajectory(dir / "trajectory.csv", traj);
  const FunctionalValues v = functionals(traj);
  write_json(dir / "functionals.json", to_json(v));
  *o.log << "forward: J_W " << v.JW << ", D " << v.D << ", Q " << v.Q << "\n";
  return kExitOk;
}

// Forward run, the three adjoint recursions and the analytic gradients.
inline int cmd_adjoint(const RunConfig& c, const CommandOptions& o) {
  using namespace cli_detail;
  const auto dir = out_dir(c, o);
  SolveLog slog(dir, o.verbose || c.verbose);
  const ForwardTrajectory traj = forward(c, slog, true);
  write_trajectory(dir / "trajectory.csv", traj);
  write_json(dir / "functionals.json", to_json(functionals(traj)));
  auto f = open(dir / "adjoint.csv");
  f << "functional,t,F1,F2,T,w1,w2,rho\n";
  for (Functional fn : {Functional::Dissipation, Functional::NetMotion, Functional::MassFlow}) {
    const AdjointTrajectory adj = run_adjoint(traj, fn);
    for (std::size_t n = 0; n < adj.steps.size(); ++n) {
      const auto& a = adj.steps[n];
      f << to_string(fn) << "," << traj.steps[n].t << "," << a.force_target.x() << "," << a.force_target.y() << ","
        << a.torque_target << "," << a.traces.motion.w.x() << "," << a.traces.motion.w.y() << ","
        << a.traces.motion.rho << "\n";
    }
  }
  const ShapeGradient G = shape_gradient(c.problem, traj, {true, true, true});
  auto vec = [](const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  write_json(dir / "gradient.json",
             {{"J_W", vec(G.JW)}, {"D", vec(G.D)}, {"V", vec(G.V)}, {"C", vec(G.C)}, {"Q", vec(G.Q)}});
  *o.log << "adjoint: gradients of J_W, D, V, C, Q written\n";
  return kExitOk;
}

struct GradientCheckRow {
  int direction = 0;
  std::string functional;
  double analytic = 0.0, fd = 0.0, abs_diff = 0.0, rel_diff = 0.0;
  bool pass = true;
};

// Compares analytic and central-difference gradients along every direction.
inline std::vector<GradientCheckRow> gradient_check_rows(const RunConfig& c, double eta, int threads) {
  const Evaluation e = evaluate(c.problem);
  const auto& names = c.gradient_check.functionals;
  const bool mf = std::count(names.begin(), names.end(), "C") || std::count(names.begin(), names.end(), "Q");
  const ShapeGradient G = shape_gradient(c.problem, e.traj, {true, true, mf});
  const auto fd = fd_gradients(c.problem, eta, threads);
  std::vector<GradientCheckRow> rows;
  for (const auto& name : names) {
    const VecX& g = name == "JW" ? G.JW : name == "D" ? G.D : name == "V" ? G.V : name == "C" ? G.C : G.Q;
    for (int j = 0; j < g.size(); ++j) {
      const FunctionalValues& v = fd[j];
      const double d = name == "JW" ? v.JW : name == "D" ? v.D : name == "V" ? v.V : name == "C" ? v.C : v.Q;
      GradientCheckRow r;
      r.direction = j;
      r.functional = name;
      r.analytic = g(j);
      r.fd = d;
      r.abs_diff = std::abs(g(j) - d);
      const bool absolute = std::abs(d) < c.gradient_check.floor;
      r.rel_diff = absolute ? r.abs_diff : r.abs_diff / std::abs(d);
      r.pass = absolute ? r.abs_diff <= c.gradient_check.floor : r.rel_diff <= c.gradient_check.threshold;
      rows.push_back(r);
    }
  }
  return rows;
}

inline int cmd_gradient_check(const RunConfig& c, const CommandOptions& o) {
  using namespace cli_detail;
  const auto dir = out_dir(c, o);
  const double eta = o.eta > 0.0 ? o.eta : c.gradient_check.eta;
  const auto rows = gradient_check_rows(c, eta, threads(o));
  auto f = open(dir / "gradient_check.csv");
  f << "direction-index,functional,analytic,fd,abs-diff,rel-diff\n";
  std::vector<std::string> bad;
  for (const auto& r : rows) {
    f << r.direction << "," << r.functional << "," << r.analytic << "," << r.fd << "," << r.abs_diff << ","
      << r.rel_diff << "\n";
    if (!r.pass) bad.push_back(r.functional + "[" + std::to_string(r.direction) + "]");
  }
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.rel_diff);
  *o.log << "gradient-check: eta " << eta << ", " << rows.size() << " entries, max rel-diff " << worst << "\n";
  if (!bad.empty()) {
    *o.log << "gradient-check: threshold " << c.gradient_check.threshold << " exceeded at";
    for (const auto& b : bad) *o.log << " " << b;
    *o.log << "\n";
    return kExitGradientCheck;
  }
  return kExitOk;
}

inline const char* to_string(AlBranch b) {
  switch (b) {
    case AlBranch::UpdateMultiplier: return "update_multiplier";
    case AlBranch::IncreasePenalty: return "increase_penalty";
    case AlBranch::Converged: return "converged";
  }
  return "?";
}

inline int cmd_optimize(const RunConfig& c, const CommandOptions& o) {
  using namespace cli_detail;
  const auto dir = out_dir(c, o);
  const auto shapes = dir / "shapes";
  std::filesystem::create_directories(shapes);
  ShapeOptProblem sp;
  sp.base = c.problem;
  sp.V0 = c.V0;
  sp.D0 = c.D0;
  const FunctionalValues initial = evaluate(c.problem, false).values;

  auto hist = open(dir / "history.csv");
  hist << "outer-iter,inner-iter,J_W,C_V,C_D,|g|,sigma,lambda1,lambda2\n";
  int snapshot = 0;
  AlCallbacks cb;
  cb.on_iterate = [&](const AlHistoryRow& r, const VecX& x) {
    hist << r.outer << "," << r.inner << "," << r.f << "," << r.cV << "," << r.cD << "," << r.gnorm << ","
         << r.sigma << "," << r.lambda1 << "," << r.lambda2 << std::endl;
    json s = shape_to_json(c.problem.spline, std::vector<double>(x.data(), x.data() + x.size()));
    s["outer"] = r.outer;
    s["inner"] = r.inner;
    std::ostringstream name;
    name << "iter_" << std::setw(5) << std::setfill('0') << snapshot++ << ".json";
    write_json(shapes / name.str(), s);
    if (o.verbose || c.verbose)
      *o.log << "optimize: outer " << r.outer << " inner " << r.inner << " J_W " << r.f << " C_V " << r.cV
             << " C_D " << r.cD << "\n";
  };
  json branches = json::array();
  cb.on_outer = [&](AlBranch b, const AlState& s) {
    branches.push_back({{"branch", to_string(b)}, {"sigma", s.sigma}, {"zeta", s.zeta},
                        {"lambda", {s.lambda1, s.lambda2}}});
  };
  const VecX x0 = Eigen::Map<const VecX>(c.problem.ps.data(), c.problem.ps.size());
  const AlResult res = optimize_al([&](const VecX& x) { return sp.evaluate(x); }, x0, c.optimizer, cb);

  const std::vector<double> ps(res.x.data(), res.x.data() + res.x.size());
  write_json(dir / "shape_final.json", shape_to_json(c.problem.spline, ps));
  const Problem fin = c.problem.with_ps(ps);
  const WallMetrics wm = wall_metrics(fin);
  json inner = json::array();
  for (auto s : res.inner_status) inner.push_back(to_string(s));
  json summary = {{"converged", res.converged},
                  {"J_W", res.at_x.f},
                  {"J_W_initial", initial.JW},
                  {"C_V", res.at_x.cV},
                  {"C_D", res.at_x.cD},
                  {"outer_iterations", res.state.outer},
                  {"inner_iterations", res.inner_iterations},
                  {"sigma", res.state.sigma},
                  {"lambda", {res.state.lambda1, res.state.lambda2}},
                  {"branches", branches},
                  {"inner_status", inner},
                  {"walls", to_json(wm)},
                  {"bolus_offset", periodic_distance(wm.gap_max_x1, c.problem.particle.center0.x(), c.problem.spline.L)}};
  write_json(dir / "summary.json", summary);
  *o.log << "optimize: " << (res.converged ? "converged" : "outer cap reached") << ", J_W " << res.at_x.f
         << ", C_V " << res.at_x.cV << ", C_D " << res.at_x.cD << "\n";
  return res.converged ? kExitOk : kExitOuterCap;
}

// Runs a command and maps failures to exit codes.
inline int run_command(const std::string& cmd, const std::string& config_path, const CommandOptions& o) {
  try {
    const RunConfig c = load_config(config_path);
    if (cmd == "solve") return cmd_solve(c, o);
    if (cmd == "forward") return cmd_forward(c, o);
    if (cmd == "adjoint") return cmd_adjoint(c, o);
    if (cmd == "gradient-check") return cmd_gradient_check(c, o);
    if (cmd == "optimize") return cmd_optimize(c, o);
    throw ConfigError("unknown command '" + cmd + "'");
  } catch (const ConfigError& e) {
    *o.log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContactError& e) {
    *o.log << "near contact: " << e.what() << "\n";
    return kExitContact;
  } catch (const SolverError& e) {
    *o.log << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    *o.log << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace peri
