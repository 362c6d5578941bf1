#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "force_field.hpp"
#include "hydro_coeffs.hpp"
#include "kinetic_sim.hpp"
#include "rng.hpp"
#include "spde_sim.hpp"
#include "stats.hpp"
#include "torus_field.hpp"

namespace kdiff {

inline constexpr const char* code_version = "0.1.0";

namespace detail {

inline std::string fmt_double(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s)
{
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline double to_double(const std::string& key, const std::string& v)
{
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return d;
}

inline long long to_int(const std::string& key, const std::string& v)
{
  std::size_t pos = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  return d;
}

inline std::vector<double> to_list(const std::string& key, const std::string& v)
{
  std::vector<double> out;
  if (trim(v).empty()) return out;
  for (const auto& t : split(v, ',')) out.push_back(to_double(key, t));
  return out;
}

inline std::string join(const std::vector<double>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

inline std::uint64_t fnv1a(const std::string& bytes)
{
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline std::string hex64(std::uint64_t v)
{
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string checksum(const std::string& bytes) { return hex64(detail::fnv1a(bytes)); }

struct ExperimentConfig
{
  std::string scenario = "desk";

  std::string model_kind = "two_point";  // two_point | rotating_phase | zero | sign_cube | ou
  int dim = 1;
  std::vector<double> amplitudes{0.5};
  int wavenumber = 1;
  std::string basis;  // sign_cube / ou: "cos:k1,..:d1,..;sin:..."
  double radius = 0.0;
  double sobolev_order = 0.0;
  double ou_dt = 0.005;
  int resolvent_replicates = 256;

  Collision collision = Collision::LB;
  int grid = 64;
  std::vector<double> epsilons{0.5, 0.35, 0.25};
  double horizon = 0.05;

  double kinetic_dt_factor = 0.1;
  std::size_t particles = 200000;
  std::size_t kinetic_realizations = 256;
  int kinetic_checkpoints = 5;
  Estimator estimator = Estimator::histogram;

  double rho_amplitude = 0.5;

  std::size_t n_mc = 2000;
  double tol_eig = -1.0;

  double spde_dt = 2e-5;
  int spde_cutoff = -1;
  std::size_t spde_realizations = 256;
  double implicit_weight = 1.0;

  std::uint64_t seed = 1;
  std::string out = "out";

  std::string serialize() const
  {
    using detail::fmt_double;
    std::ostringstream os;
    os << "scenario = " << scenario << "\n"
       << "model.kind = " << model_kind << "\n"
       << "model.dim = " << dim << "\n"
       << "model.amplitudes = " << detail::join(amplitudes) << "\n"
       << "model.wavenumber = " << wavenumber << "\n"
       << "model.basis = " << basis << "\n"
       << "model.radius = " << fmt_double(radius) << "\n"
       << "model.sobolev_order = " << fmt_double(sobolev_order) << "\n"
       << "model.ou_dt = " << fmt_double(ou_dt) << "\n"
       << "model.resolvent_replicates = " << resolvent_replicates << "\n"
       << "collision = " << collision_name(collision) << "\n"
       << "grid = " << grid << "\n"
       << "epsilons = " << detail::join(epsilons) << "\n"
       << "horizon = " << fmt_double(horizon) << "\n"
       << "kinetic.dt_factor = " << fmt_double(kinetic_dt_factor) << "\n"
       << "kinetic.particles = " << particles << "\n"
       << "kinetic.realizations = " << kinetic_realizations << "\n"
       << "kinetic.checkpoints = " << kinetic_checkpoints << "\n"
       << "kinetic.estimator = " << (estimator == Estimator::histogram ? "histogram" : "fourier") << "\n"
       << "rho.amplitude = " << fmt_double(rho_amplitude) << "\n"
       << "coeffs.n_mc = " << n_mc << "\n"
       << "coeffs.tol_eig = " << fmt_double(tol_eig) << "\n"
       << "spde.dt = " << fmt_double(spde_dt) << "\n"
       << "spde.cutoff = " << spde_cutoff << "\n"
       << "spde.realizations = " << spde_realizations << "\n"
       << "spde.implicit_weight = " << fmt_double(implicit_weight) << "\n"
       << "seed = " << seed << "\n"
       << "out = " << out << "\n";
    return os.str();
  }

  void set(const std::string& key, const std::string& v)
  {
    using detail::to_double;
    using detail::to_int;
    auto to_size = [&](const std::string& s) {
      long long n = to_int(key, s);
      if (n < 0) throw std::invalid_argument("config: " + key + " must be non-negative");
      return static_cast<std::size_t>(n);
    };
    if (key == "scenario") scenario = v;
    else if (key == "model.kind") model_kind = v;
    else if (key == "model.dim") dim = static_cast<int>(to_int(key, v));
    else if (key == "model.amplitudes") amplitudes = detail::to_list(key, v);
    else if (key == "model.wavenumber") wavenumber = static_cast<int>(to_int(key, v));
    else if (key == "model.basis") basis = v;
    else if (key == "model.radius") radius = to_double(key, v);
    else if (key == "model.sobolev_order") sobolev_order = to_double(key, v);
    else if (key == "model.ou_dt") ou_dt = to_double(key, v);
    else if (key == "model.resolvent_replicates") resolvent_replicates = static_cast<int>(to_int(key, v));
    else if (key == "collision") collision = parse_collision(v);
    else if (key == "grid") grid = static_cast<int>(to_int(key, v));
    else if (key == "epsilons") epsilons = detail::to_list(key, v);
    else if (key == "horizon") horizon = to_double(key, v);
    else if (key == "kinetic.dt_factor") kinetic_dt_factor = to_double(key, v);
    else if (key == "kinetic.particles") particles = to_size(v);
    else if (key == "kinetic.realizations") kinetic_realizations = to_size(v);
    else if (key == "kinetic.checkpoints") kinetic_checkpoints = static_cast<int>(to_int(key, v));
    else if (key == "kinetic.estimator") {
      if (v == "histogram") estimator = Estimator::histogram;
      else if (v == "fourier") estimator = Estimator::fourier;
      else throw std::invalid_argument("config: kinetic.estimator must be histogram or fourier");
    }
    else if (key == "rho.amplitude") rho_amplitude = to_double(key, v);
    else if (key == "coeffs.n_mc") n_mc = to_size(v);
    else if (key == "coeffs.tol_eig") tol_eig = to_double(key, v);
    else if (key == "spde.dt") spde_dt = to_double(key, v);
    else if (key == "spde.cutoff") spde_cutoff = static_cast<int>(to_int(key, v));
    else if (key == "spde.realizations") spde_realizations = to_size(v);
    else if (key == "spde.implicit_weight") implicit_weight = to_double(key, v);
    else if (key == "seed") {
      if (v.empty() || v[0] == '-') throw std::invalid_argument("config: seed must be an unsigned integer");
      std::size_t pos = 0;
      seed = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("config: seed must be an unsigned integer");
    }
    else if (key == "out") out = v;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }

  static ExperimentConfig parse(std::istream& is)
  {
    ExperimentConfig c;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      auto h = line.find('#');
      if (h != std::string::npos) line = line.substr(0, h);
      line = detail::trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
      c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return c;
  }

  static ExperimentConfig parse_string(const std::string& s)
  {
    std::istringstream is(s);
    return parse(is);
  }

  std::uint64_t hash() const { return detail::fnv1a(serialize()); }
  bool operator==(const ExperimentConfig& o) const { return serialize() == o.serialize(); }

  TorusGrid torus() const { return TorusGrid(dim, grid); }
  double kinetic_dt(double eps) const { return kinetic_dt_factor * eps * eps; }
  std::vector<double> checkpoint_times() const
  {
    std::vector<double> t;
    for (int i = 1; i <= kinetic_checkpoints; ++i) t.push_back(horizon * i / kinetic_checkpoints);
    return t;
  }

  void validate() const;
};

// "cos:1,0:1,0;sin:0,1:1,1"
inline std::vector<BasisField> parse_basis(const std::string& s, int dim)
{
  std::vector<BasisField> out;
  for (const auto& entry : detail::split(s, ';')) {
    if (entry.empty()) continue;
    auto parts = detail::split(entry, ':');
    if (parts.size() != 3 || (parts[0] != "cos" && parts[0] != "sin"))
      throw std::invalid_argument("config: basis entry '" + entry + "' must read cos|sin:k1,..:d1,..");
    std::vector<int> k;
    for (double v : detail::to_list("model.basis", parts[1])) k.push_back(static_cast<int>(v));
    auto d = detail::to_list("model.basis", parts[2]);
    if (static_cast<int>(k.size()) != dim || static_cast<int>(d.size()) != dim)
      throw std::invalid_argument("config: basis entry '" + entry + "' has the wrong dimension");
    out.push_back(parts[0] == "cos" ? cos_mode(k, d) : sin_mode(k, d));
  }
  return out;
}

inline ForceFieldModel build_model(const ExperimentConfig& c)
{
  const double s = c.sobolev_order > 0 ? c.sobolev_order : -1.0;
  auto amp0 = [&] {
    if (c.amplitudes.empty()) throw std::invalid_argument("config: model.amplitudes is empty");
    return c.amplitudes[0];
  };
  ForceFieldModel m;
  if (c.model_kind == "two_point") {
    std::vector<int> k(c.dim, 0);
    std::vector<double> d(c.dim, 0.0);
    k[0] = c.wavenumber;
    d[0] = 1.0;
    m = two_point_model(c.dim, amp0(), k, d, s);
  } else if (c.model_kind == "rotating_phase") {
    if (c.dim != 1) throw std::invalid_argument("config: rotating_phase requires model.dim = 1");
    m = rotating_phase_model(amp0(), c.wavenumber);
  } else if (c.model_kind == "zero") {
    m = zero_model(c.dim);
  } else if (c.model_kind == "sign_cube" || c.model_kind == "ou") {
    auto basis = parse_basis(c.basis, c.dim);
    if (basis.empty()) throw std::invalid_argument("config: model.basis is empty");
    if (basis.size() != c.amplitudes.size())
      throw std::invalid_argument("config: model.amplitudes must match model.basis in length");
    m = c.model_kind == "sign_cube" ? sign_cube_model(c.dim, basis, c.amplitudes, s)
                                    : ou_model(c.dim, basis, c.amplitudes, c.radius, s);
  } else {
    throw std::invalid_argument("config: unknown model.kind '" + c.model_kind + "'");
  }
  if (c.radius > 0.0 && c.model_kind != "ou") {
    m.ball_radius = std::max(m.ball_radius, c.radius);
  }
  m.resolvent_replicates = c.resolvent_replicates;
  return m;
}

inline void ExperimentConfig::validate() const
{
  TorusGrid g(dim, grid);
  if (g.size() * dim > 256) throw std::invalid_argument("config: N * M^N must not exceed 256 for the noise spectrum");
  build_model(*this);
  if (epsilons.empty()) throw std::invalid_argument("config: epsilons is empty");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0.0 && epsilons[i] <= 1.0)) throw std::invalid_argument("config: epsilons must lie in (0,1]");
    if (i && !(epsilons[i] < epsilons[i - 1])) throw std::invalid_argument("config: epsilons must be strictly decreasing");
  }
  if (!(horizon > 0.0)) throw std::invalid_argument("config: horizon must be positive");
  if (!(kinetic_dt_factor > 0.0 && kinetic_dt_factor <= 0.1))
    throw std::invalid_argument("config: kinetic.dt_factor must lie in (0, 0.1]");
  if (particles == 0) throw std::invalid_argument("config: kinetic.particles must be positive");
  if (kinetic_realizations < 2 || spde_realizations < 2)
    throw std::invalid_argument("config: realization counts must be at least 2");
  if (kinetic_checkpoints < 1) throw std::invalid_argument("config: kinetic.checkpoints must be positive");
  if (std::abs(rho_amplitude) > 1.0) throw std::invalid_argument("config: |rho.amplitude| > 1 gives a negative density");
  if (n_mc < 100) throw std::invalid_argument("config: coeffs.n_mc must be at least 100");
  if (!(spde_dt > 0.0)) throw std::invalid_argument("config: spde.dt must be positive");
  if (!(implicit_weight >= 0.5 && implicit_weight <= 1.0))
    throw std::invalid_argument("config: spde.implicit_weight must lie in [0.5, 1]");
  if (!(ou_dt > 0.0)) throw std::invalid_argument("config: model.ou_dt must be positive");
  if (resolvent_replicates < 1) throw std::invalid_argument("config: model.resolvent_replicates must be positive");
}

// 1 + amp cos(2 pi x_0)
inline TrigPolynomial initial_density(const ExperimentConfig& c)
{
  TrigPolynomial p = TrigPolynomial::constant_one(c.dim);
  if (c.rho_amplitude != 0.0) {
    std::vector<int> k(c.dim, 0);
    k[0] = 1;
    p.terms.push_back({k, c.rho_amplitude, 0.0});
  }
  return p;
}

inline std::uint64_t stage_seed(std::uint64_t seed, const char* stage) { return stream_key({seed, hash_string(stage)}); }

struct RunManifest
{
  std::string config_hash;
  std::string version = code_version;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> files;  // name, checksum

  void write(std::ostream& os) const
  {
    os << "config_hash = " << config_hash << "\n"
       << "code_version = " << version << "\n";
    for (const auto& [k, v] : seeds) os << "seed." << k << " = " << v << "\n";
    for (const auto& [f, c] : files) os << "file " << f << " fnv1a64=" << c << "\n";
  }
};

inline SpdeOptions spde_options(const ExperimentConfig& c)
{
  SpdeOptions o;
  o.cutoff = c.spde_cutoff;
  o.implicit_weight = c.implicit_weight;
  return o;
}

// Samples of <rho^eps_T, xi> over independent (force path, collision noise, initial draw) triples.
inline std::vector<std::vector<double>> kinetic_law_samples(const ExperimentConfig& c, const ForceFieldModel& m,
                                                             double eps, const std::vector<TrigPolynomial>& xis,
                                                             std::size_t n_real, std::uint64_t seed,
                                                             const std::function<void(std::size_t)>& progress = nullptr)
{
  KineticRunConfig kc;
  kc.collision = c.collision;
  kc.epsilon = eps;
  kc.horizon = c.horizon;
  kc.dt = c.kinetic_dt(eps);
  kc.n_particles = c.particles;
  kc.grid = c.torus();
  kc.record_moments = false;
  kc.validate();
  const auto rho_in = initial_density(c);
  std::vector<std::vector<double>> out(xis.size(), std::vector<double>(n_real));
  for (std::size_t r = 0; r < n_real; ++r) {
    auto path = generate_path(m, kc.micro_horizon(), c.ou_dt, stream_key({seed, hash_string("kinetic_path"), r}));
    auto ens = sample_initial(c.dim, c.collision, eps, rho_in, c.particles,
                              stream_key({seed, hash_string("kinetic_init"), r}));
    auto run = run_rescaled(kc, path, std::move(ens), stream_key({seed, hash_string("kinetic_noise"), r}));
    for (std::size_t j = 0; j < xis.size(); ++j) out[j][r] = empirical_pairing(run.final_state, xis[j]);
    if (progress) progress(r);
  }
  return out;
}

struct LawGap
{
  double epsilon = 0.0;
  std::size_t xi = 0;
  SampleStats kinetic, spde;
  double mean_gap = 0.0, mean_gap_se = 0.0;
  double var_gap = 0.0, var_gap_se = 0.0;
  double ks = 0.0, ks_p = 1.0;
};

inline LawGap compare_laws(double eps, std::size_t xi, const std::vector<double>& kin, const std::vector<double>& spde)
{
  if (kin.size() < 64 || spde.size() < 64) throw std::invalid_argument("converge: fewer than 64 samples per law");
  LawGap g;
  g.epsilon = eps;
  g.xi = xi;
  g.kinetic = sample_stats(kin);
  g.spde = sample_stats(spde);
  g.mean_gap = std::abs(g.kinetic.mean - g.spde.mean);
  g.mean_gap_se = std::hypot(g.kinetic.stderr_mean(), g.spde.stderr_mean());
  g.var_gap = std::abs(g.kinetic.variance - g.spde.variance);
  g.var_gap_se = std::hypot(g.kinetic.stderr_variance(), g.spde.stderr_variance());
  const double spread = std::max(g.kinetic.variance, g.spde.variance);
  if (spread > 1e-24) {
    g.ks = ks_statistic(kin, spde);
    g.ks_p = ks_pvalue(g.ks, kin.size(), spde.size());
  }
  return g;
}

struct ConvergenceReport
{
  std::vector<double> epsilons;
  std::vector<std::vector<LawGap>> gaps;  // [eps][xi]

  // gap(eps_{i+1}) <= gap(eps_i) + SE(eps_{i+1}) for every consecutive pair
  bool mean_trend(std::size_t xi) const
  {
    for (std::size_t i = 1; i < gaps.size(); ++i)
      if (gaps[i][xi].mean_gap > gaps[i - 1][xi].mean_gap + gaps[i][xi].mean_gap_se) return false;
    return true;
  }
  bool var_trend(std::size_t xi) const
  {
    for (std::size_t i = 1; i < gaps.size(); ++i)
      if (gaps[i][xi].var_gap > gaps[i - 1][xi].var_gap + gaps[i][xi].var_gap_se) return false;
    return true;
  }
  bool trends_ok() const
  {
    if (gaps.empty()) return false;
    for (std::size_t j = 0; j < gaps[0].size(); ++j)
      if (!mean_trend(j) || !var_trend(j)) return false;
    return true;
  }
};

inline ConvergenceReport converge_laws(const ExperimentConfig& c, const ForceFieldModel& m, const HydroCoefficients& h,
                                       const CovOperator& cov, std::ostream* log = nullptr)
{
  if (c.epsilons.size() < 3) throw std::invalid_argument("converge: at least three epsilon values required");
  if (c.kinetic_realizations < 64 || c.spde_realizations < 64)
    throw std::invalid_argument("converge: fewer than 64 samples per law");
  const auto xis = default_test_functions(c.dim);
  auto op = make_spde_operator(h, cov, spde_options(c));
  auto ens = run_ensemble(op, initial_density(c).on_grid(h.grid), c.horizon, c.spde_dt, c.spde_realizations,
                          stage_seed(c.seed, "spde"), xis);
  const auto& spde_samples = ens.checkpoints.back().samples;
  ConvergenceReport rep;
  rep.epsilons = c.epsilons;
  for (double eps : c.epsilons) {
    if (log) *log << "converge: eps=" << eps << " kinetic realizations=" << c.kinetic_realizations << std::endl;
    auto kin = kinetic_law_samples(c, m, eps, xis, c.kinetic_realizations, stage_seed(c.seed, "kinetic"));
    std::vector<LawGap> row;
    for (std::size_t j = 0; j < xis.size(); ++j) row.push_back(compare_laws(eps, j, kin[j], spde_samples[j]));
    rep.gaps.push_back(std::move(row));
  }
  return rep;
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& r)
{
  os << "eps,xi,kin_mean,spde_mean,mean_gap,mean_gap_se,kin_var,spde_var,var_gap,var_gap_se,ks,ks_p\n"
     << std::setprecision(17);
  for (const auto& row : r.gaps)
    for (const auto& g : row)
      os << g.epsilon << "," << g.xi << "," << g.kinetic.mean << "," << g.spde.mean << "," << g.mean_gap << ","
         << g.mean_gap_se << "," << g.kinetic.variance << "," << g.spde.variance << "," << g.var_gap << ","
         << g.var_gap_se << "," << g.ks << "," << g.ks_p << "\n";
}

// Identity suite.

struct IdentityCheck
{
  std::string name;
  double observed = 0.0, predicted = 0.0, tolerance = 0.0;
  bool pass = false;
  std::string note;
};

namespace detail {

inline IdentityCheck check(std::string name, double obs, double pred, double tol, std::string note = "")
{
  return {std::move(name), obs, pred, tol, std::abs(obs - pred) <= tol, std::move(note)};
}

// K# from the law by enumeration; renewal resolvents are e / (1 + lambda)
inline TorusField enumerated_k_sharp(const ForceFieldModel& m, int b, const TorusGrid& g)
{
  const int d = g.dim;
  TorusField k(g, Rank::matrix);
  for (std::size_t p = 0; p < g.size(); ++p)
    for (int i = 0; i < d; ++i) k.at(p, i * d + i) = 1.0;
  const double f = 1.0 + 0.5 * (b - 1);
  for (std::size_t a = 0; a < m.atoms.size(); ++a) {
    TorusField e = m.field(m.atoms[a].data(), g);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) k.at(p, i * d + j) += m.probs[a] * f * e.at(p, i) * e.at(p, j);
  }
  return k;
}

}  // namespace detail

struct ValidationInputs
{
  const HydroCoefficients* coefficients = nullptr;  // from the CSV contract when present
  std::size_t invariant_paths = 2000;
  std::size_t moment_particles = 20000;
  std::size_t sympos_samples = 2000;
};

inline std::vector<IdentityCheck> validation_suite(const ExperimentConfig& c, const ValidationInputs& in = {})
{
  using detail::check;
  std::vector<IdentityCheck> out;
  const auto m = build_model(c);
  const TorusGrid g = c.torus();
  const int b = collision_b(c.collision);
  const std::uint64_t seed = stage_seed(c.seed, "validate");

  {
    const double pairs[3][4] = {{0.3, -0.4, 1.0, 0.2}, {1.5, 0.7, -0.9, 1.1}, {-2.0, 0.5, 0.4, -1.7}};
    double worst = 0.0;
    bool l1 = true;
    for (const auto& p : pairs) {
      auto r = gaussian_identities_check({p[0], p[1]}, {p[2], p[3]});
      worst = std::max(worst, r.max_rel_error);
      l1 = l1 && r.l1_bound_holds;
    }
    out.push_back(check("gaussian_identities_rel_error", worst, 0.0, 1e-6));
    out.push_back(check("gaussian_l1_bound", l1 ? 1.0 : 0.0, 1.0, 0.0));
  }

  if (m.kind == ForceKind::renewal) {
    double worst = 0.0;
    for (const auto& at : m.atoms) {
      ForceSample e{at, {}, m.ball_radius};
      auto r0 = resolvent_coeffs(m, 0.0, e, 0), r1 = resolvent_coeffs(m, 1.0, e, 0);
      for (std::size_t l = 0; l < at.size(); ++l) {
        worst = std::max(worst, std::abs(r0[l] - at[l]));
        worst = std::max(worst, std::abs(r1[l] - 0.5 * at[l]));
        worst = std::max(worst, std::abs((r0[l] - r1[l]) - 0.5 * at[l]));
      }
    }
    out.push_back(check("renewal_resolvent_closed_forms", worst, 0.0, 0.0));
  }

  HydroCoefficients fresh;
  const HydroCoefficients* h = in.coefficients;
  // sympos is not part of the CSV contract, so it always comes from a fresh estimate
  fresh = compute_coefficients(m, c.collision, g, c.n_mc, stage_seed(c.seed, "coeffs"));
  if (!h) h = &fresh;
  if (h->grid != g) throw std::invalid_argument("validate: coefficient grid differs from the config");
  auto cov = compute_cov_operator(m, g, c.n_mc, c.tol_eig, stage_seed(c.seed, "cov"));

  if (m.kind == ForceKind::renewal) {
    auto oracle = detail::enumerated_k_sharp(m, b, g);
    double worst_z = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < oracle.data.size(); ++i) {
      double diff = std::abs(h->k_sharp.data[i] - oracle.data[i]);
      double tol = 3 * h->k_sharp_se.data[i] + 1e-12 * std::max(1.0, std::abs(oracle.data[i]));
      worst = std::max(worst, diff);
      worst_z = std::max(worst_z, diff / tol);
    }
    out.push_back(check("kstar_enumeration_identity", worst_z, 0.0, 1.0,
                        "max |K - K_oracle| = " + detail::fmt_double(worst) + " in units of 3 SE"));
    if (c.collision == Collision::FP) {
      double dev = 0.0;
      for (std::size_t p = 0; p < g.size(); ++p)
        for (int i = 0; i < g.dim * g.dim; ++i)
          dev = std::max(dev, std::abs(h->k_tilde.at(p, i) - ((i % (g.dim + 1)) == 0 ? 1.0 : 0.0)));
      out.push_back(check("fp_stratonovich_identity", dev, 0.0, 0.0));
    }
  }

  {
    double asym = (cov.kernel - cov.kernel.transpose()).cwiseAbs().maxCoeff();
    double scale = std::max(1e-300, cov.kernel.cwiseAbs().maxCoeff());
    out.push_back(check("cov_symmetric", cov.kernel.size() ? asym / scale : 0.0, 0.0, 1e-10));
    out.push_back(check("cov_min_eigenvalue", std::min(0.0, cov.min_raw_eigenvalue), 0.0, cov.tol_eig));
    out.push_back({"cov_trace_bound", cov.trace, cov.trace_bound, 0.0, cov.trace_bound_ok, "trace <= N R"});
  }

  {
    auto r = verify_enhancement(*h, cov);
    out.push_back({"enhancement_k_minus_id", r.min_eig_enhancement, 0.0, r.tol, r.enhancement_ok, "min eigenvalue >= -tol"});
    out.push_back({"enhancement_minus_noise", r.min_eig_noise_gap, 0.0, r.tol, r.noise_gap_ok, "min eigenvalue >= -tol"});
    out.push_back({"ito_stratonovich_split", r.ito_strat_gap, 0.0, r.ito_strat_allowed, r.ito_strat_ok, ""});
  }

  {
    auto s = sympos_check(m, in.sympos_samples, in.sympos_samples, stream_key({seed, 3}), c.ou_dt);
    out.push_back(check("sympos_identity_max_z", s.max_z, 0.0, 3.0));
  }

  {
    // E[K(M_0)] at x = 0 against K + (b/2) E[e (x)sym R1 e], both collisions
    const double x0[3] = {0, 0, 0};
    for (Collision coll : {Collision::LB, Collision::FP}) {
      std::vector<double> k(in.invariant_paths);
      for (std::size_t r = 0; r < in.invariant_paths; ++r) {
        auto path = generate_path(m, 22.0, c.ou_dt, stream_key({seed, hash_string("invariant"), r}), -22.0);
        k[r] = invariant_solution(path, coll, x0, 20.0).second_moment()[0];
      }
      auto st = sample_stats(k);
      const HydroCoefficients& hs = fresh;
      double pred = 1.0 + 0.5 * collision_b(coll) * hs.sympos.at(0, 0);
      double tol = 3 * std::hypot(st.stderr_mean(), 0.5 * collision_b(coll) * hs.sympos_se.at(0, 0)) + 1e-10;
      out.push_back(check(std::string("invariant_second_moment_") + collision_name(coll), st.mean, pred, tol));
    }
    auto path = generate_path(m, 22.0, c.ou_dt, stream_key({seed, hash_string("invariant_first")}), -22.0);
    auto prof = invariant_solution(path, c.collision, x0, 20.0);
    auto y = path.damped_integral(-20.0, 0.0);
    TorusField e0 = m.field(y.data(), TorusGrid(c.dim, 4));
    out.push_back(check("invariant_first_moment", prof.first_moment()[0], e0.at(0, 0), 1e-6));
  }

  {
    // homogeneous force, eps = 1: E[V_t] = e^{-t} E[V_0] + int_0^t e^{-(t-s)} E_s ds
    double amp = m.ball_radius > 0 ? 0.5 : 0.0;
    std::vector<int> k0(c.dim, 0);
    std::vector<double> d0(c.dim, 0.0);
    d0[0] = 1.0;
    auto hm = two_point_model(c.dim, amp, k0, d0);
    auto path = generate_path(hm, 4.0, 0.0, stream_key({seed, hash_string("moment_path")}));
    KineticRunConfig kc;
    kc.collision = c.collision;
    kc.epsilon = 1.0;
    kc.horizon = 3.0;
    kc.dt = 0.1;
    kc.grid = TorusGrid(c.dim, 4);
    kc.checkpoints = {0.6, 1.2, 1.8, 2.4, 3.0};
    kc.record_moments = false;
    auto ens = sample_initial(c.dim, c.collision, 1.0, TrigPolynomial::constant_one(c.dim), in.moment_particles,
                              stream_key({seed, hash_string("moment_init")}));
    for (std::size_t p = 0; p < ens.size(); ++p) ens.v[p * c.dim] += 0.8;
    double worst = 0.0;
    int idx = 0;
    run_rescaled(kc, path, ens, stream_key({seed, hash_string("moment_noise")}), [&](const ParticleEnsemble& e) {
      double t = kc.checkpoints[idx++];
      double pred = std::exp(-t) * 0.8 + path.damped_integral(0.0, t)[0] * hm.basis[0].direction[0];
      std::vector<double> v(e.size());
      for (std::size_t p = 0; p < e.size(); ++p) v[p] = e.v[p * c.dim];
      auto st = sample_stats(v);
      worst = std::max(worst, std::abs(st.mean - pred) / st.stderr_mean());
    });
    out.push_back(check("moment_evolution_max_z", worst, 0.0, 3.0));
  }

  {
    auto op = make_spde_operator(*h, cov, spde_options(c));
    double dt = std::min(c.spde_dt, op.stability_bound());
    auto rho0 = initial_density(c).on_grid(g);
    const double m0 = to_spectral(rho0).data[0].real();
    double mass = 0.0;
    auto s1 = simulate_spde_path(op, rho0, 200 * dt, dt, seed, 0, [&](const SpdeState& s) {
      mass = std::max(mass, std::abs(s.mass() - m0));
    });
    out.push_back(check("spde_mass_conservation", mass, 0.0, 1e-10));
    TorusField r2 = rho0;
    for (auto& v : r2.data) v = 3.0 * v - 1.0;
    auto s2 = simulate_spde_path(op, r2, 200 * dt, dt, seed, 0);
    auto s0 = simulate_spde_path(op, TorusField(g, Rank::scalar, 1.0), 200 * dt, dt, seed, 0);
    double lin = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p)
      lin = std::max(lin, std::abs(s2.rho_hat.data[p] - (3.0 * s1.rho_hat.data[p] - s0.rho_hat.data[p])));
    out.push_back(check("spde_linearity", lin, 0.0, 1e-10));
  }
  return out;
}

}  // namespace kdiff
