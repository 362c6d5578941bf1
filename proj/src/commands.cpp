#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace kdiff::cli {

namespace {

class Outputs
{
public:
  Outputs(const ExperimentConfig& c, std::string stage) : dir_(c.out), stage_(std::move(stage))
  {
    fs::create_directories(dir_);
    manifest_.config_hash = hex64(c.hash());
    put("config.txt", c.serialize());
  }

  void seed(const std::string& name, std::uint64_t s) { manifest_.seeds[name] = s; }

  void put(const std::string& name, const std::string& bytes)
  {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw StageError(stage_, "cannot write " + (dir_ / name).string());
    f << bytes;
    manifest_.files.emplace_back(name, checksum(bytes));
  }

  void finish()
  {
    std::ostringstream os;
    manifest_.write(os);
    std::ofstream f(dir_ / ("manifest_" + stage_ + ".txt"));
    f << os.str();
  }

  const fs::path& dir() const { return dir_; }

private:
  fs::path dir_;
  std::string stage_;
  RunManifest manifest_;
};

template <class F>
auto staged(const std::string& stage, F&& f)
{
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

struct Contract
{
  HydroCoefficients h;
  CovOperator cov;
};

Contract read_contract(const ExperimentConfig& c, std::ostream& log)
{
  fs::path dir(c.out);
  if (!fs::exists(dir / "coefficients.csv") || !fs::exists(dir / "spectrum.csv")) {
    log << "coefficient files missing in " << dir << ", running the coeffs stage first\n";
    cmd_coeffs(c, log);
  }
  return staged("read-contract", [&] {
    std::ifstream a(dir / "coefficients.csv"), b(dir / "spectrum.csv");
    Contract k{read_coefficients_csv(a), read_spectrum_csv(b)};
    if (k.h.grid != c.torus()) throw std::invalid_argument("coefficient grid differs from the config");
    return k;
  });
}

}  // namespace

int cmd_coeffs(const ExperimentConfig& c, std::ostream& log)
{
  staged("config", [&] { c.validate(); return 0; });
  Outputs out(c, "coeffs");
  const auto m = staged("model", [&] { return build_model(c); });
  const auto g = c.torus();
  const auto s_coeffs = stage_seed(c.seed, "coeffs"), s_cov = stage_seed(c.seed, "cov");
  out.seed("coeffs", s_coeffs);
  out.seed("cov", s_cov);
  auto h = staged("hydro_coeffs", [&] { return compute_coefficients(m, c.collision, g, c.n_mc, s_coeffs); });
  auto cov = staged("cov_operator", [&] { return compute_cov_operator(m, g, c.n_mc, c.tol_eig, s_cov); });
  auto rep = verify_enhancement(h, cov);

  std::ostringstream a, b;
  write_coefficients_csv(a, h);
  write_spectrum_csv(b, cov);
  out.put("coefficients.csv", a.str());
  out.put("spectrum.csv", b.str());
  out.finish();

  log << std::setprecision(6) << "coeffs: collision=" << collision_name(c.collision) << " N=" << c.dim
      << " M=" << c.grid << " n_mc=" << c.n_mc << "\n"
      << "  spectrum rank=" << cov.rank() << " trace=" << cov.trace << " dropped=" << cov.dropped_trace
      << " tol_eig=" << cov.tol_eig << " trace<=NR " << (cov.trace_bound_ok ? "yes" : "no") << "\n"
      << "  min eig(K# - Id)             = " << rep.min_eig_enhancement << (rep.enhancement_ok ? "  ok" : "  FAIL") << "\n"
      << "  min eig(K# - Id - sum phi phi) = " << rep.min_eig_noise_gap << (rep.noise_gap_ok ? "  ok" : "  FAIL") << "\n"
      << "  |K# - K~# - sum phi phi|       = " << rep.ito_strat_gap << (rep.ito_strat_ok ? "  ok" : "  FAIL") << "\n"
      << "  max |K~# - Id|                 = " << rep.max_k_tilde_deviation << "\n";
  return rep.ok() ? 0 : 1;
}

int cmd_simulate_kinetic(const ExperimentConfig& c, std::ostream& log)
{
  staged("config", [&] { c.validate(); return 0; });
  Outputs out(c, "simulate-kinetic");
  const auto m = staged("model", [&] { return build_model(c); });
  const auto seed = stage_seed(c.seed, "simulate-kinetic");
  out.seed("simulate-kinetic", seed);
  for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
    const double eps = c.epsilons[i];
    KineticRunConfig kc;
    kc.collision = c.collision;
    kc.epsilon = eps;
    kc.horizon = c.horizon;
    kc.dt = c.kinetic_dt(eps);
    kc.n_particles = c.particles;
    kc.grid = c.torus();
    kc.estimator = c.estimator;
    kc.checkpoints = c.checkpoint_times();
    kc.checkpoints.insert(kc.checkpoints.begin(), 0.0);
    auto run = staged("kinetic_sim", [&] {
      auto path = generate_path(m, kc.micro_horizon(), c.ou_dt, stream_key({seed, hash_string("path")}));
      auto ens = sample_initial(c.dim, c.collision, eps, initial_density(c), c.particles,
                                stream_key({seed, hash_string("init")}));
      return run_rescaled(kc, path, std::move(ens), stream_key({seed, hash_string("noise")}));
    });
    std::ostringstream series, fin;
    write_scalar_series_header(series);
    for (const auto& d : run.checkpoints) write_scalar_series_row(series, d);
    write_checkpoint_csv(fin, run.checkpoints.back());
    out.put("kinetic_eps" + std::to_string(i) + "_series.csv", series.str());
    out.put("kinetic_eps" + std::to_string(i) + "_final.csv", fin.str());
    log << "simulate-kinetic: eps=" << eps << " particles=" << c.particles << " micro steps="
        << std::ceil(kc.micro_horizon() / kc.micro_dt() - 1e-9) << " mass=" << run.final_state.mass() << "\n";
  }
  out.finish();
  return 0;
}

int cmd_simulate_spde(const ExperimentConfig& c, std::ostream& log)
{
  staged("config", [&] { c.validate(); return 0; });
  auto k = read_contract(c, log);
  Outputs out(c, "simulate-spde");
  const auto seed = stage_seed(c.seed, "spde");
  out.seed("spde", seed);
  auto ens = staged("spde_sim", [&] {
    auto op = make_spde_operator(k.h, k.cov, spde_options(c));
    std::vector<double> cps = c.checkpoint_times();
    cps.insert(cps.begin(), 0.0);
    return run_ensemble(op, initial_density(c).on_grid(k.h.grid), c.horizon, c.spde_dt, c.spde_realizations, seed,
                        default_test_functions(c.dim), cps);
  });
  std::ostringstream a, b;
  write_ensemble_stats_csv(a, ens);
  write_ensemble_fields_csv(b, ens);
  out.put("spde_stats.csv", a.str());
  out.put("spde_fields.csv", b.str());
  out.finish();
  log << "simulate-spde: realizations=" << c.spde_realizations << " rank=" << ens.rank << " dt=" << ens.dt
      << " min rho=" << ens.min_rho << " max mass error=" << ens.max_mass_error
      << " dropped trace=" << ens.dropped_trace << "\n";
  return 0;
}

int cmd_converge(const ExperimentConfig& c, std::ostream& log)
{
  staged("config", [&] { c.validate(); return 0; });
  auto k = read_contract(c, log);
  Outputs out(c, "converge");
  out.seed("spde", stage_seed(c.seed, "spde"));
  out.seed("kinetic", stage_seed(c.seed, "kinetic"));
  const auto m = build_model(c);
  auto rep = staged("converge", [&] { return converge_laws(c, m, k.h, k.cov, &log); });
  std::ostringstream csv, txt;
  write_convergence_csv(csv, rep);
  const char* names[] = {"1", "cos(2 pi x)", "sin(2 pi x)", "cos(4 pi x)"};
  txt << std::setprecision(4) << std::scientific;
  txt << "xi            eps        mean_gap   (se)       var_gap    (se)       KS     p\n";
  for (std::size_t j = 0; j < rep.gaps[0].size(); ++j) {
    for (const auto& row : rep.gaps) {
      const auto& g = row[j];
      txt << std::left << std::setw(13) << names[j] << " " << std::fixed << std::setprecision(3) << g.epsilon << "  "
          << std::scientific << std::setprecision(3) << g.mean_gap << "  " << g.mean_gap_se << "  " << g.var_gap
          << "  " << g.var_gap_se << "  " << std::fixed << std::setprecision(3) << g.ks << "  " << g.ks_p << "\n";
    }
    txt << "  trend mean: " << (rep.mean_trend(j) ? "decreasing" : "NOT decreasing")
        << ", variance: " << (rep.var_trend(j) ? "decreasing" : "NOT decreasing") << "\n";
  }
  txt << "overall: " << (rep.trends_ok() ? "PASS" : "FAIL") << "\n";
  out.put("converge.csv", csv.str());
  out.put("converge_report.txt", txt.str());
  out.finish();
  log << txt.str();
  return rep.trends_ok() ? 0 : 1;
}

int cmd_validate(const ExperimentConfig& c, std::ostream& log)
{
  staged("config", [&] { c.validate(); return 0; });
  Outputs out(c, "validate");
  out.seed("validate", stage_seed(c.seed, "validate"));
  HydroCoefficients loaded;
  ValidationInputs in;
  fs::path file = fs::path(c.out) / "coefficients.csv";
  if (fs::exists(file)) {
    std::ifstream f(file);
    loaded = read_coefficients_csv(f);
    if (loaded.collision != c.collision)
      log << "warning: coefficients.csv was computed with collision=" << collision_name(loaded.collision)
          << ", checking against collision=" << collision_name(c.collision) << "\n";
    in.coefficients = &loaded;
  }
  auto checks = staged("validate", [&] { return validation_suite(c, in); });
  std::ostringstream txt;
  txt << std::setprecision(6);
  bool all = true;
  for (const auto& k : checks) {
    all = all && k.pass;
    txt << (k.pass ? "PASS " : "FAIL ") << std::left << std::setw(34) << k.name << " observed=" << k.observed
        << " predicted=" << k.predicted << " tol=" << k.tolerance;
    if (!k.note.empty()) txt << "  (" << k.note << ")";
    txt << "\n";
  }
  txt << (all ? "all checks passed" : "some checks FAILED") << "\n";
  out.put("validate_report.txt", txt.str());
  out.finish();
  log << txt.str();
  return all ? 0 : 1;
}

}  // namespace kdiff::cli
