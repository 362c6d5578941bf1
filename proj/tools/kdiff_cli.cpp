#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "commands.hpp"

int main(int argc, char** argv)
{
  CLI::App app{"kinetic-to-SPDE diffusion-limit experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;

  using Cmd = int (*)(const kdiff::ExperimentConfig&, std::ostream&);
  const std::map<std::string, std::pair<Cmd, std::string>> commands = {
      {"coeffs", {kdiff::cli::cmd_coeffs, "hydrodynamic coefficients and noise spectrum"}},
      {"simulate-kinetic", {kdiff::cli::cmd_simulate_kinetic, "rescaled particle simulation for each epsilon"}},
      {"simulate-spde", {kdiff::cli::cmd_simulate_spde, "limit SPDE ensemble from the coefficient files"}},
      {"converge", {kdiff::cli::cmd_converge, "kinetic versus SPDE law comparison over epsilon"}},
      {"validate", {kdiff::cli::cmd_validate, "identity suite"}},
  };
  std::map<CLI::App*, Cmd> dispatch;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path, "key = value experiment file");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "overrides the output directory");
    sub->add_option("--threads", threads, "OpenMP worker count")->check(CLI::NonNegativeNumber);
    dispatch[sub] = entry.first;
  }
  CLI11_PARSE(app, argc, argv);

  try {
    kdiff::ExperimentConfig cfg;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw std::runtime_error("cannot open config " + config_path);
      cfg = kdiff::ExperimentConfig::parse(f);
    }
    for (auto* sub : app.get_subcommands()) {
      if (sub->count("--seed")) cfg.seed = seed;
      if (sub->count("--out")) cfg.out = out;
#ifdef _OPENMP
      if (threads > 0) omp_set_num_threads(threads);
#endif
      return dispatch.at(sub)(cfg, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
