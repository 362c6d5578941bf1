#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "kdiff/experiment.hpp"

using namespace kdiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

ExperimentConfig small(const std::string& kind, const std::string& dir)
{
  ExperimentConfig c;
  c.model_kind = kind;
  c.grid = 32;
  c.particles = 4000;
  c.kinetic_realizations = 64;
  c.spde_realizations = 64;
  c.n_mc = 200;
  c.horizon = 0.01;
  c.out = (fs::temp_directory_path() / ("kdiff_test_" + dir)).string();
  fs::remove_all(c.out);
  return c;
}

}  // namespace

TEST(Config, RoundTripIsLossless)
{
  ExperimentConfig c;
  c.model_kind = "ou";
  c.dim = 2;
  c.basis = "cos:1,0:1,0;sin:0,1:1,1";
  c.amplitudes = {0.1 + 0.2, 1.0 / 3.0};
  c.epsilons = {0.5, 0.35, 0.25};
  c.spde_dt = 1.0 / 7.0 * 1e-4;
  c.collision = Collision::FP;
  c.estimator = Estimator::fourier;
  c.seed = 18446744073709551615ULL;
  auto back = ExperimentConfig::parse_string(c.serialize());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.amplitudes, c.amplitudes);
  EXPECT_EQ(back.spde_dt, c.spde_dt);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.hash(), c.hash());
}

TEST(Config, CommentsAndErrors)
{
  auto c = ExperimentConfig::parse_string("# header\ncollision = FP  # trailing\n\ngrid=16\n");
  EXPECT_EQ(c.collision, Collision::FP);
  EXPECT_EQ(c.grid, 16);
  EXPECT_THROW(ExperimentConfig::parse_string("nonsense = 1\n"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::parse_string("grid 16\n"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::parse_string("grid = sixteen\n"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::parse_string("seed = -3\n"), std::invalid_argument);
}

TEST(Config, ValidationBeforeRuns)
{
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto edit) {
    ExperimentConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](auto& c) { c.grid = 48; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.grid = 512; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.epsilons = {0.25, 0.5}; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.epsilons = {1.5}; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.kinetic_dt_factor = 0.2; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.rho_amplitude = 1.2; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.model_kind = "banana"; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.model_kind = "sign_cube"; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](auto& c) { c.n_mc = 10; }).validate(), std::invalid_argument);
}

TEST(Config, BuildsEveryModelKind)
{
  ExperimentConfig c;
  for (const char* k : {"two_point", "rotating_phase", "zero"}) {
    c.model_kind = k;
    EXPECT_EQ(build_model(c).dim, 1) << k;
  }
  c.model_kind = "sign_cube";
  c.dim = 2;
  c.basis = "cos:1,0:1,0; sin:0,1:1,1";
  c.amplitudes = {0.3, 0.2};
  auto m = build_model(c);
  EXPECT_EQ(m.nbasis(), 2u);
  EXPECT_EQ(m.atoms.size(), 4u);
  EXPECT_TRUE(m.basis[1].sine);
  c.model_kind = "ou";
  EXPECT_EQ(build_model(c).kind, ForceKind::ou_driven);
  c.basis = "cos:1:1";
  EXPECT_THROW(build_model(c), std::invalid_argument);
}

TEST(Coeffs, DeltaZeroFiles)
{
  auto c = small("zero", "coeffs_zero");
  std::ostringstream log;
  EXPECT_EQ(cli::cmd_coeffs(c, log), 0);
  std::ifstream a(fs::path(c.out) / "coefficients.csv"), b(fs::path(c.out) / "spectrum.csv");
  auto h = read_coefficients_csv(a);
  auto s = read_spectrum_csv(b);
  for (std::size_t p = 0; p < h.grid.size(); ++p) {
    EXPECT_EQ(h.k_sharp.at(p), 1.0);
    EXPECT_EQ(h.theta.at(p), 0.0);
  }
  EXPECT_EQ(s.rank(), 0u);
}

TEST(Coeffs, TwoPointClosedFormAndChecksums)
{
  auto c = small("two_point", "coeffs_tp");
  std::ostringstream log;
  ASSERT_EQ(cli::cmd_coeffs(c, log), 0);
  std::ifstream a(fs::path(c.out) / "coefficients.csv");
  auto h = read_coefficients_csv(a);
  for (std::size_t p = 0; p < h.grid.size(); ++p) {
    double x = h.grid.coord(p, 0), cs = std::cos(two_pi * x);
    EXPECT_NEAR(h.k_sharp.at(p), 1.0 + 1.5 * 0.25 * cs * cs, 3 * h.k_sharp_se.at(p) + 1e-12);
  }
  auto m1 = slurp(fs::path(c.out) / "manifest_coeffs.txt");
  ASSERT_EQ(cli::cmd_coeffs(c, log), 0);
  EXPECT_EQ(slurp(fs::path(c.out) / "manifest_coeffs.txt"), m1);
  EXPECT_NE(m1.find("coefficients.csv fnv1a64="), std::string::npos);
  c.seed = 2;
  ASSERT_EQ(cli::cmd_coeffs(c, log), 0);
  EXPECT_NE(slurp(fs::path(c.out) / "manifest_coeffs.txt"), m1);
}

TEST(Validate, DeltaZeroAndDefaultPass)
{
  for (const char* kind : {"zero", "two_point"}) {
    auto c = small(kind, std::string("validate_") + kind);
    for (const auto& k : validation_suite(c)) EXPECT_TRUE(k.pass) << kind << " " << k.name << " " << k.observed;
  }
}

TEST(Validate, MisSetCollisionFailsKstar)
{
  auto c = small("two_point", "validate_misset");
  c.collision = Collision::FP;
  std::ostringstream log;
  ASSERT_EQ(cli::cmd_coeffs(c, log), 0);
  c.collision = Collision::LB;
  EXPECT_EQ(cli::cmd_validate(c, log), 1);
  EXPECT_NE(log.str().find("FAIL kstar_enumeration_identity"), std::string::npos);
}

TEST(Converge, LawComparisonBasics)
{
  std::vector<double> a(64, 1.0), b(64, 1.0);
  auto g = compare_laws(0.5, 0, a, b);
  EXPECT_EQ(g.mean_gap, 0.0);
  EXPECT_EQ(g.var_gap, 0.0);
  EXPECT_EQ(g.ks, 0.0);
  EXPECT_THROW(compare_laws(0.5, 0, std::vector<double>(10, 1.0), b), std::invalid_argument);
  ConvergenceReport r;
  r.epsilons = {0.5, 0.35, 0.25};
  for (double gap : {0.3, 0.2, 0.21}) {
    LawGap l;
    l.mean_gap = gap;
    l.mean_gap_se = 0.02;
    r.gaps.push_back({l});
  }
  EXPECT_TRUE(r.mean_trend(0));
  r.gaps[2][0].mean_gap = 0.25;
  EXPECT_FALSE(r.mean_trend(0));
}

TEST(Converge, DeltaZeroMassIsExactAndRunIsDeterministic)
{
  auto c = small("zero", "converge_zero");
  auto m = build_model(c);
  auto h = compute_coefficients(m, c.collision, c.torus(), 100, 1);
  auto cov = compute_cov_operator(m, c.torus(), 100, -1.0, 1);
  auto rep = converge_laws(c, m, h, cov);
  ASSERT_EQ(rep.gaps.size(), 3u);
  for (const auto& row : rep.gaps) {
    EXPECT_NEAR(row[0].kinetic.mean, 1.0, 1e-12);
    EXPECT_LT(row[0].kinetic.variance, 1e-26);
    EXPECT_NEAR(row[0].spde.mean, 1.0, 1e-12);
    // no randomness in the limit
    for (std::size_t j = 0; j < row.size(); ++j) EXPECT_LT(row[j].spde.variance, 1e-26);
  }
  auto rep2 = converge_laws(c, m, h, cov);
  for (std::size_t i = 0; i < rep.gaps.size(); ++i)
    for (std::size_t j = 0; j < rep.gaps[i].size(); ++j) EXPECT_EQ(rep.gaps[i][j].mean_gap, rep2.gaps[i][j].mean_gap);
  c.kinetic_realizations = 32;
  EXPECT_THROW(converge_laws(c, m, h, cov), std::invalid_argument);
  c.kinetic_realizations = 64;
  c.epsilons = {0.5, 0.25};
  EXPECT_THROW(converge_laws(c, m, h, cov), std::invalid_argument);
}

TEST(Pipeline, StagesReadOnlyTheCsvContract)
{
  auto c = small("two_point", "pipeline");
  std::ostringstream log;
  ASSERT_EQ(cli::cmd_simulate_spde(c, log), 0);  // runs coeffs first
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "coefficients.csv"));
  auto first = slurp(fs::path(c.out) / "spde_stats.csv");
  ASSERT_EQ(cli::cmd_simulate_spde(c, log), 0);
  EXPECT_EQ(slurp(fs::path(c.out) / "spde_stats.csv"), first);
  ASSERT_EQ(cli::cmd_simulate_kinetic(c, log), 0);
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "kinetic_eps2_series.csv"));
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "manifest_simulate-kinetic.txt"));
}
