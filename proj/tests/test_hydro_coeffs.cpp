#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "kdiff/hydro_coeffs.hpp"
#include "kdiff/rng.hpp"

using namespace kdiff;

namespace {

const double a = 0.5;
const double pi = std::numbers::pi;

double cos2(double x) { return std::pow(std::cos(two_pi * x), 2); }

ForceFieldModel cube_2d()
{
  return sign_cube_model(2, {cos_mode({1, 0}, {1, 0}), sin_mode({0, 1}, {1, 1}), cos_mode({1, 1}, {0, 1})},
                         {0.4, 0.3, 0.2});
}

TorusField band_limited_vector(const TorusGrid& g, std::uint64_t seed)
{
  CounterRng rng{seed};
  TorusField v(g, Rank::vector);
  for (int c = 0; c < g.dim; ++c) {
    double a1 = rng.normal(), a2 = rng.normal(), a3 = rng.normal();
    for (std::size_t p = 0; p < g.size(); ++p) {
      double x = g.coord(p, 0), y = g.dim > 1 ? g.coord(p, 1) : 0.0;
      v.at(p, c) = a1 + a2 * std::cos(two_pi * x) + a3 * std::sin(two_pi * (x + y));
    }
  }
  return v;
}

}  // namespace

TEST(Coefficients, DeltaZeroIsIdentity)
{
  TorusGrid g(1, 16);
  auto m = zero_model(1);
  for (Collision c : {Collision::LB, Collision::FP}) {
    auto h = compute_coefficients(m, c, g, 100, 1);
    for (std::size_t p = 0; p < g.size(); ++p) {
      EXPECT_EQ(h.k_sharp.at(p), 1.0);
      EXPECT_EQ(h.theta.at(p), 0.0);
    }
  }
  auto cov = compute_cov_operator(m, g, 100, -1.0, 1);
  EXPECT_EQ(cov.rank(), 0u);
  EXPECT_EQ(cov.trace, 0.0);
  auto h = compute_coefficients(m, Collision::LB, g, 100, 1);
  auto r = verify_enhancement(h, cov);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.min_eig_enhancement, 0.0);
  EXPECT_EQ(r.min_eig_noise_gap, 0.0);
  EXPECT_EQ(r.ito_strat_gap, 0.0);
}

TEST(Coefficients, TwoPointClosedForms)
{
  TorusGrid g(1, 64);
  auto m = two_point_model_1d(a);
  auto lb = compute_coefficients(m, Collision::LB, g, 400, 2);
  auto fp = compute_coefficients(m, Collision::FP, g, 400, 2);
  EXPECT_EQ(lb.b, 2);
  EXPECT_EQ(fp.b, 1);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double x = g.coord(p, 0), c = std::cos(two_pi * x), s = std::sin(two_pi * x);
    EXPECT_NEAR(lb.k_sharp.at(p), 1.0 + 1.5 * a * a * cos2(x), 3 * lb.k_sharp_se.at(p) + 1e-12);
    EXPECT_NEAR(fp.k_sharp.at(p), 1.0 + a * a * cos2(x), 3 * fp.k_sharp_se.at(p) + 1e-12);
    // d/dx cos^2 = -4 pi cos sin
    double fp_theta = 0.5 * a * a * (-4 * pi * c * s) + 0.5 * a * a * c * (-two_pi * s);
    EXPECT_NEAR(fp.theta.at(p), fp_theta, 3 * fp.theta_se.at(p) + 1e-10);
    EXPECT_NEAR(lb.theta.at(p), -5 * pi * a * a * c * s, 3 * lb.theta_se.at(p) + 1e-10);
    EXPECT_NEAR(fp.k_tilde.at(p), 1.0, 1e-15);
  }
}

TEST(Coefficients, RotatingPhaseIsHomogeneous)
{
  TorusGrid g(1, 32);
  auto m = rotating_phase_model(a);
  auto h = compute_coefficients(m, Collision::LB, g, 100, 3);
  for (std::size_t p = 0; p < g.size(); ++p) {
    EXPECT_NEAR(h.k_sharp.at(p), 1.0 + 0.75 * a * a, 3 * h.k_sharp_se.at(p) + 1e-12);
    EXPECT_NEAR(h.theta.at(p), 0.0, 3 * h.theta_se.at(p) + 1e-10);
  }
}

TEST(Coefficients, UnclippedOuMatchesLinearFilter)
{
  // linear link: R_lambda e = e / (1 + lambda), so K# has the renewal form in E[e^2] = a^2 cos^2
  TorusGrid g(1, 16);
  auto m = ou_model(1, {cos_mode({1}, {1.0})}, {a}, 1e6);
  m.resolvent_replicates = 8;
  auto h = compute_coefficients(m, Collision::LB, g, 2000, 4);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double x = g.coord(p, 0);
    EXPECT_NEAR(h.k_sharp.at(p), 1.0 + 1.5 * a * a * cos2(x), 3 * h.k_sharp_se.at(p) + 1e-9);
  }
}

TEST(Coefficients, ClippedOuIsSymmetricAndEnhanced)
{
  TorusGrid g(2, 8);
  auto m = ou_model(2, {cos_mode({1, 0}, {1, 0}), sin_mode({0, 1}, {1, 1})}, {0.4, 0.3}, 2.0);
  m.resolvent_replicates = 8;
  m.resolvent_panel = 1.0;
  auto h = compute_coefficients(m, Collision::LB, g, 200, 5);
  for (std::size_t p = 0; p < g.size(); ++p) {
    EXPECT_NEAR(h.k_sharp.at(p, 1), h.k_sharp.at(p, 2), 1e-14);
    double kmi[4];
    for (int i = 0; i < 4; ++i) kmi[i] = h.k_sharp.at(p, i) - (i == 0 || i == 3);
    EXPECT_GE(detail::min_eigenvalue(kmi, 2), -3 * h.mc_stderr_k());
  }
}

TEST(Coefficients, RejectsUncentredEmpiricalLaw)
{
  auto m = two_point_model_1d(a);
  m.probs = {0.9, 0.1};
  m.cdf = {0.9, 1.0};
  EXPECT_THROW(compute_coefficients(m, Collision::LB, TorusGrid(1, 8), 400, 1), std::runtime_error);
  EXPECT_THROW(compute_coefficients(two_point_model_1d(a), Collision::LB, TorusGrid(1, 8), 50, 1),
               std::invalid_argument);
}

TEST(Coefficients, QuadraticScaling)
{
  TorusGrid g(2, 8);
  auto m1 = cube_2d();
  auto m2 = sign_cube_model(2, m1.basis, {0.8, 0.6, 0.4});
  auto h1 = compute_coefficients(m1, Collision::LB, g, 200, 6);
  auto h2 = compute_coefficients(m2, Collision::LB, g, 200, 6);
  for (std::size_t i = 0; i < h1.k_sharp.data.size(); ++i) {
    int comp = static_cast<int>(i % 4);
    double id = (comp == 0 || comp == 3) ? 1.0 : 0.0;
    EXPECT_NEAR(h2.k_sharp.data[i] - id, 4.0 * (h1.k_sharp.data[i] - id), 1e-12);
  }
  for (std::size_t i = 0; i < h1.theta.data.size(); ++i) EXPECT_NEAR(h2.theta.data[i], 4.0 * h1.theta.data[i], 1e-10);
  auto c1 = compute_cov_operator(m1, g, 200, -1.0, 6);
  auto c2 = compute_cov_operator(m2, g, 200, -1.0, 6);
  ASSERT_EQ(c1.rank(), c2.rank());
  for (std::size_t k = 0; k < c1.rank(); ++k) EXPECT_NEAR(c2.eigenvalues[k], 4.0 * c1.eigenvalues[k], 1e-12);
  EXPECT_LT((c2.kernel - 4.0 * c1.kernel).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CovOperator, TwoPointRankOne)
{
  TorusGrid g(1, 64);
  auto c = compute_cov_operator(two_point_model_1d(a), g, 400, -1.0, 7);
  ASSERT_EQ(c.rank(), 1u);
  EXPECT_NEAR(c.eigenvalues[0], a * a / 2, 3 * c.eigen_se[0] + 1e-12);
  auto zeta_exact = TorusField::scalar(g, [](const double* x) { return std::sqrt(2.0) * std::cos(two_pi * x[0]); });
  TorusField z(g, Rank::scalar);
  z.data = c.zeta[0].data;
  double corr = std::abs(pairing(z, zeta_exact));
  EXPECT_GT(corr, 0.999);
  EXPECT_NEAR(c.trace, a * a / 2, 1e-12);
  EXPECT_TRUE(c.trace_bound_ok);
}

TEST(CovOperator, SymmetricOrthonormalReconstruction)
{
  TorusGrid g(2, 8);
  auto c = compute_cov_operator(cube_2d(), g, 500, -1.0, 8);
  EXPECT_LT((c.kernel - c.kernel.transpose()).cwiseAbs().maxCoeff(), 1e-10 * c.kernel.cwiseAbs().maxCoeff());
  EXPECT_GE(c.min_raw_eigenvalue, -c.tol_eig * 10);
  EXPECT_EQ(c.rank(), 3u);  // three basis fields
  for (std::size_t k = 0; k < c.rank(); ++k)
    for (std::size_t l = 0; l < c.rank(); ++l)
      EXPECT_NEAR(pairing(c.zeta[k], c.zeta[l]), k == l ? 1.0 : 0.0, 1e-10);
  for (std::size_t k = 1; k < c.rank(); ++k) EXPECT_GE(c.eigenvalues[k - 1], c.eigenvalues[k]);
  // sum_k lambda_k zeta_k(x) zeta_k(y) against H at sampled pairs
  for (int i : {0, 17, 63, 101})
    for (int j : {3, 17, 88, 127}) {
      double r = 0.0;
      for (std::size_t k = 0; k < c.rank(); ++k) r += c.eigenvalues[k] * c.zeta[k].data[i] * c.zeta[k].data[j];
      EXPECT_NEAR(r, c.kernel(i, j), 1e-10 + c.dropped_trace / c.weight);
    }
  EXPECT_TRUE(c.trace_bound_ok);
  EXPECT_LE(c.trace, g.dim * cube_2d().ball_radius);
}

TEST(CovOperator, SqrtSquaredIsKernel)
{
  TorusGrid g(2, 8);
  auto c = compute_cov_operator(cube_2d(), g, 500, -1.0, 9);
  auto v = band_limited_vector(g, 3);
  auto twice = apply_sqrt_s(c, apply_sqrt_s(c, v));
  auto direct = apply_s_kernel(c, v);
  double worst = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) worst = std::max(worst, std::abs(twice.data[i] - direct.data[i]));
  EXPECT_LT(worst, 1e-8 * c.trace);
  EXPECT_THROW(apply_sqrt_s(c, TorusField(TorusGrid(2, 4), Rank::vector)), std::invalid_argument);
}

TEST(CovOperator, SqrtOnEigenfieldsAndComplement)
{
  TorusGrid g(1, 32);
  auto c = compute_cov_operator(two_point_model_1d(a), g, 200, -1.0, 10);
  auto r = apply_sqrt_s(c, c.zeta[0]);
  for (std::size_t i = 0; i < r.data.size(); ++i)
    EXPECT_NEAR(r.data[i], std::sqrt(c.eigenvalues[0]) * c.zeta[0].data[i], 1e-12);
  TorusField s(g, Rank::vector);
  for (std::size_t p = 0; p < g.size(); ++p) s.at(p) = std::sin(two_pi * 3 * g.coord(p, 0));
  for (double v : apply_sqrt_s(c, s).data) EXPECT_LT(std::abs(v), 1e-12);
}

TEST(CovOperator, Errors)
{
  EXPECT_THROW(compute_cov_operator(two_point_model_1d(a), TorusGrid(1, 512), 200, -1.0, 1), std::invalid_argument);
  EXPECT_THROW(compute_cov_operator(two_point_model_1d(a), TorusGrid(1, 8), 10, -1.0, 1), std::invalid_argument);
  auto m = cube_2d();
  EXPECT_NO_THROW(compute_cov_operator(m, TorusGrid(2, 8), 200, -1.0, 2));
}

TEST(Enhancement, TwoPointNoiseGapValue)
{
  TorusGrid g(1, 64);
  auto m = two_point_model_1d(a);
  auto h = compute_coefficients(m, Collision::LB, g, 200, 11);
  auto c = compute_cov_operator(m, g, 200, -1.0, 11);
  auto pp = noise_covariance_diagonal(c);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double x = g.coord(p, 0);
    EXPECT_NEAR(pp.at(p), a * a * cos2(x), 1e-12);
    EXPECT_NEAR(h.k_sharp.at(p) - 1.0 - pp.at(p), 0.5 * a * a * cos2(x), 1e-12);
  }
  auto r = verify_enhancement(h, c);
  EXPECT_TRUE(r.ok());
  EXPECT_NEAR(r.min_eig_noise_gap, 0.0, 1e-12);
}

TEST(Enhancement, FokkerPlanckStratonovichIsIdentity)
{
  TorusGrid g(2, 8);
  auto m = cube_2d();
  auto h = compute_coefficients(m, Collision::FP, g, 300, 12);
  auto c = compute_cov_operator(m, g, 300, -1.0, 12);
  auto r = verify_enhancement(h, c);
  EXPECT_EQ(r.max_k_tilde_deviation, 0.0);
  EXPECT_TRUE(r.ok());
  auto hl = compute_coefficients(m, Collision::LB, g, 300, 12);
  EXPECT_TRUE(verify_enhancement(hl, c).ok());
}

TEST(Enhancement, StratonovichDriftTwoPoint)
{
  TorusGrid g(1, 64);
  auto m = two_point_model_1d(a);
  auto h = compute_coefficients(m, Collision::FP, g, 200, 13);
  auto c = compute_cov_operator(m, g, 200, -1.0, 13);
  auto tt = stratonovich_drift(h, c);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double x = g.coord(p, 0), co = std::cos(two_pi * x), s = std::sin(two_pi * x);
    // phi = a cos, phi div phi = -2 pi a^2 cos sin
    EXPECT_NEAR(tt.at(p), h.theta.at(p) + two_pi * a * a * co * s, 1e-10);
  }
}

TEST(Sympos, RenewalSignCube)
{
  auto r = sympos_check(cube_2d(), 4000, 4000, 14);
  EXPECT_LT(r.max_z, 3.0);
  // left side is exactly E[c c^T] for the renewal law: diagonal amp^2
  EXPECT_NEAR(r.lhs[0], 0.16, 3 * r.lhs_se[0] + 1e-12);
}

TEST(Sympos, OuDriven)
{
  auto m = ou_model(1, {cos_mode({1}, {1.0}), sin_mode({1}, {1.0})}, {0.4, 0.3}, 0.5);
  m.resolvent_replicates = 8;
  m.resolvent_panel = 1.0;
  auto r = sympos_check(m, 1000, 1000, 15, 0.005, 25.0);
  EXPECT_LT(r.max_z, 3.0);
}

TEST(HydroCsv, RoundTrip)
{
  TorusGrid g(2, 4);
  auto m = sign_cube_model(2, {cos_mode({1, 0}, {1, 0})}, {0.3});
  auto h = compute_coefficients(m, Collision::FP, g, 100, 1);
  auto c = compute_cov_operator(m, g, 100, -1.0, 1);
  std::stringstream a1, a2;
  write_coefficients_csv(a1, h);
  write_spectrum_csv(a2, c);
  auto h2 = read_coefficients_csv(a1);
  auto c2 = read_spectrum_csv(a2);
  EXPECT_EQ(h2.collision, Collision::FP);
  EXPECT_EQ(h2.k_sharp.data, h.k_sharp.data);
  EXPECT_EQ(h2.theta.data, h.theta.data);
  EXPECT_EQ(h2.k_tilde.data, h.k_tilde.data);
  ASSERT_EQ(c2.rank(), c.rank());
  EXPECT_EQ(c2.eigenvalues, c.eigenvalues);
  EXPECT_EQ(c2.zeta[0].data, c.zeta[0].data);
  std::stringstream bad("# something else\n");
  EXPECT_THROW(read_coefficients_csv(bad), std::runtime_error);
}
