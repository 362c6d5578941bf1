#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hydro_coeffs.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "torus_field.hpp"

namespace kdiff {

enum class NoiseForm { ito, stratonovich };

struct SpdeOptions
{
  int cutoff = -1;               // |k|_inf kept; < 0 means m/3
  double implicit_weight = 1.0;  // 1 backward Euler, 0.5 Crank-Nicolson on the constant part
  NoiseForm form = NoiseForm::ito;
  bool include_theta = true;

  int effective_cutoff(const TorusGrid& g) const { return cutoff < 0 ? g.m / 3 : std::min(cutoff, g.m / 2 - 1); }
};

// Coefficients of one SPDE form, laid out for stepping.
struct SpdeOperator
{
  TorusGrid grid{1, 8};
  int cutoff = 0;
  double implicit_weight = 1.0;
  NoiseForm form = NoiseForm::ito;
  std::vector<double> k_mean;     // x-average of the diffusion matrix
  TorusField k_rest;              // diffusion minus its average, matrix
  TorusField drift;               // Theta (Ito) or Theta~ (Stratonovich), vector
  std::vector<TorusField> phi;    // sqrt(lambda_k) zeta_k
  std::vector<double> symbol;     // 4 pi^2 k.K_mean.k per slot, zero on dropped slots
  std::vector<char> kept;
  double k_max_eig = 0.0;
  double max_k2 = 0.0;            // largest |k|^2 over kept slots
  double dropped_trace = 0.0;

  std::size_t rank() const { return phi.size(); }
  double stability_bound() const
  {
    if (max_k2 == 0.0 || k_max_eig <= 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / (two_pi * two_pi * max_k2 * k_max_eig);
  }
  void check_dt(double dt) const
  {
    if (!(dt > 0.0)) throw std::invalid_argument("spde: dt must be positive");
    if (dt > stability_bound() * (1.0 + 1e-12))
      throw std::invalid_argument("spde: dt exceeds the stability bound 1/(4 pi^2 kmax^2 lambda_max)");
  }
};

inline SpdeOperator make_spde_operator(const HydroCoefficients& h, const CovOperator& c, const SpdeOptions& opt = {})
{
  if (h.grid != c.grid) throw std::invalid_argument("spde: coefficient and spectrum grids differ");
  SpdeOperator op;
  const TorusGrid& g = h.grid;
  const int d = g.dim;
  op.grid = g;
  op.cutoff = opt.effective_cutoff(g);
  op.implicit_weight = opt.implicit_weight;
  op.form = opt.form;
  op.dropped_trace = c.dropped_trace;
  for (const auto& f : c.phi) {
    if (f.grid != g || f.rank != Rank::vector) throw std::invalid_argument("spde: malformed noise field");
    op.phi.push_back(f);
  }

  TorusField k;
  if (opt.form == NoiseForm::ito) {
    k = h.k_sharp;
    op.drift = h.theta;
  } else {
    k = h.k_tilde;
    op.drift = h.theta_tilde.data.empty() ? stratonovich_drift(h, c) : h.theta_tilde;
  }
  if (!opt.include_theta) op.drift = TorusField(g, Rank::vector);

  op.k_mean.assign(d * d, 0.0);
  for (std::size_t p = 0; p < g.size(); ++p)
    for (int i = 0; i < d * d; ++i) op.k_mean[i] += k.at(p, i);
  for (double& v : op.k_mean) v /= static_cast<double>(g.size());
  op.k_rest = k;
  for (std::size_t p = 0; p < g.size(); ++p)
    for (int i = 0; i < d * d; ++i) op.k_rest.at(p, i) -= op.k_mean[i];

  // the explicit-part bound uses the full matrix field, not only its mean
  for (std::size_t p = 0; p < g.size(); ++p) {
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = 0.5 * (k.at(p, i * d + j) + k.at(p, j * d + i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    op.k_max_eig = std::max(op.k_max_eig, es.eigenvalues().maxCoeff());
  }

  SpectralField probe(g, Rank::scalar);
  op.symbol.assign(g.size(), 0.0);
  op.kept.assign(g.size(), 0);
  int kv[3];
  for (std::size_t p = 0; p < g.size(); ++p) {
    probe.mode(p, kv);
    bool keep = !probe.has_nyquist(p);
    for (int a = 0; a < d; ++a)
      if (std::abs(kv[a]) > op.cutoff) keep = false;
    if (!keep) continue;
    op.kept[p] = 1;
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) s += kv[i] * op.k_mean[i * d + j] * kv[j];
    op.symbol[p] = two_pi * two_pi * s;
    op.max_k2 = std::max(op.max_k2, probe.k2(p));
  }
  return op;
}

struct SpdeState
{
  SpectralField rho_hat;
  double time = 0.0;
  int cutoff = 0;
  double dt = 0.0;
  std::size_t rank = 0;
  std::uint64_t step = 0;
  std::uint64_t realization = 0;
  double min_rho = std::numeric_limits<double>::infinity();  // running minimum over visited steps

  const TorusGrid& grid() const { return rho_hat.grid; }
  TorusField rho() const { return to_physical(rho_hat); }
  double mass() const { return rho_hat.data[0].real(); }
};

inline SpdeState make_spde_state(const SpdeOperator& op, const TorusField& rho_in, double dt, std::uint64_t realization = 0)
{
  if (rho_in.grid != op.grid || rho_in.rank != Rank::scalar)
    throw std::invalid_argument("spde: initial density must be a scalar field on the coefficient grid");
  op.check_dt(dt);
  SpdeState s;
  s.rho_hat = to_spectral(rho_in);
  for (std::size_t p = 0; p < op.grid.size(); ++p)
    if (!op.kept[p]) s.rho_hat.data[p] = 0.0;
  s.cutoff = op.cutoff;
  s.dt = dt;
  s.rank = op.rank();
  s.realization = realization;
  auto r = s.rho();
  s.min_rho = *std::min_element(r.data.begin(), r.data.end());
  return s;
}

namespace detail {

inline std::vector<double> spde_gaussians(std::uint64_t seed, std::uint64_t realization, std::uint64_t step,
                                          std::size_t rank)
{
  CounterRng rng{seed, hash_string("spde_noise"), realization, step};
  std::vector<double> g(rank);
  for (auto& v : g) v = rng.normal();
  return g;
}

// flux = dt (K_rest grad rho + drift rho) + noise_scale rho sum_k g_k phi_k; returns div flux spectrally
inline SpectralField explicit_increment(const SpdeOperator& op, const SpectralField& rho_hat, double dt,
                                        const std::vector<double>& g, double noise_scale, TorusField* rho_out = nullptr)
{
  const TorusGrid& gr = op.grid;
  const int d = gr.dim;
  TorusField rho = to_physical(rho_hat);
  TorusField grad = to_physical(spectral_gradient(rho_hat));
  TorusField flux(gr, Rank::vector);
  for (std::size_t p = 0; p < gr.size(); ++p)
    for (int i = 0; i < d; ++i) {
      double s = op.drift.at(p, i) * rho.at(p);
      for (int j = 0; j < d; ++j) s += op.k_rest.at(p, i * d + j) * grad.at(p, j);
      flux.at(p, i) = dt * s;
    }
  if (noise_scale != 0.0)
    for (std::size_t k = 0; k < op.rank(); ++k) {
      const double c = noise_scale * g[k];
      if (c == 0.0) continue;
      for (std::size_t p = 0; p < gr.size(); ++p)
        for (int i = 0; i < d; ++i) flux.at(p, i) += c * rho.at(p) * op.phi[k].at(p, i);
    }
  SpectralField out = spectral_divergence(to_spectral(flux));
  out.data[0] = 0.0;
  if (rho_out) *rho_out = std::move(rho);
  return out;
}

inline void implicit_update(const SpdeOperator& op, const SpectralField& rho_hat, const SpectralField& inc, double dt,
                            SpectralField& out)
{
  const double w = op.implicit_weight;
  out = SpectralField(op.grid, Rank::scalar);
  for (std::size_t p = 0; p < op.grid.size(); ++p) {
    if (!op.kept[p]) continue;
    const double l = op.symbol[p] * dt;
    out.data[p] = (rho_hat.data[p] * (1.0 - (1.0 - w) * l) + inc.data[p]) / (1.0 + w * l);
  }
}

inline void check_finite(const SpectralField& s)
{
  for (const auto& v : s.data)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw std::runtime_error("spde: non-finite value in the spectrum");
}

}  // namespace detail

// One step; noise drawn from (seed, realization, step).
inline void step_spde(SpdeState& s, const SpdeOperator& op, std::uint64_t seed)
{
  op.check_dt(s.dt);
  const double dt = s.dt;
  const auto g = detail::spde_gaussians(seed, s.realization, s.step, op.rank());
  const double scale = op.rank() ? std::sqrt(2.0 * dt) : 0.0;
  TorusField rho_phys;
  SpectralField next;
  if (op.form == NoiseForm::ito) {
    auto inc = detail::explicit_increment(op, s.rho_hat, dt, g, scale, &rho_phys);
    detail::implicit_update(op, s.rho_hat, inc, dt, next);
  } else {
    // Heun predictor-corrector: the midpoint rule for the Stratonovich integral
    auto inc0 = detail::explicit_increment(op, s.rho_hat, dt, g, scale, &rho_phys);
    SpectralField pred;
    detail::implicit_update(op, s.rho_hat, inc0, dt, pred);
    auto inc1 = detail::explicit_increment(op, pred, dt, g, scale);
    for (std::size_t p = 0; p < inc0.data.size(); ++p) inc0.data[p] = 0.5 * (inc0.data[p] + inc1.data[p]);
    detail::implicit_update(op, s.rho_hat, inc0, dt, next);
  }
  detail::check_finite(next);
  s.rho_hat = std::move(next);
  s.time += dt;
  ++s.step;
  auto r = s.rho();
  s.min_rho = std::min(s.min_rho, *std::min_element(r.data.begin(), r.data.end()));
}

inline SpdeState step_spde(const SpdeState& s, const HydroCoefficients& h, const CovOperator& c, std::uint64_t seed,
                           const SpdeOptions& opt = {})
{
  SpdeState out = s;
  step_spde(out, make_spde_operator(h, c, opt), seed);
  return out;
}

// Steps so that T is hit exactly; the step is T / ceil(T / dt).
inline std::size_t spde_step_count(double T, double dt)
{
  if (!(T >= 0.0)) throw std::invalid_argument("spde: horizon must be non-negative");
  if (!(dt > 0.0)) throw std::invalid_argument("spde: dt must be positive");
  return static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
}

// Full path; observer(state) after the initial state and every step.
template <class Obs>
SpdeState simulate_spde_path(const SpdeOperator& op, const TorusField& rho_in, double T, double dt, std::uint64_t seed,
                             std::uint64_t realization, Obs&& observer)
{
  const std::size_t n = spde_step_count(T, dt);
  const double h = n ? T / n : dt;
  SpdeState s = make_spde_state(op, rho_in, h, realization);
  observer(s);
  for (std::size_t i = 0; i < n; ++i) {
    step_spde(s, op, seed);
    observer(s);
  }
  return s;
}

inline SpdeState simulate_spde_path(const SpdeOperator& op, const TorusField& rho_in, double T, double dt,
                                    std::uint64_t seed, std::uint64_t realization = 0)
{
  return simulate_spde_path(op, rho_in, T, dt, seed, realization, [](const SpdeState&) {});
}

// Deterministic solve of d_t r = div(K# grad r + Theta r); include_theta = false is the Theta-free form.
inline TorusField mean_equation_solve(const HydroCoefficients& h, const TorusField& rho_in, double T, double dt,
                                      bool include_theta = true, SpdeOptions opt = {})
{
  CovOperator none;
  none.grid = h.grid;
  opt.form = NoiseForm::ito;
  opt.include_theta = include_theta;
  auto op = make_spde_operator(h, none, opt);
  return simulate_spde_path(op, rho_in, T, dt, 0).rho();
}

// <f, xi> from spectral coefficients (Parseval)
inline double spectral_pairing(const SpectralField& f, const SpectralField& xi)
{
  double s = 0.0;
  for (std::size_t p = 0; p < f.data.size(); ++p) s += (f.data[p] * std::conj(xi.data[p])).real();
  return s;
}

struct SpdeCheckpoint
{
  double time = 0.0;
  TorusField mean, variance;
  std::vector<std::vector<double>> samples;  // [xi][realization]
  std::vector<SampleStats> stats;            // per xi
  double mean_hm1_se = 0.0;                  // sqrt(E|rho - mean|^2_{H^-1} / n)
};

struct SpdeEnsemble
{
  std::vector<SpdeCheckpoint> checkpoints;
  std::size_t n_realizations = 0;
  std::size_t rank = 0;
  double dt = 0.0;
  double min_rho = std::numeric_limits<double>::infinity();
  double max_mass_error = 0.0;
  double dropped_trace = 0.0;
};

// realizations run in parallel; reductions walk realizations in index order
inline SpdeEnsemble run_ensemble(const SpdeOperator& op, const TorusField& rho_in, double T, double dt,
                                 std::size_t n_realizations, std::uint64_t seed,
                                 const std::vector<TrigPolynomial>& xis, std::vector<double> checkpoints = {})
{
  if (n_realizations < 2) throw std::invalid_argument("run_ensemble: at least two realizations");
  if (checkpoints.empty()) checkpoints = {T};
  const std::size_t n = spde_step_count(T, dt);
  const double h = n ? T / n : dt;
  op.check_dt(h);
  std::vector<std::size_t> at_step;
  for (double t : checkpoints) {
    if (t < 0.0 || t > T * (1 + 1e-12)) throw std::invalid_argument("run_ensemble: checkpoint outside [0, T]");
    at_step.push_back(n ? static_cast<std::size_t>(std::llround(t / h)) : 0);
  }
  const TorusGrid& g = op.grid;
  std::vector<SpectralField> xi_hat;
  for (const auto& xi : xis) xi_hat.push_back(to_spectral(xi.on_grid(g)));

  const std::size_t nc = checkpoints.size();
  std::vector<std::vector<SpectralField>> snap(n_realizations, std::vector<SpectralField>(nc));
  std::vector<double> min_rho(n_realizations), mass_err(n_realizations);
  const double mass0 = to_spectral(rho_in).data[0].real();

#pragma omp parallel for schedule(dynamic)
  for (long r = 0; r < static_cast<long>(n_realizations); ++r) {
    double merr = 0.0;
    auto fin = simulate_spde_path(op, rho_in, T, dt, seed, static_cast<std::uint64_t>(r), [&](const SpdeState& s) {
      merr = std::max(merr, std::abs(s.mass() - mass0));
      for (std::size_t c = 0; c < nc; ++c)
        if (at_step[c] == s.step) snap[r][c] = s.rho_hat;
    });
    min_rho[r] = fin.min_rho;
    mass_err[r] = merr;
  }

  SpdeEnsemble out;
  out.n_realizations = n_realizations;
  out.rank = op.rank();
  out.dt = h;
  out.dropped_trace = op.dropped_trace;
  for (std::size_t r = 0; r < n_realizations; ++r) {
    out.min_rho = std::min(out.min_rho, min_rho[r]);
    out.max_mass_error = std::max(out.max_mass_error, mass_err[r]);
  }
  const double nr = static_cast<double>(n_realizations);
  for (std::size_t c = 0; c < nc; ++c) {
    SpdeCheckpoint cp;
    cp.time = at_step[c] * h;
    SpectralField mean_hat(g, Rank::scalar);
    for (std::size_t r = 0; r < n_realizations; ++r)
      for (std::size_t p = 0; p < g.size(); ++p) mean_hat.data[p] += snap[r][c].data[p];
    for (auto& v : mean_hat.data) v /= nr;
    cp.mean = to_physical(mean_hat);
    cp.variance = TorusField(g, Rank::scalar);
    double hm1 = 0.0;
    for (std::size_t r = 0; r < n_realizations; ++r) {
      TorusField x = to_physical(snap[r][c]);
      for (std::size_t p = 0; p < g.size(); ++p) {
        double dd = x.data[p] - cp.mean.data[p];
        cp.variance.data[p] += dd * dd;
      }
      SpectralField diff = snap[r][c];
      for (std::size_t p = 0; p < g.size(); ++p) diff.data[p] -= mean_hat.data[p];
      double nrm = sobolev_norm(diff, -1.0);
      hm1 += nrm * nrm;
    }
    for (auto& v : cp.variance.data) v /= (nr - 1.0);
    cp.mean_hm1_se = std::sqrt(hm1 / (nr - 1.0) / nr);
    cp.samples.assign(xis.size(), std::vector<double>(n_realizations));
    for (std::size_t j = 0; j < xis.size(); ++j) {
      for (std::size_t r = 0; r < n_realizations; ++r) cp.samples[j][r] = spectral_pairing(snap[r][c], xi_hat[j]);
      cp.stats.push_back(sample_stats(cp.samples[j]));
    }
    out.checkpoints.push_back(std::move(cp));
  }
  return out;
}

inline SpdeEnsemble run_ensemble(const HydroCoefficients& h, const CovOperator& c, const TorusField& rho_in, double T,
                                 double dt, std::size_t n_realizations, std::uint64_t seed,
                                 const SpdeOptions& opt = {}, std::vector<double> checkpoints = {})
{
  return run_ensemble(make_spde_operator(h, c, opt), rho_in, T, dt, n_realizations, seed,
                      default_test_functions(h.grid.dim), std::move(checkpoints));
}

// sum_k <v, phi_k>^2 = |S^{1/2} v|^2
inline double s_half_norm_sq(const SpdeOperator& op, const TorusField& v)
{
  double s = 0.0;
  for (const auto& f : op.phi) {
    double q = pairing(v, f);
    s += q * q;
  }
  return s;
}

struct QuadraticVariationReport
{
  std::size_t n_realizations = 0;
  std::size_t steps = 0;
  double rate_at_zero = 0.0;       // 2 |S^{1/2}(rho_0 grad xi)|^2
  double mean_qv = 0.0;            // E sum (dM)^2
  double mean_predicted = 0.0;     // E 2 int |S^{1/2}(rho grad xi)|^2
  double ensemble_rel_gap = 0.0;   // |mean_qv - mean_predicted| / mean_predicted
  double mean_rel_gap = 0.0;       // mean over paths of |qv - predicted| / predicted
  double martingale_mean = 0.0;    // E M_T
  double martingale_se = 0.0;
  double max_abs_m = 0.0;
};

inline QuadraticVariationReport quadratic_variation_check(const SpdeOperator& op, const TorusField& rho_in,
                                                          const TorusField& xi, double T, double dt,
                                                          std::size_t n_realizations, std::uint64_t seed)
{
  if (op.form != NoiseForm::ito) throw std::invalid_argument("quadratic_variation_check: Ito form required");
  if (xi.grid != op.grid || xi.rank != Rank::scalar) throw std::invalid_argument("quadratic_variation_check: bad xi");
  const TorusGrid& g = op.grid;
  const std::size_t n = spde_step_count(T, dt);
  SpectralField xi_hat = to_spectral(xi);
  TorusField grad_xi = gradient(xi);
  const int d = g.dim;
  const double w = op.implicit_weight;

  auto weighted = [&](const TorusField& rho) {
    TorusField v(g, Rank::vector);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int i = 0; i < d; ++i) v.at(p, i) = rho.at(p) * grad_xi.at(p, i);
    return v;
  };

  std::vector<double> qv(n_realizations), pred(n_realizations), mT(n_realizations), mmax(n_realizations);
  const std::vector<double> zero_g(op.rank(), 0.0);

#pragma omp parallel for schedule(dynamic)
  for (long r = 0; r < static_cast<long>(n_realizations); ++r) {
    double m = 0.0, q = 0.0, pr = 0.0, mx = 0.0;
    SpectralField prev;
    bool first = true;
    simulate_spde_path(op, rho_in, T, dt, seed, static_cast<std::uint64_t>(r), [&](const SpdeState& s) {
      if (!first) {
        // dM = <rho_{n+1} - rho_n, xi> minus the deterministic part of the same step
        auto drift = detail::explicit_increment(op, prev, s.dt, zero_g, 0.0);
        for (std::size_t p = 0; p < g.size(); ++p)
          if (!op.kept[p]) drift.data[p] = 0.0;
        double dm = spectral_pairing(s.rho_hat, xi_hat) - spectral_pairing(prev, xi_hat) - spectral_pairing(drift, xi_hat);
        for (std::size_t p = 0; p < g.size(); ++p) {
          if (!op.kept[p]) continue;
          cplx lin = -op.symbol[p] * s.dt * (w * s.rho_hat.data[p] + (1.0 - w) * prev.data[p]);
          dm -= (lin * std::conj(xi_hat.data[p])).real();
        }
        m += dm;
        q += dm * dm;
        mx = std::max(mx, std::abs(m));
        pr += 2.0 * s.dt * s_half_norm_sq(op, weighted(to_physical(prev)));
      }
      prev = s.rho_hat;
      first = false;
    });
    qv[r] = q;
    pred[r] = pr;
    mT[r] = m;
    mmax[r] = mx;
  }

  QuadraticVariationReport rep;
  rep.n_realizations = n_realizations;
  rep.steps = n;
  rep.rate_at_zero = 2.0 * s_half_norm_sq(op, weighted(rho_in));
  for (std::size_t r = 0; r < n_realizations; ++r) {
    rep.mean_qv += qv[r];
    rep.mean_predicted += pred[r];
    rep.mean_rel_gap += pred[r] > 0.0 ? std::abs(qv[r] - pred[r]) / pred[r] : (qv[r] > 0.0 ? 1.0 : 0.0);
    rep.max_abs_m = std::max(rep.max_abs_m, mmax[r]);
  }
  const double nr = static_cast<double>(n_realizations);
  rep.mean_qv /= nr;
  rep.mean_predicted /= nr;
  rep.mean_rel_gap /= nr;
  rep.ensemble_rel_gap = rep.mean_predicted > 0.0 ? std::abs(rep.mean_qv - rep.mean_predicted) / rep.mean_predicted
                                                  : (rep.mean_qv > 0.0 ? 1.0 : 0.0);
  auto st = sample_stats(mT);
  rep.martingale_mean = st.mean;
  rep.martingale_se = st.stderr_mean();
  return rep;
}

inline QuadraticVariationReport quadratic_variation_check(const HydroCoefficients& h, const CovOperator& c,
                                                          const TorusField& rho_in, const TorusField& xi, double T,
                                                          double dt, std::size_t n_realizations, std::uint64_t seed)
{
  return quadratic_variation_check(make_spde_operator(h, c), rho_in, xi, T, dt, n_realizations, seed);
}

inline void write_ensemble_stats_csv(std::ostream& os, const SpdeEnsemble& e)
{
  os << "t,xi,mean,variance,se_mean,q05,q25,q50,q75,q95\n" << std::setprecision(17);
  for (const auto& cp : e.checkpoints)
    for (std::size_t j = 0; j < cp.samples.size(); ++j) {
      auto v = cp.samples[j];
      std::sort(v.begin(), v.end());
      auto q = [&](double a) {
        double pos = a * (v.size() - 1);
        std::size_t i = static_cast<std::size_t>(pos);
        double f = pos - i;
        return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
      };
      os << cp.time << "," << j << "," << cp.stats[j].mean << "," << cp.stats[j].variance << ","
         << cp.stats[j].stderr_mean() << "," << q(0.05) << "," << q(0.25) << "," << q(0.5) << "," << q(0.75) << ","
         << q(0.95) << "\n";
    }
}

inline void write_ensemble_fields_csv(std::ostream& os, const SpdeEnsemble& e)
{
  if (e.checkpoints.empty()) return;
  const TorusGrid& g = e.checkpoints[0].mean.grid;
  os << "t";
  for (int a = 0; a < g.dim; ++a) os << ",x" << a;
  os << ",mean,variance\n" << std::setprecision(17);
  for (const auto& cp : e.checkpoints)
    for (std::size_t p = 0; p < g.size(); ++p) {
      os << cp.time;
      for (int a = 0; a < g.dim; ++a) os << "," << g.coord(p, a);
      os << "," << cp.mean.data[p] << "," << cp.variance.data[p] << "\n";
    }
}

}  // namespace kdiff
