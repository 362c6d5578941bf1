#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "force_field.hpp"
#include "rng.hpp"
#include "torus_field.hpp"

namespace kdiff {

enum class Collision { LB, FP };

inline int collision_b(Collision c) { return c == Collision::LB ? 2 : 1; }
inline const char* collision_name(Collision c) { return c == Collision::LB ? "LB" : "FP"; }
inline Collision parse_collision(const std::string& s)
{
  if (s == "LB" || s == "lb") return Collision::LB;
  if (s == "FP" || s == "fp") return Collision::FP;
  throw std::invalid_argument("unknown collision operator: " + s);
}

inline double maxwellian(const double* v, int dim)
{
  double s = 0.0;
  for (int a = 0; a < dim; ++a) s += v[a] * v[a];
  return std::exp(-0.5 * s) / std::pow(2.0 * std::numbers::pi, 0.5 * dim);
}

struct ParticleEnsemble
{
  int dim = 1;
  Collision collision = Collision::LB;
  double epsilon = 1.0;
  double micro_time = 0.0;
  std::uint64_t step_index = 0;
  std::vector<double> x, v, w;  // positions and velocities are n x dim

  std::size_t size() const { return w.size(); }
  double macro_time() const { return micro_time * epsilon * epsilon; }
  double mass() const
  {
    // Neumaier compensated sum
    double s = 0.0, c = 0.0;
    for (double q : w) {
      double t = s + q;
      c += std::abs(s) >= std::abs(q) ? (s - t) + q : (q - t) + s;
      s = t;
    }
    return s + c;
  }
};

namespace detail {

// Var of int_0^h V for the unit OU velocity started from a fixed value.
inline double ou_position_variance(double h)
{
  if (h < 0.5) {
    // series sum_{n>=3} (-1)^{n+1} (2^n - 4) h^n / n!
    double term = 1.0, s = 0.0;
    double p2 = 1.0;
    for (int n = 1; n <= 30; ++n) {
      term *= h / n;
      p2 *= 2.0;
      if (n >= 3) s += ((n % 2) ? 1.0 : -1.0) * (p2 - 4.0) * term;
    }
    return s;
  }
  double a = -std::expm1(-h);
  return 2.0 * h - 2.0 * a - a * a;
}

struct Piece
{
  double h;
  const double* c;
};

inline void wrap_unit(double& x) { x -= std::floor(x); if (x >= 1.0) x -= 1.0; }

}  // namespace detail

// One micro step of length dt for every particle, with the force frozen piecewise.
inline void step_micro(ParticleEnsemble& ens, const ForcePath& path, double dt, std::uint64_t seed)
{
  if (!(dt > 0.0)) throw std::invalid_argument("step_micro: dt must be positive");
  const double t0 = ens.micro_time, t1 = t0 + dt;
  path.check_covered(t0, t1);
  std::vector<detail::Piece> pieces;
  path.for_each_piece(t0, t1, [&](double a, double b, const double* c) { pieces.push_back({b - a, c}); });

  struct PieceConst
  {
    double a, h, fp_sv, fp_cross, fp_si;
  };
  std::vector<PieceConst> pc(pieces.size());
  for (std::size_t q = 0; q < pieces.size(); ++q) {
    double h = pieces[q].h, a = -std::expm1(-h);
    double var_v = a * (2.0 - a), cov = a * a, var_i = detail::ou_position_variance(h);
    double sv = std::sqrt(var_v);
    pc[q] = {a, h, sv, cov / sv, std::sqrt(std::max(0.0, var_i - cov * cov / var_v))};
  }

  const int d = ens.dim;
  const double eps = ens.epsilon;
  const std::int64_t n = static_cast<std::int64_t>(ens.size());
  const ForceFieldModel& model = path.model;
  const bool lb = ens.collision == Collision::LB;
  const std::uint64_t step = ens.step_index;

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p) {
    CounterRng rng{seed, static_cast<std::uint64_t>(p), step};
    double* x = &ens.x[p * d];
    double* v = &ens.v[p * d];
    double E[3];
    for (std::size_t q = 0; q < pieces.size(); ++q) {
      model.eval(pieces[q].c, x, E);
      const PieceConst& k = pc[q];
      const double h = k.h;
      if (lb) {
        double u = rng.uniform();
        if (u < k.a) {
          double tau = -std::log1p(-u), rest = h - tau;
          for (int i = 0; i < d; ++i) {
            double vn = rng.normal();
            x[i] += eps * (v[i] * tau + 0.5 * E[i] * tau * tau + vn * rest + 0.5 * E[i] * rest * rest);
            v[i] = vn + E[i] * rest;
          }
        } else {
          for (int i = 0; i < d; ++i) {
            x[i] += eps * (v[i] * h + 0.5 * E[i] * h * h);
            v[i] += E[i] * h;
          }
        }
      } else {
        for (int i = 0; i < d; ++i) {
          double g1 = rng.normal(), g2 = rng.normal();
          double mv = v[i] * (1.0 - k.a) + k.a * E[i];
          double mi = k.a * v[i] + (h - k.a) * E[i];
          x[i] += eps * (mi + k.fp_cross * g1 + k.fp_si * g2);
          v[i] = mv + k.fp_sv * g1;
        }
      }
    }
    for (int i = 0; i < d; ++i) detail::wrap_unit(x[i]);
  }
  ens.micro_time = t1;
  ++ens.step_index;
}

enum class Estimator { histogram, fourier };

struct DensityEstimate
{
  double time = 0.0;  // macroscopic
  TorusField rho, J, K;
  std::array<double, 4> jbar{};
  Estimator estimator = Estimator::histogram;
};

// Cloud-in-cell (histogram) or exact empirical Fourier sums over all grid modes.
inline DensityEstimate moments(const ParticleEnsemble& ens, const TorusGrid& g,
                               Estimator est = Estimator::histogram)
{
  if (g.dim != ens.dim) throw std::invalid_argument("moments: grid dimension mismatch");
  const int d = ens.dim;
  DensityEstimate out;
  out.time = ens.macro_time();
  out.estimator = est;
  out.rho = TorusField(g, Rank::scalar);
  out.J = TorusField(g, Rank::vector);
  out.K = TorusField(g, Rank::matrix);
  const std::size_t n = ens.size();
  for (std::size_t p = 0; p < n; ++p) {
    const double* v = &ens.v[p * d];
    double sp2 = 0.0;
    for (int i = 0; i < d; ++i) sp2 += v[i] * v[i];
    double sp = std::sqrt(sp2);
    out.jbar[0] += ens.w[p];
    out.jbar[1] += ens.w[p] * sp;
    out.jbar[2] += ens.w[p] * sp2;
    out.jbar[3] += ens.w[p] * sp2 * sp;
  }
  if (est == Estimator::histogram) {
    const double inv_vol = 1.0 / g.cell_volume();
    const int corners = 1 << d;
    for (std::size_t p = 0; p < n; ++p) {
      const double* x = &ens.x[p * d];
      const double* v = &ens.v[p * d];
      int base[3];
      double frac[3];
      for (int a = 0; a < d; ++a) {
        double s = x[a] * g.m;
        double f = std::floor(s);
        base[a] = static_cast<int>(f);
        frac[a] = s - f;
      }
      for (int c = 0; c < corners; ++c) {
        double wt = ens.w[p] * inv_vol;
        std::size_t node = 0;
        for (int a = 0; a < d; ++a) {
          int bit = (c >> a) & 1;
          wt *= bit ? frac[a] : 1.0 - frac[a];
          node += g.wrap(base[a] + bit) * g.stride(a);
        }
        if (wt == 0.0) continue;
        out.rho.at(node) += wt;
        for (int i = 0; i < d; ++i) {
          out.J.at(node, i) += wt * v[i];
          for (int j = 0; j < d; ++j) out.K.at(node, i * d + j) += wt * v[i] * v[j];
        }
      }
    }
    return out;
  }
  SpectralField rs(g, Rank::scalar), js(g, Rank::vector), ks(g, Rank::matrix);
  std::vector<cplx> phase(g.size());
  for (std::size_t p = 0; p < n; ++p) {
    const double* x = &ens.x[p * d];
    const double* v = &ens.v[p * d];
    // exp(-2 pi i k.x) over all slots by per-axis powers
    std::vector<std::vector<cplx>> ax(d, std::vector<cplx>(g.m));
    for (int a = 0; a < d; ++a)
      for (int i = 0; i < g.m; ++i) ax[a][i] = std::polar(1.0, -two_pi * g.freq(i) * x[a]);
    for (std::size_t s = 0; s < g.size(); ++s) {
      cplx z = ens.w[p];
      for (int a = 0; a < d; ++a) z *= ax[a][g.axis_index(s, a)];
      rs.at(s) += z;
      for (int i = 0; i < d; ++i) {
        js.at(s, i) += z * v[i];
        for (int j = 0; j < d; ++j) ks.at(s, i * d + j) += z * v[i] * v[j];
      }
    }
  }
  out.rho = to_physical(rs);
  out.J = to_physical(js);
  out.K = to_physical(ks);
  return out;
}

// sum_p w_p xi(X_p)
inline double empirical_pairing(const ParticleEnsemble& ens, const TrigPolynomial& xi)
{
  double s = 0.0, c = 0.0;
  for (std::size_t p = 0; p < ens.size(); ++p) {
    double q = ens.w[p] * xi(&ens.x[p * ens.dim]);
    double t = s + q;
    c += std::abs(s) >= std::abs(q) ? (s - t) + q : (q - t) + s;
    s = t;
  }
  return s + c;
}

// Velocity law at time zero: the Maxwellian, or the invariant profile of the past force path.
enum class VelocityInit { maxwellian, invariant };

struct KineticRunConfig
{
  Collision collision = Collision::LB;
  double epsilon = 0.5;
  double horizon = 0.05;  // macroscopic T
  double dt = 0.0;        // macroscopic step; micro step is dt / eps^2
  std::size_t n_particles = 10000;
  TorusGrid grid{1, 64};
  int moment_order = 3;
  std::vector<double> checkpoints;  // macroscopic times; empty means {T}
  Estimator estimator = Estimator::histogram;
  bool record_moments = true;

  void validate() const
  {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("KineticRunConfig: epsilon must lie in (0,1]");
    if (!(horizon > 0.0)) throw std::invalid_argument("KineticRunConfig: horizon must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("KineticRunConfig: dt must be positive");
    if (dt > 0.1 * epsilon * epsilon * (1.0 + 1e-12))
      throw std::invalid_argument("KineticRunConfig: dt must satisfy dt <= 0.1 eps^2");
    if (moment_order < 0 || moment_order > 3) throw std::invalid_argument("KineticRunConfig: moment order must be <= 3");
    if (n_particles == 0) throw std::invalid_argument("KineticRunConfig: no particles");
    for (double c : checkpoints)
      if (c < 0.0 || c > horizon * (1 + 1e-12)) throw std::invalid_argument("KineticRunConfig: checkpoint outside [0,T]");
  }
  double micro_dt() const { return dt / (epsilon * epsilon); }
  double micro_horizon() const { return horizon / (epsilon * epsilon); }
};

// Positions from rho_in / mass by rejection, weights mass / n; velocities from the chosen law.
inline ParticleEnsemble sample_initial(int dim, Collision coll, double epsilon, const TrigPolynomial& rho_in,
                                       std::size_t n, std::uint64_t seed, VelocityInit vinit = VelocityInit::maxwellian,
                                       const ForcePath* past = nullptr)
{
  if (rho_in.dim != dim) throw std::invalid_argument("sample_initial: density dimension mismatch");
  ParticleEnsemble ens;
  ens.dim = dim;
  ens.collision = coll;
  ens.epsilon = epsilon;
  ens.x.resize(n * dim);
  ens.v.resize(n * dim);
  const double mass = rho_in.constant;
  if (!(mass > 0.0)) throw std::invalid_argument("sample_initial: initial mass must be positive");
  ens.w.assign(n, mass / n);
  const double bound = rho_in.sup_bound();
  if (vinit == VelocityInit::invariant && (past == nullptr || past->t_begin > -5.0 || past->t_end < 0.0))
    throw std::invalid_argument("sample_initial: invariant velocities need a force path covering [-5, 0]");
  const double tb = past ? past->t_begin : 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    CounterRng rng{seed, hash_string("initial"), p};
    double* x = &ens.x[p * dim];
    double* v = &ens.v[p * dim];
    while (true) {
      for (int a = 0; a < dim; ++a) x[a] = rng.uniform();
      double r = rho_in(x);
      if (r < 0.0) throw std::invalid_argument("sample_initial: negative initial density");
      if (rng.uniform() * bound <= r) break;
    }
    for (int a = 0; a < dim; ++a) v[a] = rng.normal();
    if (vinit == VelocityInit::invariant) {
      double shift[3] = {0, 0, 0}, E[3];
      if (coll == Collision::LB) {
        // mixture over sigma ~ -Exp(1) of M(v - int_sigma^0 E)
        double sigma = std::max(-rng.exponential(), tb);
        past->for_each_piece(sigma, 0.0, [&](double a, double b, const double* c) {
          past->model.eval(c, x, E);
          for (int i = 0; i < dim; ++i) shift[i] += (b - a) * E[i];
        });
      } else {
        past->for_each_piece(tb, 0.0, [&](double a, double b, const double* c) {
          past->model.eval(c, x, E);
          double wgt = std::exp(b) - std::exp(a);
          for (int i = 0; i < dim; ++i) shift[i] += wgt * E[i];
        });
      }
      for (int a = 0; a < dim; ++a) v[a] += shift[a];
    }
  }
  return ens;
}

struct KineticRun
{
  std::vector<DensityEstimate> checkpoints;
  ParticleEnsemble final_state;
};

// Evolves over micro time [0, T/eps^2]; observer(ens) runs at every checkpoint.
inline KineticRun run_rescaled(const KineticRunConfig& cfg, const ForcePath& path, ParticleEnsemble ens,
                               std::uint64_t seed,
                               const std::function<void(const ParticleEnsemble&)>& observer = nullptr)
{
  cfg.validate();
  if (ens.dim != cfg.grid.dim) throw std::invalid_argument("run_rescaled: ensemble/grid dimension mismatch");
  const double micro_T = cfg.micro_horizon();
  if (path.t_end < micro_T * (1 - 1e-12) || path.t_begin > 0.0)
    throw std::invalid_argument("run_rescaled: force path horizon shorter than T / eps^2");
  ens.epsilon = cfg.epsilon;
  ens.collision = cfg.collision;
  ens.micro_time = 0.0;
  ens.step_index = 0;
  std::vector<double> cps = cfg.checkpoints.empty() ? std::vector<double>{cfg.horizon} : cfg.checkpoints;
  std::sort(cps.begin(), cps.end());
  const double e2 = cfg.epsilon * cfg.epsilon;
  const double h = cfg.micro_dt();
  KineticRun run;
  auto emit = [&](double macro_t) {
    if (cfg.record_moments) {
      auto dens = moments(ens, cfg.grid, cfg.estimator);
      dens.time = macro_t;
      run.checkpoints.push_back(std::move(dens));
    }
    if (observer) observer(ens);
  };
  std::size_t next = 0;
  while (next < cps.size() && cps[next] <= 0.0) emit(cps[next++]);
  while (next < cps.size()) {
    double target = cps[next] / e2;
    while (ens.micro_time < target * (1 - 1e-12)) {
      double step = std::min(h, target - ens.micro_time);
      step_micro(ens, path, step, seed);
    }
    ens.micro_time = target;
    emit(cps[next++]);
  }
  run.final_state = std::move(ens);
  return run;
}

// theta = eps div(J + rho R0(e)), zeta = rho - theta
inline std::pair<TorusField, TorusField> corrector_decomposition(const DensityEstimate& dens,
                                                                 const ForceFieldModel& model, const ForceSample& e_now,
                                                                 double epsilon, std::uint64_t seed = 0)
{
  const TorusGrid& g = dens.rho.grid;
  auto r0c = resolvent_coeffs(model, 0.0, e_now, seed);
  TorusField r0 = model.field(r0c.data(), g);
  TorusField flux = dens.J;
  const int d = g.dim;
  for (std::size_t p = 0; p < g.size(); ++p)
    for (int i = 0; i < d; ++i) flux.at(p, i) += dens.rho.at(p) * r0.at(p, i);
  TorusField theta = divergence(flux);
  theta *= epsilon;
  TorusField zeta = dens.rho - theta;
  return {theta, zeta};
}

// Gaussian mixture sum_q w_q M(v - shift_q) with unit total weight.
struct InvariantProfile
{
  int dim = 1;
  std::vector<double> weights;
  std::vector<double> shifts;  // weights.size() x dim

  double operator()(const double* v) const
  {
    double s = 0.0, u[3];
    for (std::size_t q = 0; q < weights.size(); ++q) {
      for (int a = 0; a < dim; ++a) u[a] = v[a] - shifts[q * dim + a];
      s += weights[q] * maxwellian(u, dim);
    }
    return s;
  }
  std::vector<double> first_moment() const
  {
    std::vector<double> m(dim, 0.0);
    for (std::size_t q = 0; q < weights.size(); ++q)
      for (int a = 0; a < dim; ++a) m[a] += weights[q] * shifts[q * dim + a];
    return m;
  }
  std::vector<double> second_moment() const
  {
    std::vector<double> k(dim * dim, 0.0);
    for (std::size_t q = 0; q < weights.size(); ++q)
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
          k[i * dim + j] += weights[q] * ((i == j ? 1.0 : 0.0) + shifts[q * dim + i] * shifts[q * dim + j]);
    return k;
  }
};

namespace detail {
inline const double gl8_nodes[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                                    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
inline const double gl8_weights[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                                      0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
}  // namespace detail

// Invariant velocity profile at x from the force history on [-T_trunc, 0].
inline InvariantProfile invariant_solution(const ForcePath& path, Collision coll, const double* x, double t_trunc)
{
  if (t_trunc < 5.0) throw std::invalid_argument("invariant_solution: truncation horizon below 5");
  const double t0 = -t_trunc;
  path.check_covered(t0, 0.0);
  const int d = path.model.dim;
  InvariantProfile prof;
  prof.dim = d;
  double E[3];
  if (coll == Collision::FP) {
    std::vector<double> w(d, 0.0);
    path.for_each_piece(t0, 0.0, [&](double a, double b, const double* c) {
      path.model.eval(c, x, E);
      double wgt = std::exp(b) - std::exp(a);
      for (int i = 0; i < d; ++i) w[i] += wgt * E[i];
    });
    prof.weights = {1.0};
    prof.shifts = w;
    return prof;
  }
  // pieces of [t0,0] where E is constant, further split to unit length; u(sigma) = int_sigma^0 E
  struct Seg
  {
    double a, b;
    double e[3];
  };
  std::vector<Seg> segs;
  path.for_each_piece(t0, 0.0, [&](double a, double b, const double* c) {
    Seg s{a, b, {0, 0, 0}};
    path.model.eval(c, x, s.e);
    int parts = std::max(1, static_cast<int>(std::ceil(b - a)));
    for (int k = 0; k < parts; ++k) {
      Seg t = s;
      t.a = a + (b - a) * k / parts;
      t.b = a + (b - a) * (k + 1) / parts;
      segs.push_back(t);
    }
  });
  std::vector<double> u_right(d, 0.0);  // u at the right end of the current segment
  double total = 0.0;
  for (auto it = segs.rbegin(); it != segs.rend(); ++it) {
    double half = 0.5 * (it->b - it->a), mid = 0.5 * (it->a + it->b);
    for (int q = 0; q < 8; ++q) {
      double sigma = mid + half * detail::gl8_nodes[q];
      double wq = half * detail::gl8_weights[q] * std::exp(sigma);
      prof.weights.push_back(wq);
      total += wq;
      for (int i = 0; i < d; ++i) prof.shifts.push_back(u_right[i] + (it->b - sigma) * it->e[i]);
    }
    for (int i = 0; i < d; ++i) u_right[i] += (it->b - it->a) * it->e[i];
  }
  for (auto& w : prof.weights) w /= total;
  return prof;
}

// Phase-space grid for N = 1: x_i = i/nx, v_j = -vmax + j dv.
struct PhaseGrid
{
  int nx = 32;
  int nv = 128;
  double vmax = 8.0;
  double dv() const { return 2.0 * vmax / (nv - 1); }
  double x(int i) const { return double(i) / nx; }
  double v(int j) const { return -vmax + j * dv(); }
};

struct PhaseDensity
{
  PhaseGrid grid;
  std::vector<double> f;  // nx x nv

  double& at(int i, int j) { return f[static_cast<std::size_t>(i) * grid.nv + j]; }
  double at(int i, int j) const { return f[static_cast<std::size_t>(i) * grid.nv + j]; }
  std::vector<double> velocity_moment(int order) const
  {
    std::vector<double> r(grid.nx, 0.0);
    for (int i = 0; i < grid.nx; ++i)
      for (int j = 0; j < grid.nv; ++j) r[i] += at(i, j) * std::pow(grid.v(j), order) * grid.dv();
    return r;
  }
  double mass() const
  {
    double s = 0.0;
    for (double r : velocity_moment(0)) s += r;
    return s / grid.nx;
  }
  static PhaseDensity from_function(const PhaseGrid& g, const std::function<double(double, double)>& fn)
  {
    PhaseDensity d{g, std::vector<double>(static_cast<std::size_t>(g.nx) * g.nv)};
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.nv; ++j) d.at(i, j) = fn(g.x(i), g.v(j));
    return d;
  }
};

namespace detail {

inline void cubic_weights(double t, double* w)
{
  // Lagrange weights on nodes -1, 0, 1, 2
  w[0] = -t * (t - 1) * (t - 2) / 6.0;
  w[1] = (t + 1) * (t - 1) * (t - 2) / 2.0;
  w[2] = -(t + 1) * t * (t - 2) / 2.0;
  w[3] = (t + 1) * t * (t - 1) / 6.0;
}

// trigonometric interpolant of equispaced periodic samples, Nyquist term halved
struct PeriodicInterpolant
{
  std::vector<cplx> c;  // c[k] for k = 0..n/2

  explicit PeriodicInterpolant(const std::vector<double>& y)
  {
    const int n = static_cast<int>(y.size());
    c.assign(n / 2 + 1, cplx(0.0));
    for (int k = 0; k <= n / 2; ++k) {
      for (int i = 0; i < n; ++i) c[k] += y[i] * std::polar(1.0, -two_pi * k * i / n);
      c[k] /= double(n);
    }
  }
  double operator()(double x) const
  {
    const int h = static_cast<int>(c.size()) - 1;
    cplx z = std::polar(1.0, two_pi * x), zk = 1.0;
    double r = c[0].real();
    for (int k = 1; k <= h; ++k) {
      zk *= z;
      r += (k == h ? 1.0 : 2.0) * (c[k] * zk).real();
    }
    return r;
  }
};

inline double phase_cubic(const PhaseDensity& d, double x, double v)
{
  const PhaseGrid& g = d.grid;
  double sv = (v + g.vmax) / g.dv();
  if (sv < 0.0 || sv > g.nv - 1) return 0.0;
  double fv = std::floor(sv);
  int j0 = static_cast<int>(fv);
  double wv[4];
  cubic_weights(sv - fv, wv);
  double r = 0.0;
  double sx = x * g.nx;
  double fx = std::floor(sx);
  int i0 = static_cast<int>(fx);
  double wx[4];
  cubic_weights(sx - fx, wx);
  for (int a = 0; a < 4; ++a) {
    int i = ((i0 - 1 + a) % g.nx + g.nx) % g.nx;
    for (int b = 0; b < 4; ++b) {
      int j = j0 - 1 + b;
      if (j < 0 || j >= g.nv) continue;
      r += wx[a] * wv[b] * d.at(i, j);
    }
  }
  return r;
}

}  // namespace detail

struct MildOracleOptions
{
  int nt = 100;                 // time levels on [t0, t1]
  double tol = 1e-8;            // fixed-point residual
  int max_sweeps = 50;
  int rk_substeps = 2;          // RK4 steps per constant piece and time level
};

// Duhamel form f(t) = e^{-t} f_in o Phi^t + int_0^t e^{-(t-s)} [rho(f(s)) M] o Phi^{t-s} ds for the
// unscaled LB equation in N = 1, micro time.
inline PhaseDensity mild_lb_oracle(const std::function<double(double, double)>& f_in, const PhaseGrid& g,
                                   const ForcePath& path, double t0, double t1, MildOracleOptions opt = {})
{
  if (path.model.dim != 1) throw std::invalid_argument("mild_lb_oracle: N = 1 only");
  if (!(t1 > t0)) throw std::invalid_argument("mild_lb_oracle: empty time interval");
  path.check_covered(t0, t1);
  const int nt = opt.nt;
  const double h = (t1 - t0) / nt;
  const std::size_t npts = static_cast<std::size_t>(g.nx) * g.nv;
  const double alpha = (1.0 - std::exp(-h) * (1.0 + h)) / h;  // weight on the left node
  const double beta = -std::expm1(-h) - alpha;                 // weight on the right node
  double m0 = 0.0;
  for (int j = 0; j < g.nv; ++j) m0 += maxwellian(std::array<double, 1>{g.v(j)}.data(), 1) * g.dv();

  std::vector<std::vector<double>> rho(nt + 1, std::vector<double>(g.nx));
  for (int i = 0; i < g.nx; ++i) {
    double s = 0.0;
    for (int j = 0; j < g.nv; ++j) s += f_in(g.x(i), g.v(j)) * g.dv();
    rho[0][i] = s;
  }
  std::vector<double> X(npts), V(npts), A(npts), Mv(g.nv);
  std::vector<detail::PeriodicInterpolant> rho_interp;
  rho_interp.emplace_back(rho[0]);
  for (int j = 0; j < g.nv; ++j) Mv[j] = maxwellian(std::array<double, 1>{g.v(j)}.data(), 1);

  using Cut = std::pair<double, const double*>;
  // one RK4 step of xdot = v, vdot = E(t,x) per constant piece, walked backward
  auto back_step = [&](const std::vector<Cut>& cuts, double& x, double& v) {
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it)
      for (int sub = 0; sub < opt.rk_substeps; ++sub) {
      double dt = -it->first / opt.rk_substeps;
      const double* c = it->second;
      auto E = [&](double xx) {
        double out;
        path.model.eval(c, &xx, &out);
        return out;
      };
      double k1x = v, k1v = E(x);
      double k2x = v + 0.5 * dt * k1v, k2v = E(x + 0.5 * dt * k1x);
      double k3x = v + 0.5 * dt * k2v, k3v = E(x + 0.5 * dt * k2x);
      double k4x = v + dt * k3v, k4v = E(x + dt * k3x);
      x += dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
      v += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
      }
  };
  std::vector<std::vector<Cut>> cuts(nt);
  for (int m = 0; m < nt; ++m)
    path.for_each_piece(t0 + m * h, t0 + (m + 1) * h,
                        [&](double a, double b, const double* c) { cuts[m].push_back({b - a, c}); });

  PhaseDensity out{g, std::vector<double>(npts)};
  for (int n = 1; n <= nt; ++n) {
    const double tn = t0 + n * h;
    std::fill(A.begin(), A.end(), 0.0);
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.nv; ++j) {
        X[i * g.nv + j] = g.x(i);
        V[i * g.nv + j] = g.v(j);
      }
    // every node except s = t_n, following characteristics back in time
    for (int m = n - 1; m >= 0; --m) {
      const double tm = t0 + m * h;
      // node m carries alpha from [t_m, t_{m+1}] and beta from [t_{m-1}, t_m]
      const double w = std::exp(-(tn - tm - h)) * alpha + (m > 0 ? std::exp(-(tn - tm)) * beta : 0.0);
      const double w_in = std::exp(-(tn - t0));
#pragma omp parallel for schedule(static)
      for (std::int64_t q = 0; q < static_cast<std::int64_t>(npts); ++q) {
        back_step(cuts[m], X[q], V[q]);
        double xw = X[q] - std::floor(X[q]);
        double vv = V[q];
        A[q] += w * rho_interp[m](xw) * maxwellian(&vv, 1);
        if (m == 0) A[q] += w_in * f_in(xw, vv);
      }
    }
    // implicit endpoint: rho_n = A_rho + beta m0 rho_n, solved by fixed-point sweeps
    std::vector<double> arho(g.nx, 0.0);
    for (int i = 0; i < g.nx; ++i)
      for (int j = 0; j < g.nv; ++j) arho[i] += A[i * g.nv + j] * g.dv();
    std::vector<double> r = rho[n - 1];
    bool converged = false;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
      double res = 0.0, scale = 0.0;
      for (int i = 0; i < g.nx; ++i) {
        double nr = arho[i] + beta * m0 * r[i];
        res = std::max(res, std::abs(nr - r[i]));
        scale = std::max(scale, std::abs(nr));
        r[i] = nr;
      }
      if (res <= opt.tol * std::max(1.0, scale)) {
        converged = true;
        break;
      }
    }
    if (!converged) throw std::runtime_error("mild_lb_oracle: fixed-point iteration did not converge");
    rho[n] = r;
    rho_interp.emplace_back(rho[n]);
    if (n == nt)
      for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.nv; ++j) out.at(i, j) = A[i * g.nv + j] + beta * r[i] * Mv[j];
  }
  return out;
}

inline PhaseDensity mild_lb_oracle(const PhaseDensity& init, const ForcePath& path, double t0, double t1,
                                   MildOracleOptions opt = {})
{
  return mild_lb_oracle([&](double x, double v) { return detail::phase_cubic(init, x, v); }, init.grid, path, t0, t1,
                        opt);
}

struct GaussianIdentityReport
{
  double l2_norm_sq = 0.0, l2_norm_sq_exact = 0.0;
  double l2_dist_sq = 0.0, l2_dist_sq_exact = 0.0;
  double mass = 0.0;
  double l1_distance = 0.0, l1_bound = 0.0;
  bool l1_bound_holds = false;
  double max_rel_error = 0.0;
};

namespace detail {

// adaptive Gauss-Kronrod nested over each axis of the box; split(point) gives an interior
// breakpoint of the innermost axis or NaN
template <class F, class S>
double box_integral(F&& f, S&& split, int dim, const double* lo, const double* hi, double tol, double* point,
                    int axis = 0)
{
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto inner = [&](double t) {
    point[axis] = t;
    if (axis + 1 == dim) return f(point);
    return box_integral(f, split, dim, lo, hi, tol, point, axis + 1);
  };
  double a = lo[axis], b = hi[axis];
  double cut = axis + 1 == dim ? split(point) : std::numeric_limits<double>::quiet_NaN();
  double val = 0.0, err = 0.0;
  if (std::isfinite(cut) && cut > a && cut < b) {
    double e1 = 0.0, e2 = 0.0;
    val = GK::integrate(inner, a, cut, 15, tol, &e1) + GK::integrate(inner, cut, b, 15, tol, &e2);
    err = e1 + e2;
  } else {
    val = GK::integrate(inner, a, b, 15, tol, &err);
  }
  if (!(std::isfinite(val)) || err > 1e-7 * std::max(1.0, std::abs(val)))
    throw std::runtime_error("gaussian_identities_check: quadrature did not converge");
  return val;
}

}  // namespace detail

inline GaussianIdentityReport gaussian_identities_check(std::vector<double> w, std::vector<double> z,
                                                        double tol = 1e-9)
{
  const int d = static_cast<int>(w.size());
  if (d < 1 || d > 3 || z.size() != w.size()) throw std::invalid_argument("gaussian_identities_check: bad dimension");
  double nw = 0, nz = 0, wz = 0, dwz = 0;
  for (int a = 0; a < d; ++a) {
    nw += w[a] * w[a];
    nz += z[a] * z[a];
    wz += w[a] * z[a];
    dwz += (w[a] - z[a]) * (w[a] - z[a]);
  }
  if (std::sqrt(nw) > 5.0 + 1e-12 || std::sqrt(nz) > 5.0 + 1e-12)
    throw std::invalid_argument("gaussian_identities_check: |w|, |z| must be <= 5");
  // relabel axes so the innermost one carries the largest component of w - z
  int big = 0;
  for (int a = 1; a < d; ++a)
    if (std::abs(w[a] - z[a]) > std::abs(w[big] - z[big])) big = a;
  std::swap(w[big], w[d - 1]);
  std::swap(z[big], z[d - 1]);

  std::vector<double> zero(d, 0.0), w2(d), z2(d), wpz(d);
  for (int a = 0; a < d; ++a) {
    w2[a] = 2 * w[a];
    z2[a] = 2 * z[a];
    wpz[a] = w[a] + z[a];
  }
  auto M = [d](const double* v, const std::vector<double>& s) {
    double u[3];
    for (int a = 0; a < d; ++a) u[a] = v[a] - s[a];
    return maxwellian(u, d);
  };
  auto make_box = [&](const std::vector<std::vector<double>>& centres, double margin, double* lo, double* hi) {
    for (int a = 0; a < d; ++a) {
      lo[a] = 1e300;
      hi[a] = -1e300;
      for (auto& c : centres) {
        lo[a] = std::min(lo[a], c[a] - margin);
        hi[a] = std::max(hi[a], c[a] + margin);
      }
    }
  };
  auto no_split = [](const double*) { return std::numeric_limits<double>::quiet_NaN(); };
  // M_w = M_z on the plane 2 v.(z - w) = |z|^2 - |w|^2
  auto kink = [&](const double* v) {
    const int i = d - 1;
    double dz = z[i] - w[i];
    if (dz == 0.0) return std::numeric_limits<double>::quiet_NaN();
    double rhs = 0.5 * (nz - nw);
    for (int a = 0; a < i; ++a) rhs -= v[a] * (z[a] - w[a]);
    return rhs / dz;
  };
  GaussianIdentityReport rep;
  double lo[3], hi[3], pt[3];
  make_box({w2}, 9.0, lo, hi);
  rep.l2_norm_sq = detail::box_integral([&](const double* v) { return std::pow(M(v, w), 2) / M(v, zero); }, no_split,
                                        d, lo, hi, tol, pt);
  rep.l2_norm_sq_exact = std::exp(nw);
  make_box({w2, z2, wpz}, 9.0, lo, hi);
  rep.l2_dist_sq = detail::box_integral([&](const double* v) { return std::pow(M(v, w) - M(v, z), 2) / M(v, zero); },
                                        no_split, d, lo, hi, tol, pt);
  rep.l2_dist_sq_exact = std::exp(nw) + std::exp(nz) - 2.0 * std::exp(wz);
  make_box({w}, 9.0, lo, hi);
  rep.mass = detail::box_integral([&](const double* v) { return M(v, w); }, no_split, d, lo, hi, tol, pt);
  make_box({w, z}, 9.0, lo, hi);
  rep.l1_distance =
      detail::box_integral([&](const double* v) { return std::abs(M(v, w) - M(v, z)); }, kink, d, lo, hi, tol, pt);
  double r = std::sqrt(dwz);
  rep.l1_bound = r < 1.0 ? std::min(2.0, std::sqrt(r / (1.0 - r))) : 2.0;
  rep.l1_bound_holds = rep.l1_distance <= rep.l1_bound + 1e-9;
  auto rel = [](double x, double y) { return std::abs(x - y) / std::abs(y); };
  rep.max_rel_error = std::max({rel(rep.l2_norm_sq, rep.l2_norm_sq_exact), rel(rep.mass, 1.0),
                                dwz == 0.0 ? std::abs(rep.l2_dist_sq) : rel(rep.l2_dist_sq, rep.l2_dist_sq_exact)});
  return rep;
}

inline void write_scalar_series_header(std::ostream& os) { os << "t,J0,J1,J2,J3,rho_Hm1\n"; }

inline void write_scalar_series_row(std::ostream& os, const DensityEstimate& d)
{
  os << std::setprecision(17) << d.time << "," << d.jbar[0] << "," << d.jbar[1] << "," << d.jbar[2] << ","
     << d.jbar[3] << "," << sobolev_norm(d.rho, -1.0) << "\n";
}

inline void write_checkpoint_csv(std::ostream& os, const DensityEstimate& d)
{
  const TorusGrid& g = d.rho.grid;
  os << "# kinetic_checkpoint t=" << std::setprecision(17) << d.time << " dim=" << g.dim << " points_per_axis=" << g.m
     << "\n";
  for (int a = 0; a < g.dim; ++a) os << (a ? "," : "") << "x" << a;
  os << ",rho";
  for (int a = 0; a < g.dim; ++a) os << ",J" << a;
  os << "\n";
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int a = 0; a < g.dim; ++a) os << (a ? "," : "") << g.coord(p, a);
    os << "," << d.rho.at(p);
    for (int a = 0; a < g.dim; ++a) os << "," << d.J.at(p, a);
    os << "\n";
  }
}

}  // namespace kdiff
