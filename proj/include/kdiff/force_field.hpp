#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rng.hpp"
#include "torus_field.hpp"

namespace kdiff {

// cos(2 pi k.x) d  or  sin(2 pi k.x) d
struct BasisField
{
  std::vector<int> k;
  bool sine = false;
  std::vector<double> direction;

  double profile(const double* x) const
  {
    double ph = 0.0;
    for (std::size_t a = 0; a < k.size(); ++a) ph += k[a] * x[a];
    ph *= two_pi;
    return sine ? std::sin(ph) : std::cos(ph);
  }
  double profile_derivative(const double* x, int axis) const
  {
    double ph = 0.0;
    for (std::size_t a = 0; a < k.size(); ++a) ph += k[a] * x[a];
    ph *= two_pi;
    double w = two_pi * k[axis];
    return sine ? w * std::cos(ph) : -w * std::sin(ph);
  }
};

inline BasisField cos_mode(std::vector<int> k, std::vector<double> dir) { return {std::move(k), false, std::move(dir)}; }
inline BasisField sin_mode(std::vector<int> k, std::vector<double> dir) { return {std::move(k), true, std::move(dir)}; }

enum class ForceKind { renewal, ou_driven };

struct ForceFieldModel
{
  ForceKind kind = ForceKind::renewal;
  int dim = 1;
  std::vector<BasisField> basis;

  // renewal: law nu is a finite mixture of coefficient atoms
  std::vector<std::vector<double>> atoms;
  std::vector<double> probs;

  // ou_driven: coefficients a_l X_l, X a standard OU process in R^L
  std::vector<double> ou_amplitude;

  double ball_radius = 0.0;   // R; <= 0 means derive it in finalize()
  double sobolev_order = 6.0;  // s of the F-norm
  double mixing_rate = 1.0;
  double resolvent_horizon_factor = 40.0;
  int resolvent_replicates = 256;
  double resolvent_panel = 0.5;

  Eigen::MatrixXd gram;
  std::vector<double> cdf;

  std::size_t nbasis() const { return basis.size(); }

  double basis_inner(const BasisField& a, const BasisField& b) const
  {
    double dd = 0.0;
    for (int i = 0; i < dim; ++i) dd += a.direction[i] * b.direction[i];
    if (dd == 0.0 || a.sine != b.sine) return 0.0;
    bool same = true, opposite = true, zero = true;
    double k2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      same &= a.k[i] == b.k[i];
      opposite &= a.k[i] == -b.k[i];
      zero &= a.k[i] == 0;
      k2 += double(a.k[i]) * a.k[i];
    }
    if (!same && !opposite) return 0.0;
    double w = std::pow(1.0 + two_pi * two_pi * k2, sobolev_order);
    if (zero) return a.sine ? 0.0 : w * dd;
    double sign = (a.sine && opposite && !same) ? -1.0 : 1.0;
    return 0.5 * w * dd * sign;
  }

  double f_norm(const double* c) const
  {
    double s = 0.0;
    const std::size_t L = nbasis();
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) s += c[i] * gram(i, j) * c[j];
    return std::sqrt(std::max(s, 0.0));
  }

  void finalize()
  {
    if (dim < 1) throw std::invalid_argument("ForceFieldModel: dim must be positive");
    const std::size_t L = nbasis();
    for (auto& b : basis) {
      if (static_cast<int>(b.k.size()) != dim || static_cast<int>(b.direction.size()) != dim)
        throw std::invalid_argument("ForceFieldModel: basis field dimension mismatch");
      double n2 = 0.0;
      for (double d : b.direction) n2 += d * d;
      if (n2 == 0.0) throw std::invalid_argument("ForceFieldModel: zero basis direction");
      for (double& d : b.direction) d /= std::sqrt(n2);
      bool zero = std::all_of(b.k.begin(), b.k.end(), [](int k) { return k == 0; });
      if (zero && b.sine) throw std::invalid_argument("ForceFieldModel: sine mode with k = 0 vanishes");
    }
    gram.resize(L, L);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) gram(i, j) = basis_inner(basis[i], basis[j]);

    if (kind == ForceKind::renewal) {
      if (atoms.empty()) throw std::invalid_argument("renewal model: empty base law");
      if (probs.empty()) probs.assign(atoms.size(), 1.0 / atoms.size());
      if (probs.size() != atoms.size()) throw std::invalid_argument("renewal model: probs/atoms size mismatch");
      double tot = 0.0;
      for (double p : probs) {
        if (p < 0) throw std::invalid_argument("renewal model: negative probability");
        tot += p;
      }
      if (std::abs(tot - 1.0) > 1e-12) throw std::invalid_argument("renewal model: probabilities must sum to 1");
      cdf.resize(probs.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < probs.size(); ++i) cdf[i] = (acc += probs[i]);
      cdf.back() = 1.0;
      std::vector<double> mean(L, 0.0);
      double rmax = 0.0;
      for (std::size_t a = 0; a < atoms.size(); ++a) {
        if (atoms[a].size() != L) throw std::invalid_argument("renewal model: atom length != basis size");
        for (std::size_t l = 0; l < L; ++l) mean[l] += probs[a] * atoms[a][l];
        rmax = std::max(rmax, f_norm(atoms[a].data()));
      }
      for (std::size_t l = 0; l < L; ++l) {
        double scale = 0.0;
        for (auto& at : atoms) scale = std::max(scale, std::abs(at[l]));
        if (std::abs(mean[l]) > 1e-12 * std::max(1.0, scale))
          throw std::invalid_argument("renewal model: base law is not centred");
      }
      if (ball_radius <= 0.0) ball_radius = rmax;
      if (rmax > ball_radius * (1 + 1e-12)) throw std::invalid_argument("renewal model: atom outside the F-ball");
    } else {
      if (ou_amplitude.size() != L) throw std::invalid_argument("ou model: amplitude length != basis size");
      if (ball_radius <= 0.0) {
        double s = 0.0;
        for (std::size_t l = 0; l < L; ++l) s += ou_amplitude[l] * ou_amplitude[l] * gram(l, l);
        ball_radius = 6.0 * std::sqrt(s);
        if (ball_radius <= 0.0) ball_radius = 1.0;
      }
    }
    if (mixing_rate <= 0) throw std::invalid_argument("ForceFieldModel: mixing rate must be positive");
    if (resolvent_replicates < 1) throw std::invalid_argument("ForceFieldModel: resolvent replicates must be >= 1");
  }

  // value of sum_l c_l b_l at x, written to out[0..dim)
  void eval(const double* c, const double* x, double* out) const
  {
    for (int i = 0; i < dim; ++i) out[i] = 0.0;
    for (std::size_t l = 0; l < nbasis(); ++l) {
      if (c[l] == 0.0) continue;
      double v = c[l] * basis[l].profile(x);
      for (int i = 0; i < dim; ++i) out[i] += v * basis[l].direction[i];
    }
  }

  double divergence_at(const double* c, const double* x) const
  {
    double s = 0.0;
    for (std::size_t l = 0; l < nbasis(); ++l)
      for (int i = 0; i < dim; ++i) s += c[l] * basis[l].direction[i] * basis[l].profile_derivative(x, i);
    return s;
  }

  TorusField field(const double* c, const TorusGrid& g) const
  {
    if (g.dim != dim) throw std::invalid_argument("ForceFieldModel: grid dimension mismatch");
    TorusField out(g, Rank::vector);
    double x[3] = {0, 0, 0}, v[3];
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (int a = 0; a < dim; ++a) x[a] = g.coord(p, a);
      eval(c, x, v);
      for (int a = 0; a < dim; ++a) out.at(p, a) = v[a];
    }
    return out;
  }

  // radial clip of a (.) X into the F-ball
  std::vector<double> link(const double* X) const
  {
    const std::size_t L = nbasis();
    std::vector<double> c(L);
    for (std::size_t l = 0; l < L; ++l) c[l] = ou_amplitude[l] * X[l];
    double n = f_norm(c.data());
    if (n > ball_radius) {
      double s = ball_radius / n;
      for (auto& v : c) v *= s;
    }
    return c;
  }

  std::size_t draw_atom(CounterRng& rng) const
  {
    double u = rng.uniform();
    return static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  }
};

struct ForceSample
{
  std::vector<double> coeffs;
  std::vector<double> latent;
  double f_norm_bound = 0.0;

  TorusField field(const ForceFieldModel& m, const TorusGrid& g) const { return m.field(coeffs.data(), g); }
};

inline ForceSample draw_stationary(const ForceFieldModel& m, CounterRng& rng)
{
  ForceSample s;
  s.f_norm_bound = m.ball_radius;
  if (m.kind == ForceKind::renewal) {
    s.coeffs = m.atoms[m.draw_atom(rng)];
  } else {
    s.latent.resize(m.nbasis());
    for (auto& x : s.latent) x = rng.normal();
    s.coeffs = m.link(s.latent.data());
  }
  return s;
}

inline ForceSample sample_stationary(const ForceFieldModel& m, std::uint64_t seed)
{
  CounterRng rng{seed, hash_string("stationary")};
  return draw_stationary(m, rng);
}

// Piecewise-constant, right-continuous trajectory of the coefficient vector.
struct ForcePath
{
  ForceFieldModel model;
  std::vector<double> times;   // segment start times, times[0] = t_begin
  std::vector<double> coeffs;  // segments x nbasis
  std::vector<double> latent;  // ou_driven only
  std::vector<char> jump;      // renewal clock ring at segment start
  double t_begin = 0.0, t_end = 0.0;
  std::uint64_t seed = 0;

  std::size_t segments() const { return times.size(); }
  std::size_t width() const { return model.nbasis(); }
  double segment_end(std::size_t i) const { return i + 1 < times.size() ? times[i + 1] : t_end; }

  void check_covered(double t0, double t1) const
  {
    double tol = 1e-9 * std::max(1.0, std::abs(t_end) + std::abs(t_begin));
    if (t0 < t_begin - tol || t1 > t_end + tol) throw std::out_of_range("ForcePath: path coverage gap");
  }

  std::size_t segment_at(double t) const
  {
    check_covered(t, t);
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0;
    return static_cast<std::size_t>(it - times.begin()) - 1;
  }

  const double* coeffs_at(double t) const { return &coeffs[segment_at(t) * width()]; }
  const double* segment_coeffs(std::size_t i) const { return &coeffs[i * width()]; }

  ForceSample sample_at(double t) const
  {
    ForceSample s;
    std::size_t i = segment_at(t);
    s.coeffs.assign(coeffs.begin() + i * width(), coeffs.begin() + (i + 1) * width());
    if (!latent.empty()) s.latent.assign(latent.begin() + i * width(), latent.begin() + (i + 1) * width());
    s.f_norm_bound = model.ball_radius;
    return s;
  }

  // f(a, b, c) for every maximal constant piece [a,b) of [t0,t1]
  template <class F>
  void for_each_piece(double t0, double t1, F&& f) const
  {
    check_covered(t0, t1);
    if (t1 <= t0) return;
    std::size_t i = segment_at(t0);
    double a = t0;
    while (a < t1) {
      double b = std::min(segment_end(i), t1);
      if (i + 1 >= segments()) b = t1;
      if (b > a) f(a, b, segment_coeffs(i));
      a = b;
      ++i;
    }
  }

  std::vector<double> integral(double t0, double t1) const
  {
    std::vector<double> out(width(), 0.0);
    for_each_piece(t0, t1, [&](double a, double b, const double* c) {
      for (std::size_t l = 0; l < width(); ++l) out[l] += (b - a) * c[l];
    });
    return out;
  }

  // int_{t0}^{t1} exp(-rate (t1 - s)) c(s) ds
  std::vector<double> damped_integral(double t0, double t1, double rate = 1.0) const
  {
    std::vector<double> out(width(), 0.0);
    for_each_piece(t0, t1, [&](double a, double b, const double* c) {
      double w = (std::exp(-rate * (t1 - b)) - std::exp(-rate * (t1 - a))) / rate;
      for (std::size_t l = 0; l < width(); ++l) out[l] += w * c[l];
    });
    return out;
  }

  int jumps(double t0, double t1) const
  {
    int n = 0;
    for (std::size_t i = 0; i < segments(); ++i)
      if (jump[i] && times[i] > t0 && times[i] <= t1) ++n;
    return n;
  }
};

inline ForcePath generate_path(const ForceFieldModel& m, double horizon, double dt_ou, std::uint64_t seed,
                               double t_begin = 0.0)
{
  if (!(horizon > 0.0)) throw std::invalid_argument("generate_path: horizon must be positive");
  ForcePath p;
  p.model = m;
  p.t_begin = t_begin;
  p.t_end = t_begin + horizon;
  p.seed = seed;
  CounterRng rng{seed, hash_string("force_path")};
  const std::size_t L = m.nbasis();
  if (m.kind == ForceKind::renewal) {
    double t = t_begin;
    bool ring = false;
    while (true) {
      const auto& a = m.atoms[m.draw_atom(rng)];
      p.times.push_back(t);
      p.jump.push_back(ring);
      p.coeffs.insert(p.coeffs.end(), a.begin(), a.end());
      t += rng.exponential();
      ring = true;
      if (t >= p.t_end) break;
    }
  } else {
    if (!(dt_ou > 0.0)) throw std::invalid_argument("generate_path: dt_ou must be positive for ou_driven");
    auto n = static_cast<std::size_t>(std::ceil(horizon / dt_ou - 1e-12));
    double h = horizon / n;
    double decay = std::exp(-h), diff = std::sqrt(-std::expm1(-2.0 * h));
    std::vector<double> X(L);
    for (auto& x : X) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0)
        for (auto& x : X) x = decay * x + diff * rng.normal();
      p.times.push_back(t_begin + i * h);
      p.jump.push_back(0);
      auto c = m.link(X.data());
      p.coeffs.insert(p.coeffs.end(), c.begin(), c.end());
      p.latent.insert(p.latent.end(), X.begin(), X.end());
    }
  }
  return p;
}

namespace detail {
inline const double gl4_nodes[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
inline const double gl4_weights[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
}  // namespace detail

// int_0^H e^{-lambda t} E[obs(X_t) | X_0 = x0] dt for the latent OU state, antithetic Gaussian draws.
template <class Obs>
std::vector<double> ou_resolvent(const ForceFieldModel& m, double lambda, const std::vector<double>& x0, Obs&& obs,
                                 std::size_t out_width, std::uint64_t seed)
{
  if (lambda < 0.0) throw std::invalid_argument("resolvent: lambda must be non-negative");
  const std::size_t L = m.nbasis();
  if (x0.size() != L) throw std::invalid_argument("resolvent: ou sample without latent state");
  const double H = m.resolvent_horizon_factor / m.mixing_rate;
  // panels shrink with lambda so the e^{-(1+lambda)t} decay stays resolved
  const int panels = static_cast<int>(std::ceil(H * (1.0 + lambda / m.mixing_rate) / m.resolvent_panel));
  const double hp = H / panels;
  const int R = m.resolvent_replicates;
  CounterRng rng{seed, hash_string("resolvent")};
  std::vector<double> Z(static_cast<std::size_t>(R) * L);
  for (auto& z : Z) z = rng.normal();
  std::vector<double> out(out_width, 0.0), y(L);
  for (int pnl = 0; pnl < panels; ++pnl) {
    for (int q = 0; q < 4; ++q) {
      double t = hp * (pnl + 0.5 * (detail::gl4_nodes[q] + 1.0));
      double w = 0.5 * hp * detail::gl4_weights[q] * std::exp(-lambda * t) / (2.0 * R);
      double s = std::exp(-t), r = std::sqrt(-std::expm1(-2.0 * t));
      for (int rep = 0; rep < R; ++rep) {
        for (int sign = -1; sign <= 1; sign += 2) {
          for (std::size_t l = 0; l < L; ++l) y[l] = s * x0[l] + sign * r * Z[rep * L + l];
          std::vector<double> c = obs(y, static_cast<std::uint64_t>(((pnl * 4 + q) * R + rep) * 2 + (sign > 0)));
          for (std::size_t l = 0; l < out_width; ++l) out[l] += w * c[l];
        }
      }
    }
  }
  return out;
}

// Coefficients of R_lambda(e): closed form e/(1+lambda) for renewal laws, time-quadrature MC for ou_driven.
inline std::vector<double> resolvent_coeffs(const ForceFieldModel& m, double lambda, const ForceSample& e,
                                            std::uint64_t seed = 0)
{
  if (lambda < 0.0) throw std::invalid_argument("resolvent: lambda must be non-negative");
  const std::size_t L = m.nbasis();
  if (m.kind == ForceKind::renewal) {
    std::vector<double> out(L);
    for (std::size_t l = 0; l < L; ++l) out[l] = e.coeffs[l] / (1.0 + lambda);
    return out;
  }
  return ou_resolvent(
      m, lambda, e.latent, [&](const std::vector<double>& y, std::uint64_t) { return m.link(y.data()); }, L, seed);
}

inline TorusField resolvent_apply(const ForceFieldModel& m, double lambda, const ForceSample& e, const TorusGrid& g,
                                  std::uint64_t seed = 0)
{
  auto c = resolvent_coeffs(m, lambda, e, seed);
  return m.field(c.data(), g);
}

struct CovarianceEstimate
{
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  int dim = 1;
  std::vector<double> mean;    // pairs x dim x dim, entry (i,j) = E[E_i(lag,x) E_j(0,y)]
  std::vector<double> std_error;  // same layout
};

inline CovarianceEstimate estimate_stationary_covariance(const ForceFieldModel& m, double lag, int n_paths,
                                                         std::uint64_t seed, const TorusGrid& g,
                                                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                                         double dt_ou = 0.01)
{
  if (lag < 0.0) throw std::invalid_argument("estimate_stationary_covariance: negative lag");
  if (n_paths < 2) throw std::invalid_argument("estimate_stationary_covariance: need at least 2 paths");
  const int d = m.dim;
  CovarianceEstimate out;
  out.pairs = pairs;
  out.dim = d;
  const std::size_t nent = pairs.size() * d * d;
  std::vector<double> s1(nent, 0.0), s2(nent, 0.0);
  double x[3], y[3], ex[3], ey[3];
  for (int r = 0; r < n_paths; ++r) {
    auto path = generate_path(m, lag > 0 ? lag : 1.0, dt_ou, stream_key({seed, std::uint64_t(r)}));
    const double* c0 = path.coeffs_at(0.0);
    const double* cl = path.coeffs_at(lag);
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      for (int a = 0; a < d; ++a) {
        x[a] = g.coord(pairs[q].first, a);
        y[a] = g.coord(pairs[q].second, a);
      }
      m.eval(cl, x, ex);
      m.eval(c0, y, ey);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double v = ex[i] * ey[j];
          s1[(q * d + i) * d + j] += v;
          s2[(q * d + i) * d + j] += v * v;
        }
    }
  }
  out.mean.resize(nent);
  out.std_error.resize(nent);
  for (std::size_t i = 0; i < nent; ++i) {
    double mu = s1[i] / n_paths;
    double var = std::max(0.0, (s2[i] - n_paths * mu * mu) / (n_paths - 1));
    out.mean[i] = mu;
    out.std_error[i] = std::sqrt(var / n_paths);
  }
  return out;
}

inline void write_path_csv(std::ostream& os, const ForcePath& p)
{
  os << "t,jump";
  for (std::size_t l = 0; l < p.width(); ++l) os << ",c" << l;
  os << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < p.segments(); ++i) {
    os << p.times[i] << "," << int(p.jump[i]);
    for (std::size_t l = 0; l < p.width(); ++l) os << "," << p.coeffs[i * p.width() + l];
    os << "\n";
  }
}

// Common laws.

// nu = {+a e, -a e} with e = cos(2 pi k x) along `direction`
inline ForceFieldModel two_point_model(int dim, double a, std::vector<int> k, std::vector<double> direction,
                                       double sobolev_order = -1.0)
{
  ForceFieldModel m;
  m.kind = ForceKind::renewal;
  m.dim = dim;
  m.basis = {cos_mode(std::move(k), std::move(direction))};
  m.atoms = {{a}, {-a}};
  m.probs = {0.5, 0.5};
  m.sobolev_order = sobolev_order > 0 ? sobolev_order : 2.0 * (dim + 2);
  m.finalize();
  return m;
}

inline ForceFieldModel two_point_model_1d(double a, int k = 1) { return two_point_model(1, a, {k}, {1.0}); }

// nu uniform on {+-a cos(2 pi k x), +-a sin(2 pi k x)} (N = 1); shift-invariant second moments
inline ForceFieldModel rotating_phase_model(double a, int k = 1)
{
  ForceFieldModel m;
  m.kind = ForceKind::renewal;
  m.dim = 1;
  m.basis = {cos_mode({k}, {1.0}), sin_mode({k}, {1.0})};
  m.atoms = {{a, 0.0}, {-a, 0.0}, {0.0, a}, {0.0, -a}};
  m.sobolev_order = 6.0;
  m.finalize();
  return m;
}

inline ForceFieldModel zero_model(int dim)
{
  ForceFieldModel m;
  m.kind = ForceKind::renewal;
  m.dim = dim;
  std::vector<int> k(dim, 0);
  std::vector<double> d(dim, 0.0);
  d[0] = 1.0;
  m.basis = {cos_mode(k, d)};
  m.atoms = {{0.0}};
  m.probs = {1.0};
  m.sobolev_order = 2.0 * (dim + 2);
  m.finalize();
  return m;
}

// all sign patterns of the amplitude vector over the given basis
inline ForceFieldModel sign_cube_model(int dim, std::vector<BasisField> basis, const std::vector<double>& amp,
                                       double sobolev_order = -1.0)
{
  ForceFieldModel m;
  m.kind = ForceKind::renewal;
  m.dim = dim;
  m.basis = std::move(basis);
  const std::size_t L = m.basis.size();
  for (std::size_t mask = 0; mask < (std::size_t(1) << L); ++mask) {
    std::vector<double> at(L);
    for (std::size_t l = 0; l < L; ++l) at[l] = ((mask >> l) & 1) ? -amp[l] : amp[l];
    m.atoms.push_back(at);
  }
  m.sobolev_order = sobolev_order > 0 ? sobolev_order : 2.0 * (dim + 2);
  m.finalize();
  return m;
}

inline ForceFieldModel ou_model(int dim, std::vector<BasisField> basis, std::vector<double> amp,
                                double ball_radius = 0.0, double sobolev_order = -1.0)
{
  ForceFieldModel m;
  m.kind = ForceKind::ou_driven;
  m.dim = dim;
  m.basis = std::move(basis);
  m.ou_amplitude = std::move(amp);
  m.ball_radius = ball_radius;
  m.sobolev_order = sobolev_order > 0 ? sobolev_order : 2.0 * (dim + 2);
  m.finalize();
  return m;
}

}  // namespace kdiff
