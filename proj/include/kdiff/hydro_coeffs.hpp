#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "force_field.hpp"
#include "kinetic_sim.hpp"
#include "rng.hpp"
#include "torus_field.hpp"

namespace kdiff {

namespace detail {

// running mean and standard error of a vector of entries
struct Accumulator
{
  std::vector<double> s1, s2;
  std::size_t n = 0;

  explicit Accumulator(std::size_t width = 0) : s1(width, 0.0), s2(width, 0.0) {}
  void add(const std::vector<double>& x)
  {
    for (std::size_t i = 0; i < x.size(); ++i) {
      s1[i] += x[i];
      s2[i] += x[i] * x[i];
    }
    ++n;
  }
  double mean(std::size_t i) const { return s1[i] / n; }
  double stderr_of(std::size_t i) const
  {
    if (n < 2) return 0.0;
    double m = s1[i] / n;
    double var = std::max(0.0, (s2[i] - n * m * m) / (n - 1));
    return std::sqrt(var / n);
  }
  void fill(TorusField& mean_f, TorusField& se_f) const
  {
    for (std::size_t i = 0; i < s1.size(); ++i) {
      mean_f.data[i] = mean(i);
      se_f.data[i] = stderr_of(i);
    }
  }
};

inline ForceSample hydro_sample(const ForceFieldModel& m, std::uint64_t seed, std::size_t s)
{
  CounterRng rng{seed, hash_string("hydro_sample"), s};
  return draw_stationary(m, rng);
}

inline std::uint64_t hydro_resolvent_seed(std::uint64_t seed, std::size_t s)
{
  return stream_key({seed, hash_string("hydro_resolvent"), s});
}

// u (x) v + v (x) u at every grid point
inline TorusField sym_outer(const TorusField& u, const TorusField& v)
{
  const int d = u.grid.dim;
  TorusField out(u.grid, Rank::matrix);
  for (std::size_t p = 0; p < u.grid.size(); ++p)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out.at(p, i * d + j) = u.at(p, i) * v.at(p, j) + v.at(p, i) * u.at(p, j);
  return out;
}

// symmetric eigen-extremes of a small matrix stored row-major
inline double min_eigenvalue(const double* a, int d)
{
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = 0.5 * (a[i * d + j] + a[j * d + i]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

struct ResolventTriple
{
  std::vector<double> r0, r1, r1r0;
};

inline ResolventTriple resolvents_of(const ForceFieldModel& m, const ForceSample& e, std::uint64_t seed)
{
  ResolventTriple t;
  t.r0 = resolvent_coeffs(m, 0.0, e, seed);
  t.r1 = resolvent_coeffs(m, 1.0, e, seed);
  // R1 R0 = R0 - R1
  t.r1r0.resize(t.r0.size());
  for (std::size_t l = 0; l < t.r0.size(); ++l) t.r1r0[l] = t.r0[l] - t.r1[l];
  return t;
}

}  // namespace detail

struct HydroCoefficients
{
  TorusGrid grid{1, 8};
  Collision collision = Collision::LB;
  int b = 2;
  std::size_t n_mc = 0;
  TorusField k_sharp, k_sharp_se;   // matrix
  TorusField theta, theta_se;       // vector
  TorusField k_tilde, k_tilde_se;   // Stratonovich diffusion, matrix
  TorusField sympos, sympos_se;     // E[R1 e (x)sym e], matrix
  TorusField r0_cross, r0_cross_se; // (1/2) E[e (x)sym R0 e], the diagonal of the kernel
  TorusField theta_tilde;           // filled by stratonovich_drift; empty until then
  double max_centering_z = 0.0;

  double mc_stderr_k() const { return *std::max_element(k_sharp_se.data.begin(), k_sharp_se.data.end()); }
};

inline HydroCoefficients compute_coefficients(const ForceFieldModel& m, Collision coll, const TorusGrid& g,
                                              std::size_t n_mc, std::uint64_t seed)
{
  if (n_mc < 100) throw std::invalid_argument("compute_coefficients: n_mc must be at least 100");
  if (g.dim != m.dim) throw std::invalid_argument("compute_coefficients: grid dimension mismatch");
  const int d = g.dim;
  const int b = collision_b(coll);
  const std::size_t L = m.nbasis();
  const std::size_t mat = g.size() * d * d, vec = g.size() * d;
  detail::Accumulator acc_k(mat), acc_t(vec), acc_kt(mat), acc_sp(mat), acc_r0(mat), acc_c(L);
  std::vector<double> tmp_m(mat), tmp_v(vec);
  for (std::size_t s = 0; s < n_mc; ++s) {
    ForceSample e = detail::hydro_sample(m, seed, s);
    auto res = detail::resolvents_of(m, e, detail::hydro_resolvent_seed(seed, s));
    TorusField ef = m.field(e.coeffs.data(), g);
    TorusField r0f = m.field(res.r0.data(), g);
    TorusField r1f = m.field(res.r1.data(), g);
    TorusField r1r0f = m.field(res.r1r0.data(), g);
    TorusField s0 = detail::sym_outer(ef, r0f);
    TorusField s1 = detail::sym_outer(ef, r1f);
    for (std::size_t i = 0; i < mat; ++i) {
      int comp = static_cast<int>(i % (d * d));
      double id = (comp / d == comp % d) ? 1.0 : 0.0;
      tmp_m[i] = id + 0.5 * (s0.data[i] + (b - 1) * s1.data[i]);
    }
    acc_k.add(tmp_m);
    for (std::size_t i = 0; i < mat; ++i) {
      int comp = static_cast<int>(i % (d * d));
      tmp_m[i] = ((comp / d == comp % d) ? 1.0 : 0.0) + 0.5 * (b - 1) * s1.data[i];
    }
    acc_kt.add(tmp_m);
    acc_sp.add(s1.data);
    for (std::size_t i = 0; i < mat; ++i) tmp_m[i] = 0.5 * s0.data[i];
    acc_r0.add(tmp_m);
    TorusField rd = row_divergence(s1);
    TorusField de = divergence(ef);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int i = 0; i < d; ++i) tmp_v[p * d + i] = 0.5 * b * rd.at(p, i) + r1r0f.at(p, i) * de.at(p);
    acc_t.add(tmp_v);
    acc_c.add(e.coeffs);
  }
  HydroCoefficients h;
  h.grid = g;
  h.collision = coll;
  h.b = b;
  h.n_mc = n_mc;
  for (TorusField* f : {&h.k_sharp, &h.k_sharp_se, &h.k_tilde, &h.k_tilde_se, &h.sympos, &h.sympos_se, &h.r0_cross,
                        &h.r0_cross_se})
    *f = TorusField(g, Rank::matrix);
  h.theta = TorusField(g, Rank::vector);
  h.theta_se = TorusField(g, Rank::vector);
  acc_k.fill(h.k_sharp, h.k_sharp_se);
  acc_kt.fill(h.k_tilde, h.k_tilde_se);
  acc_sp.fill(h.sympos, h.sympos_se);
  acc_r0.fill(h.r0_cross, h.r0_cross_se);
  acc_t.fill(h.theta, h.theta_se);
  for (std::size_t l = 0; l < L; ++l) {
    double se = acc_c.stderr_of(l), mu = acc_c.mean(l);
    if (se > 0.0) h.max_centering_z = std::max(h.max_centering_z, std::abs(mu) / se);
  }
  if (h.max_centering_z > 5.0)
    throw std::runtime_error("compute_coefficients: empirical force law not centred (beyond 5 sigma)");
  return h;
}

struct CovOperator
{
  TorusGrid grid{1, 8};
  double weight = 0.0;               // quadrature weight M^{-N}
  Eigen::MatrixXd kernel;            // H on (point, component) pairs; empty when loaded from CSV
  std::vector<double> eigenvalues;   // kept, descending
  std::vector<double> eigen_se;      // MC standard error of each kept eigenvalue
  std::vector<TorusField> zeta;      // L2-orthonormal eigenfields
  std::vector<TorusField> phi;       // sqrt(lambda) zeta
  double trace = 0.0;                // sum of kept eigenvalues
  double raw_trace = 0.0;            // weight * trace(H)
  double dropped_trace = 0.0;        // sum of |lambda| over dropped modes
  double min_raw_eigenvalue = 0.0;
  double tol_eig = 0.0;
  double trace_bound = 0.0;          // N R
  bool trace_bound_ok = true;
  std::size_t n_mc = 0;

  std::size_t rank() const { return eigenvalues.size(); }
};

// kernel estimate, symmetrized, eigendecomposed; tol_eig < 0 selects the default rule
inline CovOperator compute_cov_operator(const ForceFieldModel& m, const TorusGrid& g, std::size_t n_mc,
                                        double tol_eig, std::uint64_t seed)
{
  if (n_mc < 100) throw std::invalid_argument("compute_cov_operator: n_mc must be at least 100");
  if (g.dim != m.dim) throw std::invalid_argument("compute_cov_operator: grid dimension mismatch");
  const Eigen::Index D = static_cast<Eigen::Index>(g.size() * g.dim);
  if (D > 256) throw std::invalid_argument("compute_cov_operator: N * M^N must not exceed 256");
  Eigen::MatrixXd A(D, static_cast<Eigen::Index>(n_mc)), B(D, static_cast<Eigen::Index>(n_mc));
  for (std::size_t s = 0; s < n_mc; ++s) {
    ForceSample e = detail::hydro_sample(m, seed, s);
    auto r0 = resolvent_coeffs(m, 0.0, e, detail::hydro_resolvent_seed(seed, s));
    TorusField ef = m.field(e.coeffs.data(), g), rf = m.field(r0.data(), g);
    for (Eigen::Index i = 0; i < D; ++i) {
      A(i, s) = rf.data[i];
      B(i, s) = ef.data[i];
    }
  }
  CovOperator c;
  c.grid = g;
  c.n_mc = n_mc;
  c.weight = g.cell_volume();
  Eigen::MatrixXd AB = A * B.transpose();
  c.kernel = (AB + AB.transpose()) / (2.0 * n_mc);
  c.raw_trace = c.weight * c.kernel.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.weight * c.kernel);
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  const Eigen::MatrixXd& U = es.eigenvectors();
  // per-eigenvalue MC error from q_s = w (u.A_s)(u.B_s)
  Eigen::MatrixXd UA = U.transpose() * A, UB = U.transpose() * B;
  std::vector<double> se(D);
  for (Eigen::Index k = 0; k < D; ++k) {
    double s1 = 0, s2 = 0;
    for (std::size_t s = 0; s < n_mc; ++s) {
      double q = c.weight * UA(k, s) * UB(k, s);
      s1 += q;
      s2 += q * q;
    }
    double mu = s1 / n_mc;
    se[k] = std::sqrt(std::max(0.0, (s2 - n_mc * mu * mu) / (n_mc - 1)) / n_mc);
  }
  double abs_trace = 0.0;
  for (Eigen::Index k = 0; k < D; ++k) abs_trace += std::abs(ev(k));
  if (tol_eig < 0.0) {
    double noise = 0.0;
    for (Eigen::Index k = 0; k < D; ++k)
      if (std::abs(ev(k)) <= 3.0 * se[k]) noise = std::max(noise, se[k]);
    tol_eig = abs_trace * 1e-10 + 3.0 * noise + std::numeric_limits<double>::min();
  }
  c.tol_eig = tol_eig;
  c.min_raw_eigenvalue = ev(0);
  if (ev(0) < -10.0 * tol_eig)
    throw std::runtime_error("compute_cov_operator: negative eigenvalue beyond tolerance, increase n_mc");
  const double inv_sqrt_w = 1.0 / std::sqrt(c.weight);
  for (Eigen::Index k = D - 1; k >= 0; --k) {
    if (ev(k) <= tol_eig) {
      c.dropped_trace += std::abs(ev(k));
      continue;
    }
    c.eigenvalues.push_back(ev(k));
    c.eigen_se.push_back(se[k]);
    TorusField z(g, Rank::vector), f(g, Rank::vector);
    for (Eigen::Index i = 0; i < D; ++i) {
      z.data[i] = U(i, k) * inv_sqrt_w;
      f.data[i] = z.data[i] * std::sqrt(ev(k));
    }
    c.zeta.push_back(std::move(z));
    c.phi.push_back(std::move(f));
    c.trace += ev(k);
  }
  c.trace_bound = g.dim * m.ball_radius;
  c.trace_bound_ok = c.trace <= c.trace_bound * (1 + 1e-12);
  return c;
}

inline void check_cov_grid(const CovOperator& c, const TorusField& v)
{
  if (!(v.grid == c.grid) || v.rank != Rank::vector) throw std::invalid_argument("cov operator: grid or rank mismatch");
}

// sum_k lambda_k^{1/2} <v, zeta_k> zeta_k
inline TorusField apply_sqrt_s(const CovOperator& c, const TorusField& v)
{
  check_cov_grid(c, v);
  TorusField out(c.grid, Rank::vector);
  for (std::size_t k = 0; k < c.rank(); ++k) {
    double coef = std::sqrt(c.eigenvalues[k]) * pairing(v, c.zeta[k]);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += coef * c.zeta[k].data[i];
  }
  return out;
}

// direct quadrature of the kernel, (S v)_i(x) = sum_j int H(i,x,j,y) v_j(y) dy
inline TorusField apply_s_kernel(const CovOperator& c, const TorusField& v)
{
  check_cov_grid(c, v);
  if (c.kernel.size() == 0) throw std::invalid_argument("apply_s_kernel: kernel not stored");
  Eigen::Map<const Eigen::VectorXd> x(v.data.data(), static_cast<Eigen::Index>(v.data.size()));
  Eigen::VectorXd y = c.weight * (c.kernel * x);
  TorusField out(c.grid, Rank::vector);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = y(static_cast<Eigen::Index>(i));
  return out;
}

// sum_k phi_k (x) phi_k at every grid point
inline TorusField noise_covariance_diagonal(const CovOperator& c)
{
  const int d = c.grid.dim;
  TorusField out(c.grid, Rank::matrix);
  for (const auto& f : c.phi)
    for (std::size_t p = 0; p < c.grid.size(); ++p)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out.at(p, i * d + j) += f.at(p, i) * f.at(p, j);
  return out;
}

// Theta - sum_k phi_k div phi_k, the drift of the Stratonovich form
inline TorusField stratonovich_drift(const HydroCoefficients& h, const CovOperator& c)
{
  if (!(h.grid == c.grid)) throw std::invalid_argument("stratonovich_drift: grid mismatch");
  TorusField out = h.theta;
  const int d = h.grid.dim;
  for (const auto& f : c.phi) {
    TorusField df = divergence(f);
    for (std::size_t p = 0; p < h.grid.size(); ++p)
      for (int i = 0; i < d; ++i) out.at(p, i) -= f.at(p, i) * df.at(p);
  }
  return out;
}

struct EnhancementReport
{
  double min_eig_enhancement = 0.0;  // min_x lambda_min(K# - Id)
  double min_eig_noise_gap = 0.0;        // min_x lambda_min(K# - Id - sum phi phi)
  double ito_strat_gap = 0.0;        // max |K# - K~# - sum phi phi|
  double ito_strat_allowed = 0.0;
  double tol = 0.0;
  bool enhancement_ok = false, noise_gap_ok = false, ito_strat_ok = false;
  double max_k_tilde_deviation = 0.0;  // max |K~# - Id|, zero in the FP renewal case

  bool ok() const { return enhancement_ok && noise_gap_ok && ito_strat_ok; }
};

// tol < 0 uses 3 MC standard errors of K# plus the dropped spectral tail
inline EnhancementReport verify_enhancement(const HydroCoefficients& h, const CovOperator& c, double tol = -1.0)
{
  if (!(h.grid == c.grid)) throw std::invalid_argument("verify_enhancement: grid mismatch");
  const int d = h.grid.dim;
  const TorusGrid& g = h.grid;
  TorusField pp = noise_covariance_diagonal(c);
  const double max_zeta2 = 1.0 / g.cell_volume();  // |zeta(x)|^2 <= 1/w for unit L2 norm
  double se_k = 0.0, se_r = 0.0;
  for (double s : h.k_sharp_se.data) se_k = std::max(se_k, s);
  for (double s : h.r0_cross_se.data) se_r = std::max(se_r, s);
  EnhancementReport r;
  r.tol = tol >= 0.0 ? tol : 3.0 * se_k + c.dropped_trace * max_zeta2 + 1e-12;
  r.min_eig_enhancement = r.min_eig_noise_gap = std::numeric_limits<double>::infinity();
  std::vector<double> a(d * d), q(d * d);
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int i = 0; i < d * d; ++i) {
      double id = (i / d == i % d) ? 1.0 : 0.0;
      a[i] = h.k_sharp.at(p, i) - id;
      q[i] = a[i] - pp.at(p, i);
      double gap = std::abs(h.k_sharp.at(p, i) - h.k_tilde.at(p, i) - pp.at(p, i));
      r.ito_strat_gap = std::max(r.ito_strat_gap, gap);
      r.max_k_tilde_deviation = std::max(r.max_k_tilde_deviation, std::abs(h.k_tilde.at(p, i) - id));
    }
    r.min_eig_enhancement = std::min(r.min_eig_enhancement, detail::min_eigenvalue(a.data(), d));
    r.min_eig_noise_gap = std::min(r.min_eig_noise_gap, detail::min_eigenvalue(q.data(), d));
  }
  r.ito_strat_allowed = 3.0 * std::sqrt(2.0) * se_r + c.dropped_trace * max_zeta2 + 1e-10;
  r.enhancement_ok = r.min_eig_enhancement >= -r.tol;
  r.noise_gap_ok = r.min_eig_noise_gap >= -r.tol;
  r.ito_strat_ok = r.ito_strat_gap <= r.ito_strat_allowed;
  return r;
}

// Both sides of E[R_1 e (x)sym e] = 2 E[Y (x) Y], Y = int_{-inf}^0 e^s E(s) ds, on basis coefficients.
struct SymposCheck
{
  std::size_t width = 0;
  std::vector<double> lhs, lhs_se, rhs, rhs_se;  // width x width, row-major
  double max_z = 0.0;
};

inline SymposCheck sympos_check(const ForceFieldModel& m, std::size_t n_samples, std::size_t n_paths,
                                std::uint64_t seed, double dt_ou = 0.005, double truncation = 30.0)
{
  const std::size_t L = m.nbasis();
  detail::Accumulator left(L * L), right(L * L);
  std::vector<double> tmp(L * L);
  for (std::size_t s = 0; s < n_samples; ++s) {
    ForceSample e = detail::hydro_sample(m, seed, s);
    auto r1 = resolvent_coeffs(m, 1.0, e, detail::hydro_resolvent_seed(seed, s));
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) tmp[i * L + j] = r1[i] * e.coeffs[j] + e.coeffs[i] * r1[j];
    left.add(tmp);
  }
  for (std::size_t r = 0; r < n_paths; ++r) {
    auto path = generate_path(m, truncation, dt_ou, stream_key({seed, hash_string("sympos_path"), r}), -truncation);
    auto Y = path.damped_integral(-truncation, 0.0);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) tmp[i * L + j] = 2.0 * Y[i] * Y[j];
    right.add(tmp);
  }
  SymposCheck c;
  c.width = L;
  for (std::size_t k = 0; k < L * L; ++k) {
    c.lhs.push_back(left.mean(k));
    c.lhs_se.push_back(left.stderr_of(k));
    c.rhs.push_back(right.mean(k));
    c.rhs_se.push_back(right.stderr_of(k));
    double se = std::hypot(c.lhs_se.back(), c.rhs_se.back());
    double diff = std::abs(c.lhs.back() - c.rhs.back());
    c.max_z = std::max(c.max_z, se > 0.0 ? diff / se : (diff > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0));
  }
  return c;
}

// CSV contract read by the SPDE side.

inline void write_coefficients_csv(std::ostream& os, const HydroCoefficients& h)
{
  const TorusGrid& g = h.grid;
  const int d = g.dim;
  os << "# hydro_coefficients collision=" << collision_name(h.collision) << " dim=" << d << " points_per_axis=" << g.m
     << " n_mc=" << h.n_mc << "\n";
  for (int a = 0; a < d; ++a) os << (a ? "," : "") << "x" << a;
  for (int i = 0; i < d * d; ++i) os << ",K" << i / d << i % d;
  for (int i = 0; i < d; ++i) os << ",Theta" << i;
  for (int i = 0; i < d * d; ++i) os << ",Ktilde" << i / d << i % d;
  for (int i = 0; i < d * d; ++i) os << ",Kse" << i / d << i % d;
  for (int i = 0; i < d; ++i) os << ",Thetase" << i;
  os << "\n" << std::setprecision(17);
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int a = 0; a < d; ++a) os << (a ? "," : "") << g.coord(p, a);
    for (int i = 0; i < d * d; ++i) os << "," << h.k_sharp.at(p, i);
    for (int i = 0; i < d; ++i) os << "," << h.theta.at(p, i);
    for (int i = 0; i < d * d; ++i) os << "," << h.k_tilde.at(p, i);
    for (int i = 0; i < d * d; ++i) os << "," << h.k_sharp_se.at(p, i);
    for (int i = 0; i < d; ++i) os << "," << h.theta_se.at(p, i);
    os << "\n";
  }
}

namespace detail {

inline std::string header_value(const std::string& line, const std::string& key)
{
  auto pos = line.find(key + "=");
  if (pos == std::string::npos) throw std::runtime_error("csv header missing " + key);
  pos += key.size() + 1;
  auto end = line.find(' ', pos);
  return line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

inline std::vector<double> split_doubles(const std::string& line)
{
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

}  // namespace detail

inline HydroCoefficients read_coefficients_csv(std::istream& is)
{
  std::string line;
  std::getline(is, line);
  if (line.rfind("# hydro_coefficients", 0) != 0) throw std::runtime_error("not a coefficients file");
  HydroCoefficients h;
  h.collision = parse_collision(detail::header_value(line, "collision"));
  h.b = collision_b(h.collision);
  h.n_mc = std::stoul(detail::header_value(line, "n_mc"));
  const int d = std::stoi(detail::header_value(line, "dim"));
  h.grid = TorusGrid(d, std::stoi(detail::header_value(line, "points_per_axis")));
  for (TorusField* f : {&h.k_sharp, &h.k_tilde, &h.k_sharp_se, &h.sympos, &h.sympos_se, &h.r0_cross, &h.r0_cross_se,
                        &h.k_tilde_se})
    *f = TorusField(h.grid, Rank::matrix);
  h.theta = TorusField(h.grid, Rank::vector);
  h.theta_se = TorusField(h.grid, Rank::vector);
  std::getline(is, line);
  for (std::size_t p = 0; p < h.grid.size(); ++p) {
    if (!std::getline(is, line)) throw std::runtime_error("coefficients file truncated");
    auto v = detail::split_doubles(line);
    if (v.size() != static_cast<std::size_t>(d + 3 * d * d + 2 * d)) throw std::runtime_error("coefficients row width");
    std::size_t o = d;
    for (int i = 0; i < d * d; ++i) h.k_sharp.at(p, i) = v[o++];
    for (int i = 0; i < d; ++i) h.theta.at(p, i) = v[o++];
    for (int i = 0; i < d * d; ++i) h.k_tilde.at(p, i) = v[o++];
    for (int i = 0; i < d * d; ++i) h.k_sharp_se.at(p, i) = v[o++];
    for (int i = 0; i < d; ++i) h.theta_se.at(p, i) = v[o++];
  }
  return h;
}

inline void write_spectrum_csv(std::ostream& os, const CovOperator& c)
{
  const TorusGrid& g = c.grid;
  os << "# cov_spectrum dim=" << g.dim << " points_per_axis=" << g.m << " rank=" << c.rank() << std::setprecision(17)
     << " trace=" << c.trace << " dropped=" << c.dropped_trace << " tol_eig=" << c.tol_eig << "\n";
  os << "k,lambda,lambda_se";
  for (std::size_t i = 0; i < g.size() * g.dim; ++i) os << ",z" << i;
  os << "\n";
  for (std::size_t k = 0; k < c.rank(); ++k) {
    os << k << "," << c.eigenvalues[k] << "," << c.eigen_se[k];
    for (double z : c.zeta[k].data) os << "," << z;
    os << "\n";
  }
}

inline CovOperator read_spectrum_csv(std::istream& is)
{
  std::string line;
  std::getline(is, line);
  if (line.rfind("# cov_spectrum", 0) != 0) throw std::runtime_error("not a spectrum file");
  CovOperator c;
  c.grid = TorusGrid(std::stoi(detail::header_value(line, "dim")),
                     std::stoi(detail::header_value(line, "points_per_axis")));
  c.weight = c.grid.cell_volume();
  c.tol_eig = std::stod(detail::header_value(line, "tol_eig"));
  c.dropped_trace = std::stod(detail::header_value(line, "dropped"));
  const std::size_t rank = std::stoul(detail::header_value(line, "rank"));
  std::getline(is, line);
  for (std::size_t k = 0; k < rank; ++k) {
    if (!std::getline(is, line)) throw std::runtime_error("spectrum file truncated");
    auto v = detail::split_doubles(line);
    if (v.size() != 3 + c.grid.size() * c.grid.dim) throw std::runtime_error("spectrum row width");
    c.eigenvalues.push_back(v[1]);
    c.eigen_se.push_back(v[2]);
    TorusField z(c.grid, Rank::vector), f(c.grid, Rank::vector);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
      z.data[i] = v[3 + i];
      f.data[i] = z.data[i] * std::sqrt(v[1]);
    }
    c.zeta.push_back(std::move(z));
    c.phi.push_back(std::move(f));
    c.trace += v[1];
  }
  return c;
}

}  // namespace kdiff
