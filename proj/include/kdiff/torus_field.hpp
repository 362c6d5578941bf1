#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace kdiff {

using cplx = std::complex<double>;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

struct TorusGrid
{
  int dim = 1;
  int m = 0;

  TorusGrid() = default;
  TorusGrid(int dim_, int m_) : dim(dim_), m(m_)
  {
    if (dim < 1 || dim > 3) throw std::invalid_argument("TorusGrid: dim must be 1, 2 or 3");
    if (m < 4 || (m & (m - 1)) != 0)
      throw std::invalid_argument("TorusGrid: points per axis must be a power of two >= 4");
  }

  std::size_t size() const
  {
    std::size_t n = 1;
    for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(m);
    return n;
  }
  double spacing() const { return 1.0 / m; }
  double cell_volume() const { return std::pow(spacing(), dim); }

  std::size_t stride(int axis) const
  {
    std::size_t s = 1;
    for (int a = axis + 1; a < dim; ++a) s *= static_cast<std::size_t>(m);
    return s;
  }
  int axis_index(std::size_t p, int axis) const
  {
    return static_cast<int>((p / stride(axis)) % static_cast<std::size_t>(m));
  }
  double coord(std::size_t p, int axis) const { return axis_index(p, axis) * spacing(); }
  int wrap(long i) const
  {
    long r = i % m;
    return static_cast<int>(r < 0 ? r + m : r);
  }
  // signed frequency of FFT slot i; the Nyquist slot maps to -m/2
  int freq(int i) const { return i < m / 2 ? i : i - m; }
  bool nyquist(int i) const { return i == m / 2; }

  bool operator==(const TorusGrid& o) const { return dim == o.dim && m == o.m; }
  bool operator!=(const TorusGrid& o) const { return !(*this == o); }
};

enum class Rank { scalar, vector, matrix };

inline int components(Rank r, int dim)
{
  switch (r) {
    case Rank::scalar: return 1;
    case Rank::vector: return dim;
    case Rank::matrix: return dim * dim;
  }
  return 1;
}

inline const char* rank_name(Rank r)
{
  switch (r) {
    case Rank::scalar: return "scalar";
    case Rank::vector: return "vector";
    case Rank::matrix: return "matrix";
  }
  return "?";
}

inline Rank parse_rank(const std::string& s)
{
  if (s == "scalar") return Rank::scalar;
  if (s == "vector") return Rank::vector;
  if (s == "matrix") return Rank::matrix;
  throw std::invalid_argument("unknown field rank: " + s);
}

// Physical-space values; components of one grid point are contiguous,
// matrix components row-major.
struct TorusField
{
  TorusGrid grid;
  Rank rank = Rank::scalar;
  std::vector<double> data;

  TorusField() = default;
  TorusField(const TorusGrid& g, Rank r, double fill = 0.0)
      : grid(g), rank(r), data(g.size() * components(r, g.dim), fill)
  {
  }

  int ncomp() const { return components(rank, grid.dim); }
  std::size_t points() const { return grid.size(); }
  double& at(std::size_t p, int c = 0) { return data[p * ncomp() + c]; }
  double at(std::size_t p, int c = 0) const { return data[p * ncomp() + c]; }

  static TorusField scalar(const TorusGrid& g, const std::function<double(const double*)>& f)
  {
    TorusField out(g, Rank::scalar);
    double x[3] = {0, 0, 0};
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (int a = 0; a < g.dim; ++a) x[a] = g.coord(p, a);
      out.data[p] = f(x);
    }
    return out;
  }

  TorusField component(int c) const
  {
    TorusField out(grid, Rank::scalar);
    for (std::size_t p = 0; p < points(); ++p) out.data[p] = at(p, c);
    return out;
  }
  void set_component(int c, const TorusField& s)
  {
    for (std::size_t p = 0; p < points(); ++p) at(p, c) = s.data[p];
  }

  TorusField& operator+=(const TorusField& o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  TorusField& operator-=(const TorusField& o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  TorusField& operator*=(double s)
  {
    for (auto& v : data) v *= s;
    return *this;
  }
  friend TorusField operator+(TorusField a, const TorusField& b) { return a += b; }
  friend TorusField operator-(TorusField a, const TorusField& b) { return a -= b; }
  friend TorusField operator*(double s, TorusField a) { return a *= s; }

  void check_same(const TorusField& o) const
  {
    if (grid != o.grid) throw std::invalid_argument("TorusField: grid mismatch");
    if (rank != o.rank) throw std::invalid_argument("TorusField: rank mismatch");
  }
};

// Normalized coefficients f_k = M^{-N} sum_x f(x) exp(-2 pi i k.x), same layout as TorusField.
struct SpectralField
{
  TorusGrid grid;
  Rank rank = Rank::scalar;
  std::vector<cplx> data;

  SpectralField() = default;
  SpectralField(const TorusGrid& g, Rank r) : grid(g), rank(r), data(g.size() * components(r, g.dim)) {}

  int ncomp() const { return components(rank, grid.dim); }
  cplx& at(std::size_t p, int c = 0) { return data[p * ncomp() + c]; }
  cplx at(std::size_t p, int c = 0) const { return data[p * ncomp() + c]; }

  // wavevector of slot p
  void mode(std::size_t p, int* k) const
  {
    for (int a = 0; a < grid.dim; ++a) k[a] = grid.freq(grid.axis_index(p, a));
  }
  bool has_nyquist(std::size_t p) const
  {
    for (int a = 0; a < grid.dim; ++a)
      if (grid.nyquist(grid.axis_index(p, a))) return true;
    return false;
  }
  double k2(std::size_t p) const
  {
    double s = 0;
    for (int a = 0; a < grid.dim; ++a) {
      double k = grid.freq(grid.axis_index(p, a));
      s += k * k;
    }
    return s;
  }
};

namespace detail {

inline Eigen::FFT<double>& fft_engine()
{
  thread_local Eigen::FFT<double> engine;
  return engine;
}

// In-place transform of one component along every axis.
inline void transform_lines(const TorusGrid& g, std::vector<cplx>& buf, bool forward)
{
  auto& eng = fft_engine();
  std::vector<cplx> line(g.m), out(g.m);
  std::size_t n = g.size();
  for (int a = 0; a < g.dim; ++a) {
    std::size_t st = g.stride(a);
    std::size_t block = st * static_cast<std::size_t>(g.m);
    for (std::size_t base = 0; base < n; base += block) {
      for (std::size_t off = 0; off < st; ++off) {
        for (int i = 0; i < g.m; ++i) line[i] = buf[base + off + i * st];
        if (forward)
          eng.fwd(out, line);
        else
          eng.inv(out, line);
        for (int i = 0; i < g.m; ++i) buf[base + off + i * st] = out[i];
      }
    }
  }
}

}  // namespace detail

inline SpectralField to_spectral(const TorusField& f)
{
  SpectralField out(f.grid, f.rank);
  const int nc = f.ncomp();
  const std::size_t n = f.points();
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<cplx> buf(n);
  for (int c = 0; c < nc; ++c) {
    for (std::size_t p = 0; p < n; ++p) buf[p] = f.data[p * nc + c];
    detail::transform_lines(f.grid, buf, true);
    for (std::size_t p = 0; p < n; ++p) out.data[p * nc + c] = buf[p] * scale;
  }
  return out;
}

inline TorusField to_physical(const SpectralField& s)
{
  TorusField out(s.grid, s.rank);
  const int nc = s.ncomp();
  const std::size_t n = s.grid.size();
  // Eigen's inverse divides by the line length; undo it per axis.
  const double scale = static_cast<double>(n);
  std::vector<cplx> buf(n);
  for (int c = 0; c < nc; ++c) {
    for (std::size_t p = 0; p < n; ++p) buf[p] = s.data[p * nc + c];
    detail::transform_lines(s.grid, buf, false);
    for (std::size_t p = 0; p < n; ++p) out.data[p * nc + c] = buf[p].real() * scale;
  }
  return out;
}

// Zeroes every mode with |k|_inf > cutoff, and the Nyquist slots.
inline void truncate_modes(SpectralField& s, int cutoff)
{
  const int nc = s.ncomp();
  int k[3];
  for (std::size_t p = 0; p < s.grid.size(); ++p) {
    s.mode(p, k);
    bool drop = s.has_nyquist(p);
    for (int a = 0; a < s.grid.dim; ++a)
      if (std::abs(k[a]) > cutoff) drop = true;
    if (drop)
      for (int c = 0; c < nc; ++c) s.data[p * nc + c] = 0.0;
  }
}

// Spectral derivative multiplier 2 pi i k_axis, zero on the Nyquist slot.
inline cplx derivative_symbol(const SpectralField& s, std::size_t p, int axis)
{
  int i = s.grid.axis_index(p, axis);
  if (s.grid.nyquist(i)) return 0.0;
  return cplx(0.0, two_pi * s.grid.freq(i));
}

inline SpectralField spectral_gradient(const SpectralField& f)
{
  if (f.rank != Rank::scalar) throw std::invalid_argument("gradient: scalar field required");
  const int dim = f.grid.dim;
  SpectralField out(f.grid, Rank::vector);
  for (std::size_t p = 0; p < f.grid.size(); ++p)
    for (int a = 0; a < dim; ++a) out.at(p, a) = derivative_symbol(f, p, a) * f.at(p);
  return out;
}

inline SpectralField spectral_divergence(const SpectralField& f)
{
  if (f.rank != Rank::vector) throw std::invalid_argument("divergence: vector field required");
  const int dim = f.grid.dim;
  SpectralField out(f.grid, Rank::scalar);
  for (std::size_t p = 0; p < f.grid.size(); ++p) {
    cplx s = 0.0;
    for (int a = 0; a < dim; ++a) s += derivative_symbol(f, p, a) * f.at(p, a);
    out.at(p) = s;
  }
  return out;
}

// Row-wise divergence of a matrix field: (div A)_i = sum_j d_j A_ij.
inline SpectralField spectral_row_divergence(const SpectralField& f)
{
  if (f.rank != Rank::matrix) throw std::invalid_argument("row divergence: matrix field required");
  const int dim = f.grid.dim;
  SpectralField out(f.grid, Rank::vector);
  for (std::size_t p = 0; p < f.grid.size(); ++p)
    for (int i = 0; i < dim; ++i) {
      cplx s = 0.0;
      for (int j = 0; j < dim; ++j) s += derivative_symbol(f, p, j) * f.at(p, i * dim + j);
      out.at(p, i) = s;
    }
  return out;
}

inline TorusField gradient(const TorusField& f)
{
  if (f.rank != Rank::scalar) throw std::invalid_argument("gradient: scalar field required");
  return to_physical(spectral_gradient(to_spectral(f)));
}

inline TorusField divergence(const TorusField& f)
{
  if (f.rank != Rank::vector) throw std::invalid_argument("divergence: vector field required");
  return to_physical(spectral_divergence(to_spectral(f)));
}

inline TorusField row_divergence(const TorusField& f)
{
  if (f.rank != Rank::matrix) throw std::invalid_argument("row divergence: matrix field required");
  return to_physical(spectral_row_divergence(to_spectral(f)));
}

// Consistent with divergence(gradient(f)): Nyquist slots are dropped.
inline TorusField laplacian(const TorusField& f)
{
  if (f.rank != Rank::scalar) throw std::invalid_argument("laplacian: scalar field required");
  SpectralField s = to_spectral(f);
  for (std::size_t p = 0; p < s.grid.size(); ++p) {
    double sum = 0.0;
    for (int a = 0; a < s.grid.dim; ++a) sum += std::norm(derivative_symbol(s, p, a));
    s.at(p) *= -sum;
  }
  return to_physical(s);
}

inline double sobolev_norm(const SpectralField& s, double order)
{
  double total = 0.0;
  const int nc = s.ncomp();
  for (std::size_t p = 0; p < s.grid.size(); ++p) {
    double w = std::pow(1.0 + two_pi * two_pi * s.k2(p), order);
    for (int c = 0; c < nc; ++c) total += w * std::norm(s.data[p * nc + c]);
  }
  return std::sqrt(total);
}

// Applies to every rank; for vector/matrix fields the component norms add in quadrature.
inline double sobolev_norm(const TorusField& f, double order)
{
  return sobolev_norm(to_spectral(f), order);
}

inline double pairing(const TorusField& f, const TorusField& g)
{
  if (f.grid != g.grid) throw std::invalid_argument("pairing: grid mismatch");
  if (f.rank != g.rank) throw std::invalid_argument("pairing: rank mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f.data.size(); ++i) s += f.data[i] * g.data[i];
  return s * f.grid.cell_volume();
}

inline TorusField symmetrize(const TorusField& a)
{
  if (a.rank != Rank::matrix) throw std::invalid_argument("symmetrize: matrix field required");
  const int d = a.grid.dim;
  TorusField out(a.grid, Rank::matrix);
  for (std::size_t p = 0; p < a.points(); ++p)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out.at(p, i * d + j) = 0.5 * (a.at(p, i * d + j) + a.at(p, j * d + i));
  return out;
}

inline void write_csv(std::ostream& os, const TorusField& f)
{
  const TorusGrid& g = f.grid;
  os << "# torus_field rank=" << rank_name(f.rank) << " dim=" << g.dim << " points_per_axis=" << g.m << "\n";
  for (int a = 0; a < g.dim; ++a) os << (a ? "," : "") << "x" << a;
  for (int c = 0; c < f.ncomp(); ++c) os << ",c" << c;
  os << "\n" << std::setprecision(17);
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int a = 0; a < g.dim; ++a) os << (a ? "," : "") << g.coord(p, a);
    for (int c = 0; c < f.ncomp(); ++c) os << "," << f.at(p, c);
    os << "\n";
  }
}

inline TorusField read_csv_field(std::istream& is)
{
  std::string line;
  if (!std::getline(is, line) || line.rfind("# torus_field", 0) != 0)
    throw std::runtime_error("read_csv_field: missing torus_field header");
  std::string rank;
  int dim = 0, m = 0;
  std::istringstream hs(line.substr(13));
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "rank") rank = val;
    if (key == "dim") dim = std::stoi(val);
    if (key == "points_per_axis") m = std::stoi(val);
  }
  TorusField f(TorusGrid(dim, m), parse_rank(rank));
  std::getline(is, line);
  for (std::size_t p = 0; p < f.points(); ++p) {
    if (!std::getline(is, line)) throw std::runtime_error("read_csv_field: truncated data");
    std::istringstream ls(line);
    std::string cell;
    for (int a = 0; a < dim; ++a) std::getline(ls, cell, ',');
    for (int c = 0; c < f.ncomp(); ++c) {
      if (!std::getline(ls, cell, ',')) throw std::runtime_error("read_csv_field: short row");
      f.at(p, c) = std::stod(cell);
    }
  }
  return f;
}

// Real trigonometric polynomial c0 + sum_j [a_j cos(2 pi k_j.x) + b_j sin(2 pi k_j.x)].
struct TrigPolynomial
{
  struct Term
  {
    std::vector<int> k;
    double cos_amp = 0.0;
    double sin_amp = 0.0;
  };

  int dim = 1;
  double constant = 0.0;
  std::vector<Term> terms;

  double operator()(const double* x) const
  {
    double s = constant;
    for (const auto& t : terms) {
      double ph = 0.0;
      for (int a = 0; a < dim; ++a) ph += t.k[a] * x[a];
      ph *= two_pi;
      s += t.cos_amp * std::cos(ph) + t.sin_amp * std::sin(ph);
    }
    return s;
  }
  void gradient_at(const double* x, double* g) const
  {
    for (int a = 0; a < dim; ++a) g[a] = 0.0;
    for (const auto& t : terms) {
      double ph = 0.0;
      for (int a = 0; a < dim; ++a) ph += t.k[a] * x[a];
      ph *= two_pi;
      double d = -t.cos_amp * std::sin(ph) + t.sin_amp * std::cos(ph);
      for (int a = 0; a < dim; ++a) g[a] += two_pi * t.k[a] * d;
    }
  }
  double sup_bound() const
  {
    double s = std::abs(constant);
    for (const auto& t : terms) s += std::abs(t.cos_amp) + std::abs(t.sin_amp);
    return s;
  }
  int max_mode() const
  {
    int m = 0;
    for (const auto& t : terms)
      for (int k : t.k) m = std::max(m, std::abs(k));
    return m;
  }
  TorusField on_grid(const TorusGrid& g) const
  {
    if (g.dim != dim) throw std::invalid_argument("TrigPolynomial: grid dimension mismatch");
    return TorusField::scalar(g, [this](const double* x) { return (*this)(x); });
  }

  static TrigPolynomial constant_one(int dim)
  {
    TrigPolynomial p;
    p.dim = dim;
    p.constant = 1.0;
    return p;
  }
  static TrigPolynomial cosine(int dim, std::vector<int> k, double amp = 1.0)
  {
    TrigPolynomial p;
    p.dim = dim;
    p.terms.push_back({std::move(k), amp, 0.0});
    return p;
  }
  static TrigPolynomial sine(int dim, std::vector<int> k, double amp = 1.0)
  {
    TrigPolynomial p;
    p.dim = dim;
    p.terms.push_back({std::move(k), 0.0, amp});
    return p;
  }
};

// 1, cos 2 pi x, sin 2 pi x, cos 4 pi x along the first axis
inline std::vector<TrigPolynomial> default_test_functions(int dim)
{
  std::vector<int> k1(dim, 0), k2(dim, 0);
  k1[0] = 1;
  k2[0] = 2;
  return {TrigPolynomial::constant_one(dim), TrigPolynomial::cosine(dim, k1), TrigPolynomial::sine(dim, k1),
          TrigPolynomial::cosine(dim, k2)};
}

}  // namespace kdiff
