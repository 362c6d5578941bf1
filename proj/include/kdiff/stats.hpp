#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace kdiff {

struct SampleStats
{
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double m4 = 0.0;        // fourth central moment

  double stderr_mean() const { return n > 1 ? std::sqrt(variance / n) : 0.0; }
  // first-order standard error of the sample variance
  double stderr_variance() const
  {
    if (n < 2) return 0.0;
    double s4 = variance * variance;
    return std::sqrt(std::max(0.0, m4 - s4 * (n - 3.0) / (n - 1.0)) / n);
  }
};

inline SampleStats sample_stats(const std::vector<double>& x)
{
  SampleStats s;
  s.n = x.size();
  if (x.empty()) return s;
  double sum = 0.0;
  for (double v : x) sum += v;
  s.mean = sum / s.n;
  double s2 = 0.0, s4 = 0.0;
  for (double v : x) {
    double d = v - s.mean;
    s2 += d * d;
    s4 += d * d * d * d;
  }
  s.variance = s.n > 1 ? s2 / (s.n - 1) : 0.0;
  s.m4 = s4 / s.n;
  return s;
}

inline double ks_statistic(std::vector<double> a, std::vector<double> b)
{
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = a.size(), nb = b.size();
  while (i < a.size() && j < b.size()) {
    double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

// Kolmogorov limit Q(lambda) with the effective-size correction of Stephens.
inline double ks_pvalue(double d, std::size_t na, std::size_t nb)
{
  double ne = double(na) * nb / double(na + nb);
  double sq = std::sqrt(ne);
  double lam = (sq + 0.12 + 0.11 / sq) * d;
  if (lam < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    double term = sign * std::exp(-2.0 * k * k * lam * lam);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// least-squares slope of log y against log x
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace kdiff
