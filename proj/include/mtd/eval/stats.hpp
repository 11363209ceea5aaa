#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtd/core/error.hpp"

namespace mtd::eval {

/// Sample Pearson correlation (two-pass, centred sums).
inline double pearson_r(const double* a, const double* b, std::size_t n) {
  require(n >= 3, ErrorKind::ShapeError, "pearson_r needs at least 3 samples");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  require(saa > 0.0 && sbb > 0.0, ErrorKind::UndefinedCorrelation, "correlation of a constant series is undefined");
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

inline double pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::ShapeError, "pearson_r inputs differ in length");
  return pearson_r(a.data(), b.data(), a.size());
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularised incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::ConfigError, "incomplete_beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// P(T <= t) for Student's t with `df` degrees of freedom.
inline double student_t_cdf(double t, double df) {
  require(df > 0.0, ErrorKind::ConfigError, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

/// Two-tailed p-value of a t statistic.
inline double student_t_two_tailed(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct PairedStats {
  std::size_t n = 0;
  double delta_mean = 0.0;
  double sd = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  double cohens_d = 0.0;
  /// Differences have zero variance but a nonzero mean: t and d are infinite, p is 0.
  bool degenerate_variance = false;
};

/// Two-tailed paired t-test of a - b with Cohen's d = mean(diff) / sd(diff).
inline PairedStats paired_compare(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::ShapeError, "paired samples differ in length");
  require(a.size() >= 2, ErrorKind::InsufficientData, "paired comparison needs n >= 2");
  PairedStats s;
  s.n = a.size();
  s.df = static_cast<double>(s.n - 1);
  std::vector<double> d(s.n);
  for (std::size_t i = 0; i < s.n; ++i) d[i] = a[i] - b[i];
  double m = 0.0;
  for (double v : d) m += v;
  m /= static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : d) ss += (v - m) * (v - m);
  s.delta_mean = m;
  s.sd = std::sqrt(ss / s.df);
  if (s.sd == 0.0) {
    if (m == 0.0) return s;  // t = 0, p = 1, d = 0
    s.degenerate_variance = true;
    s.t = std::copysign(std::numeric_limits<double>::infinity(), m);
    s.cohens_d = s.t;
    s.p = 0.0;
    return s;
  }
  s.t = m / (s.sd / std::sqrt(static_cast<double>(s.n)));
  s.cohens_d = m / s.sd;
  s.p = student_t_two_tailed(s.t, s.df);
  return s;
}

inline double mean(const std::vector<double>& v) {
  require(!v.empty(), ErrorKind::InsufficientData, "mean of an empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace mtd::eval
