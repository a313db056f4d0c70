#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>

namespace kicklab {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

/// Welford running mean/variance. merge() is exact in the sense of Chan et al.
/// and is applied in a fixed order by callers to keep results reproducible.
struct MeanAccumulator {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }

  void merge(const MeanAccumulator& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
    const double d = o.mean - mean;
    const double total = na + nb;
    mean += d * nb / total;
    m2 += o.m2 + d * d * na * nb / total;
    n += o.n;
  }

  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_() const { return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

/// Accumulates exp(x_i) * f_i in a shifted representation so that very large
/// or very small log-weights neither overflow nor underflow.
struct LogWeightAccumulator {
  std::size_t n = 0;
  double shift = -std::numeric_limits<double>::infinity();
  double s1 = 0.0;   // sum e^{x-shift}
  double s2 = 0.0;   // sum e^{2(x-shift)}
  double sf = 0.0;   // sum e^{x-shift} f
  double sff = 0.0;  // sum e^{2(x-shift)} f^2

  void add(double log_weight, double f = 1.0) {
    ++n;
    if (log_weight > shift) rescale(log_weight);
    const double w = std::exp(log_weight - shift);
    s1 += w;
    s2 += w * w;
    sf += w * f;
    sff += w * w * f * f;
  }

  void merge(const LogWeightAccumulator& o) {
    if (o.n == 0) return;
    if (o.shift > shift) rescale(o.shift);
    const double r = std::exp(o.shift - shift);
    s1 += o.s1 * r;
    s2 += o.s2 * r * r;
    sf += o.sf * r;
    sff += o.sff * r * r;
    n += o.n;
  }

  /// log of (1/n) sum e^{x_i}
  double log_mean() const { return shift + std::log(s1 / static_cast<double>(n)); }

  /// Kish effective sample size of the weights.
  double ess() const { return s2 > 0.0 ? s1 * s1 / s2 : 0.0; }

  /// Standard error of log_mean() by the delta method.
  double log_mean_stderr() const {
    const double nn = static_cast<double>(n);
    const double m = s1 / nn;
    const double var = std::max(0.0, s2 / nn - m * m);
    return n > 1 ? std::sqrt(var / (nn - 1.0)) / m : 0.0;
  }

  /// (1/n) sum e^{x_i} f_i expressed as (value * e^{shift}); returns
  /// {scaled mean, scaled stderr}. Multiply by exp(shift) for absolute values.
  std::pair<double, double> scaled_weighted_mean() const {
    const double nn = static_cast<double>(n);
    const double m = sf / nn;
    const double var = std::max(0.0, sff / nn - m * m);
    return {m, n > 1 ? std::sqrt(var / (nn - 1.0)) : 0.0};
  }

 private:
  void rescale(double new_shift) {
    if (std::isfinite(shift)) {
      const double r = std::exp(shift - new_shift);
      s1 *= r;
      s2 *= r * r;
      sf *= r;
      sff *= r * r;
    }
    shift = new_shift;
  }
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double slope_stderr = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  LinearFit fit;
  fit.n = std::min(x.size(), y.size());
  if (fit.n < 2) return fit;
  const double nn = static_cast<double>(fit.n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < fit.n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= nn;
  my /= nn;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < fit.n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  const double sse = std::max(0.0, syy - fit.slope * sxy);
  fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  if (fit.n > 2) fit.slope_stderr = std::sqrt(sse / (nn - 2.0) / sxx);
  return fit;
}

/// Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double z = 1.96) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

}  // namespace kicklab
