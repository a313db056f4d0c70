#include "kicklab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"
#include "kicklab/stats.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "noise";
// Beyond this many standard units the Gaussian density underflows to 0 anyway.
constexpr double kGaussianCutoff = 38.0;

double bump_kernel(double x) {
  const double s = x / 2.0;
  if (std::abs(s) >= 1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - s * s));
}

struct BumpTables {
  double normalizer = 0.0;
  double variance = 0.0;
  std::vector<double> cdf;  // on kCdfPoints + 1 equispaced nodes of [-2, 2]
  static constexpr int kCdfPoints = 4000;
};

const BumpTables& bump_tables() {
  static const BumpTables tables = [] {
    BumpTables t;
    const int n = BumpTables::kCdfPoints;
    const double h = 4.0 / n;
    t.cdf.assign(static_cast<std::size_t>(n) + 1, 0.0);
    double mass = 0.0, second = 0.0;
    // Simpson on each pair of cells for the moments, trapezoid running sum for the CDF.
    for (int i = 0; i < n; ++i) {
      const double x0 = -2.0 + i * h, xm = x0 + h / 2.0, x1 = x0 + h;
      const double cell = h / 6.0 * (bump_kernel(x0) + 4.0 * bump_kernel(xm) + bump_kernel(x1));
      mass += cell;
      second += h / 6.0 * (x0 * x0 * bump_kernel(x0) + 4.0 * xm * xm * bump_kernel(xm) + x1 * x1 * bump_kernel(x1));
      t.cdf[static_cast<std::size_t>(i) + 1] = mass;
    }
    t.normalizer = mass;
    t.variance = second / mass;
    for (auto& c : t.cdf) c /= mass;
    return t;
  }();
  return tables;
}

}  // namespace

DensityFamily family_from_string(const std::string& name) {
  if (name == "gaussian") return DensityFamily::kGaussian;
  if (name == "bump") return DensityFamily::kBump;
  throw ConfigurationError(kModule, "unknown density family '" + name + "'");
}

const char* family_name(DensityFamily family) { return family == DensityFamily::kGaussian ? "gaussian" : "bump"; }

double family_density(DensityFamily family, double x) {
  if (family == DensityFamily::kGaussian) return std::abs(x) > kGaussianCutoff ? 0.0 : normal_pdf(x);
  return bump_kernel(x) / bump_tables().normalizer;
}

double family_variance(DensityFamily family) {
  return family == DensityFamily::kGaussian ? 1.0 : bump_tables().variance;
}

double family_cdf(DensityFamily family, double x) {
  if (family == DensityFamily::kGaussian) return normal_cdf(x);
  if (x <= -2.0) return 0.0;
  if (x >= 2.0) return 1.0;
  const auto& t = bump_tables();
  const double pos = (x + 2.0) / 4.0 * BumpTables::kCdfPoints;
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return t.cdf[i] + frac * (t.cdf[std::min(i + 1, t.cdf.size() - 1)] - t.cdf[i]);
}

double family_sample(DensityFamily family, Stream& stream) {
  if (family == DensityFamily::kGaussian) return stream.normal();
  // Rejection from the uniform law on (-2, 2); the kernel peaks at e^{-1}.
  for (;;) {
    const double x = 4.0 * stream.uniform() - 2.0;
    if (stream.uniform() * std::exp(-1.0) <= bump_kernel(x)) return x;
  }
}

bool KickLaw::all_nonzero() const {
  return std::all_of(b.begin(), b.end(), [](double v) { return v != 0.0; });
}

std::vector<double> kick_coefficients(const KickRule& rule, int n) {
  if (n < 1) throw ConfigurationError(kModule, "kick dimension must be positive");
  std::vector<double> b(static_cast<std::size_t>(n));
  switch (rule.kind) {
    case KickRule::Kind::kExplicit:
      if (static_cast<int>(rule.values.size()) != n) {
        throw ConfigurationError(kModule, "explicit kick coefficients have length " +
                                              std::to_string(rule.values.size()) + ", system has " +
                                              std::to_string(n));
      }
      b = rule.values;
      break;
    case KickRule::Kind::kPower:
      for (int j = 1; j <= n; ++j) b[static_cast<std::size_t>(j - 1)] = rule.b0 * std::pow(j, -rule.exponent);
      break;
    case KickRule::Kind::kGeometric:
      for (int j = 1; j <= n; ++j) b[static_cast<std::size_t>(j - 1)] = rule.b0 * std::pow(rule.ratio, j);
      break;
  }
  return b;
}

void validate_law(const KickLaw& law, const SystemSpec& spec) {
  if (law.dim() != spec.n_dim) {
    throw ConfigurationError(kModule, "kick law has " + std::to_string(law.dim()) + " coefficients, system " +
                                          spec.name + " has N_dim " + std::to_string(spec.n_dim));
  }
  for (double v : law.b) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigurationError(kModule, "kick coefficients must be finite and >= 0");
  }
  if (!(law.delta > 0.0)) throw ConfigurationError(kModule, "moment parameter delta must be positive");
}

StateVector sample_kick(const KickLaw& law, Stream& stream, BasisId basis) {
  Vector v(law.dim());
  for (int j = 0; j < law.dim(); ++j) {
    const double bj = law.b[static_cast<std::size_t>(j)];
    // Draw even for b_j = 0 so that coordinate j always consumes the same
    // portion of the stream.
    const double xi = family_sample(law.family, stream);
    v[j] = bj * xi;
  }
  return StateVector(v, basis);
}

double projected_density(const KickLaw& law, const Vector& v) {
  if (v.size() > law.dim()) throw ConfigurationError(kModule, "projected point has more coordinates than the law");
  double d = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double bi = law.b[static_cast<std::size_t>(i)];
    if (bi == 0.0) {
      throw DegenerateInputError(kModule, "b_" + std::to_string(i + 1) +
                                              " = 0: projected law has no density, maximal coupling unavailable");
    }
    d *= family_density(law.family, v[i] / bi) / bi;
    if (d == 0.0) return 0.0;
  }
  return d;
}

double frak_b(const std::vector<double>& b, const std::vector<double>& gamma_prev) {
  if (b.size() != gamma_prev.size()) throw ConfigurationError(kModule, "frak_b needs one weight per coefficient");
  double s = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) s += gamma_prev[j] * std::abs(b[j]);
  return s;
}

std::vector<double> coordinate_gamma(const SystemSpec& spec) {
  std::vector<double> out(static_cast<std::size_t>(spec.n_dim));
  for (int level = 1; level <= spec.levels(); ++level) {
    for (int c = spec.level_dim[static_cast<std::size_t>(level) - 1]; c < spec.level_dim[static_cast<std::size_t>(level)];
         ++c) {
      out[static_cast<std::size_t>(c)] = spec.gamma[static_cast<std::size_t>(level) - 1];
    }
  }
  return out;
}

double frak_b(const KickLaw& law, const SystemSpec& spec) {
  validate_law(law, spec);
  return frak_b(law.b, coordinate_gamma(spec));
}

MomentReport moment_report(const KickLaw& law, const SystemSpec& spec, std::size_t n_samples, std::uint64_t seed,
                           int workers) {
  validate_law(law, spec);
  if (n_samples < 4) throw ConfigurationError(kModule, "moment_report needs at least 4 samples");
  MomentReport report;
  report.frak_b = frak_b(law, spec);
  std::vector<double> log_w(n_samples), unorm(n_samples);
  parallel_for(n_samples, workers, [&](std::size_t i) {
    Stream stream(seed, i, 0, StreamPurpose::kSampler);
    const StateVector eta = sample_kick(law, stream, spec.basis);
    const double value = spec.phi(eta) + spec.frak_p(eta);
    if (!std::isfinite(value)) {
      throw NumericalInstabilityError(kModule, "Phi + p not finite at sample " + std::to_string(i));
    }
    log_w[i] = law.delta * value;
    unorm[i] = u_norm(eta, spec);
  });
  LogWeightAccumulator acc;
  MeanAccumulator un;
  const std::size_t marks[] = {n_samples / 4, n_samples / 2, n_samples};
  std::size_t next_mark = 0;
  std::vector<double> log_estimates, log_stderr;
  for (std::size_t i = 0; i < n_samples; ++i) {
    acc.add(log_w[i]);
    un.add(unorm[i]);
    while (next_mark < 3 && i + 1 == marks[next_mark]) {
      log_estimates.push_back(acc.log_mean());
      log_stderr.push_back(acc.log_mean_stderr());
      report.doubling_estimates.push_back(std::exp(acc.log_mean()));
      ++next_mark;
    }
  }
  report.m_delta_hat = std::exp(acc.log_mean());
  report.m_delta_stderr = report.m_delta_hat * acc.log_mean_stderr();
  report.empirical_u_norm_mean = un.mean;
  // A finite exponential moment settles as the sample doubles; a divergent
  // one keeps drifting upwards by more than its own error bar.
  const double se = log_stderr.back();
  const bool drifting = log_estimates[2] > log_estimates[1] + 3.0 * se &&
                        log_estimates[1] > log_estimates[0] + 3.0 * log_stderr[1];
  report.delta_too_large = se > 0.25 || drifting || acc.ess() < 0.01 * static_cast<double>(n_samples);
  return report;
}

}  // namespace kicklab
