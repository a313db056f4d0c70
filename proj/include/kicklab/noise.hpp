#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kicklab/core_model.hpp"
#include "kicklab/rng.hpp"

namespace kicklab {

/// Law of the normalized coordinate xi_j.
enum class DensityFamily {
  kGaussian,  // standard normal
  kBump,      // density proportional to exp(-1 / (1 - x^2 / 4)) on (-2, 2)
};

DensityFamily family_from_string(const std::string& name);
const char* family_name(DensityFamily family);

double family_density(DensityFamily family, double x);
double family_variance(DensityFamily family);
/// Distribution function, used by grid discretizations.
double family_cdf(DensityFamily family, double x);
double family_sample(DensityFamily family, Stream& stream);

/// Kick eta = sum_j b_j xi_j e_j with i.i.d. xi_j drawn from `family`.
struct KickLaw {
  std::vector<double> b;
  DensityFamily family = DensityFamily::kGaussian;
  double delta = 0.1;

  int dim() const { return static_cast<int>(b.size()); }
  bool all_nonzero() const;
};

/// How the coefficients b_j are specified in a configuration.
struct KickRule {
  enum class Kind { kExplicit, kPower, kGeometric };
  Kind kind = Kind::kExplicit;
  std::vector<double> values;  // kExplicit
  double b0 = 1.0;
  double exponent = 1.0;       // kPower: b_j = b0 j^{-exponent}
  double ratio = 0.5;          // kGeometric: b_j = b0 ratio^j
};

/// Coefficients b_1..b_n (stored 0-based) generated by a rule.
std::vector<double> kick_coefficients(const KickRule& rule, int n);

/// Throws ConfigurationError on dimension mismatch, negative b_j or delta <= 0.
void validate_law(const KickLaw& law, const SystemSpec& spec);

StateVector sample_kick(const KickLaw& law, Stream& stream, BasisId basis = BasisId::kCanonical);

/// Density of P_N eta at v, with v the first `v.size()` coordinates:
/// prod_i b_i^{-1} rho(v_i / b_i).
double projected_density(const KickLaw& law, const Vector& v);

/// Frak B = sum_j gamma_{j-1} |b_j| with gamma_prev[j] the weight of coordinate j.
double frak_b(const std::vector<double>& b, const std::vector<double>& gamma_prev);
double frak_b(const KickLaw& law, const SystemSpec& spec);

/// gamma_{N-1} for the level N that introduces each coordinate.
std::vector<double> coordinate_gamma(const SystemSpec& spec);

struct MomentReport {
  double frak_b = 0.0;
  double m_delta_hat = 0.0;
  double m_delta_stderr = 0.0;
  std::vector<double> doubling_estimates;  // on n/4, n/2, n samples
  bool delta_too_large = false;
  double empirical_u_norm_mean = 0.0;      // E |eta|_U
};

/// frak B and a Monte Carlo estimate of E exp(delta (Phi(eta) + p(eta))).
MomentReport moment_report(const KickLaw& law, const SystemSpec& spec, std::size_t n_samples, std::uint64_t seed,
                           int workers = 1);

}  // namespace kicklab
