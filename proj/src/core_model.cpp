#include "kicklab/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "core_model";
constexpr double kRelTol = 1e-10;

}  // namespace

const char* basis_name(BasisId basis) {
  switch (basis) {
    case BasisId::kCanonical:
      return "canonical";
    case BasisId::kStokesTorus:
      return "stokes_torus";
    case BasisId::kDirichletSine:
      return "dirichlet_sine";
    case BasisId::kChainState:
      return "chain_state";
  }
  return "unknown";
}

void DissipativityConstants::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0) || alpha > beta) {
    throw ConfigurationError(kModule, "dissipativity exponents need 0 < alpha <= beta");
  }
  if (!(c_phi > 0.0)) throw ConfigurationError(kModule, "dissipativity constant C must be positive");
  if (!(q > 0.0 && q < 1.0)) throw ConfigurationError(kModule, "contraction factor q must lie in (0, 1)");
}

int SystemSpec::dim_of_level(int level) const {
  if (level < 0 || level > levels()) {
    throw ConfigurationError(kModule, "level " + std::to_string(level) + " outside [0, " +
                                          std::to_string(levels()) + "] for " + name);
  }
  return level_dim[static_cast<std::size_t>(level)];
}

void SystemSpec::conform(const StateVector& u) const {
  if (u.size() != n_dim) {
    throw ConfigurationError(kModule, "state of dimension " + std::to_string(u.size()) + " given to " + name +
                                          " with N_dim " + std::to_string(n_dim));
  }
  if (u.basis != basis) {
    throw ConfigurationError(kModule, std::string("state in basis ") + basis_name(u.basis) + " given to " + name);
  }
}

StepWithFunctional SystemSpec::advance(const StateVector& u) const {
  if (step_and_p) return step_and_p(u);
  return {step(u), frak_p(u)};
}

void finalize_system(SystemSpec& spec) {
  if (spec.n_dim < 1) throw ConfigurationError(kModule, "N_dim must be positive");
  if (!spec.step || !spec.phi || !spec.frak_p) throw ConfigurationError(kModule, spec.name + ": missing S, Phi or p");
  if (spec.level_dim.size() < 2 || spec.level_dim.front() != 0 || spec.level_dim.back() != spec.n_dim) {
    throw ConfigurationError(kModule, spec.name + ": levels must run from H_0 = {0} to the full truncation");
  }
  for (std::size_t i = 1; i < spec.level_dim.size(); ++i) {
    if (spec.level_dim[i] <= spec.level_dim[i - 1]) {
      throw ConfigurationError(kModule, spec.name + ": subspaces H_N must be strictly nested");
    }
  }
  if (spec.gamma.size() != spec.level_dim.size()) {
    throw ConfigurationError(kModule, spec.name + ": gamma must have one entry per level");
  }
  for (std::size_t i = 0; i < spec.gamma.size(); ++i) {
    if (!(spec.gamma[i] > 0.0) || !std::isfinite(spec.gamma[i])) {
      throw ConfigurationError(kModule, spec.name + ": gamma_N must be positive and finite");
    }
    if (i > 0 && spec.gamma[i] < spec.gamma[i - 1]) {
      throw ConfigurationError(kModule, spec.name + ": gamma_N must be non-decreasing");
    }
  }
  spec.constants.validate();
  const StateVector s0 = spec.step(StateVector::zero(spec.n_dim, spec.basis));
  if (!s0.all_finite()) throw NumericalInstabilityError(kModule, spec.name + ": S(0) is not finite");
  spec.s_of_zero_u_norm = u_norm(s0, spec);
}

Vector tail_part(const Vector& coeffs, int first_tail_index) {
  Vector out = coeffs;
  out.head(std::min<Eigen::Index>(first_tail_index, out.size())).setZero();
  return out;
}

double u_norm(const StateVector& u, const SystemSpec& spec) {
  spec.conform(u);
  // Squared tail norms accumulated from the end.
  const int n = u.size();
  std::vector<double> tail_sq(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = n - 1; i >= 0; --i) tail_sq[static_cast<std::size_t>(i)] = tail_sq[static_cast<std::size_t>(i) + 1] + u.coeffs[i] * u.coeffs[i];
  double best = 0.0;
  for (int level = 0; level <= spec.levels(); ++level) {
    const double tail = std::sqrt(tail_sq[static_cast<std::size_t>(spec.level_dim[static_cast<std::size_t>(level)])]);
    best = std::max(best, spec.gamma[static_cast<std::size_t>(level)] * tail);
  }
  return best;
}

PhiBoundsReport check_phi_bounds(const SystemSpec& spec, const std::vector<StateVector>& states) {
  PhiBoundsReport report;
  const auto& c = spec.constants;
  for (const auto& u : states) {
    spec.conform(u);
    const double r = u.norm();
    const double phi = spec.phi(u);
    ++report.samples;
    if (phi < (1.0 + std::pow(r, c.alpha)) * (1.0 - kRelTol)) ++report.lower_violations;
    if (phi > c.c_phi * std::pow(1.0 + r, c.beta) * (1.0 + kRelTol)) ++report.upper_violations;
  }
  return report;
}

DissipativityReport check_dissipativity(const SystemSpec& spec, const PairSampler& sampler, std::size_t n_samples,
                                        std::uint64_t seed, int workers) {
  if (n_samples < 1) throw ConfigurationError(kModule, "check_dissipativity needs at least one sample");
  std::vector<double> ratios(n_samples);
  std::vector<char> violated(n_samples, 0);
  const double q = spec.constants.q;
  const double c = spec.constants.c_phi;
  parallel_for(n_samples, workers, [&](std::size_t i) {
    Stream stream(seed, i, 0, StreamPurpose::kSampler);
    auto [u, v] = sampler(stream);
    spec.conform(u);
    spec.conform(v);
    const StateVector su = spec.step(u);
    if (!su.all_finite()) {
      throw NumericalInstabilityError(kModule, "S(u) not finite at sample " + std::to_string(i));
    }
    StateVector w(su.coeffs + v.coeffs, spec.basis);
    const double lhs = spec.phi(w);
    const double rhs = q * spec.phi(u) + c * spec.phi(v);
    if (!std::isfinite(lhs) || !std::isfinite(rhs)) {
      throw NumericalInstabilityError(kModule, "Phi not finite at sample " + std::to_string(i));
    }
    ratios[i] = lhs / rhs;
    violated[i] = lhs - rhs > kRelTol * rhs ? 1 : 0;
  });
  DissipativityReport report;
  report.samples = n_samples;
  for (std::size_t i = 0; i < n_samples; ++i) {
    report.violations += static_cast<std::size_t>(violated[i]);
    if (ratios[i] > report.worst_ratio) {
      report.worst_ratio = ratios[i];
      report.worst_index = i;
    }
  }
  return report;
}

namespace {

double raw_squeezing(const SystemSpec& spec, int level, const Vector& su, const Vector& sv, double gap) {
  const int first = spec.dim_of_level(level);
  const double tail = (su - sv).tail(spec.n_dim - first).norm();
  return tail * spec.gamma[static_cast<std::size_t>(level)] / gap;
}

}  // namespace

SqueezingReport check_squeezing(const SystemSpec& spec, int level,
                                const std::vector<std::pair<StateVector, StateVector>>& pairs) {
  if (pairs.empty()) throw ConfigurationError(kModule, "check_squeezing needs at least one pair");
  spec.dim_of_level(level);
  SqueezingReport report;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [u, v] = pairs[i];
    spec.conform(u);
    spec.conform(v);
    const double gap = (u.coeffs - v.coeffs).norm();
    if (gap == 0.0) throw DegenerateInputError(kModule, "pair " + std::to_string(i) + " has u = v");
    const auto a = spec.advance(u);
    const auto b = spec.advance(v);
    const double defect =
        raw_squeezing(spec, level, a.next.coeffs, b.next.coeffs, gap) * std::exp(-a.frak_p - b.frak_p);
    if (defect > report.max_normalized_defect || i == 0) {
      report.max_normalized_defect = defect;
      report.worst_pair = i;
    }
  }
  return report;
}

double fit_p_scale(const SystemSpec& spec, const std::vector<std::pair<StateVector, StateVector>>& pairs,
                   double margin) {
  double scale = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [u, v] = pairs[i];
    const double gap = (u.coeffs - v.coeffs).norm();
    if (gap == 0.0) throw DegenerateInputError(kModule, "calibration pair " + std::to_string(i) + " has u = v");
    const auto a = spec.advance(u);
    const auto b = spec.advance(v);
    const double unit = a.frak_p + b.frak_p;
    for (int level = 0; level <= spec.levels(); ++level) {
      const double raw = raw_squeezing(spec, level, a.next.coeffs, b.next.coeffs, gap);
      if (raw <= 1.0) continue;
      if (!(unit > 0.0)) {
        throw DegenerateInputError(kModule, "unit functional vanishes on a pair with squeezing defect above one");
      }
      scale = std::max(scale, std::log(raw) / unit);
    }
  }
  return scale * margin;
}

FoiasProdiReport foias_prodi_bound(const SystemSpec& spec, const CoupledTrajectory& traj, int level) {
  const int n = traj.steps();
  if (traj.u.size() != static_cast<std::size_t>(n) + 1 || traj.u_prime.size() != traj.u.size() ||
      traj.zeta_prime.size() != traj.zeta.size()) {
    throw ConfigurationError(kModule, "coupled trajectory arrays have inconsistent lengths");
  }
  const int first = spec.dim_of_level(level);
  const int tail = spec.n_dim - first;
  for (int j = 1; j <= n; ++j) {
    const auto& uj = traj.u[static_cast<std::size_t>(j)].coeffs;
    const auto& ujp = traj.u_prime[static_cast<std::size_t>(j)].coeffs;
    if (uj.head(first) != ujp.head(first)) {
      throw PreconditionError(kModule, "P_N u_j != P_N u_j' at j = " + std::to_string(j), j);
    }
    const auto& z = traj.zeta[static_cast<std::size_t>(j) - 1].coeffs;
    const auto& zp = traj.zeta_prime[static_cast<std::size_t>(j) - 1].coeffs;
    if (z.tail(tail) != zp.tail(tail)) {
      throw PreconditionError(kModule, "Q_N zeta_j != Q_N zeta_j' at j = " + std::to_string(j), j);
    }
  }
  double exponent = 0.0;
  for (int j = 0; j < n; ++j) {
    exponent += spec.frak_p(traj.u[static_cast<std::size_t>(j)]) + spec.frak_p(traj.u_prime[static_cast<std::size_t>(j)]);
  }
  FoiasProdiReport report;
  const double initial = (traj.u.front().coeffs - traj.u_prime.front().coeffs).norm();
  report.measured = (traj.u.back().coeffs - traj.u_prime.back().coeffs).norm();
  report.bound = std::pow(spec.gamma[static_cast<std::size_t>(level)], -n) * std::exp(exponent) * initial;
  report.violation = report.measured > report.bound * (1.0 + kRelTol);
  return report;
}

}  // namespace kicklab
