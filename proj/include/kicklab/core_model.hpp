#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kicklab/rng.hpp"

namespace kicklab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Basis family against which a StateVector's coefficients are expressed.
enum class BasisId : std::uint8_t {
  kCanonical,      // linear test map, grid oracles
  kStokesTorus,    // divergence-free Fourier modes on the 2D torus
  kDirichletSine,  // (e_j, i e_j) sine modes of the Dirichlet Laplacian
  kChainState,     // single coordinate holding a finite-chain state index
};

const char* basis_name(BasisId basis);

/// Coefficients of a phase-space point against an orthonormal basis of H, so
/// that the H-norm is the Euclidean norm of `coeffs`.
struct StateVector {
  Vector coeffs;
  BasisId basis = BasisId::kCanonical;

  StateVector() = default;
  explicit StateVector(Vector c, BasisId b = BasisId::kCanonical) : coeffs(std::move(c)), basis(b) {}

  static StateVector zero(int n, BasisId b = BasisId::kCanonical) { return StateVector(Vector::Zero(n), b); }

  int size() const { return static_cast<int>(coeffs.size()); }
  double norm() const { return coeffs.norm(); }
  bool all_finite() const { return coeffs.allFinite(); }

  friend bool operator==(const StateVector& a, const StateVector& b) {
    return a.basis == b.basis && a.coeffs.size() == b.coeffs.size() && a.coeffs == b.coeffs;
  }
};

/// Constants of the dissipativity condition:
///   1 + |u|^alpha <= Phi(u) <= c_phi (1 + |u|)^beta,
///   Phi(S(u) + v) <= q Phi(u) + c_phi Phi(v).
struct DissipativityConstants {
  double alpha = 2.0;
  double beta = 2.0;
  double c_phi = 1.0;
  double q = 0.5;

  /// Throws ConfigurationError unless 0 < alpha <= beta, c_phi > 0, 0 < q < 1.
  void validate() const;
};

struct StepWithFunctional {
  StateVector next;
  double frak_p = 0.0;
};

using StepFunction = std::function<StateVector(const StateVector&)>;
using StateFunctional = std::function<double(const StateVector&)>;

/// A dissipative system: the time-1 map S, the weight Phi, the functional p of
/// the squeezing condition, the sequence gamma_N and the nested subspaces H_N.
///
/// H_N is spanned by the first level_dim[N] coordinates. For systems with one
/// basis vector per level level_dim[N] == N; the Ginzburg-Landau truncation has
/// two (e_j and i e_j).
struct SystemSpec {
  std::string name;
  int n_dim = 0;
  BasisId basis = BasisId::kCanonical;
  StepFunction step;
  StateFunctional phi;
  StateFunctional frak_p;
  /// Optional fused evaluation of (S(u), p(u)); falls back to two calls.
  std::function<StepWithFunctional(const StateVector&)> step_and_p;
  std::vector<double> gamma;    // gamma[N] for N = 0..levels()
  std::vector<int> level_dim;   // level_dim[0] == 0, level_dim.back() == n_dim
  DissipativityConstants constants;
  double s_of_zero_u_norm = 0.0;
  /// System-specific named observables (energy, enstrophy, ...).
  std::map<std::string, StateFunctional> catalogue;

  int levels() const { return static_cast<int>(level_dim.size()) - 1; }

  /// Number of leading coordinates spanning H_N.
  int dim_of_level(int level) const;

  /// Throws ConfigurationError when u does not belong to this system.
  void conform(const StateVector& u) const;

  StepWithFunctional advance(const StateVector& u) const;
};

/// Validates the structural invariants of a freshly assembled spec (gamma
/// positive and non-decreasing, nested levels, constants) and caches |S(0)|_U.
void finalize_system(SystemSpec& spec);

/// Q_N u: coefficients beyond H_N, zero elsewhere.
Vector tail_part(const Vector& coeffs, int first_tail_index);

/// |u|_U = max over N of gamma_N |Q_N u|.
double u_norm(const StateVector& u, const SystemSpec& spec);

struct PhiBoundsReport {
  std::size_t samples = 0;
  std::size_t lower_violations = 0;
  std::size_t upper_violations = 0;
};

/// Checks 1 + |u|^alpha <= Phi(u) <= c_phi (1 + |u|)^beta on the given states.
PhiBoundsReport check_phi_bounds(const SystemSpec& spec, const std::vector<StateVector>& states);

using PairSampler = std::function<std::pair<StateVector, StateVector>(Stream&)>;

struct DissipativityReport {
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;
  std::size_t worst_index = 0;
};

/// Evaluates Phi(S(u)+v) - q Phi(u) - C Phi(v) on n_samples pairs drawn with
/// streams keyed by (seed, sample index).
DissipativityReport check_dissipativity(const SystemSpec& spec, const PairSampler& sampler,
                                        std::size_t n_samples, std::uint64_t seed, int workers = 1);

struct SqueezingReport {
  double max_normalized_defect = 0.0;
  std::size_t worst_pair = 0;
};

/// max over pairs of |Q_N(S(u) - S(v))| gamma_N exp(-p(u) - p(v)) / |u - v|.
SqueezingReport check_squeezing(const SystemSpec& spec, int level,
                                const std::vector<std::pair<StateVector, StateVector>>& pairs);

/// Smallest scale C such that replacing p by C * p_unit makes every pair's
/// squeezing defect at every level at most one; multiplied by `margin`.
/// `spec.frak_p` must be the unit functional.
double fit_p_scale(const SystemSpec& spec, const std::vector<std::pair<StateVector, StateVector>>& pairs,
                   double margin);

/// Two trajectories driven by u_k = S(u_{k-1}) + zeta_k and the primed analogue.
/// u.size() == u_prime.size() == zeta.size() + 1.
struct CoupledTrajectory {
  std::vector<StateVector> u;
  std::vector<StateVector> u_prime;
  std::vector<StateVector> zeta;
  std::vector<StateVector> zeta_prime;

  int steps() const { return static_cast<int>(zeta.size()); }
};

struct FoiasProdiReport {
  double measured = 0.0;
  double bound = 0.0;
  bool violation = false;
};

/// Checks |u_n - u_n'| <= gamma_N^{-n} exp(sum_{j<n} p(u_j) + p(u_j')) |u_0 - u_0'|
/// after verifying P_N u_j = P_N u_j' and Q_N zeta_j = Q_N zeta_j' for 1 <= j <= n.
/// Throws PreconditionError carrying the first failing j.
FoiasProdiReport foias_prodi_bound(const SystemSpec& spec, const CoupledTrajectory& traj, int level);

}  // namespace kicklab
