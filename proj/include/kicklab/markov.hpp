#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kicklab/core_model.hpp"
#include "kicklab/noise.hpp"
#include "kicklab/observable.hpp"
#include "kicklab/oracle_chain.hpp"
#include "kicklab/stats.hpp"

namespace kicklab {

/// u_k = S(u_{k-1}) + eta_k.
struct KickedSystem {
  SystemSpec spec;
  KickLaw law;
};

/// A Markov family that can be simulated: a kicked system or a finite chain
/// whose state index is stored in coordinate 0 of a one-coordinate state.
using Model = std::variant<KickedSystem, FiniteChain>;

KickedSystem make_kicked(SystemSpec spec, KickLaw law);
int model_dim(const Model& model);
BasisId model_basis(const Model& model);
std::string model_name(const Model& model);

/// One transition drawn from `stream`.
StateVector model_step(const Model& model, const StateVector& u, Stream& stream);

/// One transition of trajectory m at step k (1-based), keyed by the RNG contract.
StateVector model_step(const Model& model, const StateVector& u, std::uint64_t seed, std::size_t m, int k);

StateVector chain_state(int index);
int chain_index(const StateVector& u);

struct InitialLaw {
  enum class Kind { kPoint, kGaussian, kBurnIn, kCategorical };

  Kind kind = Kind::kPoint;
  Vector point;        // kPoint, and the starting point of kBurnIn
  Vector mean;         // kGaussian
  Vector scales;       // kGaussian, one standard deviation per coordinate
  int burn_in = 0;     // kBurnIn: steps of the chain itself
  Vector probs;        // kCategorical, finite chains only
  /// Membership certificate for Lambda(delta, M): int e^{delta Phi} d lambda <= m_bound.
  std::optional<double> delta;
  std::optional<double> m_bound;

  static InitialLaw point_mass(Vector u);
  static InitialLaw gaussian(Vector mean, Vector scales);
  static InitialLaw burned_in(Vector start, int steps);
  static InitialLaw categorical(Vector probs);
};

const char* initial_kind_name(InitialLaw::Kind kind);
InitialLaw::Kind initial_kind_from_string(const std::string& name);

/// Draw for trajectory m under the RNG contract.
StateVector sample_initial(const InitialLaw& init, const Model& model, std::uint64_t seed, std::size_t m);

struct InitialCertificate {
  double estimate = 0.0;         // int e^{delta Phi} d lambda on 10 n samples
  double stderr_ = 0.0;
  double small_sample_estimate = 0.0;  // on the first n samples
  bool stable = false;           // the two estimates agree within 3 combined stderr
  double m_bound = 0.0;          // estimate + 3 stderr
};

/// Certifies lambda in Lambda(delta, M) by Monte Carlo with a 10x sample stability rule.
InitialCertificate certify_initial_law(const InitialLaw& init, const KickedSystem& system, double delta,
                                       std::size_t n, std::uint64_t seed, int workers = 1);

struct TrajectoryEnsemble {
  std::size_t M = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::string spec_id;
  std::string law_id;
  std::vector<StateVector> states;  // row-major: trajectory m occupies [m (K+1), (m+1)(K+1))

  const StateVector& at(std::size_t m, int k) const { return states[m * (static_cast<std::size_t>(K) + 1) + static_cast<std::size_t>(k)]; }
  std::span<const StateVector> path(std::size_t m) const {
    return {states.data() + m * (static_cast<std::size_t>(K) + 1), static_cast<std::size_t>(K) + 1};
  }
};

/// M trajectories of K steps. Bit-identical for a given seed and any worker count.
TrajectoryEnsemble simulate(const Model& model, const InitialLaw& init, std::size_t M, int K, std::uint64_t seed,
                            int workers = 1);

/// Windows (u_j, ..., u_{j+ell-1}) of each trajectory, j = 0..K+1-ell, as views
/// into the ensemble.
struct WindowedEnsemble {
  const TrajectoryEnsemble* ensemble = nullptr;
  int ell = 1;

  int windows_per_path() const { return ensemble->K + 2 - ell; }
  std::span<const StateVector> window(std::size_t m, int j) const { return ensemble->path(m).subspan(static_cast<std::size_t>(j), static_cast<std::size_t>(ell)); }
};

WindowedEnsemble ell_process(const TrajectoryEnsemble& ensemble, int ell);

/// zeta_k^ell = (1/k) sum_{j<k} delta of the window j of one trajectory, kept
/// as integer counts. With an observable, the pushforward onto its values.
struct OccupationMeasure {
  int ell = 1;
  std::size_t k = 0;
  std::vector<std::vector<StateVector>> windows;  // without observable: one entry per distinct window
  std::vector<double> values;                     // with observable: sorted distinct values
  std::vector<std::size_t> counts;

  bool has_values() const { return !values.empty(); }
  std::size_t support_size() const { return counts.size(); }
  double weight(std::size_t i) const { return static_cast<double>(counts[i]) / static_cast<double>(k); }
  double total_weight() const;
  /// <f, zeta> over windows.
  double integrate(const ObservableSpec& f) const;
  /// <g, zeta^f> over observable values.
  double integrate_values(const std::function<double(double)>& g) const;
};

OccupationMeasure occupation_measure(const TrajectoryEnsemble& ensemble, std::size_t m, int ell, std::size_t k,
                                     const ObservableSpec* observable = nullptr);

/// Empirical law of the values of one observable across trajectories at time k.
struct EmpiricalLaw1D {
  std::vector<double> x;
  std::vector<double> w;  // non-negative, summing to 1
};

EmpiricalLaw1D empirical_1d(std::span<const double> samples);
EmpiricalLaw1D to_empirical(const OccupationMeasure& mu);

struct DualLipschitzResult {
  double value = 0.0;
  double lipschitz = 0.0;  // Lip(f) of the optimal function
  bool exact = true;       // false for the multi-dimensional lower bound
};

/// sup { <f, mu - nu> : |f|_inf + Lip(f) <= 1 } for laws on the real line,
/// solved exactly: for fixed Lip(f) = L the linear program is a concave
/// dynamic program over f(x_i), and the value is concave in L.
DualLipschitzResult dual_lipschitz_1d(const EmpiricalLaw1D& mu, const EmpiricalLaw1D& nu);

/// Value of the inner program at a fixed L.
double dual_lipschitz_1d_at(const EmpiricalLaw1D& mu, const EmpiricalLaw1D& nu, double L);

/// Lower bound for empirical laws on R^d: maximum of the exact 1D values over a
/// dictionary of 1-Lipschitz projections (coordinates, the norm, and seeded
/// random unit directions).
DualLipschitzResult dual_lipschitz_lower_bound(std::span<const StateVector> mu, std::span<const StateVector> nu,
                                               int random_directions = 8, std::uint64_t seed = 1);

/// Exact when both carry observable values, otherwise the dictionary lower
/// bound on concatenated windows.
DualLipschitzResult dual_lipschitz_distance(const OccupationMeasure& mu, const OccupationMeasure& nu);

struct MixingPoint {
  int k = 0;
  double distance = 0.0;
  double stderr_ = 0.0;  // bootstrap
};

struct MixingReport {
  std::vector<MixingPoint> curve;
  int fit_begin = 0;
  int fit_end = 0;  // inclusive; last k above the noise floor
  double gamma_hat = 0.0;
  double gamma_stderr = 0.0;
  double r_squared = 0.0;
  bool strictly_decreasing = false;  // over the fit range
  bool exact = true;
  bool inconclusive = false;
  std::string note;
};

struct MixingOptions {
  int bootstrap = 20;
  int random_directions = 4;
  int fit_begin = 1;
  const ObservableSpec* projection = nullptr;  // if set, compare pushforwards under it (exact)
};

/// Distance between the time-k marginals of two ensembles started from
/// init_a and init_b with common kicks, and the fitted exponential rate.
MixingReport mixing_rate(const Model& model, const InitialLaw& init_a, const InitialLaw& init_b, int K,
                         std::size_t M, std::uint64_t seed, int workers = 1, const MixingOptions& options = {});

struct LyapunovRow {
  int k = 0;
  double phi_mean = 0.0;      // E Phi(u_k)
  double phi_stderr = 0.0;
  double phi_bound = 0.0;     // q^k int Phi d lambda + C (1-q)^{-1} E Phi(eta)
  double log_sum_moment = 0.0;   // log E exp(kappa_1 sum_{n<=k} Phi(u_n))
  double log_sum_bound = 0.0;    // k log E e^{delta Phi(eta)} + log int exp(kappa_1 (1-q)^{-1} Phi) d lambda
  double log_point_moment = 0.0;  // log E exp(kappa_2 Phi(u_k))
  double log_point_bound = 0.0;   // (1-q)^{-1} log E e^{delta Phi(eta)} + log int e^{q^k delta Phi} d lambda
  double log_stderr = 0.0;        // of log_point_moment

  double margin() const { return phi_bound - phi_mean; }
};

struct LyapunovReport {
  double kappa_sum = 0.0;    // delta (1-q) / C
  double kappa_point = 0.0;  // delta / C
  double kick_phi_mean = 0.0;
  double log_kick_moment = 0.0;  // log E e^{delta Phi(eta)}
  std::vector<LyapunovRow> rows;
  /// Rows whose mean bound fails by more than 3 stderr.
  std::size_t violations = 0;
  std::size_t exp_violations = 0;
};

LyapunovReport lyapunov_check(const KickedSystem& system, const InitialLaw& init, int K, std::size_t M,
                              std::uint64_t seed, int workers = 1);

struct HittingReport {
  double u0_norm = 0.0;
  double gamma = 0.0;
  double estimate = 0.0;       // E exp(gamma tau), capped runs counted at the cap
  double stderr_ = 0.0;
  double capped_fraction = 0.0;
  double mean_tau = 0.0;
  bool flagged = false;        // capped_fraction > 1 %
};

/// First time all ell components of the window process lie in B_U(R).
HittingReport hitting_time_moments(const KickedSystem& system, const StateVector& u0, double R, double gamma,
                                   std::size_t M, int horizon, std::uint64_t seed, int ell = 1, int workers = 1);

struct StabilisabilityFit {
  double delta = 0.0;
  double c = 0.0;            // slope of log E exp(delta sum p(u_j)) in k
  double log_q = 0.0;        // intercept, an estimate of log Q(|u|)
  double r_squared = 0.0;
  std::vector<double> log_curve;  // k = 1..K
};

StabilisabilityFit stabilisability_fit(const KickedSystem& system, const StateVector& u0, double delta, int K,
                                       std::size_t M, std::uint64_t seed, int workers = 1);

struct HittingGrowthFit {
  double C = 0.0;
  int m = 1;
  std::vector<HittingReport> table;
  bool dominated = false;  // every estimate <= C Phi(u0)^m
};

/// Estimates at several starting points and the smallest C with estimate <= C Phi(u0)^m.
HittingGrowthFit hitting_growth_fit(const KickedSystem& system, const std::vector<StateVector>& starts, double R,
                                    double gamma, std::size_t M, int horizon, std::uint64_t seed, int m = 1,
                                    int workers = 1);

struct TightnessReport {
  double gamma_exp = 0.0;
  std::vector<double> log_curve;  // log E exp(sum_{n=2}^k Psi(u_n)), k = 2..K
  std::vector<double> ess;
  LinearFit fit;
  bool diverging = false;
  std::string note;
};

/// Psi(u) = gamma log(1 + |u|_U) summed along each path.
TightnessReport tightness_functional(const TrajectoryEnsemble& ensemble, const SystemSpec& spec, double gamma_exp);

}  // namespace kicklab
