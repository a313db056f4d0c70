#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kicklab/markov.hpp"
#include "kicklab/noise.hpp"
#include "kicklab/observable.hpp"
#include "kicklab/oracle_chain.hpp"

namespace kicklab {

/// Effective sample size below which tilted weights are treated as collapsed.
inline constexpr double kEssFloor = 100.0;

struct TiltedEstimate {
  int k = 0;
  std::size_t M = 0;
  double value = 0.0;  // E exp(sum_{n=1}^k V(window n)) f(window k)
  double stderr_ = 0.0;
  double log_value = 0.0;
  double log_stderr = 0.0;
  double ess = 0.0;
  std::string warning;  // set when ess < kEssFloor
};

/// Monte Carlo estimate of the tilted semigroup applied to f, averaged over
/// `init`. Window n is (u_n, ..., u_{n+ell-1}) with ell = V.ell; f reads the
/// last f.ell components of window k.
TiltedEstimate tilted_expectation(const Model& model, const InitialLaw& init, const ObservableSpec& V,
                                  const ObservableSpec& f, int k, std::size_t M, std::uint64_t seed,
                                  int workers = 1);

struct PressurePoint {
  int k = 0;
  double log_mean = 0.0;   // log E exp(sum_{n<=k} V)
  double log_stderr = 0.0;
  double ess = 0.0;
  bool stable = false;     // ess >= kEssFloor and every earlier point stable
};

struct PressureEstimate {
  double q_hat = 0.0;
  double q_stderr = 0.0;   // from the spread of slopes over trajectory groups
  double intercept = 0.0;
  double r_squared = 0.0;
  int fit_begin = 0;       // k range of the fit, inclusive
  int fit_end = 0;
  double min_ess = 0.0;    // over the fit range
  std::vector<PressurePoint> curve;
  bool inconclusive = false;
  std::string note;
};

/// Slope in k of log E exp(sum V) over the stable range of k_grid: the points
/// before the first weight collapse, without their first quarter (transient).
PressureEstimate pressure_estimate(const Model& model, const InitialLaw& init, const ObservableSpec& V,
                                   const std::vector<int>& k_grid, std::size_t M, std::uint64_t seed,
                                   int workers = 1);

/// Pressure of beta * f for every beta, sharing one set of trajectories.
std::vector<PressureEstimate> pressure_family(const Model& model, const InitialLaw& init, const ObservableSpec& f,
                                              const std::vector<double>& betas, const std::vector<int>& k_grid,
                                              std::size_t M, std::uint64_t seed, int workers = 1);

struct PressureSpread {
  std::vector<PressureEstimate> estimates;
  std::vector<std::optional<InitialCertificate>> certificates;  // kicked systems only
  double spread = 0.0;      // max - min of q_hat
  double max_stderr = 0.0;
  bool consistent = false;  // spread <= 2 max_stderr
};

/// Pressure from several initial laws with common kicks. For kicked systems
/// every law is first certified in Lambda(delta, M) with the kick law's delta.
PressureSpread pressure_spread(const Model& model, const std::vector<InitialLaw>& inits, const ObservableSpec& V,
                               const std::vector<int>& k_grid, std::size_t M, std::uint64_t seed, int workers = 1);

struct GridParams {
  double center = 0.0;
  double half_width = 12.0;
  int cells = 2400;
};

/// Tilted kernel on a finite state space: K(i, j) = P(i, cell j) e^{V(node j)}.
struct GridOperator {
  enum class Kind { kChain, kGrid };

  Kind kind = Kind::kChain;
  Vector nodes;        // chain state indices, or cell centres
  Vector edges;        // kGrid: cell boundaries, size() + 1 entries
  Matrix kernel;
  Vector V_values;
  double escaping_mass = 0.0;  // largest row defect of the untilted kernel

  // kGrid: one-dimensional kicked map u -> S(u) + b xi.
  std::function<double(double)> map;
  double kick_scale = 0.0;
  DensityFamily family = DensityFamily::kGaussian;

  int size() const { return static_cast<int>(kernel.rows()); }
  /// Kernel row from an arbitrary point (kGrid only).
  Vector row_at(double z) const;
};

/// Exact: K = P diag(e^V).
GridOperator discretize(const FiniteChain& chain, const Vector& V);

/// Cell masses of the one-dimensional kick around S(node i), tilted at the cell
/// centres. Throws ConfigurationError when more than 1e-6 of a row escapes.
GridOperator discretize(const KickedSystem& system, const ObservableSpec& V, const GridParams& grid = {});

/// K^k g.
Vector semigroup_apply(const GridOperator& op, const Vector& g, int k);

struct ErgodicTriple {
  double lambda = 0.0;
  Vector h;      // normalized so that <h, mu> = 1
  Vector mu;     // probability weights
  double right_residual = 0.0;  // |Kh - lambda h|_inf / |h|_inf
  double left_residual = 0.0;   // |mu K - lambda mu|_1
  int iterations = 0;
  bool converged = false;
  double ratio_estimate = 0.0;  // successive residual ratio, about |lambda_2| / lambda
  std::string warning;
};

/// Forward iteration on 1 for (lambda, h) and adjoint iteration for mu.
ErgodicTriple power_iterate(const GridOperator& op, double tol = 1e-12, int max_iter = 100000);

struct ConvergenceProfile {
  std::vector<double> errors;  // |lambda^{-k} K^k 1 - <1, mu> h|_inf for k = 1..k_max
  double ratio = 0.0;          // geometric decay factor fitted above round-off
  int fitted_points = 0;
};

ConvergenceProfile convergence_profile(const GridOperator& op, const ErgodicTriple& triple, int k_max);

struct TwistedKernel {
  Matrix S;   // S(i, j) = K(i, j) h(j) / (lambda h(i))
  Vector nu;  // h mu, normalized
  double row_defect = 0.0;           // max |row sum - 1|
  double stationarity_defect = 0.0;  // |nu S - nu|_1
};

TwistedKernel twisted_semigroup(const GridOperator& op, const ErgodicTriple& triple);

struct GrowthCurve {
  std::vector<double> ratios;  // k = 0..k_max
  double sup = 0.0;
  bool bounded = false;
};

/// k -> |K^k w / w|_inf / |K^k 1|_{R0}, with |g|_{R0} the maximum over R0_nodes.
GrowthCurve growth_ratio(const GridOperator& op, const Vector& w, const std::vector<int>& R0_nodes, int k_max);

struct GrowthScan {
  std::vector<int> m_values;
  std::vector<GrowthCurve> curves;
  int selected_m = -1;  // smallest m with a bounded curve, -1 if none
};

/// Growth curves for the weights phi^m.
GrowthScan growth_scan(const GridOperator& op, const Vector& phi, const std::vector<int>& R0_nodes, int k_max,
                       const std::vector<int>& m_values = {1, 2, 4, 8});

/// Nodes with |x - center| <= R (all states of a chain).
std::vector<int> nodes_within(const GridOperator& op, double R, double center = 0.0);

}  // namespace kicklab
