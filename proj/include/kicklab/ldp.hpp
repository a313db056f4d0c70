#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kicklab/feynman_kac.hpp"
#include "kicklab/markov.hpp"
#include "kicklab/oracle_chain.hpp"

namespace kicklab {

struct LegendreResult {
  double y = 0.0;
  double value = 0.0;      // sup_beta (beta y - Q(beta))
  double beta_star = 0.0;  // smallest maximizer
  bool extrapolated = false;  // y outside the observed slope range; the true value may be +inf
};

struct ConvexityCheck {
  bool convex = true;
  double worst_defect = 0.0;  // max of Q(mid) - chord(mid)
  std::size_t worst_index = 0;
};

/// Midpoint test on consecutive triples of a grid (any spacing).
ConvexityCheck convexity_midpoint(const std::vector<double>& betas, const std::vector<double>& Q, double tol = 1e-10);

/// Conjugate of a convex function known on a beta grid: the grid maximum of
/// beta y - Q(beta), refined by golden-section search on the bracketing cells.
/// Throws PreconditionError if Q fails the midpoint test on the grid.
LegendreResult legendre_1d(const std::vector<double>& betas, const std::function<double(double)>& Q, double y);

/// Same for samples, interpolated linearly. `convexity_tol` bounds the midpoint defect.
LegendreResult legendre_1d(const std::vector<double>& betas, const std::vector<double>& Q, double y,
                           double convexity_tol = 1e-10);

/// I_f through the pressure of beta f on a beta grid.
struct RateFunction1D {
  std::vector<double> betas;
  std::vector<double> Q_values;
  std::vector<double> Q_stderr;
  bool convex = true;
  bool inconclusive = false;  // some pressure estimate was inconclusive
  std::string note;
  double y_star = 0.0;  // slope of Q at beta = 0

  LegendreResult at(double y) const;
};

/// Monte Carlo pressures of beta f from one ensemble of trajectories.
/// Convexity is checked with a 3 stderr allowance.
RateFunction1D rate_from_pressure(const Model& model, const InitialLaw& init, const ObservableSpec& f,
                                  const std::vector<double>& betas, const std::vector<int>& k_grid, std::size_t M,
                                  std::uint64_t seed, int workers = 1);

/// Exact pressures on a finite chain.
RateFunction1D rate_from_chain(const FiniteChain& chain, const Vector& f, const std::vector<double>& betas);

/// Threshold set for the occupation average.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_closed = true;
  bool hi_closed = true;
  std::string id;

  bool contains(double x) const;
  Interval interior() const;
  Interval closure() const;
};

struct TailEstimate {
  int k = 0;
  double probability = 0.0;
  std::size_t hits = 0;
  std::size_t trials = 0;
  double wilson_lo = 0.0;
  double wilson_hi = 1.0;
  double exponent = 0.0;  // -(1/k) log probability; from wilson_hi when there are no hits
  bool exact = false;
  bool one_sided = false;
};

/// P{(1/k) sum_{j<k} f(window j) in Gamma} by frequency over the ensemble, with
/// window length f.ell.
TailEstimate tail_probability(const TrajectoryEnsemble& ensemble, const ObservableSpec& f, int k, const Interval& gamma);

/// Frequencies for every set and k from M fresh trajectories, drawn under the
/// same RNG contract as `simulate` but without storing them. Indexed [set][k].
std::vector<std::vector<TailEstimate>> tail_probabilities(const Model& model, const InitialLaw& init,
                                                          const ObservableSpec& f, const std::vector<Interval>& sets,
                                                          const std::vector<int>& ks, std::size_t M,
                                                          std::uint64_t seed, int workers = 1);

/// Exact value for a chain whose rows are all equal and whose f takes at most
/// two values, started from `init`: a mixture of binomial sums.
TailEstimate tail_probability_exact(const FiniteChain& chain, const Vector& init, int k, const Interval& gamma);

/// inf of I over a set, by convexity the value at the end point nearest to y*.
double rate_infimum(const RateFunction1D& rate, const Interval& gamma);

struct LdpRow {
  std::string gamma_id;
  int k = 0;
  double exponent_hat = 0.0;
  double rate_bound_interior = 0.0;  // inf over the interior: upper bound on the exponent
  double rate_bound_closure = 0.0;   // inf over the closure: lower bound on the exponent
  std::size_t hits = 0;
  bool one_sided = false;
};

struct LdpReport {
  std::vector<LdpRow> rows;
};

using TailSource = std::function<TailEstimate(const Interval&, int)>;

LdpReport ldp_report(const RateFunction1D& rate, const std::vector<Interval>& family, const std::vector<int>& ks,
                     const TailSource& tails);

struct EquilibriumReport {
  double lambda = 0.0;
  Vector nu;                      // h_V mu_V
  double stationarity_defect = 0.0;  // |nu S - nu|_1
  double pressure = 0.0;          // Q(V)
  double energy = 0.0;            // <V, nu>
  double entropy = 0.0;           // I(nu)
  double defect = 0.0;            // Q(V) - <V, nu> + I(nu)
  std::vector<double> perturbed_defects;
  double min_perturbed_defect = 0.0;
  bool unique = false;            // defect ~ 0 at nu and > 0 at every perturbation
};

/// Level-2 rate of a law on the states of a primitive chain: the conjugate of
/// the exact pressure, maximized over tilts W with W_0 = 0.
double chain_level2_rate(const FiniteChain& chain, const Vector& sigma);

/// nu_V = h_V mu_V is stationary for the twisted kernel and is the only law
/// with zero defect among `perturbations` random laws at L1 distance `distance`.
EquilibriumReport equilibrium_check(const FiniteChain& chain, const Vector& V, int perturbations = 100,
                                    double distance = 0.1, std::uint64_t seed = 1);

}  // namespace kicklab
