#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kicklab/core_model.hpp"
#include "kicklab/feynman_kac.hpp"
#include "kicklab/markov.hpp"
#include "kicklab/noise.hpp"
#include "kicklab/observable.hpp"

namespace kicklab {

struct PairDraw {
  Vector v;
  Vector v_prime;
  bool met = false;  // v == v_prime bit for bit
};

/// Maximal coupling of the product laws mean1 + b xi and mean2 + b xi.
///
/// Gaussian coordinates are whitened; the component along the whitened mean
/// difference is coupled by the one-dimensional reflection coupling and the
/// orthogonal components are shared. Other densities use the rejection
/// construction: draw v, keep it for v' with probability min(1, q(v)/p(v)),
/// otherwise draw v' from the normalized residual (q - p)^+.
class MaximalCoupling {
 public:
  MaximalCoupling(Vector mean1, Vector mean2, Vector scales, DensityFamily family = DensityFamily::kGaussian);

  PairDraw sample(Stream& stream) const;
  /// 1 - TV: closed form for Gaussians, otherwise a seeded Monte Carlo estimate.
  double meeting_probability() const;
  /// Length of the whitened mean difference.
  double whitened_gap() const { return gap_; }
  int dim() const { return static_cast<int>(scales_.size()); }

 private:
  double log_density(const Vector& v, const Vector& mean) const;
  Vector draw(const Vector& mean, Stream& stream) const;

  Vector mean1_, mean2_, scales_;
  DensityFamily family_;
  Vector direction_;  // unit whitened difference
  double gap_ = 0.0;
};

/// Throws DegenerateInputError when a scale is not positive.
MaximalCoupling maximal_coupling_gaussian(Vector mean1, Vector mean2, Vector scales);

/// Two states driven by coupled kicks at level N.
struct CoupledPair {
  StateVector u;
  StateVector u_prime;
  std::vector<bool> met;  // met[k-1]: P_N u_k == P_N u_k'
  int N = 0;
};

/// The kicks of one coupled step; tails beyond H_N are identical.
struct CoupledKicks {
  StateVector zeta;
  StateVector zeta_prime;
};

/// u <- S(u) + zeta, u' <- S(u') + zeta' with (P_N u, P_N u') from the maximal
/// coupling of the projected one-step laws and one shared draw of Q_N zeta.
CoupledPair coupled_step(const CoupledPair& pair, const SystemSpec& spec, const KickLaw& law, Stream& stream,
                         CoupledKicks* kicks = nullptr);

struct CoupledRun {
  CoupledTrajectory traj;
  std::vector<bool> met;
  int first_divorce = 0;  // first k with P_N u_k != P_N u_k', 0 if none within the horizon
};

/// `steps` coupled steps; step k of run `run` draws from Stream(seed, run, k, kCoupling).
CoupledRun coupled_run(const KickedSystem& system, int N, const StateVector& u0, const StateVector& u0_prime,
                       int steps, std::uint64_t seed, std::uint64_t run);

struct CouplingConstant {
  double c_n = 0.0;          // calibrated constant in P{V != V'} <= C_N |S(v) - S(v')|
  double analytic = 0.0;     // 1 / (sqrt(2 pi) min b_j), Gaussian kicks
  std::size_t pairs = 0;     // verification pairs
  std::size_t exact_violations = 0;  // pairs with 1 - meeting probability > C_N |S(v) - S(v')|
  double empirical_divorce = 0.0;    // fraction of verification draws with V != V'
  double empirical_bound = 0.0;      // mean of C_N |S(v) - S(v')| over the same pairs
  double empirical_stderr = 0.0;
  bool holds = false;  // no exact violations and empirical_divorce <= bound + 3 stderr
};

/// Calibrates C_N on `calibration_pairs` pairs (largest ratio times `margin`)
/// and verifies it on `verification_pairs` fresh pairs from the same sampler.
CouplingConstant calibrate_coupling_constant(const KickedSystem& system, int N, const PairSampler& sampler,
                                             std::size_t calibration_pairs, std::size_t verification_pairs,
                                             std::uint64_t seed, double margin = 1.25, int workers = 1);

struct StratumCell {
  int r = 0;
  int rho = 0;
  std::size_t count = 0;
  double p_hat = 0.0;
  double stderr_ = 0.0;
  double envelope = 0.0;  // C_3 min{gamma_N^-r e^{2 rho} d, e^{c r - sigma rho}}
};

struct MeetingReport {
  double d = 0.0;                  // |u0 - u0'|
  int N = 0;
  std::size_t runs = 0;
  std::vector<double> survival;    // P(met through step k), k = 1..horizon
  std::vector<double> divorce;     // P(first divorce at step k), k = 1..horizon
  std::vector<double> hazard;      // P(divorce at k | met through k - 1)
  std::size_t never_divorced = 0;
  double c = 0.0;                  // fitted growth of the p-moment
  double sigma = 0.0;              // delta / 2
  double c3 = 0.0;                 // calibrated prefactor
  std::vector<StratumCell> cells;  // non-empty strata, ordered by (r, rho)
  std::size_t envelope_violations = 0;  // cells with p_hat > envelope + 3 stderr
};

/// First-divorce statistics and the strata A_{r, rho} = {first divorce at r and
/// rho - 1 < sum_{j<r} p(u_j) + p(u_j') <= rho}, with rho >= 1.
MeetingReport meeting_rate(const KickedSystem& system, int N, const StateVector& u0, const StateVector& u0_prime,
                           int horizon, std::size_t n_runs, std::uint64_t seed, int workers = 1);

struct FellerPoint {
  double d = 0.0;
  std::vector<double> difference;  // g_k(z1) - g_k(z2), k = 1..k_max
  std::vector<double> stderr_;
  double modulus = 0.0;            // max_k |difference|
  double modulus_stderr = 0.0;     // at the maximizing k
  int argmax_k = 0;
};

struct FellerReport {
  double z = 0.0;                  // first point; the second is z + d
  std::vector<double> norm_R;      // estimate of |P_k^V 1|_R over the probes, k = 1..k_max
  std::vector<FellerPoint> points;
  bool monotone = false;           // modulus non-increasing as d decreases
  bool inconclusive = false;       // stderr above the signal at some d > 0
  std::string note;
};

struct FellerOptions {
  double z = 0.0;
  std::vector<double> d_values = {0.1, 0.01};
  double R = 1.0;
  int probes = 9;       // evenly spaced points of [-R, R] for |.|_R
  int k_max = 10;
  std::size_t runs = 100000;
  int N = 1;            // coupling level
};

/// Modulus of continuity of g_k = P_k^V f / |P_k^V 1|_R on a one-dimensional
/// kicked system, estimated with coupled trajectories from (z, z + d).
/// V and f read single states.
FellerReport feller_diagnostic(const KickedSystem& system, const ObservableSpec& V, const ObservableSpec& f,
                               const FellerOptions& options, std::uint64_t seed, int workers = 1);

/// The same quantities from the grid operator: rows at the off-grid points.
FellerReport feller_exact(const GridOperator& op, const Vector& f_nodes, const FellerOptions& options);

}  // namespace kicklab
