#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kicklab/core_model.hpp"
#include "kicklab/rng.hpp"

namespace kicklab {

inline constexpr int kMaxChainStates = 64;

/// Row-stochastic transition matrix on states 0..n-1 with an observable f.
struct FiniteChain {
  Matrix P;
  Vector f;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(P.rows()); }
};

/// Checks shape, n <= 64, entries >= 0 and row sums within 1e-12.
void validate_chain(const FiniteChain& chain);

FiniteChain make_chain(Matrix P, Vector f = Vector(), std::vector<std::string> labels = {});

/// Two-state chain with every row equal to (1 - p, p) and f = indicator of state 1.
FiniteChain two_state_iid(double p = 0.5);

/// Irreducible with an aperiodic positive power (Wielandt bound (n-1)^2 + 1).
bool is_primitive(const Matrix& P);
bool is_irreducible(const Matrix& P);

/// Solves pi P = pi, sum pi = 1 by LU; residual reported in `residual`.
Vector exact_stationary(const FiniteChain& chain, double* residual = nullptr);

struct PerronTriple {
  double lambda = 0.0;
  Vector right;  // positive, max entry 1
  Vector left;   // positive, sum 1
  double right_residual = 0.0;  // |K r - lambda r|_inf / |r|_inf
  double left_residual = 0.0;   // |l K - lambda l|_1 / |l|_1
};

/// Perron root and vectors of a primitive non-negative matrix by power steps
/// followed by Rayleigh-shifted inverse iteration.
PerronTriple perron(const Matrix& K, double tol = 1e-13);

/// P diag(e^V).
Matrix tilted_matrix(const FiniteChain& chain, const Vector& V);

/// log of the Perron root of P diag(e^V). Rejects non-primitive chains.
double exact_pressure(const FiniteChain& chain, const Vector& V);

/// d/dbeta of exact_pressure(beta f): the mean of f under the twisted stationary law.
double exact_pressure_slope(const FiniteChain& chain, const Vector& f, double beta);

struct ExactRatePoint {
  double y = 0.0;
  double rate = 0.0;       // +inf outside [min f, max f]
  double beta_star = 0.0;  // maximizing tilt (+-inf at the boundary)
};

/// Conjugate of beta -> exact_pressure(beta f) at each y.
std::vector<ExactRatePoint> exact_rate(const FiniteChain& chain, const Vector& f, const std::vector<double>& y_grid);

/// Total variation between two probability vectors.
double exact_tv(const Vector& p, const Vector& q);

/// Maximal coupling of two discrete laws: returns (i, j) with i ~ p, j ~ q and
/// P(i == j) = 1 - TV(p, q).
std::pair<int, int> sample_maximal_coupling(const Vector& p, const Vector& q, Stream& stream);

/// Total variation between two 1D densities by composite Simpson on [lo, hi].
double density_tv(const std::function<double(double)>& p, const std::function<double(double)>& q, double lo,
                  double hi, int intervals = 20000);

/// Index drawn from a probability vector.
int sample_categorical(const Vector& probs, Stream& stream);

}  // namespace kicklab
