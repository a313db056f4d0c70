#include "kicklab/oracle_chain.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>

#include "kicklab/errors.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "oracle_chain";

Eigen::MatrixXi positivity_pattern(const Matrix& P) { return (P.array() > 0.0).cast<int>().matrix(); }

Eigen::MatrixXi boolean_product(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b) {
  Eigen::MatrixXi c = a * b;
  return (c.array() > 0).cast<int>().matrix();
}

}  // namespace

void validate_chain(const FiniteChain& chain) {
  const int n = chain.size();
  if (n < 1 || chain.P.cols() != n) throw ConfigurationError(kModule, "transition matrix must be square and non-empty");
  if (n > kMaxChainStates) {
    throw ConfigurationError(kModule, "chains are limited to " + std::to_string(kMaxChainStates) + " states");
  }
  if (!chain.P.allFinite() || (chain.P.array() < 0.0).any()) {
    throw ConfigurationError(kModule, "transition probabilities must be finite and non-negative");
  }
  for (int i = 0; i < n; ++i) {
    if (std::abs(chain.P.row(i).sum() - 1.0) > 1e-12) {
      throw ConfigurationError(kModule, "row " + std::to_string(i) + " of P does not sum to 1");
    }
  }
  if (chain.f.size() != n) throw ConfigurationError(kModule, "observable f needs one value per state");
}

FiniteChain make_chain(Matrix P, Vector f, std::vector<std::string> labels) {
  FiniteChain chain;
  chain.P = std::move(P);
  chain.f = f.size() == 0 ? Vector::LinSpaced(chain.P.rows(), 0.0, static_cast<double>(chain.P.rows() - 1)) : f;
  chain.labels = std::move(labels);
  if (chain.labels.empty()) {
    for (int i = 0; i < chain.size(); ++i) chain.labels.push_back("s" + std::to_string(i));
  }
  validate_chain(chain);
  return chain;
}

FiniteChain two_state_iid(double p) {
  Matrix P(2, 2);
  P << 1.0 - p, p, 1.0 - p, p;
  Vector f(2);
  f << 0.0, 1.0;
  return make_chain(P, f);
}

bool is_irreducible(const Matrix& P) {
  const int n = static_cast<int>(P.rows());
  Eigen::MatrixXi reach = positivity_pattern(P) + Eigen::MatrixXi::Identity(n, n);
  reach = (reach.array() > 0).cast<int>().matrix();
  for (int i = 1; i < n; i *= 2) reach = boolean_product(reach, reach);
  return (reach.array() > 0).all();
}

bool is_primitive(const Matrix& P) {
  const int n = static_cast<int>(P.rows());
  Eigen::MatrixXi a = positivity_pattern(P);
  // Wielandt: a primitive matrix has A^m > 0 for m = (n - 1)^2 + 1; raise by
  // repeated squaring past that exponent (powers stay positive once positive).
  const int target = (n - 1) * (n - 1) + 1;
  Eigen::MatrixXi power = a;
  int exponent = 1;
  while (exponent < target) {
    power = boolean_product(power, power);
    exponent *= 2;
  }
  return (power.array() > 0).all();
}

Vector exact_stationary(const FiniteChain& chain, double* residual) {
  validate_chain(chain);
  const int n = chain.size();
  if (!is_irreducible(chain.P)) throw DegenerateInputError(kModule, "chain is reducible; stationary law not unique");
  // Replace one balance equation by the normalization.
  Matrix A = chain.P.transpose() - Matrix::Identity(n, n);
  A.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  Vector pi = A.fullPivLu().solve(rhs);
  if (residual) *residual = (pi.transpose() * chain.P - pi.transpose()).cwiseAbs().maxCoeff();
  return pi;
}

PerronTriple perron(const Matrix& K, double tol) {
  const int n = static_cast<int>(K.rows());
  if (n < 1 || K.cols() != n || (K.array() < 0.0).any() || !K.allFinite()) {
    throw ConfigurationError(kModule, "Perron problem needs a finite non-negative square matrix");
  }
  auto solve_side = [&](const Matrix& M, Vector& v) {
    v = Vector::Ones(n) / n;
    double lambda = 0.0;
    auto residual = [&](double lam, const Vector& x) { return (M * x - lam * x).cwiseAbs().maxCoeff() / x.cwiseAbs().maxCoeff(); };
    for (int it = 0; it < 60; ++it) {
      Vector w = M * v;
      const double nw = w.cwiseAbs().maxCoeff();
      if (!(nw > 0.0)) throw DegenerateInputError(kModule, "matrix annihilates the positive cone");
      lambda = v.dot(w) / v.dot(v);
      v = w / nw;
      if (residual(v.dot(M * v) / v.dot(v), v) <= tol * std::max(1.0, lambda)) break;
    }
    lambda = v.dot(M * v) / v.dot(v);
    for (int it = 0; it < 50 && residual(lambda, v) > tol * std::max(1.0, lambda); ++it) {
      // Shift slightly above the estimate so the factorization stays regular.
      const double shift = lambda * (1.0 + 1e-10) + 1e-300;
      Eigen::FullPivLU<Matrix> lu(M - shift * Matrix::Identity(n, n));
      Vector w = lu.solve(v);
      if (!w.allFinite()) break;
      if (w.sum() < 0.0) w = -w;
      v = w / w.cwiseAbs().maxCoeff();
      lambda = v.dot(M * v) / v.dot(v);
    }
    v = v.cwiseAbs();
    return lambda;
  };
  PerronTriple t;
  Vector r, l;
  t.lambda = solve_side(K, r);
  const double lambda_left = solve_side(K.transpose(), l);
  if (std::abs(lambda_left - t.lambda) > 1e-9 * t.lambda) {
    throw NumericalInstabilityError(kModule, "left and right Perron roots disagree");
  }
  t.right = r / r.maxCoeff();
  t.left = l / l.sum();
  t.right_residual = (K * t.right - t.lambda * t.right).cwiseAbs().maxCoeff() / t.right.cwiseAbs().maxCoeff();
  t.left_residual = (t.left.transpose() * K - t.lambda * t.left.transpose()).cwiseAbs().sum() / t.left.cwiseAbs().sum();
  return t;
}

Matrix tilted_matrix(const FiniteChain& chain, const Vector& V) {
  if (V.size() != chain.size()) throw ConfigurationError(kModule, "tilt V needs one value per state");
  return chain.P * V.array().exp().matrix().asDiagonal();
}

double exact_pressure(const FiniteChain& chain, const Vector& V) {
  validate_chain(chain);
  if (!is_primitive(chain.P)) throw DegenerateInputError(kModule, "pressure oracle requires a primitive chain");
  // Shift V so the largest entry is 0; Q(V + c) = Q(V) + c.
  const double c = V.maxCoeff();
  const PerronTriple t = perron(tilted_matrix(chain, V.array() - c));
  return std::log(t.lambda) + c;
}

double exact_pressure_slope(const FiniteChain& chain, const Vector& f, double beta) {
  const Vector V = beta * f;
  const double c = V.maxCoeff();
  const PerronTriple t = perron(tilted_matrix(chain, V.array() - c));
  // dlambda/dbeta = l K diag(f) r / (l r) = lambda l diag(f) r / (l r).
  return t.left.cwiseProduct(f).dot(t.right) / t.left.dot(t.right);
}

std::vector<ExactRatePoint> exact_rate(const FiniteChain& chain, const Vector& f, const std::vector<double>& y_grid) {
  validate_chain(chain);
  if (!is_primitive(chain.P)) throw DegenerateInputError(kModule, "rate oracle requires a primitive chain");
  const double fmin = f.minCoeff(), fmax = f.maxCoeff();
  const double range = std::max(fmax - fmin, 1e-300);
  const double beta_cap = 600.0 / range;
  const double mean = exact_pressure_slope(chain, f, 0.0);
  std::vector<ExactRatePoint> out;
  for (double y : y_grid) {
    ExactRatePoint pt;
    pt.y = y;
    const double tol = 1e-12 * std::max(1.0, std::abs(y));
    if (y < fmin - tol || y > fmax + tol) {
      pt.rate = std::numeric_limits<double>::infinity();
      pt.beta_star = y < fmin ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      out.push_back(pt);
      continue;
    }
    // The rate vanishes exactly at the stationary mean Q'(0).
    if (fmax - fmin == 0.0 || std::abs(y - mean) <= 1e-14 * std::max(1.0, std::abs(y))) {
      out.push_back(pt);
      continue;
    }
    // Q' is increasing in beta; bracket the root of Q'(beta) = y.
    double lo = -1.0, hi = 1.0;
    while (exact_pressure_slope(chain, f, lo) > y && lo > -beta_cap) lo *= 2.0;
    while (exact_pressure_slope(chain, f, hi) < y && hi < beta_cap) hi *= 2.0;
    lo = std::max(lo, -beta_cap);
    hi = std::min(hi, beta_cap);
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (exact_pressure_slope(chain, f, mid) < y) lo = mid; else hi = mid;
    }
    pt.beta_star = 0.5 * (lo + hi);
    pt.rate = std::max(0.0, pt.beta_star * y - exact_pressure(chain, pt.beta_star * f));
    out.push_back(pt);
  }
  return out;
}

double exact_tv(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw ConfigurationError(kModule, "total variation needs laws on the same states");
  return 0.5 * (p - q).cwiseAbs().sum();
}

int sample_categorical(const Vector& probs, Stream& stream) {
  const double total = probs.sum();
  double u = stream.uniform() * total;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  // Round-off: return the last state with positive mass.
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  throw DegenerateInputError(kModule, "categorical law has no mass");
}

std::pair<int, int> sample_maximal_coupling(const Vector& p, const Vector& q, Stream& stream) {
  const Vector overlap = p.cwiseMin(q);
  const double meet = overlap.sum();
  if (stream.uniform() < meet) {
    const int i = sample_categorical(overlap, stream);
    return {i, i};
  }
  return {sample_categorical(p - overlap, stream), sample_categorical(q - overlap, stream)};
}

double density_tv(const std::function<double(double)>& p, const std::function<double(double)>& q, double lo,
                  double hi, int intervals) {
  if (intervals % 2 == 1) ++intervals;
  const double h = (hi - lo) / intervals;
  double s = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    s += w * std::abs(p(x) - q(x));
  }
  return 0.5 * s * h / 3.0;
}

}  // namespace kicklab
