#include "kicklab/feynman_kac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"
#include "kicklab/stats.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "feynman_kac";

// Trajectory groups used for the slope standard error. Fixed so that results
// do not depend on the worker count.
constexpr std::size_t kGroups = 32;

void check_k_grid(const std::vector<int>& k_grid) {
  if (k_grid.empty()) throw ConfigurationError(kModule, "k grid is empty");
  for (std::size_t i = 0; i < k_grid.size(); ++i) {
    if (k_grid[i] < 1 || (i > 0 && k_grid[i] <= k_grid[i - 1])) {
      throw ConfigurationError(kModule, "k grid must be strictly increasing and start at k >= 1");
    }
  }
}

void check_observable(const ObservableSpec& f, const char* what) {
  if (!f.eval) throw ConfigurationError(kModule, std::string(what) + " has no evaluator");
  if (f.ell < 1) throw ConfigurationError(kModule, std::string(what) + " needs window length >= 1");
}

// Runs trajectory m for K = k_max + ell - 1 steps and calls visit(n, window)
// for windows n = 1..k_max.
template <class Visit>
void walk_windows(const Model& model, const InitialLaw& init, int ell, int k_max, std::uint64_t seed,
                  std::size_t m, std::vector<StateVector>& path, Visit&& visit) {
  const int K = k_max + ell - 1;
  path.resize(static_cast<std::size_t>(K) + 1);
  path[0] = sample_initial(init, model, seed, m);
  for (int k = 1; k <= K; ++k) path[static_cast<std::size_t>(k)] = model_step(model, path[static_cast<std::size_t>(k) - 1], seed, m, k);
  for (int n = 1; n <= k_max; ++n) {
    visit(n, std::span<const StateVector>(path.data() + n, static_cast<std::size_t>(ell)));
  }
}

PressureEstimate fit_pressure(const std::vector<int>& k_grid, const LogWeightAccumulator* total,
                              const std::vector<const LogWeightAccumulator*>& groups) {
  PressureEstimate est;
  const std::size_t nk = k_grid.size();
  bool stable = true;
  std::size_t last_stable = nk;
  for (std::size_t i = 0; i < nk; ++i) {
    PressurePoint pt;
    pt.k = k_grid[i];
    pt.log_mean = total[i].log_mean();
    pt.log_stderr = total[i].log_mean_stderr();
    pt.ess = total[i].ess();
    stable = stable && pt.ess >= kEssFloor && std::isfinite(pt.log_mean);
    pt.stable = stable;
    if (stable) last_stable = i;
    est.curve.push_back(pt);
  }
  if (last_stable == nk) {
    est.inconclusive = true;
    est.note = "weight collapse at the first k of the grid";
    return est;
  }
  // Drop the first quarter of the stable range as transient.
  const int k_stable = k_grid[last_stable];
  const int k_min = std::max(k_grid.front(), (k_stable + 3) / 4);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i <= last_stable; ++i) {
    if (k_grid[i] >= k_min) idx.push_back(i);
  }
  if (idx.size() < 3) {
    est.inconclusive = true;
    est.note = "fewer than 3 grid points before weight collapse";
    return est;
  }
  std::vector<double> xs, ys;
  est.min_ess = std::numeric_limits<double>::infinity();
  for (std::size_t i : idx) {
    xs.push_back(k_grid[i]);
    ys.push_back(est.curve[i].log_mean);
    est.min_ess = std::min(est.min_ess, est.curve[i].ess);
  }
  const LinearFit fit = fit_line(xs, ys);
  est.q_hat = fit.slope;
  est.intercept = fit.intercept;
  est.r_squared = fit.r_squared;
  est.fit_begin = k_grid[idx.front()];
  est.fit_end = k_grid[idx.back()];
  MeanAccumulator slopes;
  for (const LogWeightAccumulator* g : groups) {
    std::vector<double> gy;
    for (std::size_t i : idx) gy.push_back(g[i].log_mean());
    slopes.add(fit_line(xs, gy).slope);
  }
  est.q_stderr = slopes.stderr_();
  if (est.r_squared < 0.99) {
    est.inconclusive = true;
    est.note = "log tilted mass is not linear in k (R^2 < 0.99)";
  }
  return est;
}

}  // namespace

// ---------------------------------------------------------------------------
// Monte Carlo

TiltedEstimate tilted_expectation(const Model& model, const InitialLaw& init, const ObservableSpec& V,
                                  const ObservableSpec& f, int k, std::size_t M, std::uint64_t seed, int workers) {
  check_observable(V, "tilt V");
  check_observable(f, "observable f");
  if (k < 1 || M < 2) throw ConfigurationError(kModule, "tilted_expectation needs k >= 1 and M >= 2");
  if (!V.bounded()) throw ConfigurationError(kModule, "tilt '" + V.name + "' has no declared finite sup norm");
  if (f.ell > V.ell) throw ConfigurationError(kModule, "f reads a longer window than the tilt");
  const int ell = V.ell;
  std::vector<LogWeightAccumulator> blocks(block_count(M));
  parallel_blocks(M, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
    std::vector<StateVector> path;
    for (std::size_t m = begin; m < end; ++m) {
      double s = 0.0, fk = 0.0;
      walk_windows(model, init, ell, k, seed, m, path, [&](int n, std::span<const StateVector> w) {
        s += V(w);
        if (n == k) fk = f(w.subspan(w.size() - static_cast<std::size_t>(f.ell)));
      });
      blocks[b].add(s, fk);
    }
  });
  LogWeightAccumulator total;
  for (const auto& blk : blocks) total.merge(blk);
  TiltedEstimate est;
  est.k = k;
  est.M = M;
  const auto [m, se] = total.scaled_weighted_mean();
  const double scale = std::exp(total.shift);
  est.value = m * scale;
  est.stderr_ = se * scale;
  est.log_value = m > 0.0 ? total.shift + std::log(m) : std::numeric_limits<double>::quiet_NaN();
  est.log_stderr = m > 0.0 ? se / m : std::numeric_limits<double>::infinity();
  est.ess = total.ess();
  if (est.ess < kEssFloor) {
    est.warning = "effective sample size " + std::to_string(est.ess) + " below " + std::to_string(kEssFloor) +
                  "; variance estimate unreliable";
  }
  return est;
}

std::vector<PressureEstimate> pressure_family(const Model& model, const InitialLaw& init, const ObservableSpec& f,
                                              const std::vector<double>& betas, const std::vector<int>& k_grid,
                                              std::size_t M, std::uint64_t seed, int workers) {
  check_observable(f, "observable f");
  check_k_grid(k_grid);
  if (betas.empty()) throw ConfigurationError(kModule, "no tilt scales given");
  if (M < 2 * kGroups) throw ConfigurationError(kModule, "pressure estimation needs M >= " + std::to_string(2 * kGroups));
  const std::size_t nb = betas.size(), nk = k_grid.size();
  const int k_max = k_grid.back();
  // One accumulator per (group, beta, k); groups are contiguous trajectory ranges.
  std::vector<std::vector<LogWeightAccumulator>> acc(kGroups, std::vector<LogWeightAccumulator>(nb * nk));
  parallel_for(kGroups, workers, [&](std::size_t g) {
    const std::size_t begin = g * M / kGroups, end = (g + 1) * M / kGroups;
    std::vector<StateVector> path;
    auto& a = acc[g];
    for (std::size_t m = begin; m < end; ++m) {
      double s = 0.0;
      std::size_t next = 0;
      walk_windows(model, init, f.ell, k_max, seed, m, path, [&](int n, std::span<const StateVector> w) {
        s += f(w);
        if (n == k_grid[next]) {
          for (std::size_t b = 0; b < nb; ++b) a[b * nk + next].add(betas[b] * s);
          ++next;
        }
      });
    }
  });
  std::vector<PressureEstimate> out;
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<LogWeightAccumulator> total(nk);
    std::vector<const LogWeightAccumulator*> groups;
    for (std::size_t g = 0; g < kGroups; ++g) {
      for (std::size_t i = 0; i < nk; ++i) total[i].merge(acc[g][b * nk + i]);
      groups.push_back(acc[g].data() + b * nk);
    }
    out.push_back(fit_pressure(k_grid, total.data(), groups));
  }
  return out;
}

PressureEstimate pressure_estimate(const Model& model, const InitialLaw& init, const ObservableSpec& V,
                                   const std::vector<int>& k_grid, std::size_t M, std::uint64_t seed, int workers) {
  return pressure_family(model, init, V, {1.0}, k_grid, M, seed, workers).front();
}

PressureSpread pressure_spread(const Model& model, const std::vector<InitialLaw>& inits, const ObservableSpec& V,
                               const std::vector<int>& k_grid, std::size_t M, std::uint64_t seed, int workers) {
  if (inits.size() < 2) throw ConfigurationError(kModule, "pressure spread needs at least two initial laws");
  PressureSpread out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& init : inits) {
    if (const auto* sys = std::get_if<KickedSystem>(&model)) {
      const auto cert = certify_initial_law(init, *sys, sys->law.delta, 2000, seed, workers);
      if (!cert.stable) throw InconclusiveError(kModule, "initial law certificate is not stable under 10x sampling");
      out.certificates.emplace_back(cert);
    } else {
      out.certificates.emplace_back(std::nullopt);
    }
    out.estimates.push_back(pressure_estimate(model, init, V, k_grid, M, seed, workers));
    const auto& e = out.estimates.back();
    lo = std::min(lo, e.q_hat);
    hi = std::max(hi, e.q_hat);
    out.max_stderr = std::max(out.max_stderr, e.q_stderr);
  }
  out.spread = hi - lo;
  out.consistent = out.spread <= 2.0 * out.max_stderr;
  return out;
}

// ---------------------------------------------------------------------------
// Grid operators

Vector GridOperator::row_at(double z) const {
  if (kind != Kind::kGrid) throw ConfigurationError(kModule, "off-grid rows exist only for one-dimensional grids");
  const double s = map(z);
  const int n = size();
  Vector row(n);
  double prev = family_cdf(family, (edges[0] - s) / kick_scale);
  for (int j = 0; j < n; ++j) {
    const double next = family_cdf(family, (edges[j + 1] - s) / kick_scale);
    row[j] = (next - prev) * std::exp(V_values[j]);
    prev = next;
  }
  return row;
}

GridOperator discretize(const FiniteChain& chain, const Vector& V) {
  validate_chain(chain);
  GridOperator op;
  op.kind = GridOperator::Kind::kChain;
  op.nodes = Vector::LinSpaced(chain.size(), 0.0, chain.size() - 1.0);
  op.V_values = V;
  op.kernel = tilted_matrix(chain, V);
  return op;
}

GridOperator discretize(const KickedSystem& system, const ObservableSpec& V, const GridParams& grid) {
  const auto& spec = system.spec;
  if (spec.n_dim != 1 || system.law.dim() != 1) {
    throw ConfigurationError(kModule, "grid discretization needs a one-dimensional system");
  }
  if (V.ell != 1) throw ConfigurationError(kModule, "grid oracles support window length 1 only");
  if (grid.cells < 2 || !(grid.half_width > 0.0)) throw ConfigurationError(kModule, "grid needs >= 2 cells and a positive width");
  const double b = system.law.b[0];
  if (!(b > 0.0)) throw DegenerateInputError(kModule, "grid discretization needs a non-degenerate kick");
  GridOperator op;
  op.kind = GridOperator::Kind::kGrid;
  op.family = system.law.family;
  op.kick_scale = b;
  op.map = [step = spec.step, basis = spec.basis](double x) {
    return step(StateVector(Vector::Constant(1, x), basis)).coeffs[0];
  };
  const int n = grid.cells;
  op.edges = Vector::LinSpaced(n + 1, grid.center - grid.half_width, grid.center + grid.half_width);
  op.nodes = (op.edges.head(n) + op.edges.tail(n)) / 2.0;
  op.V_values.resize(n);
  for (int j = 0; j < n; ++j) op.V_values[j] = V(StateVector(Vector::Constant(1, op.nodes[j]), spec.basis));
  op.kernel.resize(n, n);
  for (int i = 0; i < n; ++i) {
    op.kernel.row(i) = op.row_at(op.nodes[i]).transpose();
    const double mass = (op.kernel.row(i).array() * (-op.V_values.array()).exp().transpose()).sum();
    op.escaping_mass = std::max(op.escaping_mass, 1.0 - mass);
  }
  if (op.escaping_mass > 1e-6) {
    throw ConfigurationError(kModule, "grid too narrow: escaping mass " + std::to_string(op.escaping_mass) +
                                          " exceeds 1e-6; widen the grid");
  }
  return op;
}

Vector semigroup_apply(const GridOperator& op, const Vector& g, int k) {
  if (g.size() != op.size()) throw ConfigurationError(kModule, "function has the wrong number of nodes");
  Vector v = g;
  for (int i = 0; i < k; ++i) v = op.kernel * v;
  return v;
}

ErgodicTriple power_iterate(const GridOperator& op, double tol, int max_iter) {
  const int n = op.size();
  if (n < 1 || (op.kernel.array() < 0.0).any()) throw ConfigurationError(kModule, "kernel must be non-empty and non-negative");
  ErgodicTriple t;
  // Right side: h_{j+1} = K h_j / |K h_j|_inf from h_0 = 1.
  Vector h = Vector::Ones(n);
  double lambda = 0.0, prev_res = 0.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Vector g = op.kernel * h;
    lambda = g.maxCoeff();
    if (!(lambda > 0.0)) throw DegenerateInputError(kModule, "kernel annihilates the constant function");
    const double res = (g - lambda * h).cwiseAbs().maxCoeff();
    if (prev_res > 0.0) t.ratio_estimate = res / prev_res;
    prev_res = res;
    h = g / lambda;
    if (res <= tol * lambda) break;
  }
  t.iterations = it + 1;
  // Left side: mu_{j+1} = mu_j K / |mu_j K|_1 from the uniform law.
  Vector mu = Vector::Constant(n, 1.0 / n);
  double lambda_left = 0.0;
  for (int j = 0; j < max_iter; ++j) {
    const Vector g = op.kernel.transpose() * mu;
    lambda_left = g.sum();
    const double res = (g - lambda_left * mu).cwiseAbs().sum();
    mu = g / lambda_left;
    if (res <= tol * lambda_left) break;
  }
  t.converged = it < max_iter;
  t.lambda = lambda;
  t.mu = mu;
  t.h = h / h.dot(mu);
  t.right_residual = (op.kernel * t.h - t.lambda * t.h).cwiseAbs().maxCoeff() / t.h.cwiseAbs().maxCoeff();
  t.left_residual = (op.kernel.transpose() * t.mu - t.lambda * t.mu).cwiseAbs().sum();
  if (!t.converged || std::abs(lambda_left - lambda) > 1e-9 * lambda) {
    t.converged = false;
    t.warning = "power iteration did not converge in " + std::to_string(max_iter) +
                " steps; spectral gap small, |lambda_2|/lambda about " + std::to_string(t.ratio_estimate);
  }
  return t;
}

ConvergenceProfile convergence_profile(const GridOperator& op, const ErgodicTriple& triple, int k_max) {
  ConvergenceProfile p;
  const Vector limit = triple.mu.sum() * triple.h;
  Vector v = Vector::Ones(op.size());
  for (int k = 1; k <= k_max; ++k) {
    v = op.kernel * v / triple.lambda;
    p.errors.push_back((v - limit).cwiseAbs().maxCoeff());
  }
  // Fit the decay above round-off, skipping k = 1.
  const double floor = 1e-11 * std::max(1.0, limit.cwiseAbs().maxCoeff());
  std::vector<double> xs, ys;
  for (int k = 2; k <= k_max; ++k) {
    const double e = p.errors[static_cast<std::size_t>(k) - 1];
    if (!(e > floor)) break;
    xs.push_back(k);
    ys.push_back(std::log(e));
  }
  p.fitted_points = static_cast<int>(xs.size());
  p.ratio = xs.size() >= 2 ? std::exp(fit_line(xs, ys).slope) : 0.0;
  return p;
}

TwistedKernel twisted_semigroup(const GridOperator& op, const ErgodicTriple& triple) {
  if ((triple.h.array() <= 0.0).any()) throw DegenerateInputError(kModule, "eigenfunction h is not strictly positive");
  TwistedKernel tw;
  tw.S = (triple.h.cwiseInverse() / triple.lambda).asDiagonal() * op.kernel * triple.h.asDiagonal();
  tw.nu = triple.h.cwiseProduct(triple.mu);
  tw.nu /= tw.nu.sum();
  tw.row_defect = (tw.S.rowwise().sum().array() - 1.0).abs().maxCoeff();
  tw.stationarity_defect = (tw.S.transpose() * tw.nu - tw.nu).cwiseAbs().sum();
  return tw;
}

GrowthCurve growth_ratio(const GridOperator& op, const Vector& w, const std::vector<int>& R0_nodes, int k_max) {
  if (w.size() != op.size() || (w.array() <= 0.0).any()) throw ConfigurationError(kModule, "weight must be positive on every node");
  if (R0_nodes.empty()) throw ConfigurationError(kModule, "R0 node set is empty");
  if (k_max < 1) throw ConfigurationError(kModule, "growth curve needs k_max >= 1");
  GrowthCurve c;
  Vector a = w, one = Vector::Ones(op.size());
  auto ratio = [&]() {
    double r0 = 0.0;
    for (int i : R0_nodes) r0 = std::max(r0, std::abs(one[i]));
    return a.cwiseQuotient(w).cwiseAbs().maxCoeff() / r0;
  };
  c.ratios.push_back(ratio());
  for (int k = 1; k <= k_max; ++k) {
    a = op.kernel * a;
    one = op.kernel * one;
    // A common rescaling leaves the ratio unchanged and avoids overflow.
    const double s = one.cwiseAbs().maxCoeff();
    a /= s;
    one /= s;
    c.ratios.push_back(ratio());
  }
  c.sup = *std::max_element(c.ratios.begin(), c.ratios.end());
  // Bounded: finite, and the second half never exceeds the first half or the tail has settled.
  const std::size_t half = c.ratios.size() / 2;
  const double first = *std::max_element(c.ratios.begin(), c.ratios.begin() + static_cast<long>(half) + 1);
  const double second = *std::max_element(c.ratios.begin() + static_cast<long>(half), c.ratios.end());
  const double last = c.ratios.back(), before = c.ratios[c.ratios.size() - 2];
  c.bounded = std::isfinite(c.sup) && (second <= first * (1.0 + 1e-9) || std::abs(last - before) <= 1e-9 * last);
  return c;
}

GrowthScan growth_scan(const GridOperator& op, const Vector& phi, const std::vector<int>& R0_nodes, int k_max,
                       const std::vector<int>& m_values) {
  GrowthScan scan;
  scan.m_values = m_values;
  for (int m : m_values) {
    scan.curves.push_back(growth_ratio(op, phi.array().pow(m).matrix(), R0_nodes, k_max));
    if (scan.selected_m < 0 && scan.curves.back().bounded) scan.selected_m = m;
  }
  return scan;
}

std::vector<int> nodes_within(const GridOperator& op, double R, double center) {
  std::vector<int> out;
  for (int i = 0; i < op.size(); ++i) {
    if (op.kind == GridOperator::Kind::kChain || std::abs(op.nodes[i] - center) <= R) out.push_back(i);
  }
  return out;
}

}  // namespace kicklab
