#include "kicklab/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"
#include "kicklab/stats.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "ldp";
constexpr double kInf = std::numeric_limits<double>::infinity();

// Chord of (b0, q0), (b2, q2) evaluated at b1, and the two chord weights.
struct Chord {
  double value, w0, w2;
};

Chord chord(double b0, double q0, double b1, double b2, double q2) {
  const double w2 = (b1 - b0) / (b2 - b0);
  return {(1.0 - w2) * q0 + w2 * q2, 1.0 - w2, w2};
}

void check_grid(const std::vector<double>& betas) {
  if (betas.size() < 3) throw ConfigurationError(kModule, "beta grid needs at least 3 points");
  for (std::size_t i = 1; i < betas.size(); ++i) {
    if (!(betas[i] > betas[i - 1])) throw ConfigurationError(kModule, "beta grid must be strictly increasing");
  }
}

// Maximizes a concave g on [lo, hi].
std::pair<double, double> golden_max(const std::function<double(double)>& g, double lo, double hi) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double gc = g(c), gd = g(d);
  for (int it = 0; it < 200 && b - a > 1e-14 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (gc >= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - r * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + r * (b - a);
      gd = g(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, g(x)};
}

LegendreResult conjugate(const std::vector<double>& betas, const std::vector<double>& q,
                         const std::function<double(double)>& Q, double y) {
  LegendreResult res;
  res.y = y;
  const std::size_t n = betas.size();
  std::size_t best = 0;
  double best_value = -kInf;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = betas[i] * y - q[i];
    if (g > best_value) {
      best_value = g;
      best = i;
    }
  }
  const double s_min = (q[1] - q[0]) / (betas[1] - betas[0]);
  const double s_max = (q[n - 1] - q[n - 2]) / (betas[n - 1] - betas[n - 2]);
  res.extrapolated = y < s_min || y > s_max;
  res.value = best_value;
  res.beta_star = betas[best];
  const double lo = betas[best > 0 ? best - 1 : 0], hi = betas[std::min(best + 1, n - 1)];
  const auto [x, gx] = golden_max([&](double b) { return b * y - Q(b); }, lo, hi);
  if (gx > res.value) {
    res.value = gx;
    res.beta_star = x;
  }
  return res;
}

}  // namespace

ConvexityCheck convexity_midpoint(const std::vector<double>& betas, const std::vector<double>& Q, double tol) {
  if (betas.size() != Q.size()) throw ConfigurationError(kModule, "beta grid and pressure values differ in length");
  ConvexityCheck c;
  for (std::size_t i = 1; i + 1 < betas.size(); ++i) {
    const double d = Q[i] - chord(betas[i - 1], Q[i - 1], betas[i], betas[i + 1], Q[i + 1]).value;
    if (d > c.worst_defect) {
      c.worst_defect = d;
      c.worst_index = i;
    }
  }
  c.convex = c.worst_defect <= tol;
  return c;
}

LegendreResult legendre_1d(const std::vector<double>& betas, const std::function<double(double)>& Q, double y) {
  check_grid(betas);
  std::vector<double> q(betas.size());
  double scale = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    q[i] = Q(betas[i]);
    scale = std::max(scale, std::abs(q[i]));
  }
  const auto cc = convexity_midpoint(betas, q, 1e-10 * scale);
  if (!cc.convex) {
    throw PreconditionError(kModule, "pressure fails the convexity midpoint test", static_cast<int>(cc.worst_index));
  }
  return conjugate(betas, q, Q, y);
}

LegendreResult legendre_1d(const std::vector<double>& betas, const std::vector<double>& Q, double y,
                           double convexity_tol) {
  check_grid(betas);
  const auto cc = convexity_midpoint(betas, Q, convexity_tol);
  if (!cc.convex) {
    throw PreconditionError(kModule, "pressure samples fail the convexity midpoint test", static_cast<int>(cc.worst_index));
  }
  auto interp = [&](double b) {
    const auto it = std::upper_bound(betas.begin(), betas.end(), b);
    const std::size_t j = std::clamp<std::size_t>(static_cast<std::size_t>(it - betas.begin()), 1, betas.size() - 1);
    const double w = (b - betas[j - 1]) / (betas[j] - betas[j - 1]);
    return (1.0 - w) * Q[j - 1] + w * Q[j];
  };
  return conjugate(betas, Q, interp, y);
}

LegendreResult RateFunction1D::at(double y) const { return legendre_1d(betas, Q_values, y, kInf); }

namespace {

double slope_at_zero(const std::vector<double>& betas, const std::vector<double>& q) {
  const auto it = std::lower_bound(betas.begin(), betas.end(), 0.0);
  std::size_t j = static_cast<std::size_t>(it - betas.begin());
  if (j < betas.size() && betas[j] == 0.0 && j > 0 && j + 1 < betas.size()) {
    return (q[j + 1] - q[j - 1]) / (betas[j + 1] - betas[j - 1]);
  }
  j = std::clamp<std::size_t>(j, 1, betas.size() - 1);
  return (q[j] - q[j - 1]) / (betas[j] - betas[j - 1]);
}

}  // namespace

RateFunction1D rate_from_pressure(const Model& model, const InitialLaw& init, const ObservableSpec& f,
                                  const std::vector<double>& betas, const std::vector<int>& k_grid, std::size_t M,
                                  std::uint64_t seed, int workers) {
  check_grid(betas);
  const auto est = pressure_family(model, init, f, betas, k_grid, M, seed, workers);
  RateFunction1D rate;
  rate.betas = betas;
  for (std::size_t i = 0; i < est.size(); ++i) {
    rate.Q_values.push_back(est[i].q_hat);
    rate.Q_stderr.push_back(est[i].q_stderr);
    if (est[i].inconclusive && !rate.inconclusive) {
      rate.inconclusive = true;
      rate.note = "pressure at beta = " + std::to_string(betas[i]) + " inconclusive: " + est[i].note;
    }
  }
  for (std::size_t i = 1; i + 1 < betas.size(); ++i) {
    const Chord c = chord(betas[i - 1], rate.Q_values[i - 1], betas[i], betas[i + 1], rate.Q_values[i + 1]);
    const double se = std::sqrt(std::pow(rate.Q_stderr[i], 2) + std::pow(c.w0 * rate.Q_stderr[i - 1], 2) +
                                std::pow(c.w2 * rate.Q_stderr[i + 1], 2));
    if (rate.Q_values[i] - c.value > 3.0 * se) {
      rate.convex = false;
      rate.note = "convexity violated beyond 3 stderr at beta = " + std::to_string(betas[i]) +
                  "; increase k or M";
    }
  }
  rate.y_star = slope_at_zero(betas, rate.Q_values);
  return rate;
}

RateFunction1D rate_from_chain(const FiniteChain& chain, const Vector& f, const std::vector<double>& betas) {
  check_grid(betas);
  RateFunction1D rate;
  rate.betas = betas;
  for (double b : betas) {
    rate.Q_values.push_back(exact_pressure(chain, b * f));
    rate.Q_stderr.push_back(0.0);
  }
  rate.convex = convexity_midpoint(betas, rate.Q_values, 1e-10).convex;
  rate.y_star = exact_pressure_slope(chain, f, 0.0);
  return rate;
}

// ---------------------------------------------------------------------------
// Tails

bool Interval::contains(double x) const {
  const bool above = lo_closed ? x >= lo : x > lo;
  const bool below = hi_closed ? x <= hi : x < hi;
  return above && below;
}

Interval Interval::interior() const {
  Interval i = *this;
  i.lo_closed = false;
  i.hi_closed = false;
  return i;
}

Interval Interval::closure() const {
  Interval i = *this;
  i.lo_closed = std::isfinite(lo);
  i.hi_closed = std::isfinite(hi);
  return i;
}

namespace {

void finish_tail(TailEstimate& t, double log_p) {
  if (t.exact) {
    t.probability = std::exp(log_p);
    t.wilson_lo = t.wilson_hi = t.probability;
    t.exponent = -log_p / t.k;
    return;
  }
  const auto [lo, hi] = wilson_interval(t.hits, t.trials);
  t.wilson_lo = lo;
  t.wilson_hi = hi;
  t.probability = static_cast<double>(t.hits) / static_cast<double>(t.trials);
  t.one_sided = t.hits == 0;
  t.exponent = -std::log(t.one_sided ? hi : t.probability) / t.k;
}

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

TailEstimate tail_probability(const TrajectoryEnsemble& ensemble, const ObservableSpec& f, int k, const Interval& gamma) {
  if (k < 1 || k + f.ell - 1 > ensemble.K + 1) throw ConfigurationError(kModule, "k windows do not fit in the trajectories");
  TailEstimate t;
  t.k = k;
  t.trials = ensemble.M;
  const auto win = ell_process(ensemble, f.ell);
  for (std::size_t m = 0; m < ensemble.M; ++m) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += f(win.window(m, j));
    if (gamma.contains(s / k)) ++t.hits;
  }
  finish_tail(t, 0.0);
  return t;
}

std::vector<std::vector<TailEstimate>> tail_probabilities(const Model& model, const InitialLaw& init,
                                                          const ObservableSpec& f, const std::vector<Interval>& sets,
                                                          const std::vector<int>& ks, std::size_t M,
                                                          std::uint64_t seed, int workers) {
  if (ks.empty() || M < 1) throw ConfigurationError(kModule, "tail estimates need ks and M >= 1");
  for (int k : ks) {
    if (k < 1) throw ConfigurationError(kModule, "k must be >= 1");
  }
  const int k_max = *std::max_element(ks.begin(), ks.end());
  const int steps = k_max + f.ell - 1;
  const std::size_t ns = sets.size(), nk = ks.size();
  std::vector<std::vector<std::size_t>> block_hits(block_count(M), std::vector<std::size_t>(ns * nk, 0));
  parallel_blocks(M, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
    std::vector<StateVector> path(static_cast<std::size_t>(steps));
    for (std::size_t m = begin; m < end; ++m) {
      StateVector u = sample_initial(init, model, seed, m);
      path[0] = u;
      for (int k = 1; k < steps; ++k) {
        u = model_step(model, u, seed, m, k);
        path[static_cast<std::size_t>(k)] = u;
      }
      double s = 0.0;
      int done = 0;
      for (int j = 0; j < k_max; ++j) {
        s += f(std::span<const StateVector>(path).subspan(static_cast<std::size_t>(j), static_cast<std::size_t>(f.ell)));
        ++done;
        for (std::size_t ki = 0; ki < nk; ++ki) {
          if (ks[ki] != done) continue;
          for (std::size_t si = 0; si < ns; ++si) {
            if (sets[si].contains(s / done)) ++block_hits[b][si * nk + ki];
          }
        }
      }
    }
  });
  std::vector<std::vector<TailEstimate>> out(ns, std::vector<TailEstimate>(nk));
  for (std::size_t si = 0; si < ns; ++si) {
    for (std::size_t ki = 0; ki < nk; ++ki) {
      TailEstimate& t = out[si][ki];
      t.k = ks[ki];
      t.trials = M;
      for (const auto& h : block_hits) t.hits += h[si * nk + ki];
      finish_tail(t, 0.0);
    }
  }
  return out;
}

TailEstimate tail_probability_exact(const FiniteChain& chain, const Vector& init, int k, const Interval& gamma) {
  validate_chain(chain);
  if (k < 1) throw ConfigurationError(kModule, "k must be >= 1");
  if (init.size() != chain.size()) throw ConfigurationError(kModule, "initial law needs one weight per state");
  for (int i = 1; i < chain.size(); ++i) {
    if ((chain.P.row(i) - chain.P.row(0)).cwiseAbs().maxCoeff() > 1e-15) {
      throw ConfigurationError(kModule, "exact tails need a chain with identical rows");
    }
  }
  const double v0 = chain.f.minCoeff(), v1 = chain.f.maxCoeff();
  for (int i = 0; i < chain.size(); ++i) {
    if (chain.f[i] != v0 && chain.f[i] != v1) throw ConfigurationError(kModule, "exact tails need a two-valued f");
  }
  double p1 = 0.0;
  for (int i = 0; i < chain.size(); ++i) {
    if (chain.f[i] == v1 && v1 != v0) p1 += chain.P(0, i);
  }
  TailEstimate t;
  t.k = k;
  t.exact = true;
  // u_0 from init, then k - 1 i.i.d. draws; c counts the draws at v1.
  const int n = k - 1;
  double log_p = -kInf;
  for (int i = 0; i < chain.size(); ++i) {
    if (init[i] <= 0.0) continue;
    const int first = chain.f[i] == v1 && v1 != v0 ? 1 : 0;
    double log_i = -kInf;
    for (int c = 0; c <= n; ++c) {
      const int total = c + first;
      const double avg = (v0 * (k - total) + v1 * total) / k;
      if (!gamma.contains(avg)) continue;
      double lb = std::lgamma(n + 1.0) - std::lgamma(c + 1.0) - std::lgamma(n - c + 1.0);
      lb += c > 0 ? c * std::log(p1) : 0.0;
      lb += n - c > 0 ? (n - c) * std::log1p(-p1) : 0.0;
      log_i = log_add(log_i, lb);
    }
    log_p = log_add(log_p, std::log(init[i]) + log_i);
  }
  finish_tail(t, log_p);
  return t;
}

double rate_infimum(const RateFunction1D& rate, const Interval& gamma) {
  if (gamma.lo > gamma.hi || (gamma.lo == gamma.hi && !(gamma.lo_closed && gamma.hi_closed))) return kInf;
  if (gamma.contains(rate.y_star)) return 0.0;
  // Open end points at y* still approach 0 from inside the set.
  if (rate.y_star == gamma.lo || rate.y_star == gamma.hi) return 0.0;
  const double end = rate.y_star < gamma.lo ? gamma.lo : gamma.hi;
  return rate.at(end).value;
}

LdpReport ldp_report(const RateFunction1D& rate, const std::vector<Interval>& family, const std::vector<int>& ks,
                     const TailSource& tails) {
  LdpReport report;
  for (const auto& gamma : family) {
    const double interior = rate_infimum(rate, gamma.interior());
    const double closure = rate_infimum(rate, gamma.closure());
    for (int k : ks) {
      const TailEstimate t = tails(gamma, k);
      LdpRow row;
      row.gamma_id = gamma.id;
      row.k = k;
      row.exponent_hat = t.exponent;
      row.rate_bound_interior = interior;
      row.rate_bound_closure = closure;
      row.hits = t.hits;
      row.one_sided = t.one_sided;
      report.rows.push_back(row);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Equilibrium states

double chain_level2_rate(const FiniteChain& chain, const Vector& sigma) {
  validate_chain(chain);
  const int n = chain.size();
  if (sigma.size() != n || (sigma.array() < 0.0).any() || std::abs(sigma.sum() - 1.0) > 1e-12) {
    throw ConfigurationError(kModule, "sigma must be a probability vector on the chain states");
  }
  // <W, sigma> - Q(W) is concave and invariant under W -> W + c; fix W_0 = 0
  // and maximize coordinate-wise over a bounded box.
  constexpr double kBox = 30.0;
  Vector W = Vector::Zero(n);
  auto objective = [&](const Vector& w) { return w.dot(sigma) - exact_pressure(chain, w); };
  double value = objective(W);
  for (int sweep = 0; sweep < (n == 2 ? 1 : 200); ++sweep) {
    const double before = value;
    for (int j = 1; j < n; ++j) {
      auto along = [&](double x) {
        Vector w = W;
        w[j] = x;
        return objective(w);
      };
      // Coarse scan, then golden refinement on the bracketing cells.
      double best_x = W[j], best = value;
      for (double x = -kBox; x <= kBox; x += 0.25) {
        const double g = along(x);
        if (g > best) {
          best = g;
          best_x = x;
        }
      }
      const auto [x, g] = golden_max(along, std::max(-kBox, best_x - 0.25), std::min(kBox, best_x + 0.25));
      W[j] = g > best ? x : best_x;
      value = std::max(g, best);
    }
    if (value - before <= 1e-15 * (1.0 + std::abs(value))) break;
  }
  return value;
}

EquilibriumReport equilibrium_check(const FiniteChain& chain, const Vector& V, int perturbations, double distance,
                                    std::uint64_t seed) {
  const GridOperator op = discretize(chain, V);
  const ErgodicTriple t = power_iterate(op);
  const TwistedKernel tw = twisted_semigroup(op, t);
  EquilibriumReport r;
  r.lambda = t.lambda;
  r.nu = tw.nu;
  r.stationarity_defect = tw.stationarity_defect;
  r.pressure = exact_pressure(chain, V);
  auto defect = [&](const Vector& sigma) { return r.pressure - V.dot(sigma) + chain_level2_rate(chain, sigma); };
  r.energy = V.dot(r.nu);
  r.entropy = chain_level2_rate(chain, r.nu);
  r.defect = r.pressure - r.energy + r.entropy;
  const int n = chain.size();
  r.min_perturbed_defect = kInf;
  for (int i = 0; i < perturbations; ++i) {
    Stream s(seed, static_cast<std::uint64_t>(i), 0, StreamPurpose::kSampler);
    Vector sigma;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Vector d(n);
      for (int j = 0; j < n; ++j) d[j] = s.normal();
      d.array() -= d.mean();
      if (d.cwiseAbs().sum() == 0.0) continue;
      d *= distance / d.cwiseAbs().sum();
      if (((r.nu + d).array() >= 0.0).all()) {
        sigma = r.nu + d;
        break;
      }
    }
    if (sigma.size() == 0) throw DegenerateInputError(kModule, "no perturbation at the requested distance stays in the simplex");
    sigma /= sigma.sum();
    r.perturbed_defects.push_back(defect(sigma));
    r.min_perturbed_defect = std::min(r.min_perturbed_defect, r.perturbed_defects.back());
  }
  r.unique = std::abs(r.defect) <= 1e-4 && r.min_perturbed_defect > 0.0 && r.stationarity_defect <= 1e-10;
  return r;
}

}  // namespace kicklab
