#include "kicklab/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "kicklab/errors.hpp"
#include "kicklab/parallel.hpp"
#include "kicklab/stats.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "coupling";
constexpr long kMaxResidualDraws = 10000000;

}  // namespace

// ---------------------------------------------------------------------------
// Maximal coupling

MaximalCoupling::MaximalCoupling(Vector mean1, Vector mean2, Vector scales, DensityFamily family)
    : mean1_(std::move(mean1)), mean2_(std::move(mean2)), scales_(std::move(scales)), family_(family) {
  if (mean1_.size() != scales_.size() || mean2_.size() != scales_.size()) {
    throw ConfigurationError(kModule, "means and scales differ in dimension");
  }
  for (int j = 0; j < scales_.size(); ++j) {
    if (!(scales_[j] > 0.0)) {
      throw DegenerateInputError(kModule, "kick scale b_" + std::to_string(j + 1) + " is not positive");
    }
  }
  const Vector w = (mean2_ - mean1_).cwiseQuotient(scales_);
  gap_ = w.norm();
  direction_ = gap_ > 0.0 ? Vector(w / gap_) : Vector::Zero(w.size());
}

double MaximalCoupling::log_density(const Vector& v, const Vector& mean) const {
  double s = 0.0;
  for (int j = 0; j < v.size(); ++j) {
    s += std::log(family_density(family_, (v[j] - mean[j]) / scales_[j]) / scales_[j]);
  }
  return s;
}

Vector MaximalCoupling::draw(const Vector& mean, Stream& stream) const {
  Vector v(mean.size());
  for (int j = 0; j < v.size(); ++j) v[j] = mean[j] + scales_[j] * family_sample(family_, stream);
  return v;
}

PairDraw MaximalCoupling::sample(Stream& stream) const {
  PairDraw out;
  if (family_ == DensityFamily::kGaussian) {
    Vector z(dim());
    for (int j = 0; j < z.size(); ++j) z[j] = stream.normal();
    out.v = mean1_ + scales_.cwiseProduct(z);
    const double u = stream.uniform_open();
    if (gap_ == 0.0) {
      out.v_prime = out.v;
      out.met = true;
      return out;
    }
    // Along the difference: s ~ N(0, 1) against N(gap, 1).
    const double s = z.dot(direction_);
    if (std::log(u) <= s * gap_ - 0.5 * gap_ * gap_) {
      out.v_prime = out.v;
      out.met = true;
    } else {
      // Reflection about gap / 2 maps the excess of one law onto the other's.
      const Vector z_prime = z + (gap_ - 2.0 * s) * direction_;
      out.v_prime = mean1_ + scales_.cwiseProduct(z_prime);
    }
    return out;
  }
  out.v = draw(mean1_, stream);
  const double lp = log_density(out.v, mean1_);
  if (std::log(stream.uniform_open()) + lp <= log_density(out.v, mean2_)) {
    out.v_prime = out.v;
    out.met = true;
    return out;
  }
  for (long it = 0; it < kMaxResidualDraws; ++it) {
    Vector w = draw(mean2_, stream);
    if (std::log(stream.uniform_open()) + log_density(w, mean2_) > log_density(w, mean1_)) {
      out.v_prime = std::move(w);
      return out;
    }
  }
  throw NumericalInstabilityError(kModule, "residual sampler of the maximal coupling did not accept");
}

double MaximalCoupling::meeting_probability() const {
  if (family_ == DensityFamily::kGaussian) return 2.0 * normal_cdf(-0.5 * gap_);
  Stream stream(0x6d61786c, 0, 0, StreamPurpose::kCalibration);
  MeanAccumulator acc;
  for (int i = 0; i < 200000; ++i) {
    const Vector v = draw(mean1_, stream);
    acc.add(std::min(1.0, std::exp(log_density(v, mean2_) - log_density(v, mean1_))));
  }
  return acc.mean;
}

MaximalCoupling maximal_coupling_gaussian(Vector mean1, Vector mean2, Vector scales) {
  return MaximalCoupling(std::move(mean1), std::move(mean2), std::move(scales), DensityFamily::kGaussian);
}

// ---------------------------------------------------------------------------
// Coupled trajectories

namespace {

struct StepOutcome {
  CoupledPair pair;
  CoupledKicks kicks;
  double p = 0.0;
  double p_prime = 0.0;
};

StepOutcome step_pair(const CoupledPair& pair, const SystemSpec& spec, const KickLaw& law, Stream& stream) {
  spec.conform(pair.u);
  spec.conform(pair.u_prime);
  if (law.dim() != spec.n_dim) throw ConfigurationError(kModule, "kick law and system differ in dimension");
  if (pair.N < 0 || pair.N > spec.levels()) throw ConfigurationError(kModule, "coupling level out of range");
  const int n = spec.dim_of_level(pair.N);
  const int tail = spec.n_dim - n;
  const auto a = spec.advance(pair.u);
  const auto b = spec.advance(pair.u_prime);
  // The shared tail is drawn first so that it does not depend on the states.
  Vector xi_tail(tail);
  for (int j = 0; j < tail; ++j) xi_tail[j] = law.b[static_cast<std::size_t>(n + j)] * family_sample(law.family, stream);
  PairDraw head;
  head.met = true;
  if (n > 0) {
    Vector scales(n);
    for (int j = 0; j < n; ++j) scales[j] = law.b[static_cast<std::size_t>(j)];
    head = MaximalCoupling(a.next.coeffs.head(n), b.next.coeffs.head(n), scales, law.family).sample(stream);
  }
  StepOutcome out;
  out.p = a.frak_p;
  out.p_prime = b.frak_p;
  out.pair.N = pair.N;
  out.pair.met = pair.met;
  out.pair.met.push_back(head.met);
  Vector u(spec.n_dim), up(spec.n_dim), z(spec.n_dim), zp(spec.n_dim);
  if (n > 0) {
    u.head(n) = head.v;
    up.head(n) = head.v_prime;
    z.head(n) = head.v - a.next.coeffs.head(n);
    zp.head(n) = head.v_prime - b.next.coeffs.head(n);
  }
  u.tail(tail) = a.next.coeffs.tail(tail) + xi_tail;
  up.tail(tail) = b.next.coeffs.tail(tail) + xi_tail;
  z.tail(tail) = xi_tail;
  zp.tail(tail) = xi_tail;
  out.pair.u = StateVector(std::move(u), spec.basis);
  out.pair.u_prime = StateVector(std::move(up), spec.basis);
  out.kicks.zeta = StateVector(std::move(z), spec.basis);
  out.kicks.zeta_prime = StateVector(std::move(zp), spec.basis);
  if (!out.pair.u.all_finite() || !out.pair.u_prime.all_finite()) {
    throw NumericalInstabilityError(kModule, "coupled step produced a non-finite state");
  }
  return out;
}

}  // namespace

CoupledPair coupled_step(const CoupledPair& pair, const SystemSpec& spec, const KickLaw& law, Stream& stream,
                         CoupledKicks* kicks) {
  StepOutcome out = step_pair(pair, spec, law, stream);
  if (kicks != nullptr) *kicks = std::move(out.kicks);
  return std::move(out.pair);
}

CoupledRun coupled_run(const KickedSystem& system, int N, const StateVector& u0, const StateVector& u0_prime,
                       int steps, std::uint64_t seed, std::uint64_t run) {
  CoupledRun out;
  CoupledPair pair{u0, u0_prime, {}, N};
  out.traj.u.push_back(u0);
  out.traj.u_prime.push_back(u0_prime);
  for (int k = 1; k <= steps; ++k) {
    Stream stream(seed, run, static_cast<std::uint64_t>(k), StreamPurpose::kCoupling);
    StepOutcome s = step_pair(pair, system.spec, system.law, stream);
    pair = std::move(s.pair);
    out.traj.u.push_back(pair.u);
    out.traj.u_prime.push_back(pair.u_prime);
    out.traj.zeta.push_back(std::move(s.kicks.zeta));
    out.traj.zeta_prime.push_back(std::move(s.kicks.zeta_prime));
    if (!pair.met.back() && out.first_divorce == 0) out.first_divorce = k;
  }
  out.met = pair.met;
  return out;
}

// ---------------------------------------------------------------------------
// Lipschitz constant of the divorce probability

CouplingConstant calibrate_coupling_constant(const KickedSystem& system, int N, const PairSampler& sampler,
                                             std::size_t calibration_pairs, std::size_t verification_pairs,
                                             std::uint64_t seed, double margin, int workers) {
  const auto& spec = system.spec;
  const auto& law = system.law;
  if (law.family != DensityFamily::kGaussian) {
    throw ConfigurationError(kModule, "the coupling constant is calibrated for Gaussian kicks only");
  }
  if (N < 1 || N > spec.levels()) throw ConfigurationError(kModule, "coupling level out of range");
  const int n = spec.dim_of_level(N);
  Vector scales(n);
  for (int j = 0; j < n; ++j) scales[j] = law.b[static_cast<std::size_t>(j)];
  if (!(scales.minCoeff() > 0.0)) throw DegenerateInputError(kModule, "kick scales of H_N must be positive");

  struct Pair {
    double gap = 0.0;
    double divorce = 0.0;  // exact 1 - meeting probability
    bool drawn_apart = false;
  };
  auto evaluate = [&](std::size_t i, std::uint64_t step, bool draw) {
    Stream s(seed, i, step, StreamPurpose::kCalibration);
    const auto [v, vp] = sampler(s);
    const StateVector Sv = spec.step(v), Svp = spec.step(vp);
    Pair p;
    p.gap = (Sv.coeffs - Svp.coeffs).norm();
    const MaximalCoupling mc(Sv.coeffs.head(n), Svp.coeffs.head(n), scales);
    p.divorce = 1.0 - mc.meeting_probability();
    if (draw) {
      Stream c(seed, i, step, StreamPurpose::kCoupling);
      p.drawn_apart = !mc.sample(c).met;
    }
    return p;
  };

  std::vector<Pair> cal(calibration_pairs), ver(verification_pairs);
  parallel_for(calibration_pairs, workers, [&](std::size_t i) { cal[i] = evaluate(i, 0, false); });
  parallel_for(verification_pairs, workers, [&](std::size_t i) { ver[i] = evaluate(i, 1, true); });

  CouplingConstant out;
  out.analytic = 1.0 / (std::sqrt(2.0 * M_PI) * scales.minCoeff());
  double ratio = 0.0;
  for (const auto& p : cal) {
    if (p.gap > 0.0) ratio = std::max(ratio, p.divorce / p.gap);
  }
  out.c_n = margin * ratio;
  out.pairs = verification_pairs;
  MeanAccumulator apart, bound;
  for (const auto& p : ver) {
    if (p.divorce > out.c_n * p.gap * (1.0 + 1e-12)) ++out.exact_violations;
    apart.add(p.drawn_apart ? 1.0 : 0.0);
    bound.add(out.c_n * p.gap);
  }
  out.empirical_divorce = apart.mean;
  out.empirical_bound = bound.mean;
  out.empirical_stderr = apart.stderr_();
  out.holds = out.exact_violations == 0 && out.empirical_divorce <= out.empirical_bound + 3.0 * out.empirical_stderr;
  return out;
}

// ---------------------------------------------------------------------------
// Stratification of the first divorce

namespace {

struct FirstDivorce {
  int r = 0;           // 0 when the pair stays together through the horizon
  double p_sum = 0.0;  // sum_{j<r} p(u_j) + p(u_j')
};

FirstDivorce first_divorce(const KickedSystem& system, int N, const StateVector& u0, const StateVector& u0_prime,
                           int horizon, std::uint64_t seed, std::uint64_t run) {
  CoupledPair pair{u0, u0_prime, {}, N};
  FirstDivorce out;
  for (int k = 1; k <= horizon; ++k) {
    Stream stream(seed, run, static_cast<std::uint64_t>(k), StreamPurpose::kCoupling);
    StepOutcome s = step_pair(pair, system.spec, system.law, stream);
    out.p_sum += s.p + s.p_prime;
    if (!s.pair.met.back()) {
      out.r = k;
      return out;
    }
    // Identical states stay identical: nothing further can happen.
    if (s.pair.u == s.pair.u_prime) return out;
    pair = std::move(s.pair);
  }
  return out;
}

std::vector<FirstDivorce> first_divorces(const KickedSystem& system, int N, const StateVector& u0,
                                         const StateVector& u0_prime, int horizon, std::size_t runs,
                                         std::uint64_t seed, int workers) {
  std::vector<FirstDivorce> out(runs);
  parallel_for(runs, workers, [&](std::size_t m) { out[m] = first_divorce(system, N, u0, u0_prime, horizon, seed, m); });
  return out;
}

int stratum(double p_sum) { return std::max(1, static_cast<int>(std::ceil(p_sum))); }

}  // namespace

MeetingReport meeting_rate(const KickedSystem& system, int N, const StateVector& u0, const StateVector& u0_prime,
                           int horizon, std::size_t n_runs, std::uint64_t seed, int workers) {
  const auto& spec = system.spec;
  if (horizon < 1 || n_runs < 1) throw ConfigurationError(kModule, "meeting_rate needs horizon >= 1 and runs >= 1");
  if (N < 1 || N > spec.levels()) throw ConfigurationError(kModule, "coupling level out of range");
  spec.conform(u0);
  spec.conform(u0_prime);
  MeetingReport rep;
  rep.d = (u0.coeffs - u0_prime.coeffs).norm();
  rep.N = N;
  rep.runs = n_runs;
  rep.sigma = 0.5 * system.law.delta;
  const double gamma_n = spec.gamma[static_cast<std::size_t>(N)];
  if (horizon >= 2) {
    rep.c = std::max(0.0, stabilisability_fit(system, u0, system.law.delta, horizon, std::max<std::size_t>(n_runs / 10, 100),
                                              detail::splitmix64(seed ^ 0x57ab), workers).c);
  }
  auto envelope = [&](int r, int rho) {
    return std::min(std::pow(gamma_n, -r) * std::exp(2.0 * rho) * rep.d, std::exp(rep.c * r - rep.sigma * rho));
  };

  // Calibrate C_3 on independent runs.
  const auto cal = first_divorces(system, N, u0, u0_prime, horizon, std::max<std::size_t>(n_runs / 4, 1),
                                  detail::splitmix64(seed ^ 0xca1b), workers);
  std::map<std::pair<int, int>, std::size_t> cal_counts;
  for (const auto& f : cal) {
    if (f.r > 0) ++cal_counts[{f.r, stratum(f.p_sum)}];
  }
  rep.c3 = 1.0;
  if (!cal_counts.empty()) {
    double ratio = 0.0;
    for (const auto& [key, count] : cal_counts) {
      ratio = std::max(ratio, static_cast<double>(count) / static_cast<double>(cal.size()) / envelope(key.first, key.second));
    }
    rep.c3 = 1.25 * ratio;
  }

  const auto runs = first_divorces(system, N, u0, u0_prime, horizon, n_runs, seed, workers);
  std::vector<std::size_t> divorced_at(static_cast<std::size_t>(horizon) + 1, 0);
  std::map<std::pair<int, int>, std::size_t> counts;
  for (const auto& f : runs) {
    if (f.r == 0) {
      ++rep.never_divorced;
      continue;
    }
    ++divorced_at[static_cast<std::size_t>(f.r)];
    ++counts[{f.r, stratum(f.p_sum)}];
  }
  const double total = static_cast<double>(n_runs);
  std::size_t alive = n_runs;
  for (int k = 1; k <= horizon; ++k) {
    const std::size_t dk = divorced_at[static_cast<std::size_t>(k)];
    rep.divorce.push_back(static_cast<double>(dk) / total);
    rep.hazard.push_back(alive > 0 ? static_cast<double>(dk) / static_cast<double>(alive) : 0.0);
    alive -= dk;
    rep.survival.push_back(static_cast<double>(alive) / total);
  }
  for (const auto& [key, count] : counts) {
    StratumCell c;
    c.r = key.first;
    c.rho = key.second;
    c.count = count;
    c.p_hat = static_cast<double>(count) / total;
    c.stderr_ = std::sqrt(c.p_hat * (1.0 - c.p_hat) / total);
    c.envelope = rep.c3 * envelope(c.r, c.rho);
    if (c.p_hat > c.envelope + 3.0 * c.stderr_) ++rep.envelope_violations;
    rep.cells.push_back(c);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Equicontinuity of the normalized tilted semigroup

namespace {

std::vector<double> probe_points(const FellerOptions& o) {
  if (o.probes < 1) throw ConfigurationError(kModule, "need at least one probe point");
  if (o.probes == 1) return {0.0};
  std::vector<double> p;
  for (int i = 0; i < o.probes; ++i) p.push_back(-o.R + 2.0 * o.R * i / (o.probes - 1));
  return p;
}

void check_options(const FellerOptions& o) {
  if (o.k_max < 1 || o.runs < 2) throw ConfigurationError(kModule, "feller diagnostic needs k_max >= 1 and runs >= 2");
  if (!(o.R > 0.0)) throw ConfigurationError(kModule, "radius R must be positive");
  for (double d : o.d_values) {
    if (!(d >= 0.0)) throw ConfigurationError(kModule, "distances must be non-negative");
  }
}

void finish_feller(FellerReport& rep, const FellerOptions& o) {
  std::vector<std::size_t> order(rep.points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return o.d_values[a] > o.d_values[b]; });
  rep.monotone = true;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& big = rep.points[order[i - 1]];
    const auto& small = rep.points[order[i]];
    const double slack = 3.0 * std::hypot(big.modulus_stderr, small.modulus_stderr);
    if (small.modulus > big.modulus + slack) rep.monotone = false;
  }
  for (const auto& p : rep.points) {
    if (p.d > 0.0 && p.modulus_stderr > 0.0 && p.modulus < p.modulus_stderr) {
      rep.inconclusive = true;
      rep.note = "modulus at d = " + std::to_string(p.d) + " is below its standard error; increase runs";
    }
  }
}

void fill_modulus(FellerPoint& p) {
  p.modulus = 0.0;
  p.modulus_stderr = 0.0;
  p.argmax_k = 0;
  for (std::size_t k = 0; k < p.difference.size(); ++k) {
    if (std::abs(p.difference[k]) > p.modulus || p.argmax_k == 0) {
      p.modulus = std::abs(p.difference[k]);
      p.modulus_stderr = p.stderr_[k];
      p.argmax_k = static_cast<int>(k) + 1;
    }
  }
}

}  // namespace

FellerReport feller_diagnostic(const KickedSystem& system, const ObservableSpec& V, const ObservableSpec& f,
                               const FellerOptions& o, std::uint64_t seed, int workers) {
  check_options(o);
  const auto& spec = system.spec;
  if (spec.n_dim != 1) throw ConfigurationError(kModule, "feller diagnostic supports one-dimensional systems");
  if (V.ell != 1 || f.ell != 1) throw ConfigurationError(kModule, "feller diagnostic needs single-state V and f");
  const std::size_t K = static_cast<std::size_t>(o.k_max);
  const std::vector<double> probes = probe_points(o);
  const Model model = system;
  auto start = [&](double x) { return StateVector(Vector::Constant(1, x), spec.basis); };

  FellerReport rep;
  rep.z = o.z;

  // |P_k^V 1|_R as the largest probe mean.
  std::vector<MeanAccumulator> best(K);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const std::size_t nb = block_count(o.runs);
    std::vector<std::vector<MeanAccumulator>> blocks(nb, std::vector<MeanAccumulator>(K));
    const std::uint64_t probe_seed = detail::splitmix64(seed ^ (0x9b0e + i));
    parallel_blocks(o.runs, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
      for (std::size_t m = begin; m < end; ++m) {
        StateVector u = start(probes[i]);
        double s = 0.0;
        for (int k = 1; k <= o.k_max; ++k) {
          u = model_step(model, u, probe_seed, m, k);
          s += V(u);
          blocks[b][static_cast<std::size_t>(k) - 1].add(std::exp(s));
        }
      }
    });
    std::vector<MeanAccumulator> acc(K);
    for (const auto& blk : blocks) {
      for (std::size_t k = 0; k < K; ++k) acc[k].merge(blk[k]);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (i == 0 || acc[k].mean > best[k].mean) best[k] = acc[k];
    }
  }
  for (std::size_t k = 0; k < K; ++k) rep.norm_R.push_back(best[k].mean);

  for (std::size_t di = 0; di < o.d_values.size(); ++di) {
    const double d = o.d_values[di];
    const std::size_t nb = block_count(o.runs);
    std::vector<std::vector<MeanAccumulator>> blocks(nb, std::vector<MeanAccumulator>(K));
    const std::uint64_t run_offset = di * o.runs;
    parallel_blocks(o.runs, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
      for (std::size_t m = begin; m < end; ++m) {
        CoupledPair pair{start(o.z), start(o.z + d), {}, o.N};
        double s = 0.0, sp = 0.0;
        for (int k = 1; k <= o.k_max; ++k) {
          Stream stream(seed, run_offset + m, static_cast<std::uint64_t>(k), StreamPurpose::kCoupling);
          pair = step_pair(pair, spec, system.law, stream).pair;
          s += V(pair.u);
          sp += V(pair.u_prime);
          const double diff = pair.u == pair.u_prime && s == sp ? 0.0 : std::exp(s) * f(pair.u) - std::exp(sp) * f(pair.u_prime);
          blocks[b][static_cast<std::size_t>(k) - 1].add(diff);
        }
      }
    });
    std::vector<MeanAccumulator> acc(K);
    for (const auto& blk : blocks) {
      for (std::size_t k = 0; k < K; ++k) acc[k].merge(blk[k]);
    }
    FellerPoint p;
    p.d = d;
    for (std::size_t k = 0; k < K; ++k) {
      const double norm = best[k].mean;
      const double g = acc[k].mean / norm;
      p.difference.push_back(g);
      p.stderr_.push_back(std::hypot(acc[k].stderr_() / norm, g * best[k].stderr_() / norm));
    }
    fill_modulus(p);
    rep.points.push_back(std::move(p));
  }
  finish_feller(rep, o);
  return rep;
}

FellerReport feller_exact(const GridOperator& op, const Vector& f_nodes, const FellerOptions& o) {
  check_options(o);
  if (op.kind != GridOperator::Kind::kGrid) throw ConfigurationError(kModule, "feller_exact needs a grid operator");
  if (f_nodes.size() != op.size()) throw ConfigurationError(kModule, "f needs one value per grid node");
  const std::vector<double> probes = probe_points(o);
  std::vector<Vector> probe_rows;
  for (double x : probes) probe_rows.push_back(op.row_at(x));
  const Vector row_z = op.row_at(o.z);
  std::vector<Vector> rows_d;
  for (double d : o.d_values) rows_d.push_back(op.row_at(o.z + d));

  FellerReport rep;
  rep.z = o.z;
  rep.points.resize(o.d_values.size());
  Vector wf = f_nodes;
  Vector w1 = Vector::Ones(op.size());
  for (int k = 1; k <= o.k_max; ++k) {
    if (k > 1) {
      wf = op.kernel * wf;
      w1 = op.kernel * w1;
    }
    double norm = -std::numeric_limits<double>::infinity();
    for (const auto& r : probe_rows) norm = std::max(norm, r.dot(w1));
    rep.norm_R.push_back(norm);
    const double at_z = row_z.dot(wf);
    for (std::size_t i = 0; i < rows_d.size(); ++i) {
      rep.points[i].d = o.d_values[i];
      rep.points[i].difference.push_back((at_z - rows_d[i].dot(wf)) / norm);
      rep.points[i].stderr_.push_back(0.0);
    }
  }
  for (auto& p : rep.points) fill_modulus(p);
  finish_feller(rep, o);
  return rep;
}

}  // namespace kicklab
