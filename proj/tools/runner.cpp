#include "runner.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "kicklab/coupling.hpp"
#include "kicklab/errors.hpp"
#include "kicklab/feynman_kac.hpp"
#include "kicklab/ldp.hpp"
#include "kicklab/systems.hpp"

namespace kicklab::cli {

namespace {

constexpr const char* kModule = "cli";
constexpr double kInf = std::numeric_limits<double>::infinity();

/// Independent seeds for the sub-computations of one run.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) { return detail::splitmix64(seed ^ (tag * 0x9E3779B97F4A7C15ULL)); }

enum SeedTag : std::uint64_t {
  kTagMain = 1,
  kTagLyapunov,
  kTagHitting,
  kTagDissipativity,
  kTagSqueezing,
  kTagMoments,
  kTagStabilisability,
  kTagCertificate,
  kTagCalibration,
  kTagTails,
};

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Comma-separated table with a header row.
class Csv {
 public:
  explicit Csv(std::initializer_list<const char*> header) {
    bool first = true;
    for (const char* h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
  }

  Csv& cell(double x) { return sep() << fmt(x), *this; }
  Csv& cell(int x) { return sep() << x, *this; }
  Csv& cell(std::size_t x) { return sep() << x, *this; }
  Csv& cell(bool x) { return sep() << (x ? "true" : "false"), *this; }
  Csv& cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return sep() << s, *this;
    std::string quoted = "\"";
    for (char c : s) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
    return sep() << quoted << '"', *this;
  }
  void end() {
    out_ << '\n';
    fresh_ = true;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostream& sep() {
    if (!fresh_) out_ << ',';
    fresh_ = false;
    return out_;
  }

  std::ostringstream out_;
  bool fresh_ = true;
};

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

const KickedSystem* kicked(const Model& model) { return std::get_if<KickedSystem>(&model); }
const FiniteChain* chain(const Model& model) { return std::get_if<FiniteChain>(&model); }

StateVector as_state(const Vector& v, const Model& model) { return StateVector(v, model_basis(model)); }

/// The observable of the pressure, rate and ldp experiments.
ObservableSpec experiment_observable(const Config& config, const Model& model) {
  const auto& o = config.experiment.observable;
  if (const auto* c = chain(model)) {
    const Vector values = o.values.size() > 0 ? o.values : c->f;
    if (values.size() != c->size()) throw ConfigurationError(kModule, "chain observable needs one value per state");
    return scaled_observable(chain_observable(values, o.name), o.scale);
  }
  return scaled_observable(catalogue_observable(kicked(model)->spec, o.name), o.scale);
}

Vector chain_values(const Config& config, const FiniteChain& c) {
  const auto& o = config.experiment.observable;
  return (o.values.size() > 0 ? o.values : c.f) * o.scale;
}

/// A deterministic starting point: the configured u0, else the initial point or mean, else 0.
StateVector start_point(const Config& config, const Model& model) {
  const auto& e = config.experiment;
  if (e.u0.size() > 0) return as_state(e.u0, model);
  if (config.initial.point.size() > 0) return as_state(config.initial.point, model);
  if (config.initial.mean.size() > 0) return as_state(config.initial.mean, model);
  return StateVector::zero(model_dim(model), model_basis(model));
}

std::vector<int> default_k_grid(const ExperimentConfig& e) {
  if (!e.k_grid.empty()) return e.k_grid;
  std::vector<int> ks;
  for (int k = 1; k <= e.K; ++k) ks.push_back(k);
  return ks;
}

std::vector<double> default_betas(const ExperimentConfig& e) {
  if (!e.betas.empty()) return e.betas;
  std::vector<double> betas;
  for (int i = -8; i <= 8; ++i) betas.push_back(0.25 * i);
  return betas;
}

Json check(const std::string& name, bool passed, bool required) {
  return Json{{"name", name}, {"passed", passed}, {"required", required}};
}

// ---------------------------------------------------------------------------
// validation

Json validate_kicked(const Config& config, const KickedSystem& system) {
  const auto& spec = system.spec;
  const auto& e = config.experiment;
  const std::uint64_t seed = config.seed;
  const int workers = config.workers;
  const std::size_t n = std::max<std::size_t>(e.validation_samples, 20);
  Json checks = Json::array();

  {
    const PairSampler sampler = [&spec](Stream& s) {
      StateVector u = random_state(spec, s, 10.0 * s.uniform(), 0.8);
      StateVector v = random_state(spec, s, 5.0 * s.uniform(), 0.8);
      return std::make_pair(std::move(u), std::move(v));
    };
    const auto r = check_dissipativity(spec, sampler, n, sub_seed(seed, kTagDissipativity), workers);
    Json c = check("dissipativity", r.violations == 0, true);
    c["samples"] = r.samples;
    c["violations"] = r.violations;
    c["worst_ratio"] = finite_or_null(r.worst_ratio);
    c["q"] = spec.constants.q;
    c["c_phi"] = spec.constants.c_phi;
    checks.push_back(c);
  }

  {
    std::vector<std::pair<StateVector, StateVector>> pairs;
    const std::size_t n_pairs = std::clamp<std::size_t>(n / 100, 8, 32);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      Stream s(sub_seed(seed, kTagSqueezing), i, 0, StreamPurpose::kSampler);
      StateVector u = random_state(spec, s, 0.5 + 4.5 * s.uniform(), 0.8);
      StateVector v = random_state(spec, s, 0.5 + 4.5 * s.uniform(), 0.8);
      if (u == v) continue;
      pairs.emplace_back(std::move(u), std::move(v));
    }
    Json levels = Json::array();
    double worst = 0.0;
    for (int N = 1; N <= spec.levels(); N = N < spec.levels() ? std::min(2 * N, spec.levels()) : N + 1) {
      const auto r = check_squeezing(spec, N, pairs);
      levels.push_back({{"N", N}, {"max_normalized_defect", r.max_normalized_defect}});
      worst = std::max(worst, r.max_normalized_defect);
    }
    Json c = check("squeezing", worst <= 1.0 + 1e-9, true);
    c["pairs"] = pairs.size();
    c["max_normalized_defect"] = worst;
    c["levels"] = levels;
    checks.push_back(c);
  }

  {
    Json c = check("kick_coefficients_nonzero", system.law.all_nonzero(), e.type == "ldp");
    for (std::size_t j = 0; j < system.law.b.size(); ++j) {
      if (system.law.b[j] == 0.0) {
        c["first_zero"] = "b_" + std::to_string(j + 1);
        c["message"] = "kick coefficient b_" + std::to_string(j + 1) +
                       " is zero; the large deviation principle needs every b_j to be non-zero";
        break;
      }
    }
    checks.push_back(c);
  }

  {
    const auto r = moment_report(system.law, spec, n, sub_seed(seed, kTagMoments), workers);
    Json c = check("kick_moments", std::isfinite(r.frak_b) && std::isfinite(r.m_delta_hat) && !r.delta_too_large, true);
    c["frak_b"] = finite_or_null(r.frak_b);
    c["m_delta_hat"] = finite_or_null(r.m_delta_hat);
    c["m_delta_stderr"] = finite_or_null(r.m_delta_stderr);
    c["delta"] = system.law.delta;
    c["delta_too_large"] = r.delta_too_large;
    checks.push_back(c);
  }

  {
    const std::size_t M = std::max<std::size_t>(n / 4, 50);
    const auto r = stabilisability_fit(system, StateVector::zero(spec.n_dim, spec.basis), system.law.delta, 20, M,
                                       sub_seed(seed, kTagStabilisability), workers);
    bool finite = std::isfinite(r.c);
    for (double x : r.log_curve) finite = finite && std::isfinite(x);
    Json c = check("stabilisability", finite, true);
    c["c"] = finite_or_null(r.c);
    c["log_q"] = finite_or_null(r.log_q);
    c["r_squared"] = finite_or_null(r.r_squared);
    checks.push_back(c);
  }

  {
    Json c = check("s_of_zero_in_U", std::isfinite(spec.s_of_zero_u_norm), true);
    c["u_norm"] = finite_or_null(spec.s_of_zero_u_norm);
    checks.push_back(c);
  }

  if (config.initial.kind != InitialLaw::Kind::kCategorical) {
    const auto r = certify_initial_law(config.initial, system, system.law.delta, std::max<std::size_t>(n / 10, 20),
                                       sub_seed(seed, kTagCertificate), workers);
    bool ok = r.stable && std::isfinite(r.estimate);
    if (config.initial.m_bound) ok = ok && r.m_bound <= *config.initial.m_bound;
    Json c = check("initial_law_moment", ok, true);
    c["estimate"] = finite_or_null(r.estimate);
    c["stderr"] = finite_or_null(r.stderr_);
    c["m_bound"] = finite_or_null(r.m_bound);
    c["stable"] = r.stable;
    checks.push_back(c);
  }

  {
    Json c;
    if (spec.n_dim == 1 && system.law.b[0] > 0.0) {
      // The growth conditions concern bounded tilts: unbounded observables are clipped to [-1, 1].
      ObservableSpec V = scaled_observable(catalogue_observable(spec, e.observable.name), e.observable.scale);
      if (!V.bounded()) {
        V = cylindrical_observable("clipped_" + V.name, 1, [f = V, basis = spec.basis](const Vector& u) {
          return std::clamp(f(StateVector(u, basis)), -1.0, 1.0);
        }, 1.0);
      }
      const GridOperator op = discretize(system, V);
      Vector phi(op.size());
      for (int i = 0; i < op.size(); ++i) phi[i] = spec.phi(StateVector(Vector::Constant(1, op.nodes[i]), spec.basis));
      const auto scan = growth_scan(op, phi, nodes_within(op, 1.0), 30);
      c = check("growth", scan.selected_m >= 0, false);
      c["selected_m"] = scan.selected_m;
      Json sups = Json::array();
      for (const auto& curve : scan.curves) sups.push_back(finite_or_null(curve.sup));
      c["sup_ratio"] = sups;
    } else {
      c = check("growth", true, false);
      c["note"] = "grid growth diagnostic needs a one-dimensional system; not applicable";
    }
    checks.push_back(c);
  }
  return checks;
}

Json validate_chain_model(const Config& config, const FiniteChain& c) {
  Json checks = Json::array();
  checks.push_back(check("chain_valid", true, true));
  checks.push_back(check("primitive", is_primitive(c.P), true));
  const Vector f = chain_values(config, c);
  checks.push_back(check("observable_finite", f.size() == c.size() && f.allFinite(), true));
  bool init_ok = true;
  if (config.initial.kind == InitialLaw::Kind::kCategorical) {
    const Vector& p = config.initial.probs;
    init_ok = p.size() == c.size() && (p.array() >= 0.0).all() && std::abs(p.sum() - 1.0) <= 1e-12;
  } else if (config.initial.kind == InitialLaw::Kind::kPoint) {
    const Vector& p = config.initial.point;
    init_ok = p.size() == 1 && p[0] >= 0.0 && p[0] < c.size() && p[0] == std::floor(p[0]);
  }
  checks.push_back(check("initial_law", init_ok, true));
  return checks;
}

// ---------------------------------------------------------------------------
// experiments

struct Outputs {
  Json results = Json::object();
  std::map<std::string, std::string> files;
  int exit_code = 0;
  std::string message;

  void inconclusive(const std::string& why) {
    exit_code = 4;
    if (!message.empty()) message += "; ";
    message += why;
  }
};

void run_simulate(const Config& config, const Model& model, Outputs& out) {
  const auto& e = config.experiment;
  std::vector<std::pair<std::string, ObservableSpec>> observables;
  std::vector<std::string> names = e.observables;
  if (names.empty()) names.push_back(chain(model) ? "f" : "energy");
  for (const auto& name : names) {
    if (const auto* c = chain(model)) {
      if (name == "f") {
        observables.emplace_back(name, chain_observable(c->f, "f"));
      } else if (name == "state") {
        observables.emplace_back(name, coordinate_observable(0));
      } else {
        throw ConfigurationError(kModule, "chain observables are 'f' and 'state', not '" + name + "'");
      }
    } else {
      observables.emplace_back(name, catalogue_observable(kicked(model)->spec, name));
    }
  }

  const auto ensemble = simulate(model, config.initial, e.M, e.K, sub_seed(config.seed, kTagMain), config.workers);
  Csv moments({"k", "observable", "mean", "stderr"});
  for (const auto& [name, f] : observables) {
    for (int k = 0; k <= e.K; ++k) {
      MeanAccumulator acc;
      for (std::size_t m = 0; m < e.M; ++m) acc.add(f(ensemble.at(m, k)));
      moments.cell(k).cell(name).cell(acc.mean).cell(acc.stderr_()).end();
    }
  }
  out.files["trajectory_moments.csv"] = moments.str();
  out.results["M"] = e.M;
  out.results["K"] = e.K;

  const auto* system = kicked(model);
  if (!system) return;

  const auto lyap = lyapunov_check(*system, config.initial, e.K, e.M, sub_seed(config.seed, kTagLyapunov), config.workers);
  Csv margins({"k", "lhs", "lhs_stderr", "rhs", "margin"});
  for (const auto& row : lyap.rows) margins.cell(row.k).cell(row.phi_mean).cell(row.phi_stderr).cell(row.phi_bound).cell(row.margin()).end();
  out.files["lyapunov_margins.csv"] = margins.str();
  out.results["lyapunov"] = {{"violations", lyap.violations}, {"exp_violations", lyap.exp_violations}};

  const auto hit = hitting_time_moments(*system, start_point(config, model), e.radius, e.gamma, e.M, e.horizon,
                                        sub_seed(config.seed, kTagHitting), 1, config.workers);
  Csv hitting({"u0_norm", "gamma", "radius", "estimate", "stderr", "mean_tau", "capped_fraction"});
  hitting.cell(hit.u0_norm).cell(hit.gamma).cell(e.radius).cell(hit.estimate).cell(hit.stderr_).cell(hit.mean_tau)
      .cell(hit.capped_fraction).end();
  out.files["hitting_times.csv"] = hitting.str();
  out.results["hitting"] = {{"estimate", finite_or_null(hit.estimate)},
                            {"stderr", finite_or_null(hit.stderr_)},
                            {"capped_fraction", hit.capped_fraction},
                            {"flagged", hit.flagged}};

  const auto tight = tightness_functional(ensemble, system->spec, e.gamma);
  out.results["tightness"] = {{"gamma", tight.gamma_exp},
                              {"slope", finite_or_null(tight.fit.slope)},
                              {"r_squared", finite_or_null(tight.fit.r_squared)},
                              {"diverging", tight.diverging},
                              {"note", tight.note}};
  if (lyap.violations > 0) out.inconclusive("Lyapunov bound exceeded by more than 3 stderr at some k");
  if (hit.flagged) out.inconclusive("more than 1% of hitting-time runs reached the horizon");
}

void run_mix(const Config& config, const Model& model, Outputs& out) {
  const auto& e = config.experiment;
  if (!e.initial_b) throw ConfigurationError(kModule, "mix needs experiment.initial_b");
  MixingOptions options;
  options.bootstrap = e.bootstrap;
  options.fit_begin = e.fit_begin;
  const ObservableSpec projection = coordinate_observable(0);
  if (model_dim(model) == 1) options.projection = &projection;
  const auto r = mixing_rate(model, config.initial, *e.initial_b, e.K, e.M, sub_seed(config.seed, kTagMain),
                             config.workers, options);
  Csv curve({"k", "d_k", "stderr"});
  for (const auto& p : r.curve) curve.cell(p.k).cell(p.distance).cell(p.stderr_).end();
  out.files["mixing_curve.csv"] = curve.str();
  out.results["gamma_hat"] = finite_or_null(r.gamma_hat);
  out.results["gamma_stderr"] = finite_or_null(r.gamma_stderr);
  out.results["r_squared"] = finite_or_null(r.r_squared);
  out.results["fit_begin"] = r.fit_begin;
  out.results["fit_end"] = r.fit_end;
  out.results["strictly_decreasing"] = r.strictly_decreasing;
  out.results["exact"] = r.exact;
  out.results["note"] = r.note;
  if (r.inconclusive) out.inconclusive("mixing fit inconclusive: " + r.note);
}

void run_couple(const Config& config, const Model& model, Outputs& out) {
  const auto* system = kicked(model);
  if (!system) throw ConfigurationError(kModule, "couple needs a kicked system");
  const auto& e = config.experiment;
  if (e.u0.size() == 0 || e.u0_prime.size() == 0) throw ConfigurationError(kModule, "couple needs u0 and u0_prime");
  const auto r = meeting_rate(*system, e.N, as_state(e.u0, model), as_state(e.u0_prime, model), e.horizon, e.runs,
                              sub_seed(config.seed, kTagMain), config.workers);
  Csv strata({"r", "rho", "count", "p_hat", "stderr", "envelope"});
  for (const auto& c : r.cells) strata.cell(c.r).cell(c.rho).cell(c.count).cell(c.p_hat).cell(c.stderr_).cell(c.envelope).end();
  out.files["meeting_rate.csv"] = strata.str();
  Csv curve({"k", "survival", "divorce", "hazard"});
  for (std::size_t k = 0; k < r.survival.size(); ++k) {
    curve.cell(static_cast<int>(k + 1)).cell(r.survival[k]).cell(r.divorce[k]).cell(r.hazard[k]).end();
  }
  out.files["meeting_curve.csv"] = curve.str();
  out.results["d"] = r.d;
  out.results["N"] = r.N;
  out.results["runs"] = r.runs;
  out.results["never_divorced"] = r.never_divorced;
  out.results["c"] = finite_or_null(r.c);
  out.results["sigma"] = r.sigma;
  out.results["c3"] = finite_or_null(r.c3);
  out.results["envelope_violations"] = r.envelope_violations;

  if (system->law.family == DensityFamily::kGaussian && e.calibration_pairs > 0 && e.verification_pairs > 0) {
    const auto& spec = system->spec;
    const PairSampler sampler = [&spec](Stream& s) {
      StateVector u = random_state(spec, s, 3.0 * s.uniform(), 0.8);
      StateVector v = random_state(spec, s, 3.0 * s.uniform(), 0.8);
      return std::make_pair(std::move(u), std::move(v));
    };
    const auto cn = calibrate_coupling_constant(*system, e.N, sampler, e.calibration_pairs, e.verification_pairs,
                                                sub_seed(config.seed, kTagCalibration), 1.25, config.workers);
    out.results["coupling_constant"] = {{"c_n", cn.c_n},
                                        {"analytic", finite_or_null(cn.analytic)},
                                        {"pairs", cn.pairs},
                                        {"exact_violations", cn.exact_violations},
                                        {"empirical_divorce", cn.empirical_divorce},
                                        {"empirical_bound", cn.empirical_bound},
                                        {"holds", cn.holds}};
    if (!cn.holds) out.inconclusive("calibrated coupling constant failed verification");
  }
  if (r.envelope_violations > 0) out.inconclusive("meeting strata above the envelope");
}

/// Exact or grid pressure of V for comparison, when one is available.
Json reference_pressure(const Config& config, const Model& model, const ObservableSpec& V) {
  Json ref = Json::object();
  std::optional<GridOperator> op;
  if (const auto* c = chain(model)) {
    op = discretize(*c, chain_values(config, *c));
  } else if (kicked(model)->spec.n_dim == 1 && kicked(model)->law.b[0] > 0.0) {
    try {
      op = discretize(*kicked(model), V);
    } catch (const ConfigurationError& err) {
      ref["note"] = err.what();
    }
  }
  if (!op) return ref;
  const auto t = power_iterate(*op);
  ref["lambda"] = t.lambda;
  ref["Q"] = std::log(t.lambda);
  ref["right_residual"] = t.right_residual;
  ref["left_residual"] = t.left_residual;
  ref["converged"] = t.converged;
  ref["exact"] = op->kind == GridOperator::Kind::kChain;
  return ref;
}

void run_pressure(const Config& config, const Model& model, Outputs& out) {
  const auto& e = config.experiment;
  const ObservableSpec V = experiment_observable(config, model);
  const auto r = pressure_estimate(model, config.initial, V, default_k_grid(e), e.M, sub_seed(config.seed, kTagMain),
                                   config.workers);
  Csv curve({"k", "log_mean", "log_stderr", "ess", "stable"});
  for (const auto& p : r.curve) curve.cell(p.k).cell(p.log_mean).cell(p.log_stderr).cell(p.ess).cell(p.stable).end();
  out.files["pressure_curve.csv"] = curve.str();
  out.results["Q_hat"] = finite_or_null(r.q_hat);
  out.results["Q_stderr"] = finite_or_null(r.q_stderr);
  out.results["intercept"] = finite_or_null(r.intercept);
  out.results["r_squared"] = finite_or_null(r.r_squared);
  out.results["fit_begin"] = r.fit_begin;
  out.results["fit_end"] = r.fit_end;
  out.results["min_ess"] = r.min_ess;
  out.results["note"] = r.note;
  out.results["reference"] = reference_pressure(config, model, V);
  if (r.inconclusive) out.inconclusive("pressure fit inconclusive: " + r.note);
}

RateFunction1D rate_function(const Config& config, const Model& model) {
  const auto& e = config.experiment;
  if (const auto* c = chain(model)) return rate_from_chain(*c, chain_values(config, *c), default_betas(e));
  return rate_from_pressure(model, config.initial, experiment_observable(config, model), default_betas(e),
                            default_k_grid(e), e.M, sub_seed(config.seed, kTagMain), config.workers);
}

void emit_rate(const RateFunction1D& rate, const ExperimentConfig& e, Outputs& out) {
  Csv pressures({"beta", "Q", "stderr"});
  for (std::size_t i = 0; i < rate.betas.size(); ++i) {
    const double se = i < rate.Q_stderr.size() ? rate.Q_stderr[i] : 0.0;
    pressures.cell(rate.betas[i]).cell(rate.Q_values[i]).cell(se).end();
  }
  out.files["pressure_by_beta.csv"] = pressures.str();
  Csv table({"y", "I_y", "beta_star", "extrapolated"});
  if (rate.convex) {
    for (double y : e.y_grid) {
      const auto p = rate.at(y);
      table.cell(y).cell(p.value).cell(p.beta_star).cell(p.extrapolated).end();
    }
  }
  out.files["rate_function.csv"] = table.str();
  out.results["convex"] = rate.convex;
  out.results["y_star"] = rate.y_star;
  out.results["note"] = rate.note;
  if (!rate.convex) out.inconclusive("estimated pressure is not convex within 3 stderr");
  if (rate.inconclusive) out.inconclusive("some pressure estimates were inconclusive");
}

void run_rate(const Config& config, const Model& model, Outputs& out) {
  if (config.experiment.y_grid.empty()) throw ConfigurationError(kModule, "rate needs experiment.y_grid");
  emit_rate(rate_function(config, model), config.experiment, out);
}

void run_ldp(const Config& config, const Model& model, const Json& report, Outputs& out) {
  const auto& e = config.experiment;
  for (const auto& c : report.at("checks")) {
    if (c.at("required").get<bool>() && !c.at("passed").get<bool>()) {
      std::string why = c.contains("message") ? c.at("message").get<std::string>()
                                              : "hypothesis check '" + c.at("name").get<std::string>() + "' failed";
      throw ConfigurationError("validate_conditions", why);
    }
  }
  if (e.sets.empty() || e.ks.empty()) throw ConfigurationError(kModule, "ldp needs experiment.sets and experiment.ks");

  const RateFunction1D rate = rate_function(config, model);
  emit_rate(rate, e, out);
  if (!rate.convex) return;

  std::vector<Interval> sets;
  for (const auto& s : e.sets) sets.push_back(Interval{s.lo, s.hi, s.lo_closed, s.hi_closed, s.id});
  const ObservableSpec f = experiment_observable(config, model);
  const auto table = tail_probabilities(model, config.initial, f, sets, e.ks, e.tail_samples,
                                        sub_seed(config.seed, kTagTails), config.workers);
  const TailSource tails = [&](const Interval& set, int k) {
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (sets[i].id != set.id) continue;
      for (std::size_t j = 0; j < e.ks.size(); ++j) {
        if (e.ks[j] == k) return table[i][j];
      }
    }
    throw ConfigurationError(kModule, "no tail estimate for set '" + set.id + "'");
  };
  const auto ldp = ldp_report(rate, sets, e.ks, tails);

  // The bounds are asymptotic; allow 2 log(k) / k and the Wilson interval.
  Csv csv({"gamma_set_id", "k", "exponent_hat", "rate_bound_interior", "rate_bound_closure", "hits", "trials",
           "exponent_lo", "exponent_hi", "slack", "consistent"});
  std::size_t inconsistent = 0;
  for (const auto& row : ldp.rows) {
    const auto t = tails(Interval{0, 0, true, true, row.gamma_id}, row.k);
    const double k = static_cast<double>(row.k);
    const double e_lo = -std::log(t.wilson_hi) / k;
    const double e_hi = t.hits == 0 ? kInf : -std::log(t.wilson_lo) / k;
    const double slack = 2.0 * std::log(std::max(k, 2.0)) / k;
    const bool consistent = e_lo <= row.rate_bound_interior + slack && e_hi >= row.rate_bound_closure - slack;
    if (!consistent) ++inconsistent;
    csv.cell(row.gamma_id).cell(row.k).cell(row.exponent_hat).cell(row.rate_bound_interior).cell(row.rate_bound_closure)
        .cell(row.hits).cell(t.trials).cell(e_lo).cell(e_hi).cell(slack).cell(consistent).end();
  }
  out.files["ldp_tails.csv"] = csv.str();
  out.results["tail_rows"] = ldp.rows.size();
  out.results["inconsistent_rows"] = inconsistent;
  if (inconsistent > 0) out.inconclusive(std::to_string(inconsistent) + " tail rows outside the rate bounds");
}

}  // namespace

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

Model build_model(const Config& config) {
  const auto& s = config.system;
  if (s.type == "chain") return make_chain(s.P, s.f, s.labels);
  SystemSpec spec;
  if (s.type == "linear") {
    spec = make_linear_test(s.linear);
  } else if (s.type == "navier_stokes") {
    spec = make_navier_stokes(s.ns);
  } else if (s.type == "ginzburg_landau") {
    spec = make_ginzburg_landau(s.gl);
  } else {
    throw ConfigurationError(kModule, "unknown system '" + s.type + "'");
  }
  if (s.constants) {
    s.constants->validate();
    spec.constants = *s.constants;
  }
  const NoiseConfig& n = *config.noise;
  KickLaw law;
  law.b = kick_coefficients(n.rule, spec.n_dim);
  law.family = n.family;
  law.delta = n.delta;
  return make_kicked(std::move(spec), std::move(law));
}

Json validate_conditions(const Config& config, const Model& model) {
  Json checks = chain(model) ? validate_chain_model(config, *chain(model)) : validate_kicked(config, *kicked(model));
  bool passed = true;
  for (const auto& c : checks) passed = passed && (c.at("passed").get<bool>() || !c.at("required").get<bool>());
  Json report;
  report["system"] = model_name(model);
  report["passed"] = passed;
  report["checks"] = checks;
  return report;
}

RunOutcome execute(const Config& original) {
  const Model model = build_model(original);
  // An empty point stands for the origin of whatever dimension the system has.
  Config config = original;
  for (InitialLaw* law : {&config.initial, config.experiment.initial_b ? &*config.experiment.initial_b : nullptr}) {
    if (law && (law->kind == InitialLaw::Kind::kPoint || law->kind == InitialLaw::Kind::kBurnIn) &&
        law->point.size() == 0) {
      law->point = Vector::Zero(model_dim(model));
    }
  }
  Outputs out;
  const auto& type = config.experiment.type;
  if (type == "validate" || type == "ldp") {
    const Json report = validate_conditions(config, model);
    out.files["conditions_report.json"] = report.dump(2) + "\n";
    if (type == "validate") {
      out.results["passed"] = report.at("passed");
      if (!report.at("passed").get<bool>()) {
        out.exit_code = 2;
        out.message = "one or more hypothesis checks failed; see conditions_report.json";
      }
    } else {
      run_ldp(config, model, report, out);
    }
  } else if (type == "simulate") {
    run_simulate(config, model, out);
  } else if (type == "mix") {
    run_mix(config, model, out);
  } else if (type == "couple") {
    run_couple(config, model, out);
  } else if (type == "pressure") {
    run_pressure(config, model, out);
  } else if (type == "rate") {
    run_rate(config, model, out);
  } else {
    throw ConfigurationError(kModule, "unknown experiment '" + type + "'");
  }

  Json results;
  results["experiment"] = type;
  results["system"] = model_name(model);
  results["status"] = out.exit_code == 0 ? "ok" : out.exit_code == 4 ? "inconclusive" : "failed";
  results["exit_code"] = out.exit_code;
  results["message"] = out.message;
  results["results"] = out.results;
  out.files["results.json"] = results.dump(2) + "\n";

  const Json canonical = hashed_json(original);
  Json manifest;
  manifest["config_hash"] = fnv1a_hex(canonical.dump());
  manifest["code_version"] = kCodeVersion;
  manifest["seed"] = config.seed;
  manifest["files"] = Json::array();
  for (const auto& [name, body] : out.files) manifest["files"].push_back({{"name", name}, {"fnv1a", fnv1a_hex(body)}});
  manifest["config"] = canonical;
  out.files["manifest.json"] = manifest.dump(2) + "\n";

  return RunOutcome{out.exit_code, out.message, std::move(out.files)};
}

int run(const Config& config, std::string* message) {
  namespace fs = std::filesystem;
  RunOutcome outcome;
  try {
    outcome = execute(config);
  } catch (const Error& err) {
    if (message) *message = err.what();
    return exit_code_for(err.kind());
  }
  std::vector<fs::path> written;
  try {
    const fs::path dir(config.output);
    fs::create_directories(dir);
    for (const auto& [name, body] : outcome.files) {
      const fs::path path = dir / name;
      std::ofstream file(path, std::ios::binary | std::ios::trunc);
      written.push_back(path);
      file << body;
      if (!file) throw std::runtime_error("cannot write '" + path.string() + "'");
    }
  } catch (const std::exception& err) {
    std::error_code ignored;
    for (const auto& p : written) fs::remove(p, ignored);
    if (message) *message = std::string("cli: ") + err.what();
    return 2;
  }
  if (message) *message = outcome.message;
  return outcome.exit_code;
}

}  // namespace kicklab::cli
