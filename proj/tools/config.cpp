#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "kicklab/errors.hpp"

namespace kicklab::cli {

namespace {

constexpr const char* kModule = "config";

[[noreturn]] void fail(const std::string& where, const std::string& message) {
  throw ConfigurationError(kModule, where + ": " + message);
}

/// Reads keys of one JSON object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(where_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) fail(where_, "missing key '" + key + "'");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const Json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(where_ + "." + key, "wrong value type");
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return get<T>(key);
  }

  Vector vector(const std::string& key, Vector fallback = Vector()) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const auto xs = get<std::vector<double>>(key);
    return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  }

  std::string where(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail(where_, "unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> used_;
};

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void check_q(double q, const std::string& where) {
  if (q >= 1.0) fail(where, "dissipativity constant q must be < 1 (got " + std::to_string(q) + ")");
}

// ---------------------------------------------------------------------------
// system

SystemConfig parse_system(const Json& j) {
  Reader r(j, "system");
  SystemConfig s;
  s.type = r.get<std::string>("type");
  if (s.type == "linear") {
    s.linear.dim = r.get<int>("dim", 1);
    s.linear.a = r.get<double>("a", 0.5);
    s.linear.gamma = r.get<std::vector<double>>("gamma", {});
    if (s.linear.dim < 1) fail(r.where("dim"), "must be >= 1");
    if (!(std::abs(s.linear.a) < 1.0)) fail(r.where("a"), "|a| must be < 1");
  } else if (s.type == "navier_stokes") {
    auto& p = s.ns;
    p.modes = r.get<int>("modes", p.modes);
    p.nu = r.get<double>("nu", p.nu);
    p.h = r.get<std::vector<double>>("h", {});
    p.dt = r.get<double>("dt", p.dt);
    p.integrator = integrator_from_string(r.get<std::string>("integrator", integrator_name(p.integrator)));
    p.p_scale = r.get<double>("p_scale", p.p_scale);
    p.p_margin = r.get<double>("p_margin", p.p_margin);
    p.calibration_pairs = r.get<int>("calibration_pairs", p.calibration_pairs);
    p.calibration_seed = r.get<std::uint64_t>("calibration_seed", p.calibration_seed);
    if (!(p.nu > 0.0)) fail(r.where("nu"), "viscosity must be positive");
  } else if (s.type == "ginzburg_landau") {
    auto& p = s.gl;
    p.dim = r.get<int>("dim", p.dim);
    p.modes = r.get<int>("modes", p.modes);
    p.nu = r.get<double>("nu", p.nu);
    p.a = r.get<double>("a", p.a);
    p.h = r.get<std::vector<double>>("h", {});
    p.dt = r.get<double>("dt", p.dt);
    p.epsilon = r.get<double>("epsilon", p.epsilon);
    p.p_scale = r.get<double>("p_scale", p.p_scale);
    p.p_margin = r.get<double>("p_margin", p.p_margin);
    p.q = r.get<double>("q", p.q);
    p.c_phi = r.get<double>("c_phi", p.c_phi);
    p.calibration_samples = r.get<int>("calibration_samples", p.calibration_samples);
    p.calibration_seed = r.get<std::uint64_t>("calibration_seed", p.calibration_seed);
    check_q(p.q, r.where("q"));
    if (!(p.nu > 0.0) || !(p.a > 0.0)) fail("system", "nu and a must be positive");
  } else if (s.type == "chain") {
    const auto rows = r.get<std::vector<std::vector<double>>>("P");
    const int n = static_cast<int>(rows.size());
    s.P.resize(n, n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != n) fail(r.where("P"), "matrix must be square");
      for (int k = 0; k < n; ++k) s.P(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    s.f = r.vector("f");
    s.labels = r.get<std::vector<std::string>>("labels", {});
    validate_chain(make_chain(s.P, s.f, s.labels));
  } else {
    fail(r.where("type"), "unknown system '" + s.type + "'");
  }
  if (r.has("constants")) {
    Reader c(r.raw("constants"), "system.constants");
    DissipativityConstants k;
    k.alpha = c.get<double>("alpha", k.alpha);
    k.beta = c.get<double>("beta", k.beta);
    k.c_phi = c.get<double>("c_phi", k.c_phi);
    k.q = c.get<double>("q", k.q);
    c.finish();
    check_q(k.q, "system.constants.q");
    k.validate();
    s.constants = k;
  }
  r.finish();
  return s;
}

Json system_json(const SystemConfig& s) {
  Json j;
  j["type"] = s.type;
  if (s.type == "linear") {
    j["dim"] = s.linear.dim;
    j["a"] = s.linear.a;
    j["gamma"] = s.linear.gamma;
  } else if (s.type == "navier_stokes") {
    const auto& p = s.ns;
    j["modes"] = p.modes;
    j["nu"] = p.nu;
    j["h"] = p.h;
    j["dt"] = p.dt;
    j["integrator"] = integrator_name(p.integrator);
    j["p_scale"] = p.p_scale;
    j["p_margin"] = p.p_margin;
    j["calibration_pairs"] = p.calibration_pairs;
    j["calibration_seed"] = p.calibration_seed;
  } else if (s.type == "ginzburg_landau") {
    const auto& p = s.gl;
    j["dim"] = p.dim;
    j["modes"] = p.modes;
    j["nu"] = p.nu;
    j["a"] = p.a;
    j["h"] = p.h;
    j["dt"] = p.dt;
    j["epsilon"] = p.epsilon;
    j["p_scale"] = p.p_scale;
    j["p_margin"] = p.p_margin;
    j["q"] = p.q;
    j["c_phi"] = p.c_phi;
    j["calibration_samples"] = p.calibration_samples;
    j["calibration_seed"] = p.calibration_seed;
  } else {
    Json rows = Json::array();
    for (int i = 0; i < s.P.rows(); ++i) rows.push_back(to_std(s.P.row(i).transpose()));
    j["P"] = rows;
    j["f"] = to_std(s.f);
    j["labels"] = s.labels;
  }
  if (s.constants) {
    j["constants"] = {{"alpha", s.constants->alpha},
                      {"beta", s.constants->beta},
                      {"c_phi", s.constants->c_phi},
                      {"q", s.constants->q}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// noise

NoiseConfig parse_noise(const Json& j) {
  Reader r(j, "noise");
  NoiseConfig n;
  n.family = family_from_string(r.get<std::string>("family", "gaussian"));
  n.delta = r.get<double>("delta", n.delta);
  if (!(n.delta > 0.0)) fail(r.where("delta"), "must be positive");
  const std::string rule = r.get<std::string>("rule", "explicit");
  if (rule == "explicit") {
    n.rule.kind = KickRule::Kind::kExplicit;
    n.rule.values = r.get<std::vector<double>>("b");
  } else if (rule == "power") {
    n.rule.kind = KickRule::Kind::kPower;
    n.rule.b0 = r.get<double>("b0");
    n.rule.exponent = r.get<double>("exponent");
  } else if (rule == "geometric") {
    n.rule.kind = KickRule::Kind::kGeometric;
    n.rule.b0 = r.get<double>("b0");
    n.rule.ratio = r.get<double>("ratio");
  } else {
    fail(r.where("rule"), "unknown rule '" + rule + "'");
  }
  r.finish();
  return n;
}

Json noise_json(const NoiseConfig& n) {
  Json j;
  j["family"] = family_name(n.family);
  j["delta"] = n.delta;
  switch (n.rule.kind) {
    case KickRule::Kind::kExplicit:
      j["rule"] = "explicit";
      j["b"] = n.rule.values;
      break;
    case KickRule::Kind::kPower:
      j["rule"] = "power";
      j["b0"] = n.rule.b0;
      j["exponent"] = n.rule.exponent;
      break;
    case KickRule::Kind::kGeometric:
      j["rule"] = "geometric";
      j["b0"] = n.rule.b0;
      j["ratio"] = n.rule.ratio;
      break;
  }
  return j;
}

// ---------------------------------------------------------------------------
// initial laws

InitialLaw parse_initial(const Json& j, const std::string& where) {
  Reader r(j, where);
  InitialLaw law;
  law.kind = initial_kind_from_string(r.get<std::string>("kind"));
  switch (law.kind) {
    case InitialLaw::Kind::kPoint:
      law.point = r.vector("point");
      break;
    case InitialLaw::Kind::kGaussian:
      law.mean = r.vector("mean");
      law.scales = r.vector("scales");
      if (law.mean.size() != law.scales.size()) fail(where, "mean and scales differ in length");
      break;
    case InitialLaw::Kind::kBurnIn:
      law.point = r.vector("point");
      law.burn_in = r.get<int>("steps");
      if (law.burn_in < 0) fail(r.where("steps"), "must be >= 0");
      break;
    case InitialLaw::Kind::kCategorical:
      law.probs = r.vector("probs");
      break;
  }
  if (r.has("delta")) law.delta = r.get<double>("delta");
  if (r.has("m_bound")) law.m_bound = r.get<double>("m_bound");
  r.finish();
  return law;
}

Json initial_json(const InitialLaw& law) {
  Json j;
  j["kind"] = initial_kind_name(law.kind);
  switch (law.kind) {
    case InitialLaw::Kind::kPoint:
      j["point"] = to_std(law.point);
      break;
    case InitialLaw::Kind::kGaussian:
      j["mean"] = to_std(law.mean);
      j["scales"] = to_std(law.scales);
      break;
    case InitialLaw::Kind::kBurnIn:
      j["point"] = to_std(law.point);
      j["steps"] = law.burn_in;
      break;
    case InitialLaw::Kind::kCategorical:
      j["probs"] = to_std(law.probs);
      break;
  }
  if (law.delta) j["delta"] = *law.delta;
  if (law.m_bound) j["m_bound"] = *law.m_bound;
  return j;
}

// ---------------------------------------------------------------------------
// experiment

ObservableConfig parse_observable(const Json& j) {
  Reader r(j, "experiment.observable");
  ObservableConfig o;
  o.name = r.get<std::string>("name", o.name);
  o.values = r.vector("values");
  o.scale = r.get<double>("scale", 1.0);
  r.finish();
  return o;
}

Json observable_json(const ObservableConfig& o) {
  return Json{{"name", o.name}, {"values", to_std(o.values)}, {"scale", o.scale}};
}

const std::set<std::string> kExperiments = {"simulate", "mix", "couple", "pressure", "rate", "ldp", "validate"};

ExperimentConfig parse_experiment(const Json& j) {
  Reader r(j, "experiment");
  ExperimentConfig e;
  e.type = r.get<std::string>("type");
  if (!kExperiments.count(e.type)) fail(r.where("type"), "unknown experiment '" + e.type + "'");
  e.K = r.get<int>("K", e.K);
  e.M = r.get<std::size_t>("M", e.M);
  e.observables = r.get<std::vector<std::string>>("observables", {});
  e.radius = r.get<double>("radius", e.radius);
  e.gamma = r.get<double>("gamma", e.gamma);
  if (r.has("initial_b")) e.initial_b = parse_initial(r.raw("initial_b"), "experiment.initial_b");
  e.bootstrap = r.get<int>("bootstrap", e.bootstrap);
  e.fit_begin = r.get<int>("fit_begin", e.fit_begin);
  e.N = r.get<int>("N", e.N);
  e.u0 = r.vector("u0");
  e.u0_prime = r.vector("u0_prime");
  e.horizon = r.get<int>("horizon", e.horizon);
  e.runs = r.get<std::size_t>("runs", e.runs);
  e.calibration_pairs = r.get<std::size_t>("calibration_pairs", e.calibration_pairs);
  e.verification_pairs = r.get<std::size_t>("verification_pairs", e.verification_pairs);
  if (r.has("observable")) e.observable = parse_observable(r.raw("observable"));
  e.k_grid = r.get<std::vector<int>>("k_grid", {});
  e.betas = r.get<std::vector<double>>("betas", {});
  e.y_grid = r.get<std::vector<double>>("y_grid", {});
  if (r.has("sets")) {
    const Json& sets = r.raw("sets");
    if (!sets.is_array()) fail(r.where("sets"), "expected an array");
    for (std::size_t i = 0; i < sets.size(); ++i) {
      Reader s(sets[i], "experiment.sets[" + std::to_string(i) + "]");
      IntervalConfig c;
      c.id = s.get<std::string>("id");
      c.lo = s.get<double>("lo");
      c.hi = s.get<double>("hi");
      c.lo_closed = s.get<bool>("lo_closed", true);
      c.hi_closed = s.get<bool>("hi_closed", true);
      s.finish();
      if (!(c.lo <= c.hi)) fail(s.where("lo"), "lo must not exceed hi");
      e.sets.push_back(c);
    }
  }
  e.ks = r.get<std::vector<int>>("ks", {});
  e.tail_samples = r.get<std::size_t>("tail_samples", e.tail_samples);
  e.validation_samples = r.get<std::size_t>("validation_samples", e.validation_samples);
  r.finish();
  if (e.K < 1 || e.M < 2) fail("experiment", "K must be >= 1 and M >= 2");
  for (int k : e.k_grid) {
    if (k < 1) fail(r.where("k_grid"), "entries must be >= 1");
  }
  for (int k : e.ks) {
    if (k < 1) fail(r.where("ks"), "entries must be >= 1");
  }
  return e;
}

Json experiment_json(const ExperimentConfig& e) {
  Json j;
  j["type"] = e.type;
  j["K"] = e.K;
  j["M"] = e.M;
  j["observables"] = e.observables;
  j["radius"] = e.radius;
  j["gamma"] = e.gamma;
  if (e.initial_b) j["initial_b"] = initial_json(*e.initial_b);
  j["bootstrap"] = e.bootstrap;
  j["fit_begin"] = e.fit_begin;
  j["N"] = e.N;
  j["u0"] = to_std(e.u0);
  j["u0_prime"] = to_std(e.u0_prime);
  j["horizon"] = e.horizon;
  j["runs"] = e.runs;
  j["calibration_pairs"] = e.calibration_pairs;
  j["verification_pairs"] = e.verification_pairs;
  j["observable"] = observable_json(e.observable);
  j["k_grid"] = e.k_grid;
  j["betas"] = e.betas;
  j["y_grid"] = e.y_grid;
  Json sets = Json::array();
  for (const auto& s : e.sets) {
    sets.push_back({{"id", s.id}, {"lo", s.lo}, {"hi", s.hi}, {"lo_closed", s.lo_closed}, {"hi_closed", s.hi_closed}});
  }
  j["sets"] = sets;
  j["ks"] = e.ks;
  j["tail_samples"] = e.tail_samples;
  j["validation_samples"] = e.validation_samples;
  return j;
}

}  // namespace

Config parse_config(const Json& j) {
  Reader r(j, "config");
  Config c;
  c.system = parse_system(r.raw("system"));
  if (r.has("noise")) c.noise = parse_noise(r.raw("noise"));
  if (c.system.type == "chain" && c.noise) fail("config", "finite chains take no noise block");
  if (c.system.type != "chain" && !c.noise) fail("config", "kicked systems need a noise block");
  c.initial = parse_initial(r.raw("initial"), "initial");
  c.experiment = parse_experiment(r.raw("experiment"));
  c.output = r.get<std::string>("output", c.output);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.workers = r.get<int>("workers", c.workers);
  if (c.workers < 1) fail("config.workers", "must be >= 1");
  r.finish();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(kModule, "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigurationError(kModule, "'" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

Json to_json(const Config& c) {
  Json j = hashed_json(c);
  j["output"] = c.output;
  j["workers"] = c.workers;
  return j;
}

Json hashed_json(const Config& c) {
  Json j;
  j["system"] = system_json(c.system);
  if (c.noise) j["noise"] = noise_json(*c.noise);
  j["initial"] = initial_json(c.initial);
  j["experiment"] = experiment_json(c.experiment);
  j["seed"] = c.seed;
  return j;
}

}  // namespace kicklab::cli
