#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kicklab/markov.hpp"
#include "kicklab/noise.hpp"
#include "kicklab/oracle_chain.hpp"
#include "kicklab/systems.hpp"

namespace kicklab::cli {

using Json = nlohmann::ordered_json;

struct SystemConfig {
  std::string type = "linear";  // linear | navier_stokes | ginzburg_landau | chain
  LinearTestParams linear;
  NavierStokesParams ns;
  GinzburgLandauParams gl;
  Matrix P;                     // chain
  Vector f;                     // chain
  std::vector<std::string> labels;
  std::optional<DissipativityConstants> constants;  // overrides the system's own
};

struct NoiseConfig {
  KickRule rule;
  DensityFamily family = DensityFamily::kGaussian;
  double delta = 0.1;
};

/// Catalogue name (kicked systems) or per-state values (chains), times a scale.
struct ObservableConfig {
  std::string name = "energy";
  Vector values;
  double scale = 1.0;
};

struct IntervalConfig {
  std::string id;
  double lo = 0.0;
  double hi = 0.0;
  bool lo_closed = true;
  bool hi_closed = true;
};

struct ExperimentConfig {
  std::string type = "validate";  // simulate | mix | couple | pressure | rate | ldp | validate
  int K = 50;
  std::size_t M = 10000;
  std::vector<std::string> observables;  // simulate
  double radius = 2.0;                   // simulate: hitting-time ball B_U(radius)
  double gamma = 0.1;                    // simulate: exponent of the hitting-time moment
  std::optional<InitialLaw> initial_b;   // mix
  int bootstrap = 20;
  int fit_begin = 1;
  int N = 1;                             // couple
  Vector u0;
  Vector u0_prime;
  int horizon = 20;
  std::size_t runs = 10000;
  std::size_t calibration_pairs = 1000;
  std::size_t verification_pairs = 10000;
  ObservableConfig observable;           // pressure, rate, ldp
  std::vector<int> k_grid;
  std::vector<double> betas;             // rate, ldp
  std::vector<double> y_grid;
  std::vector<IntervalConfig> sets;      // ldp
  std::vector<int> ks;
  std::size_t tail_samples = 100000;
  std::size_t validation_samples = 2000;
};

struct Config {
  SystemConfig system;
  std::optional<NoiseConfig> noise;  // absent for chains
  InitialLaw initial;
  ExperimentConfig experiment;
  std::string output = "out";
  std::uint64_t seed = 1;
  int workers = 1;
};

/// Strict parse: unknown keys and out-of-range values raise ConfigurationError.
Config parse_config(const Json& j);
Config load_config(const std::string& path);
/// Canonical form with every field written out.
Json to_json(const Config& config);
/// Canonical form without the run-only fields (output, workers), used for hashing.
Json hashed_json(const Config& config);

}  // namespace kicklab::cli
