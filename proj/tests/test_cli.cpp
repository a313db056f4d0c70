#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "config.hpp"
#include "kicklab/errors.hpp"
#include "runner.hpp"

using namespace kicklab;
using namespace kicklab::cli;

namespace {

Json linear_config(const std::string& experiment) {
  return Json::parse(R"({
    "system": {"type": "linear", "dim": 1, "a": 0.5},
    "noise": {"rule": "explicit", "b": [1.0], "family": "gaussian", "delta": 0.1},
    "initial": {"kind": "point", "point": [-2.0]},
    "experiment": )" + experiment + R"(,
    "seed": 9
  })");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config round trip is the identity") {
  const Json inputs[] = {
      linear_config(R"({"type": "mix", "K": 5, "M": 100, "initial_b": {"kind": "point", "point": [2.0]}})"),
      Json::parse(R"({
        "system": {"type": "chain", "P": [[0.9, 0.1], [0.3, 0.7]], "f": [0, 1], "labels": ["a", "b"]},
        "initial": {"kind": "categorical", "probs": [0.5, 0.5]},
        "experiment": {"type": "ldp", "betas": [-1, 0, 1], "y_grid": [0.5],
                       "sets": [{"id": "hi", "lo": 0.6, "hi": 1, "lo_closed": false}], "ks": [10, 20]},
        "output": "somewhere", "workers": 2
      })"),
      Json::parse(R"({
        "system": {"type": "ginzburg_landau", "modes": 4, "q": 0.9,
                   "constants": {"alpha": 4, "beta": 4, "c_phi": 3, "q": 0.8}},
        "noise": {"rule": "power", "b0": 0.5, "exponent": 1.5, "family": "bump"},
        "initial": {"kind": "gaussian", "mean": [0, 0], "scales": [1, 1], "delta": 0.1, "m_bound": 3},
        "experiment": {"type": "validate"}
      })"),
  };
  for (const auto& j : inputs) {
    const Config a = parse_config(j);
    const Json once = to_json(a);
    const Config b = parse_config(once);
    CHECK(to_json(b).dump() == once.dump());
    CHECK(hashed_json(b).dump() == hashed_json(a).dump());
  }
}

TEST_CASE("config parsing rejects bad input") {
  Json j = linear_config(R"({"type": "validate"})");
  j["system"]["constants"] = {{"alpha", 2}, {"beta", 2}, {"c_phi", 2}, {"q", 1.0}};
  CHECK_THROWS_AS(parse_config(j), ConfigurationError);

  Json gl = Json::parse(R"({"system": {"type": "ginzburg_landau", "q": 1.5},
                            "noise": {"b": [1]}, "initial": {"kind": "point", "point": []},
                            "experiment": {"type": "validate"}})");
  CHECK_THROWS_AS(parse_config(gl), ConfigurationError);

  Json unknown = linear_config(R"({"type": "validate", "colour": "red"})");
  CHECK_THROWS_AS(parse_config(unknown), ConfigurationError);

  Json chain_with_noise = Json::parse(R"({"system": {"type": "chain", "P": [[1]], "f": [0]},
                                          "noise": {"b": [1]}, "initial": {"kind": "point", "point": [0]},
                                          "experiment": {"type": "validate"}})");
  CHECK_THROWS_AS(parse_config(chain_with_noise), ConfigurationError);
  CHECK_THROWS_AS(parse_config(linear_config(R"({"type": "dance"})")), ConfigurationError);
}

TEST_CASE("linear test map passes every hypothesis check") {
  const Config c = parse_config(linear_config(R"({"type": "validate", "validation_samples": 500})"));
  const Json report = validate_conditions(c, build_model(c));
  CHECK(report.at("passed").get<bool>());
  for (const auto& check : report.at("checks")) {
    INFO(check.dump());
    CHECK(check.at("passed").get<bool>());
  }
  const auto outcome = execute(c);
  CHECK(outcome.exit_code == 0);
  CHECK(outcome.files.count("conditions_report.json") == 1);
}

TEST_CASE("ldp with a zero kick coefficient is refused") {
  Json j = linear_config(R"({"type": "ldp", "observable": {"name": "coord:1"}, "betas": [-0.2, 0, 0.2],
                             "y_grid": [0.5], "sets": [{"id": "s", "lo": 0.5, "hi": 2}], "ks": [10]})");
  j["system"]["dim"] = 2;
  j["noise"]["b"] = {0.0, 1.0};
  j["initial"]["point"] = {0.0, 0.0};
  const Config c = parse_config(j);
  try {
    execute(c);
    FAIL("expected a validation error");
  } catch (const ConfigurationError& e) {
    CHECK(std::string(e.what()).find("b_1 is zero") != std::string::npos);
    CHECK(std::string(e.what()).find("non-zero") != std::string::npos);
    CHECK(exit_code_for(e.kind()) == 2);
  }

  Config to_disk = c;
  to_disk.output = (std::filesystem::temp_directory_path() / "kicklab_cli_refused").string();
  std::filesystem::remove_all(to_disk.output);
  std::string message;
  CHECK(run(to_disk, &message) == 2);
  CHECK(message.find("non-zero") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(std::filesystem::path(to_disk.output) / "results.json"));
}

TEST_CASE("mix writes the curve and the fitted rate") {
  Config c = parse_config(
      linear_config(R"({"type": "mix", "K": 8, "M": 4000, "initial_b": {"kind": "point", "point": [2.0]}})"));
  const auto outcome = execute(c);
  REQUIRE(outcome.files.count("mixing_curve.csv") == 1);
  CHECK(outcome.files.at("mixing_curve.csv").rfind("k,d_k,stderr\n", 0) == 0);
  const Json results = Json::parse(outcome.files.at("results.json"));
  const double gamma = results.at("results").at("gamma_hat").get<double>();
  CHECK(gamma > 0.5);
  CHECK(gamma < 0.9);
  const Json manifest = Json::parse(outcome.files.at("manifest.json"));
  CHECK(manifest.at("seed").get<std::uint64_t>() == 9);
  CHECK(manifest.at("config_hash").get<std::string>() == fnv1a_hex(hashed_json(c).dump()));
}

TEST_CASE("reruns are byte-identical and independent of the worker count") {
  const char* experiments[] = {
      R"({"type": "mix", "K": 6, "M": 3000, "initial_b": {"kind": "point", "point": [2.0]}})",
      R"({"type": "simulate", "K": 10, "M": 600, "u0": [5.0], "horizon": 100})",
      R"({"type": "couple", "u0": [1.0], "u0_prime": [-1.0], "horizon": 6, "runs": 3000,
          "calibration_pairs": 200, "verification_pairs": 600})",
      R"({"type": "rate", "M": 3000, "k_grid": [4, 8, 12], "observable": {"name": "coord:0"},
          "betas": [-0.2, 0, 0.2], "y_grid": [0.1]})",
  };
  for (const char* e : experiments) {
    INFO(e);
    Config c = parse_config(linear_config(e));
    const auto first = execute(c);
    const auto again = execute(c);
    c.workers = 3;
    const auto threaded = execute(c);
    REQUIRE(first.files.size() == threaded.files.size());
    for (const auto& [name, body] : first.files) {
      INFO(name);
      CHECK(again.files.at(name) == body);
      CHECK(threaded.files.at(name) == body);
    }
  }
}

TEST_CASE("run writes only inside the output directory") {
  namespace fs = std::filesystem;
  Config c = parse_config(linear_config(R"({"type": "validate", "validation_samples": 200})"));
  const fs::path dir = fs::temp_directory_path() / "kicklab_cli_out";
  fs::remove_all(dir);
  c.output = dir.string();
  CHECK(run(c) == 0);
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) names.insert(entry.path().filename().string());
  CHECK(names == std::set<std::string>{"conditions_report.json", "manifest.json", "results.json"});
  const Json manifest = Json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("code_version").get<std::string>() == kCodeVersion);
  fs::remove_all(dir);
}
