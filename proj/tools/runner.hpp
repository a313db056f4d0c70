#pragma once

#include <map>
#include <string>

#include "config.hpp"
#include "kicklab/markov.hpp"

namespace kicklab::cli {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Builds the kicked system or chain described by the system and noise blocks.
Model build_model(const Config& config);

/// Hypothesis checks for the configured system, one entry per check with its
/// margins. report["passed"] is false when any required check fails.
Json validate_conditions(const Config& config, const Model& model);

struct RunOutcome {
  int exit_code = 0;
  std::string message;
  std::map<std::string, std::string> files;  // file name -> contents, written into the output directory
};

/// Runs the configured experiment in memory. Library errors propagate.
RunOutcome execute(const Config& config);

/// execute() plus file emission into config.output. Returns the exit code;
/// on an error no file of this run is left behind.
int run(const Config& config, std::string* message = nullptr);

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace kicklab::cli
