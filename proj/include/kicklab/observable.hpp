#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>

#include "kicklab/core_model.hpp"

namespace kicklab {

/// A real function of a window (u^1, ..., u^ell) of consecutive states.
///
/// Cylindrical observables F(P_N u) depend only on the first `coords`
/// coordinates of each component; chain-state observables read the state index
/// stored in coordinate 0. `sup_bound` is the declared sup norm, infinite for
/// unbounded observables of moderate growth.
struct ObservableSpec {
  enum class Kind { kCylindrical, kCatalogue, kChainState };

  Kind kind = Kind::kCylindrical;
  std::string name;
  int ell = 1;
  int coords = -1;  // leading coordinates read by a cylindrical observable; -1 otherwise
  double sup_bound = std::numeric_limits<double>::infinity();
  std::function<double(std::span<const StateVector>)> eval;

  double operator()(std::span<const StateVector> window) const { return eval(window); }
  double operator()(const StateVector& u) const { return eval(std::span<const StateVector>(&u, 1)); }
  bool bounded() const { return sup_bound < std::numeric_limits<double>::infinity(); }
};

/// f = c.
ObservableSpec constant_observable(double c);

/// f(u) = scale * u_j on the last window component; depends on the first j + 1 coordinates.
ObservableSpec coordinate_observable(int j, double scale = 1.0);

/// f(u) = F(first `coords` coefficients of the last window component), |F| <= bound.
ObservableSpec cylindrical_observable(std::string name, int coords, std::function<double(const Vector&)> F,
                                      double bound = std::numeric_limits<double>::infinity());

/// Named entry of the system catalogue ("energy" is always available).
ObservableSpec catalogue_observable(const SystemSpec& spec, const std::string& name);

/// f(state i) = values[i] for finite chains.
ObservableSpec chain_observable(Vector values, std::string name = "chain_f");

/// beta * f.
ObservableSpec scaled_observable(const ObservableSpec& f, double beta);

/// Sum over the window of f applied to each component: (u^1..u^ell) -> sum_j f(u^j).
ObservableSpec window_sum_observable(const ObservableSpec& f, int ell);

/// Perturbs the coordinates beyond the declared cylinder on random states and
/// returns the largest change in value (0 for a genuine cylindrical function).
double cylindrical_probe(const ObservableSpec& f, const SystemSpec& spec, int n_probes, std::uint64_t seed);

}  // namespace kicklab
