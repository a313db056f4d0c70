#include "kicklab/observable.hpp"

#include <algorithm>
#include <cmath>

#include "kicklab/errors.hpp"
#include "kicklab/systems.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "feynman_kac";

const StateVector& last(std::span<const StateVector> w) { return w.back(); }

}  // namespace

ObservableSpec constant_observable(double c) {
  ObservableSpec f;
  f.kind = ObservableSpec::Kind::kCylindrical;
  f.name = "constant";
  f.coords = 0;
  f.sup_bound = std::abs(c);
  f.eval = [c](std::span<const StateVector>) { return c; };
  return f;
}

ObservableSpec coordinate_observable(int j, double scale) {
  if (j < 0) throw ConfigurationError(kModule, "coordinate index must be non-negative");
  ObservableSpec f;
  f.kind = ObservableSpec::Kind::kCylindrical;
  f.name = "coord:" + std::to_string(j);
  f.coords = j + 1;
  f.eval = [j, scale](std::span<const StateVector> w) {
    const StateVector& u = last(w);
    if (j >= u.size()) throw ConfigurationError(kModule, "coordinate observable beyond the state dimension");
    return scale * u.coeffs[j];
  };
  return f;
}

ObservableSpec cylindrical_observable(std::string name, int coords, std::function<double(const Vector&)> F,
                                      double bound) {
  if (coords < 0) throw ConfigurationError(kModule, "cylinder dimension must be non-negative");
  ObservableSpec f;
  f.kind = ObservableSpec::Kind::kCylindrical;
  f.name = std::move(name);
  f.coords = coords;
  f.sup_bound = bound;
  f.eval = [coords, F = std::move(F)](std::span<const StateVector> w) {
    const StateVector& u = last(w);
    return F(u.coeffs.head(std::min<Eigen::Index>(coords, u.coeffs.size())));
  };
  return f;
}

ObservableSpec catalogue_observable(const SystemSpec& spec, const std::string& name) {
  const auto table = observables(spec);
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigurationError(kModule, "system " + spec.name + " has no observable '" + name + "'");
  if (name.rfind("coord:", 0) == 0) return coordinate_observable(std::stoi(name.substr(6)));
  ObservableSpec f;
  f.kind = ObservableSpec::Kind::kCatalogue;
  f.name = name;
  f.eval = [g = it->second](std::span<const StateVector> w) { return g(last(w)); };
  return f;
}

ObservableSpec chain_observable(Vector values, std::string name) {
  ObservableSpec f;
  f.kind = ObservableSpec::Kind::kChainState;
  f.name = std::move(name);
  f.sup_bound = values.cwiseAbs().maxCoeff();
  f.eval = [values = std::move(values)](std::span<const StateVector> w) {
    const auto i = static_cast<Eigen::Index>(last(w).coeffs[0]);
    if (i < 0 || i >= values.size()) throw ConfigurationError(kModule, "chain state outside the observable table");
    return values[i];
  };
  return f;
}

ObservableSpec scaled_observable(const ObservableSpec& f, double beta) {
  ObservableSpec g = f;
  g.name = std::to_string(beta) + "*" + f.name;
  g.sup_bound = std::abs(beta) * f.sup_bound;
  if (beta == 0.0) g.sup_bound = 0.0;
  g.eval = [beta, e = f.eval](std::span<const StateVector> w) { return beta * e(w); };
  return g;
}

ObservableSpec window_sum_observable(const ObservableSpec& f, int ell) {
  if (f.ell != 1) throw ConfigurationError(kModule, "window sums need a single-state observable");
  if (ell < 1) throw ConfigurationError(kModule, "window length must be >= 1");
  ObservableSpec g = f;
  g.ell = ell;
  g.name = "window_sum(" + f.name + ")";
  g.sup_bound = ell * f.sup_bound;
  g.eval = [e = f.eval](std::span<const StateVector> w) {
    double s = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) s += e(w.subspan(j, 1));
    return s;
  };
  return g;
}

double cylindrical_probe(const ObservableSpec& f, const SystemSpec& spec, int n_probes, std::uint64_t seed) {
  if (f.kind != ObservableSpec::Kind::kCylindrical || f.coords < 0) {
    throw ConfigurationError(kModule, "observable '" + f.name + "' is not declared cylindrical");
  }
  const int head = std::min(f.coords, spec.n_dim);
  double worst = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    Stream stream(seed, static_cast<std::uint64_t>(i), 0, StreamPurpose::kSampler);
    std::vector<StateVector> w;
    for (int j = 0; j < f.ell; ++j) w.push_back(random_state(spec, stream, 1.0 + 2.0 * stream.uniform()));
    std::vector<StateVector> v = w;
    for (auto& s : v) {
      for (int c = head; c < spec.n_dim; ++c) s.coeffs[c] += stream.normal();
    }
    worst = std::max(worst, std::abs(f(w) - f(v)));
  }
  return worst;
}

}  // namespace kicklab
