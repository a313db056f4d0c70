#include <doctest.h>

#include <cmath>

#include "kicklab/errors.hpp"
#include "kicklab/ldp.hpp"

using namespace kicklab;

namespace {

Vector two(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (int i = 0; lo + i * step <= hi + 1e-12; ++i) g.push_back(lo + i * step);
  return g;
}

// Relative entropy of Bernoulli(y) with respect to Bernoulli(1/2).
double bernoulli_rate(double y) {
  auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
  return xlogx(y) + xlogx(1.0 - y) + std::log(2.0);
}

double bernoulli_pressure(double b) { return std::log((1.0 + std::exp(b)) / 2.0); }

}  // namespace

TEST_CASE("legendre transform of the fair coin pressure") {
  const auto betas = grid(-20.0, 20.0, 0.5);
  const auto r = legendre_1d(betas, bernoulli_pressure, 0.75);
  CHECK(std::abs(r.value - 0.130812) <= 1e-4);
  CHECK(std::abs(r.value - bernoulli_rate(0.75)) <= 1e-10);
  CHECK(std::abs(r.beta_star - std::log(3.0)) <= 1e-5);
  CHECK_FALSE(r.extrapolated);
  // At the edge of the range the supremum is approached as beta grows.
  CHECK(std::abs(legendre_1d(betas, bernoulli_pressure, 1.0).value - std::log(2.0)) <= 1e-8);
  CHECK(legendre_1d(betas, bernoulli_pressure, 1.5).extrapolated);
}

TEST_CASE("legendre transform of a quadratic and its inverse") {
  const auto betas = grid(-10.0, 10.0, 0.25);
  auto Q = [](double b) { return 0.5 * b * b; };
  for (double y : {-2.0, 0.0, 0.3, 3.0}) CHECK(std::abs(legendre_1d(betas, Q, y).value - 0.5 * y * y) <= 1e-10);
  // Round trip: the conjugate of the rate function returns the pressure.
  const auto ys = grid(-6.0, 6.0, 0.05);
  auto I = [&](double y) { return legendre_1d(betas, Q, y).value; };
  for (double b : {-1.0, 0.4, 2.0}) CHECK(std::abs(legendre_1d(ys, I, b).value - Q(b)) <= 1e-4);
  // Round trip on the coin.
  const auto coin_betas = grid(-15.0, 15.0, 0.25);
  auto Ic = [&](double y) { return legendre_1d(coin_betas, bernoulli_pressure, y).value; };
  const auto y01 = grid(1e-9, 1.0 - 1e-9, (1.0 - 2e-9) / 400.0);
  for (double b : {-1.0, 0.5, 2.0}) CHECK(std::abs(legendre_1d(y01, Ic, b).value - bernoulli_pressure(b)) <= 1e-4);
}

TEST_CASE("non-convex pressures are rejected") {
  const auto betas = grid(-2.0, 2.0, 0.5);
  CHECK_THROWS_AS(legendre_1d(betas, [](double b) { return std::sin(3.0 * b); }, 0.1), PreconditionError);
  std::vector<double> q(betas.size(), 0.0);
  q[4] = 0.1;
  CHECK_THROWS_AS(legendre_1d(betas, q, 0.0), PreconditionError);
  const auto c = convexity_midpoint(betas, q);
  CHECK_FALSE(c.convex);
  CHECK(c.worst_index == 4);
}

TEST_CASE("pressure of a shifted and perturbed potential") {
  Matrix P(3, 3);
  P << 0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5;
  const FiniteChain chain = make_chain(P);
  Vector V(3), W(3);
  V << 0.3, -1.0, 0.7;
  W << 0.1, 0.4, -0.2;
  const double q = exact_pressure(chain, V);
  for (double c : {-1.0, 0.5}) CHECK(std::abs(exact_pressure(chain, V + Vector::Constant(3, c)) - (q + c)) <= 1e-12);
  CHECK(std::abs(exact_pressure(chain, V + W) - q) <= W.cwiseAbs().maxCoeff() + 1e-12);
}

TEST_CASE("rate function of a finite chain and the Monte Carlo estimate") {
  const FiniteChain chain = two_state_iid(0.5);
  const auto betas = grid(-2.0, 2.0, 0.25);
  const auto exact = rate_from_chain(chain, chain.f, betas);
  CHECK(exact.convex);
  CHECK(std::abs(exact.y_star - 0.5) <= 1e-12);
  CHECK(rate_infimum(exact, Interval{0.3, 0.7}) == 0.0);

  std::vector<int> ks;
  for (int k = 1; k <= 40; ++k) ks.push_back(k);
  const auto mc = rate_from_pressure(chain, InitialLaw::categorical(two(0.5, 0.5)), chain_observable(chain.f), betas,
                                     ks, 20000, 11);
  CHECK(mc.convex);
  for (double y : {0.25, 0.5, 0.75}) {
    INFO("y = " << y);
    CHECK(std::abs(mc.at(y).value - bernoulli_rate(y)) <= 0.01);
  }
}

TEST_CASE("exact binomial tail decays at the rate") {
  const FiniteChain chain = two_state_iid(0.5);
  const Interval upper{0.75, 1.0, true, true, "upper"};
  const auto t = tail_probability_exact(chain, two(0.5, 0.5), 400, upper);
  CHECK(t.exact);
  CHECK(std::abs(t.exponent - bernoulli_rate(0.75)) <= 0.03);
  // The whole range has probability one; a point set has a binomial mass.
  CHECK(std::abs(tail_probability_exact(chain, two(0.5, 0.5), 10, Interval{0.0, 1.0}).probability - 1.0) <= 1e-12);
  CHECK(std::abs(tail_probability_exact(chain, two(1.0, 0.0), 3, Interval{0.0, 0.0}).probability - 0.25) <= 1e-12);
  // Exponents approach the rate from above as k grows.
  double prev = 1e300;
  for (int k : {100, 200, 400, 800}) {
    const double e = tail_probability_exact(chain, two(0.5, 0.5), k, upper).exponent;
    CHECK(e < prev);
    CHECK(e > bernoulli_rate(0.75));
    prev = e;
  }
}

TEST_CASE("Monte Carlo tail agrees with the exact tail") {
  const FiniteChain chain = two_state_iid(0.5);
  const auto ens = simulate(chain, InitialLaw::categorical(two(0.5, 0.5)), 40000, 20, 5);
  const Interval upper{0.7, 1.0, true, true, "upper"};
  const auto mc = tail_probability(ens, chain_observable(chain.f), 20, upper);
  const auto ex = tail_probability_exact(chain, two(0.5, 0.5), 20, upper);
  CHECK(mc.wilson_lo <= ex.probability);
  CHECK(ex.probability <= mc.wilson_hi);
  const auto none = tail_probability(ens, chain_observable(chain.f), 20, Interval{1.5, 2.0});
  CHECK(none.hits == 0);
  CHECK(none.one_sided);
  CHECK(none.exponent > 0.0);
}

TEST_CASE("large deviation sandwich on the fair coin") {
  const FiniteChain chain = two_state_iid(0.5);
  const auto rate = rate_from_chain(chain, chain.f, grid(-20.0, 20.0, 0.01));
  const std::vector<Interval> family = {{0.7, 1.0, true, true, "upper"},
                                        {0.0, 0.2, false, true, "lower"},
                                        {0.4, 0.6, true, true, "centre"}};
  const auto report = ldp_report(rate, family, {200, 400, 800}, [&](const Interval& g, int k) {
    return tail_probability_exact(chain, two(0.5, 0.5), k, g);
  });
  REQUIRE(report.rows.size() == 9);
  for (const auto& row : report.rows) {
    INFO(row.gamma_id << " k = " << row.k);
    CHECK(row.rate_bound_interior == doctest::Approx(row.rate_bound_closure));
    // Polynomial prefactors shrink like log(k) / k.
    CHECK(std::abs(row.exponent_hat - row.rate_bound_closure) <= 2.0 * std::log(row.k) / row.k);
  }
  // Sampled pressures are interpolated linearly: the error is O(step^2).
  CHECK(std::abs(report.rows[0].rate_bound_closure - bernoulli_rate(0.7)) <= 1e-5);
  CHECK(report.rows[6].rate_bound_closure == 0.0);
}

TEST_CASE("constant observable has a degenerate rate function") {
  const FiniteChain chain = two_state_iid(0.5);
  const auto rate = rate_from_chain(chain, Vector::Constant(2, 0.4), grid(-5.0, 5.0, 0.5));
  CHECK(std::abs(rate.at(0.4).value) <= 1e-12);
  const auto off = rate.at(0.5);
  CHECK(off.extrapolated);
  CHECK(off.value >= 0.49);  // grows without bound with the beta range
}

TEST_CASE("equilibrium state of a tilted two-state chain") {
  Matrix P(2, 2);
  P << 0.5, 0.5, 0.5, 0.5;
  const FiniteChain chain = make_chain(P);
  const Vector V = two(0.0, std::log(3.0));
  const auto r = equilibrium_check(chain, V);
  CHECK(std::abs(r.lambda - 2.0) <= 1e-10);
  CHECK(std::abs(r.nu[1] - 0.75) <= 1e-10);
  CHECK(r.stationarity_defect <= 1e-10);
  CHECK(std::abs(r.energy - 0.75 * std::log(3.0)) <= 1e-10);
  CHECK(std::abs(r.entropy - bernoulli_rate(0.75)) <= 1e-8);
  CHECK(std::abs(r.defect) <= 1e-4);
  CHECK(r.perturbed_defects.size() == 100);
  CHECK(r.min_perturbed_defect > 0.0);
  CHECK(r.unique);
}

TEST_CASE("equilibrium state of a three-state chain") {
  Matrix P(3, 3);
  P << 0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5;
  const FiniteChain chain = make_chain(P);
  Vector V(3);
  V << 0.3, -1.0, 0.7;
  const auto r = equilibrium_check(chain, V, 30);
  CHECK(std::abs(r.defect) <= 1e-4);
  CHECK(r.min_perturbed_defect > 0.0);
  CHECK(r.unique);
  // The level-2 rate vanishes at the stationary law only.
  const Vector pi = exact_stationary(chain);
  CHECK(std::abs(chain_level2_rate(chain, pi)) <= 1e-8);
  Vector other(3);
  other << 0.5, 0.25, 0.25;
  CHECK(chain_level2_rate(chain, other) > 1e-3);
}

TEST_CASE("streamed tail frequencies match the stored ensemble") {
  const FiniteChain chain = two_state_iid(0.3);
  const InitialLaw init = InitialLaw::categorical(two(0.5, 0.5));
  const auto f = chain_observable(chain.f);
  const std::vector<Interval> sets = {{0.5, 1.0, true, true, "a"}, {0.0, 0.2, true, false, "b"}};
  const std::vector<int> ks = {5, 12};
  const auto streamed = tail_probabilities(chain, init, f, sets, ks, 3000, 8, 3);
  const auto ens = simulate(chain, init, 3000, 12, 8);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      CHECK(streamed[s][i].hits == tail_probability(ens, f, ks[i], sets[s]).hits);
    }
  }
}
