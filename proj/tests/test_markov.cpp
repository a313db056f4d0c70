#include <doctest.h>

#include <chrono>
#include <cmath>

#include "kicklab/errors.hpp"
#include "kicklab/markov.hpp"
#include "kicklab/systems.hpp"

using namespace kicklab;

namespace {

KickedSystem linear_system(double a, double b) {
  return make_kicked(make_linear_test({1, a, {}}), KickLaw{{b}, DensityFamily::kGaussian, 0.1});
}

Vector scalar(double x) { return Vector::Constant(1, x); }

EmpiricalLaw1D uniform_law(std::vector<double> xs) { return empirical_1d(xs); }

}  // namespace

TEST_CASE("zero kicks give the deterministic orbit") {
  const Model model = linear_system(0.5, 0.0);
  const auto ens = simulate(model, InitialLaw::point_mass(scalar(1.0)), 3, 20, 7);
  for (int k = 0; k <= 20; ++k) CHECK(ens.at(2, k).coeffs[0] == std::ldexp(1.0, -k));
}

TEST_CASE("ensembles are reproducible and worker independent") {
  const Model model = linear_system(0.5, 1.0);
  const auto init = InitialLaw::gaussian(scalar(0.0), scalar(1.0));
  const auto a = simulate(model, init, 50, 10, 99, 1);
  const auto b = simulate(model, init, 50, 10, 99, 3);
  CHECK(a.states == b.states);
  const auto c = simulate(model, init, 50, 10, 100, 1);
  CHECK_FALSE(a.states == c.states);
}

TEST_CASE("AR(1) stationary second moment") {
  // M K = 10^6 states after a burn-in; per-trajectory means are independent.
  const double a = 0.5;
  const Model model = linear_system(a, 1.0);
  const auto ens = simulate(model, InitialLaw::burned_in(scalar(0.0), 40), 10000, 100, 3);
  MeanAccumulator acc;
  for (std::size_t m = 0; m < ens.M; ++m) {
    double s = 0.0;
    for (int k = 1; k <= ens.K; ++k) s += ens.at(m, k).coeffs[0] * ens.at(m, k).coeffs[0];
    acc.add(s / ens.K);
  }
  CHECK(std::abs(acc.mean - 1.0 / (1.0 - a * a)) <= 3.0 * acc.stderr_());
}

TEST_CASE("window process enumeration and shift relation") {
  const Model model = linear_system(0.5, 1.0);
  const auto ens = simulate(model, InitialLaw::point_mass(scalar(1.0)), 4, 3, 1);
  const auto one = ell_process(ens, 1);
  CHECK(one.windows_per_path() == 4);
  CHECK(one.window(1, 2)[0] == ens.at(1, 2));
  const auto two = ell_process(ens, 2);
  CHECK(two.windows_per_path() == 3);
  for (std::size_t m = 0; m < ens.M; ++m) {
    for (int j = 0; j < 3; ++j) {
      CHECK(two.window(m, j)[0] == ens.at(m, j));
      CHECK(two.window(m, j)[1] == ens.at(m, j + 1));
    }
  }
  const auto ens_long = simulate(model, InitialLaw::point_mass(scalar(1.0)), 5, 30, 2);
  const auto three = ell_process(ens_long, 3);
  for (std::size_t m = 0; m < ens_long.M; ++m) {
    for (int j = 1; j < three.windows_per_path(); ++j) {
      for (int c = 0; c + 1 < 3; ++c) CHECK(three.window(m, j)[static_cast<std::size_t>(c)] == three.window(m, j - 1)[static_cast<std::size_t>(c) + 1]);
    }
  }
  CHECK_THROWS_AS(ell_process(ens, 5), ConfigurationError);
}

TEST_CASE("occupation measures") {
  const Model model = linear_system(0.5, 1.0);
  const auto ens = simulate(model, InitialLaw::point_mass(scalar(1.0)), 2, 40, 5);
  const auto single = occupation_measure(ens, 0, 1, 1);
  CHECK(single.support_size() == 1);
  CHECK(single.weight(0) == 1.0);
  const auto two = occupation_measure(ens, 1, 2, 39);
  CHECK(two.total_weight() == 1.0);
  CHECK(two.integrate(window_sum_observable(constant_observable(1.0), 2)) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(occupation_measure(ens, 1, 1, 41).integrate(constant_observable(1.0)) == doctest::Approx(1.0).epsilon(1e-15));

  // Two-state chain: the pushforward is the empirical frequency vector.
  const FiniteChain chain = two_state_iid();
  const Model cm = chain;
  const auto cens = simulate(cm, InitialLaw::categorical(Vector::Constant(2, 0.5)), 1, 999, 4);
  const ObservableSpec f = chain_observable(chain.f);
  const auto occ = occupation_measure(cens, 0, 1, 1000, &f);
  CHECK(occ.values.size() == 2);
  CHECK(occ.counts[0] + occ.counts[1] == 1000);
  CHECK(occ.total_weight() == 1.0);
  std::size_t ones = 0;
  for (int k = 0; k <= 999; ++k) ones += cens.at(0, k).coeffs[0] == 1.0;
  CHECK(occ.counts[1] == ones);
}

TEST_CASE("energy occupation converges to the AR(1) moment") {
  const double a = 0.5;
  const Model model = linear_system(a, 1.0);
  const std::size_t k = 200000;
  const auto ens = simulate(model, InitialLaw::burned_in(scalar(0.0), 40), 1, static_cast<int>(k), 8);
  const ObservableSpec energy = coordinate_observable(0);
  const auto occ = occupation_measure(ens, 0, 1, k, &energy);
  const double second = occ.integrate_values([](double v) { return v * v; });
  // Batch means over 100 blocks of 2000 steps for the standard error.
  MeanAccumulator batches;
  for (int b = 0; b < 100; ++b) {
    double s = 0.0;
    for (int j = 0; j < 2000; ++j) {
      const double v = ens.at(0, b * 2000 + j).coeffs[0];
      s += v * v;
    }
    batches.add(s / 2000.0);
  }
  CHECK(std::abs(second - 1.0 / (1.0 - a * a)) <= 3.0 * batches.stderr_());
}

TEST_CASE("dual-Lipschitz two-point values") {
  const auto r1 = dual_lipschitz_1d(uniform_law({0.0}), uniform_law({1.0}));
  CHECK(std::abs(r1.value - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(r1.lipschitz - 2.0 / 3.0) <= 1e-9);
  const auto r10 = dual_lipschitz_1d(uniform_law({0.0}), uniform_law({10.0}));
  CHECK(std::abs(r10.value - 5.0 / 3.0) <= 1e-12);
  CHECK(dual_lipschitz_1d(uniform_law({0.3, 1.0}), uniform_law({1.0, 0.3})).value == 0.0);
  CHECK_THROWS_AS(empirical_1d(std::vector<double>{}), DegenerateInputError);
}

TEST_CASE("dual-Lipschitz values against a linear-programming oracle") {
  // Values from an independent dense LP solve over (f, L).
  struct Case {
    std::vector<double> a, b;
    double value;
  };
  const Case cases[] = {
      {{0.002, 0.448, -0.411, -1.336, -0.682, -1.487}, {0.76, 2.04, 0.208, 0.08, 1.19}, 0.5471056120194432},
      {{0.535, 0.158, -1.396, -0.044, 1.043, -2.016, -0.686},
       {-1.201, -0.59, -1.142, 0.465, -0.567, 0.971, 0.857},
       0.23749875733174264},
      {{-0.28, -3.775, -0.808, -0.073, 0.17, -2.295, -0.717, -1.468},
       {-0.109, 1.761, -0.108, 0.667, 1.584, 0.116, 0.588, 0.81, 0.764},
       0.5830346475507765},
  };
  for (const auto& c : cases) {
    CHECK(std::abs(dual_lipschitz_1d(uniform_law(c.a), uniform_law(c.b)).value - c.value) <= 1e-9);
  }
}

TEST_CASE("dual-Lipschitz distance is a metric on samples") {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    Stream s(17, trial, 0, StreamPurpose::kSampler);
    std::vector<double> x(7), y(5), z(9);
    for (auto& v : x) v = s.normal();
    for (auto& v : y) v = 2.0 * s.normal() + 0.5;
    for (auto& v : z) v = s.normal() - 1.0;
    const auto X = uniform_law(x), Y = uniform_law(y), Z = uniform_law(z);
    const double xy = dual_lipschitz_1d(X, Y).value, yx = dual_lipschitz_1d(Y, X).value;
    CHECK(std::abs(xy - yx) <= 1e-12);
    CHECK(xy <= dual_lipschitz_1d(X, Z).value + dual_lipschitz_1d(Z, Y).value + 1e-12);
  }
}

TEST_CASE("multi-dimensional lower bound") {
  std::vector<StateVector> a, b;
  for (int i = 0; i < 50; ++i) {
    Stream s(3, static_cast<std::uint64_t>(i), 0);
    Vector v(3), w(3);
    for (int j = 0; j < 3; ++j) {
      v[j] = s.normal();
      w[j] = s.normal();
    }
    w[2] += 1.0;
    a.emplace_back(v);
    b.emplace_back(w);
  }
  const auto r = dual_lipschitz_lower_bound(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.value > 0.1);
  CHECK(dual_lipschitz_lower_bound(a, a).value == 0.0);
}

TEST_CASE("mixing rate of the linear map") {
  const Model model = linear_system(0.5, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = mixing_rate(model, InitialLaw::point_mass(scalar(0.0)), InitialLaw::point_mass(scalar(1.0)), 10,
                               100000, 21);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("gamma_hat " << rep.gamma_hat << " over k in [" << rep.fit_begin << ", " << rep.fit_end << "], " << secs
                       << " s");
  CHECK(rep.exact);
  CHECK_FALSE(rep.inconclusive);
  CHECK(rep.strictly_decreasing);
  CHECK(rep.gamma_hat >= 0.6);
  CHECK(rep.gamma_hat <= 0.8);
  CHECK(std::abs(rep.curve[0].distance - 2.0 / 3.0) < 1e-9);

  const auto same = mixing_rate(model, InitialLaw::point_mass(scalar(0.3)), InitialLaw::point_mass(scalar(0.3)), 5,
                                100, 21);
  for (const auto& pt : same.curve) CHECK(pt.distance == 0.0);
  CHECK(same.inconclusive);
}

TEST_CASE("Lyapunov bounds on the linear map") {
  const auto sys = linear_system(0.5, 1.0);
  const auto rep = lyapunov_check(sys, InitialLaw::point_mass(scalar(3.0)), 50, 20000, 4);
  CHECK(rep.violations == 0);
  CHECK(rep.exp_violations == 0);
  // Closed form E Phi(u_k) = 1 + a^{2k} u0^2 + (1 - a^{2k}) / (1 - a^2).
  for (int k : {0, 1, 5, 50}) {
    const double a2k = std::pow(0.25, k);
    const double exact = 1.0 + a2k * 9.0 + (1.0 - a2k) / 0.75;
    const auto& row = rep.rows[static_cast<std::size_t>(k)];
    CHECK(std::abs(row.phi_mean - exact) <= 4.0 * row.phi_stderr + 1e-12);
    CHECK(exact <= row.phi_bound);
  }
  const auto zero = lyapunov_check(linear_system(0.5, 0.0), InitialLaw::point_mass(scalar(2.0)), 10, 10, 4);
  CHECK(zero.violations == 0);
  for (const auto& row : zero.rows) CHECK(row.phi_mean <= row.phi_bound);
}

TEST_CASE("hitting times") {
  const auto sys = linear_system(0.5, 1.0);
  const auto inside = hitting_time_moments(sys, StateVector(scalar(0.1)), 6.0, 0.1, 100, 50, 1);
  CHECK(inside.estimate == 1.0);
  CHECK(inside.mean_tau == 0.0);
  // |u|_U = 2|u|; the stationary law N(0, 4/3) puts mass >= 0.99 in {2|u| <= 6}.
  const auto far = hitting_time_moments(sys, StateVector(scalar(20.0)), 6.0, 0.1, 20000, 200, 2);
  CHECK(far.capped_fraction < 0.01);
  CHECK(far.estimate < 2.0);
  CHECK(far.estimate > 1.0);
  const auto two = hitting_time_moments(sys, StateVector(scalar(20.0)), 6.0, 0.1, 20000, 200, 2, 2);
  CHECK(two.mean_tau >= far.mean_tau);
  const auto growth = hitting_growth_fit(sys, {StateVector(scalar(1.0)), StateVector(scalar(2.0)), StateVector(scalar(4.0))},
                                         2.0, 0.1, 5000, 200, 9);
  CHECK(growth.dominated);
  CHECK(growth.C > 0.0);
}

TEST_CASE("stabilisability fit and tightness") {
  const auto sys = linear_system(0.5, 1.0);
  const auto stab = stabilisability_fit(sys, StateVector(scalar(1.0)), 0.1, 10, 100, 1);
  CHECK(stab.c == 0.0);  // p = 0 for the linear map

  const Model model = sys;
  const auto ens = simulate(model, InitialLaw::burned_in(scalar(0.0), 20), 20000, 30, 6);
  const auto small = tightness_functional(ens, sys.spec, 0.025);
  CHECK_FALSE(small.diverging);
  CHECK(small.fit.r_squared >= 0.99);
  CHECK(small.fit.slope > 0.0);
  const auto half = simulate(model, InitialLaw::burned_in(scalar(0.0), 20), 10000, 30, 6);
  const auto small_half = tightness_functional(half, sys.spec, 0.025);
  CHECK(std::abs(small_half.fit.slope - small.fit.slope) <= 0.05 * small.fit.slope);
  CHECK(tightness_functional(ens, sys.spec, 200.0).diverging);

  const auto fixed = simulate(linear_system(0.5, 0.0), InitialLaw::point_mass(scalar(0.0)), 2, 10, 1);
  const auto flat = tightness_functional(fixed, sys.spec, 0.5);
  CHECK(std::abs(flat.fit.slope) < 1e-15);
}

TEST_CASE("initial law certificates") {
  const auto sys = linear_system(0.5, 1.0);
  const auto cert = certify_initial_law(InitialLaw::gaussian(scalar(0.0), scalar(1.0)), sys, 0.1, 2000, 3);
  // E exp(0.1 (1 + X^2)) for X ~ N(0, 1).
  const double exact = std::exp(0.1) / std::sqrt(0.8);
  CHECK(cert.stable);
  CHECK(std::abs(cert.estimate - exact) <= 3.0 * cert.stderr_);
  CHECK(cert.m_bound >= cert.estimate);
  CHECK_THROWS_AS(sample_initial(InitialLaw::categorical(Vector::Constant(2, 0.5)), Model(sys), 1, 0), ConfigurationError);
}
