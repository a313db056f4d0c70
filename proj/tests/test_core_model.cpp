#include <doctest.h>

#include <cmath>

#include "kicklab/core_model.hpp"
#include "kicklab/errors.hpp"
#include "kicklab/systems.hpp"

using namespace kicklab;

namespace {

StateVector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return StateVector(v);
}

}  // namespace

TEST_CASE("u_norm takes the sup of weighted tails") {
  const SystemSpec spec = make_linear_test({4, 0.5, {1.0, 2.0, 4.0, 8.0, 16.0}});
  CHECK(u_norm(vec({0, 0, 0, 0}), spec) == 0.0);
  CHECK(u_norm(vec({1, 0, 0, 0}), spec) == 1.0);
  CHECK(u_norm(vec({0, 0, 1, 0}), spec) == 4.0);
  // |e_j|_U = gamma_{j-1}
  CHECK(u_norm(vec({0, 0, 0, 1}), spec) == 8.0);
  CHECK_THROWS_AS(u_norm(vec({1, 2}), spec), ConfigurationError);
}

TEST_CASE("u_norm is a norm dominating gamma_0 |u|") {
  const SystemSpec spec = make_linear_test({4, 0.5, {0.5, 2.0, 2.0, 3.0, 7.0}});
  Stream s(1, 0, 0);
  for (int t = 0; t < 200; ++t) {
    StateVector u = random_state(spec, s, 3.0 * s.uniform(), 1.0);
    StateVector v = random_state(spec, s, 3.0 * s.uniform(), 1.0);
    const double c = 4.0 * s.uniform() - 2.0;
    CHECK(u_norm(StateVector(c * u.coeffs), spec) == doctest::Approx(std::abs(c) * u_norm(u, spec)).epsilon(1e-14));
    CHECK(u_norm(StateVector(u.coeffs + v.coeffs), spec) <= u_norm(u, spec) + u_norm(v, spec) + 1e-14);
    CHECK(u_norm(u, spec) >= 0.5 * u.norm() - 1e-14);
  }
}

TEST_CASE("finalize_system rejects malformed specs") {
  CHECK_THROWS_AS(make_linear_test({2, 0.5, {2.0, 1.0, 3.0}}), ConfigurationError);
  CHECK_THROWS_AS(make_linear_test({2, 0.5, {1.0, 2.0}}), ConfigurationError);
  CHECK_THROWS_AS(make_linear_test({2, 1.0, {}}), ConfigurationError);
  DissipativityConstants c{2.0, 1.0, 1.0, 0.5};
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  c = {2.0, 2.0, 1.0, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
}

TEST_CASE("dissipativity of the linear map") {
  const SystemSpec spec = make_linear_test({1, 0.5, {}});
  CHECK(spec.constants.q == 0.5);
  CHECK(spec.constants.c_phi == 2.0);
  // Grid oracle of (0.5u + v)^2 + 1 <= 0.5 (1 + u^2) + 2 (1 + v^2).
  int grid_violations = 0;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double u = -50.0 + i, v = -50.0 + j;
      const double lhs = 1.0 + (0.5 * u + v) * (0.5 * u + v);
      if (lhs > 0.5 * (1.0 + u * u) + 2.0 * (1.0 + v * v)) ++grid_violations;
    }
  }
  CHECK(grid_violations == 0);
  const PairSampler sampler = [](Stream& s) {
    return std::make_pair(StateVector(Vector::Constant(1, 100.0 * (s.uniform() - 0.5))),
                          StateVector(Vector::Constant(1, 100.0 * (s.uniform() - 0.5))));
  };
  const auto report = check_dissipativity(spec, sampler, 10000, 7);
  CHECK(report.violations == 0);
  CHECK(report.worst_ratio <= 1.0);

  const PairSampler origin = [](Stream&) { return std::make_pair(StateVector(Vector::Zero(1)), StateVector(Vector::Zero(1))); };
  const auto at_origin = check_dissipativity(spec, origin, 5, 1);
  CHECK(at_origin.violations == 0);
  CHECK(at_origin.worst_ratio == doctest::Approx(1.0 / 2.5));
}

TEST_CASE("dissipativity reports non-finite output") {
  SystemSpec spec = make_linear_test({1, 0.5, {}});
  spec.step = [](const StateVector& u) { return StateVector(Vector::Constant(u.size(), NAN)); };
  const PairSampler sampler = [](Stream&) { return std::make_pair(StateVector(Vector::Zero(1)), StateVector(Vector::Zero(1))); };
  CHECK_THROWS_AS(check_dissipativity(spec, sampler, 3, 1), NumericalInstabilityError);
}

TEST_CASE("phi bounds hold for the linear map") {
  const SystemSpec spec = make_linear_test({3, 0.5, {}});
  std::vector<StateVector> states;
  Stream s(3, 0, 0);
  for (int i = 0; i < 100; ++i) states.push_back(random_state(spec, s, 10.0 * s.uniform(), 1.0));
  const auto r = check_phi_bounds(spec, states);
  CHECK(r.lower_violations == 0);
  CHECK(r.upper_violations == 0);
}

TEST_CASE("squeezing defect of the linear map is exactly one") {
  for (double a : {0.5, -0.3, 0.9}) {
    const SystemSpec spec = make_linear_test({3, a, {}});
    std::vector<std::pair<StateVector, StateVector>> pairs;
    Stream s(5, 0, 0);
    for (int i = 0; i < 20; ++i) {
      // Pairs differing only beyond H_1 so the tail difference equals |u - v|.
      StateVector u = random_state(spec, s, 1.0, 1.0);
      StateVector v = u;
      v.coeffs[1] += 0.3;
      v.coeffs[2] -= 0.1;
      pairs.emplace_back(u, v);
    }
    CHECK(check_squeezing(spec, 1, pairs).max_normalized_defect == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(check_squeezing(spec, 3, pairs).max_normalized_defect == 0.0);
  }
  const SystemSpec spec = make_linear_test({1, 0.5, {}});
  std::vector<std::pair<StateVector, StateVector>> same = {{vec({0}), vec({0})}};
  CHECK_THROWS_AS(check_squeezing(spec, 0, same), DegenerateInputError);
  CHECK_THROWS_AS(check_squeezing(spec, 0, {}), ConfigurationError);
}

TEST_CASE("p scale fit is the smallest constant making the defect at most one") {
  SystemSpec spec = make_linear_test({2, 0.5, {4.0, 4.0, 4.0}});
  spec.frak_p = [](const StateVector&) { return 1.0; };
  std::vector<std::pair<StateVector, StateVector>> pairs = {{vec({1, 0}), vec({0, 0})}};
  // Raw defect gamma |a| = 2 at level 0, unit p sum = 2, so C = log 2 / 2.
  CHECK(fit_p_scale(spec, pairs, 1.0) == doctest::Approx(std::log(2.0) / 2.0));
  CHECK(fit_p_scale(spec, pairs, 1.25) == doctest::Approx(1.25 * std::log(2.0) / 2.0));
}

TEST_CASE("Foias-Prodi bound on the linear map is an equality") {
  const double a = 0.5;
  const SystemSpec spec = make_linear_test({2, a, {}});
  CoupledTrajectory traj;
  traj.u.push_back(vec({0.0, 1.0}));
  traj.u_prime.push_back(vec({0.0, -1.0}));
  Stream s(9, 0, 0);
  for (int k = 0; k < 5; ++k) {
    // Both sides share the kick: low modes then agree from step 1 on.
    const StateVector z = vec({s.normal(), s.normal()});
    traj.zeta.push_back(z);
    traj.zeta_prime.push_back(z);
    traj.u.push_back(StateVector(a * traj.u.back().coeffs + z.coeffs));
    traj.u_prime.push_back(StateVector(a * traj.u_prime.back().coeffs + traj.zeta_prime.back().coeffs));
  }
  const auto r = foias_prodi_bound(spec, traj, 1);
  CHECK_FALSE(r.violation);
  CHECK(r.measured == doctest::Approx(std::pow(a, 5) * 2.0).epsilon(1e-12));
  CHECK(r.bound == doctest::Approx(r.measured).epsilon(1e-12));

  CoupledTrajectory same;
  same.u = {vec({1.0, 1.0}), vec({0.5, 0.5})};
  same.u_prime = same.u;
  same.zeta = {vec({0.0, 0.0})};
  same.zeta_prime = same.zeta;
  const auto z = foias_prodi_bound(spec, same, 1);
  CHECK(z.measured == 0.0);
  CHECK(z.bound == 0.0);
  CHECK_FALSE(z.violation);

  CoupledTrajectory broken = traj;
  broken.u_prime[3].coeffs[0] += 1.0;
  try {
    foias_prodi_bound(spec, broken, 1);
    FAIL("expected a precondition error");
  } catch (const PreconditionError& e) {
    CHECK(e.index() == 3);
  }
}
