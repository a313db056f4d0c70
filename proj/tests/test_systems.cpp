#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "kicklab/errors.hpp"
#include "kicklab/systems.hpp"

using namespace kicklab;

namespace {

/// (u . grad) u projected on every basis vector, evaluated on a physical grid
/// fine enough for the trigonometric products to be integrated exactly.
Vector convection_on_grid(const NavierStokesModel& model, const Vector& c) {
  const int g = 32;
  const double h = 2.0 * std::numbers::pi / g;
  const double norm = 1.0 / (std::numbers::pi * std::numbers::sqrt2);
  const auto& basis = model.basis();
  const int n = model.n_dim();
  Vector out = Vector::Zero(n);
  for (int ix = 0; ix < g; ++ix) {
    for (int iy = 0; iy < g; ++iy) {
      const double x = ix * h, y = iy * h;
      double u[2] = {0, 0}, du[2][2] = {{0, 0}, {0, 0}};  // du[l][m] = d_l u_m
      std::vector<double> phi0(static_cast<std::size_t>(n)), phi1(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) {
        const auto& b = basis[static_cast<std::size_t>(j)];
        const double kabs = std::sqrt(b.k2());
        const double e0 = -b.ky / kabs * norm, e1 = b.kx / kabs * norm;
        const double arg = b.kx * x + b.ky * y;
        const double f = b.is_sin ? std::sin(arg) : std::cos(arg);
        const double fp = b.is_sin ? std::cos(arg) : -std::sin(arg);
        phi0[static_cast<std::size_t>(j)] = f * e0;
        phi1[static_cast<std::size_t>(j)] = f * e1;
        u[0] += c[j] * f * e0;
        u[1] += c[j] * f * e1;
        du[0][0] += c[j] * fp * b.kx * e0;
        du[0][1] += c[j] * fp * b.kx * e1;
        du[1][0] += c[j] * fp * b.ky * e0;
        du[1][1] += c[j] * fp * b.ky * e1;
      }
      const double w0 = u[0] * du[0][0] + u[1] * du[1][0];
      const double w1 = u[0] * du[0][1] + u[1] * du[1][1];
      for (int j = 0; j < n; ++j) {
        out[j] += h * h * (w0 * phi0[static_cast<std::size_t>(j)] + w1 * phi1[static_cast<std::size_t>(j)]);
      }
    }
  }
  return out;
}

NavierStokesParams ns_params(double p_scale = 0.05) {
  NavierStokesParams p;
  p.p_scale = p_scale;
  return p;
}

}  // namespace

TEST_CASE("linear step") {
  LinearTestParams p{3, 0.5, {}};
  const StateVector u(Vector::Constant(3, 2.0));
  CHECK(linear_step(p, u).coeffs == Vector::Constant(3, 1.0));
  const SystemSpec spec = make_linear_test(p);
  StateVector v = u;
  for (int i = 0; i < 10; ++i) v = spec.step(v);
  CHECK(v.coeffs.isApprox(std::pow(0.5, 10) * u.coeffs, 1e-15));
  CHECK(spec.s_of_zero_u_norm == 0.0);
}

TEST_CASE("Navier-Stokes basis layout") {
  const NavierStokesModel model(ns_params());
  CHECK(model.n_dim() == 80);
  CHECK(model.eigenvalues().front() == 1.0);
  for (std::size_t i = 1; i < model.eigenvalues().size(); ++i) {
    CHECK(model.eigenvalues()[i] >= model.eigenvalues()[i - 1]);
  }
  CHECK(model.eigenvalues()[8] == 4.0);
  CHECK(model.coordinate_of(0, 1, true) == 3);
}

TEST_CASE("Navier-Stokes convection matches a physical-space evaluation") {
  const NavierStokesModel model(ns_params());
  SystemSpec shape = make_linear_test({model.n_dim(), 0.5, {}});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Stream s(seed, 0, 0);
    const Vector c = random_state(shape, s, 1.5, 0.9).coeffs;
    const Vector expected = convection_on_grid(model, c);
    const Vector got = model.nonlinear_term(c);
    CHECK((got - expected).norm() <= 1e-12 * std::max(1.0, expected.norm()));
    // Energy neutrality <B(u), u> = 0.
    CHECK(std::abs(got.dot(c)) <= 1e-12);
  }
}

TEST_CASE("Navier-Stokes step examples") {
  const SystemSpec spec = make_navier_stokes(ns_params());
  const NavierStokesModel model(ns_params());
  const StateVector zero = StateVector::zero(80, BasisId::kStokesTorus);
  CHECK(spec.step(zero).coeffs.norm() == 0.0);

  // Shear flow (A sin y, 0): the convection term vanishes and the mode decays like e^{-nu}.
  const double amp = 2.0;
  StateVector shear = zero;
  shear.coeffs[model.coordinate_of(0, 1, true)] = -amp * std::numbers::pi * std::numbers::sqrt2;
  CHECK(model.nonlinear_term(shear.coeffs).norm() <= 1e-14);
  const StateVector s1 = spec.step(shear);
  CHECK(s1.norm() == doctest::Approx(std::exp(-0.1) * shear.norm()).epsilon(1e-6));
  CHECK(model.enstrophy(shear.coeffs) == doctest::Approx(shear.coeffs.squaredNorm()));
  CHECK(observables(spec).at("enstrophy")(shear) == doctest::Approx(shear.coeffs.squaredNorm()));

  Stream s(11, 0, 0);
  for (int i = 0; i < 5; ++i) {
    const StateVector u = random_state(spec, s, 0.5 + i);
    const StateVector su = spec.step(u);
    CHECK(su.norm() <= std::exp(-0.1) * u.norm() * (1.0 + 1e-9));
    CHECK(spec.step(u) == su);
  }
}

TEST_CASE("Navier-Stokes energy balance and integrator order") {
  const NavierStokesModel model(ns_params());
  SystemSpec shape = make_linear_test({model.n_dim(), 0.5, {}});
  Stream s(13, 0, 0);
  const StateVector u(random_state(shape, s, 2.0).coeffs, BasisId::kStokesTorus);
  CHECK(model.energy_diagnostics(u).max_energy_residual < 1e-6);

  auto at_dt = [&](double dt) {
    NavierStokesParams p = ns_params();
    p.dt = dt;
    return NavierStokesModel(p).step(u).coeffs;
  };
  const Vector a = at_dt(1.0 / 16), b = at_dt(1.0 / 32), c = at_dt(1.0 / 64);
  const double ratio = (a - b).norm() / (b - c).norm();
  CHECK(ratio > 2.0);

  NavierStokesParams euler = ns_params();
  euler.integrator = Integrator::kSemiImplicitEuler;
  CHECK((NavierStokesModel(euler).step(u).coeffs - c).norm() < 0.05 * u.norm());
  CHECK_THROWS_AS(integrator_from_string("leapfrog"), ConfigurationError);
}

TEST_CASE("Navier-Stokes overflow guard") {
  NavierStokesParams p = ns_params();
  p.dt = 0.5;
  const NavierStokesModel model(p);
  StateVector u = StateVector::zero(model.n_dim(), BasisId::kStokesTorus);
  u.coeffs.setConstant(1e6);
  CHECK_THROWS_AS(model.step(u), NumericalInstabilityError);
}

TEST_CASE("Navier-Stokes dissipativity with the analytic constants") {
  const SystemSpec spec = make_navier_stokes(ns_params());
  CHECK(spec.constants.q == doctest::Approx((1.0 + std::exp(-0.1)) / 2.0));
  const PairSampler sampler = [&](Stream& s) {
    const StateVector u = random_state(spec, s, 5.0 * std::abs(s.normal()));
    const StateVector v = random_state(spec, s, std::abs(s.normal()));
    return std::make_pair(u, v);
  };
  const auto report = check_dissipativity(spec, sampler, 2000, 17);
  CHECK(report.violations == 0);
}

TEST_CASE("Navier-Stokes calibrated p satisfies the squeezing inequality on fresh pairs") {
  NavierStokesParams p;
  p.calibration_pairs = 32;
  const SystemSpec spec = make_navier_stokes(p);
  const double scale = spec.catalogue.at("p_scale")(StateVector());
  CHECK(scale > 0.0);
  std::vector<std::pair<StateVector, StateVector>> pairs;
  for (int i = 0; i < 12; ++i) {
    Stream s(99, static_cast<std::uint64_t>(i), 0);
    StateVector u = random_state(spec, s, 0.1 + 0.25 * i);
    StateVector d = random_state(spec, s, 0.01, 1.0);
    d.coeffs.head(8).setZero();
    pairs.emplace_back(u, StateVector(u.coeffs + d.coeffs, spec.basis));
  }
  for (int level : {0, 4, 8, 40}) CHECK(check_squeezing(spec, level, pairs).max_normalized_defect <= 1.0);
  CHECK(check_squeezing(spec, 80, pairs).max_normalized_defect == 0.0);
}

TEST_CASE("Ginzburg-Landau step examples") {
  GinzburgLandauParams p;
  p.p_scale = 0.01;
  p.q = 0.9;
  p.c_phi = 50.0;
  const GinzburgLandauModel model(p);
  const SystemSpec spec = make_ginzburg_landau(p);
  const StateVector zero = StateVector::zero(spec.n_dim, BasisId::kDirichletSine);
  CHECK(spec.step(zero).norm() == 0.0);
  CHECK(model.hamiltonian(zero.coeffs) == 0.0);
  CHECK(observables(spec).at("hamiltonian")(zero) == 0.0);
  CHECK(observables(spec).at("energy")(zero) == 0.0);
  Stream s(21, 0, 0);
  for (int i = 0; i < 10; ++i) {
    const StateVector u = random_state(spec, s, 0.3 + 0.3 * i);
    const StateVector su = spec.step(u);
    // L2 contraction at rate nu alpha_1 (the cubic term is L2-neutral).
    CHECK(model.l2_norm(su.coeffs) <= std::exp(-p.nu) * model.l2_norm(u.coeffs) * (1.0 + 1e-9));
    CHECK(spec.step(u) == su);
    CHECK(model.hamiltonian(su.coeffs) <= model.hamiltonian(u.coeffs));
  }
}

TEST_CASE("Ginzburg-Landau quadrature is exact on the quartic term") {
  GinzburgLandauParams p;
  p.modes = 3;
  const GinzburgLandauModel model(p);
  // u = e_1 = sqrt(2/pi) sin x: int |u|^4 = (4 / pi^2) * 3 pi / 8.
  Vector c = Vector::Zero(6);
  c[0] = 1.0;
  CHECK(model.l4_power4(c) == doctest::Approx(1.5 / std::numbers::pi).epsilon(1e-13));
  CHECK(model.l2_norm(c) == doctest::Approx(1.0));
  c[0] = 0.0;
  c[5] = 3.0;  // i * 3 e_3 has L2 norm 1
  CHECK(model.l2_norm(c) == doctest::Approx(1.0));
}

TEST_CASE("Ginzburg-Landau calibrated constants") {
  GinzburgLandauParams p;
  p.calibration_samples = 120;
  const SystemSpec spec = make_ginzburg_landau(p);
  CHECK(spec.constants.q < 1.0);
  CHECK(spec.constants.alpha == 4.0);
  CHECK(spec.constants.beta == 8.0);
  std::vector<StateVector> states;
  Stream s(31, 0, 0);
  for (int i = 0; i < 200; ++i) states.push_back(random_state(spec, s, 4.0 * s.uniform()));
  const auto bounds = check_phi_bounds(spec, states);
  CHECK(bounds.lower_violations == 0);
  CHECK(bounds.upper_violations == 0);
  const PairSampler sampler = [&](Stream& st) {
    const double radii[] = {0.05, 0.3, 1.0, 2.0, 3.0};
    const StateVector u = random_state(spec, st, radii[st() % 5]);
    const StateVector v = random_state(spec, st, 1.5 * st.uniform());
    return std::make_pair(u, v);
  };
  CHECK(check_dissipativity(spec, sampler, 500, 41).violations == 0);

  const GinzburgLandauModel model(p);
  const GronwallFit fit = ginzburg_landau_gronwall(model, 300, 5);
  CHECK(fit.c > 0.0);
  CHECK(fit.violations == 0);
}
