#include <doctest.h>

#include <cmath>
#include <numbers>

#include "kicklab/errors.hpp"
#include "kicklab/noise.hpp"
#include "kicklab/stats.hpp"
#include "kicklab/systems.hpp"

using namespace kicklab;

TEST_CASE("zero coefficients give the zero kick") {
  KickLaw law{{0.0, 0.0, 0.0}, DensityFamily::kGaussian, 0.1};
  for (std::uint64_t i = 0; i < 20; ++i) {
    Stream s(1, i, 0);
    CHECK(sample_kick(law, s).coeffs.norm() == 0.0);
  }
}

TEST_CASE("coordinate variances match b_j^2 Var(rho)") {
  for (DensityFamily family : {DensityFamily::kGaussian, DensityFamily::kBump}) {
    KickLaw law{{1.0, 0.0, 0.5, 2.0}, family, 0.1};
    const std::size_t n = 100000;
    std::vector<MeanAccumulator> acc(4);
    for (std::size_t i = 0; i < n; ++i) {
      Stream s(5, i, 0);
      const StateVector eta = sample_kick(law, s);
      for (int j = 0; j < 4; ++j) acc[static_cast<std::size_t>(j)].add(eta.coeffs[j]);
    }
    const double var = family_variance(family);
    CHECK(var <= 1.0);
    for (int j = 0; j < 4; ++j) {
      const double expected = var * law.b[static_cast<std::size_t>(j)] * law.b[static_cast<std::size_t>(j)];
      // Sample-variance standard error with a kurtosis allowance of 3.
      const double se = expected * std::sqrt(2.0 / static_cast<double>(n));
      CHECK(std::abs(acc[static_cast<std::size_t>(j)].variance() - expected) <= 3.0 * se + 1e-15);
    }
  }
  CHECK(family_variance(DensityFamily::kBump) == doctest::Approx(0.632454545).epsilon(1e-6));
}

TEST_CASE("kick sampling is reproducible") {
  KickLaw law{{1.0, 0.3}, DensityFamily::kBump, 0.1};
  Stream a(42, 7, 3), b(42, 7, 3);
  CHECK(sample_kick(law, a) == sample_kick(law, b));
}

TEST_CASE("projected density closed forms") {
  KickLaw law{{1.0, 2.0, 0.0}, DensityFamily::kGaussian, 0.1};
  CHECK(projected_density(law, Vector::Zero(1)) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(projected_density(law, Vector::Zero(2)) == doctest::Approx(0.5 / (2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(projected_density(law, Vector::Constant(1, 1e3)) == 0.0);
  CHECK_THROWS_AS(projected_density(law, Vector::Zero(3)), DegenerateInputError);
}

TEST_CASE("projected density integrates to one") {
  for (DensityFamily family : {DensityFamily::kGaussian, DensityFamily::kBump}) {
    KickLaw law{{0.7, 1.3}, family, 0.1};
    const int n = 400;
    const double lim = 12.0, h = 2.0 * lim / n;
    double one_d = 0.0, two_d = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = -lim + i * h;
      const double wi = (i == 0 || i == n) ? 0.5 : 1.0;
      one_d += wi * h * projected_density(law, Vector::Constant(1, x));
      for (int j = 0; j <= n; ++j) {
        const double y = -lim + j * h;
        const double wj = (j == 0 || j == n) ? 0.5 : 1.0;
        Vector v(2);
        v << x, y;
        two_d += wi * wj * h * h * projected_density(law, v);
      }
    }
    CHECK(one_d == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(two_d == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("kick coefficient rules") {
  KickRule power;
  power.kind = KickRule::Kind::kPower;
  power.b0 = 2.0;
  power.exponent = 2.0;
  const auto bp = kick_coefficients(power, 3);
  CHECK(bp[2] == doctest::Approx(2.0 / 9.0));
  KickRule geo;
  geo.kind = KickRule::Kind::kGeometric;
  geo.b0 = 0.1;
  geo.ratio = 0.5;
  CHECK(kick_coefficients(geo, 2)[1] == doctest::Approx(0.025));
  KickRule explicit_rule;
  explicit_rule.values = {1.0};
  CHECK_THROWS_AS(kick_coefficients(explicit_rule, 2), ConfigurationError);
}

TEST_CASE("frak B partial sums") {
  std::vector<double> b(40), g(40);
  for (int j = 1; j <= 40; ++j) {
    b[static_cast<std::size_t>(j - 1)] = std::pow(2.0, -j);
    g[static_cast<std::size_t>(j - 1)] = j - 1;
  }
  CHECK(std::abs(frak_b(b, g) - 1.0) < 1e-6);

  const SystemSpec spec = make_linear_test({3, 0.5, {1.0, 2.0, 3.0, 4.0}});
  const KickLaw law{{1.0, 1.0, 1.0}, DensityFamily::kGaussian, 0.1};
  CHECK(frak_b(law, spec) == doctest::Approx(6.0));
  const auto report = moment_report(law, spec, 20000, 3);
  // E |eta|_U <= Var cap * frak B.
  CHECK(report.empirical_u_norm_mean <= report.frak_b);
}

TEST_CASE("exponential moment estimates") {
  const SystemSpec spec = make_linear_test({1, 0.5, {}});
  const KickLaw zero{{0.0}, DensityFamily::kGaussian, 0.1};
  CHECK(moment_report(zero, spec, 100, 1).m_delta_hat == doctest::Approx(std::exp(0.1)).epsilon(1e-15));

  const KickLaw law{{1.0}, DensityFamily::kGaussian, 0.1};
  const auto r = moment_report(law, spec, 100000, 9);
  const double exact = std::exp(0.1) / std::sqrt(0.8);
  CHECK(exact == doctest::Approx(1.2356186).epsilon(1e-7));
  CHECK(std::abs(r.m_delta_hat - exact) <= 3.0 * r.m_delta_stderr);
  CHECK_FALSE(r.delta_too_large);

  const KickLaw heavy{{1.0}, DensityFamily::kGaussian, 0.6};
  CHECK(moment_report(heavy, spec, 100000, 9).delta_too_large);

  const KickLaw wrong_dim{{1.0, 1.0}, DensityFamily::kGaussian, 0.1};
  CHECK_THROWS_AS(moment_report(wrong_dim, spec, 100, 1), ConfigurationError);
}

TEST_CASE("moment estimates do not depend on the worker count") {
  const SystemSpec spec = make_linear_test({2, 0.5, {}});
  const KickLaw law{{1.0, 0.5}, DensityFamily::kGaussian, 0.1};
  const auto a = moment_report(law, spec, 5000, 4, 1);
  const auto b = moment_report(law, spec, 5000, 4, 3);
  CHECK(a.m_delta_hat == b.m_delta_hat);
  CHECK(a.empirical_u_norm_mean == b.empirical_u_norm_mean);
}
