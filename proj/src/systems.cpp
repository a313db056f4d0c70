#include "kicklab/systems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

#include "kicklab/errors.hpp"

namespace kicklab {

namespace {

constexpr const char* kModule = "systems";
constexpr double kOverflowGuard = 1e8;

double energy_sq(const StateVector& u) { return u.coeffs.squaredNorm(); }

int substep_count(double dt) {
  if (!(dt > 0.0) || dt > 1.0) throw ConfigurationError(kModule, "sub-step dt must lie in (0, 1]");
  const double n = 1.0 / dt;
  const double rounded = std::round(n);
  if (std::abs(n - rounded) > 1e-9 * n) throw ConfigurationError(kModule, "sub-step dt must divide 1");
  return static_cast<int>(rounded);
}

/// Composite Simpson weights on n uniform intervals of [0, 1]; trapezoid when n is odd.
std::vector<double> quadrature_weights(int n) {
  std::vector<double> w(static_cast<std::size_t>(n) + 1, 0.0);
  const double h = 1.0 / n;
  if (n % 2 == 0) {
    for (int i = 0; i <= n; ++i) {
      const double c = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      w[static_cast<std::size_t>(i)] = c * h / 3.0;
    }
  } else {
    for (int i = 0; i <= n; ++i) w[static_cast<std::size_t>(i)] = (i == 0 || i == n) ? h / 2.0 : h;
  }
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear test map

StateVector linear_step(const LinearTestParams& params, const StateVector& u) {
  return StateVector(params.a * u.coeffs, u.basis);
}

SystemSpec make_linear_test(const LinearTestParams& params) {
  if (params.dim < 1) throw ConfigurationError(kModule, "linear test map needs dim >= 1");
  if (!(std::abs(params.a) < 1.0)) throw ConfigurationError(kModule, "linear test map needs |a| < 1");
  SystemSpec spec;
  spec.name = "linear_test";
  spec.n_dim = params.dim;
  spec.basis = BasisId::kCanonical;
  const double a = params.a;
  spec.step = [a](const StateVector& u) { return StateVector(a * u.coeffs, u.basis); };
  spec.phi = [](const StateVector& u) { return 1.0 + energy_sq(u); };
  spec.frak_p = [](const StateVector&) { return 0.0; };
  spec.level_dim.resize(static_cast<std::size_t>(params.dim) + 1);
  for (int i = 0; i <= params.dim; ++i) spec.level_dim[static_cast<std::size_t>(i)] = i;
  if (!params.gamma.empty()) {
    spec.gamma = params.gamma;
  } else {
    const double g = a != 0.0 ? 1.0 / std::abs(a) : 2.0;
    spec.gamma.assign(static_cast<std::size_t>(params.dim) + 1, g);
  }
  const double q = a != 0.0 ? std::abs(a) : 0.5;
  spec.constants = {2.0, 2.0, 1.0 / (1.0 - q), q};
  finalize_system(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Navier-Stokes

Integrator integrator_from_string(const std::string& name) {
  if (name == "if_rk4") return Integrator::kIntegratingFactorRk4;
  if (name == "semi_implicit_euler") return Integrator::kSemiImplicitEuler;
  throw ConfigurationError(kModule, "unknown integrator '" + name + "'");
}

const char* integrator_name(Integrator integrator) {
  return integrator == Integrator::kIntegratingFactorRk4 ? "if_rk4" : "semi_implicit_euler";
}

NavierStokesModel::NavierStokesModel(NavierStokesParams params) : params_(std::move(params)) {
  const int m = params_.modes;
  if (m < 2 || m % 2 != 0) throw ConfigurationError(kModule, "Navier-Stokes modes per axis must be even and >= 2");
  if (!(params_.nu > 0.0)) throw ConfigurationError(kModule, "viscosity must be positive");
  substeps_ = substep_count(params_.dt);
  const int half = m / 2;

  std::vector<std::pair<int, int>> reps;
  for (int ky = 0; ky <= half; ++ky) {
    for (int kx = -half; kx <= half; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      reps.emplace_back(kx, ky);
    }
  }
  std::sort(reps.begin(), reps.end(), [](const auto& l, const auto& r) {
    const int nl = l.first * l.first + l.second * l.second;
    const int nr = r.first * r.first + r.second * r.second;
    return std::tie(nl, l.second, l.first) < std::tie(nr, r.second, r.first);
  });
  n_modes_ = static_cast<int>(reps.size());
  n_dim_ = 2 * n_modes_;
  for (const auto& [kx, ky] : reps) {
    basis_.push_back({kx, ky, false});
    basis_.push_back({kx, ky, true});
    const double k2 = static_cast<double>(kx * kx + ky * ky);
    eigen_.push_back(k2);
    eigen_.push_back(k2);
    mode_k2_.push_back(k2);
  }

  // Full wavevector list: +k (index i) and -k (conjugate of index i).
  struct Full {
    int kx, ky, mode;
    bool conj;
  };
  std::vector<Full> full;
  for (int i = 0; i < n_modes_; ++i) {
    full.push_back({reps[static_cast<std::size_t>(i)].first, reps[static_cast<std::size_t>(i)].second, i, false});
    full.push_back({-reps[static_cast<std::size_t>(i)].first, -reps[static_cast<std::size_t>(i)].second, i, true});
  }
  const double norm = 1.0 / (2.0 * std::numbers::sqrt2 * std::numbers::pi);
  for (int k = 0; k < n_modes_; ++k) {
    const int kx = reps[static_cast<std::size_t>(k)].first, ky = reps[static_cast<std::size_t>(k)].second;
    const double kabs = std::sqrt(mode_k2_[static_cast<std::size_t>(k)]);
    for (std::size_t ip = 0; ip < full.size(); ++ip) {
      for (std::size_t iq = ip + 1; iq < full.size(); ++iq) {
        const auto& p = full[ip];
        const auto& q = full[iq];
        if (p.kx + q.kx != kx || p.ky + q.ky != ky) continue;
        const double cross = static_cast<double>(p.kx * q.ky - p.ky * q.kx);
        const double pa = std::hypot(p.kx, p.ky), qa = std::hypot(q.kx, q.ky);
        const double coef = cross * (qa / pa - pa / qa) * norm / kabs;
        if (coef == 0.0) continue;
        triads_.push_back({k, p.mode, p.conj, q.mode, q.conj, coef});
      }
    }
  }

  forcing_.assign(static_cast<std::size_t>(n_modes_), Complex(0.0, 0.0));
  if (!params_.h.empty()) {
    if (static_cast<int>(params_.h.size()) != n_dim_) {
      throw ConfigurationError(kModule, "forcing h has " + std::to_string(params_.h.size()) +
                                            " coordinates, expected " + std::to_string(n_dim_));
    }
    for (int i = 0; i < n_modes_; ++i) {
      forcing_[static_cast<std::size_t>(i)] =
          Complex(params_.h[static_cast<std::size_t>(2 * i + 1)], params_.h[static_cast<std::size_t>(2 * i)]);
    }
  }
  decay_half_.resize(static_cast<std::size_t>(n_modes_));
  for (int i = 0; i < n_modes_; ++i) {
    decay_half_[static_cast<std::size_t>(i)] =
        std::exp(-params_.nu * mode_k2_[static_cast<std::size_t>(i)] * params_.dt / 2.0);
  }
}

int NavierStokesModel::coordinate_of(int kx, int ky, bool is_sin) const {
  for (int i = 0; i < n_modes_; ++i) {
    const auto& b = basis_[static_cast<std::size_t>(2 * i)];
    if (b.kx == kx && b.ky == ky) return 2 * i + (is_sin ? 1 : 0);
  }
  throw ConfigurationError(kModule, "wavevector (" + std::to_string(kx) + ", " + std::to_string(ky) +
                                        ") is not a half-plane mode of the truncation");
}

void NavierStokesModel::to_complex(const Vector& coeffs, std::vector<Complex>& z) const {
  z.resize(static_cast<std::size_t>(n_modes_));
  for (int i = 0; i < n_modes_; ++i) z[static_cast<std::size_t>(i)] = Complex(coeffs[2 * i + 1], coeffs[2 * i]);
}

Vector NavierStokesModel::to_coeffs(const std::vector<Complex>& z) const {
  Vector c(n_dim_);
  for (int i = 0; i < n_modes_; ++i) {
    c[2 * i] = z[static_cast<std::size_t>(i)].imag();
    c[2 * i + 1] = z[static_cast<std::size_t>(i)].real();
  }
  return c;
}

void NavierStokesModel::rhs(const std::vector<Complex>& z, std::vector<Complex>& out) const {
  out = forcing_;
  for (const auto& t : triads_) {
    const Complex zp = t.p_conj ? std::conj(z[static_cast<std::size_t>(t.p)]) : z[static_cast<std::size_t>(t.p)];
    const Complex zq = t.q_conj ? std::conj(z[static_cast<std::size_t>(t.q)]) : z[static_cast<std::size_t>(t.q)];
    out[static_cast<std::size_t>(t.k)] -= t.coef * zp * zq;
  }
}

Vector NavierStokesModel::nonlinear_term(const Vector& coeffs) const {
  std::vector<Complex> z, out;
  to_complex(coeffs, z);
  out.assign(static_cast<std::size_t>(n_modes_), Complex(0.0, 0.0));
  for (const auto& t : triads_) {
    const Complex zp = t.p_conj ? std::conj(z[static_cast<std::size_t>(t.p)]) : z[static_cast<std::size_t>(t.p)];
    const Complex zq = t.q_conj ? std::conj(z[static_cast<std::size_t>(t.q)]) : z[static_cast<std::size_t>(t.q)];
    out[static_cast<std::size_t>(t.k)] += t.coef * zp * zq;
  }
  return to_coeffs(out);
}

void NavierStokesModel::substep(std::vector<Complex>& z) const {
  const std::size_t n = z.size();
  const double dt = params_.dt;
  if (params_.integrator == Integrator::kSemiImplicitEuler) {
    std::vector<Complex> f;
    rhs(z, f);
    for (std::size_t i = 0; i < n; ++i) z[i] = (z[i] + dt * f[i]) / (1.0 + params_.nu * mode_k2_[i] * dt);
    return;
  }
  std::vector<Complex> a, b, c, d, tmp(n);
  rhs(z, a);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = decay_half_[i] * (z[i] + 0.5 * dt * a[i]);
  rhs(tmp, b);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = decay_half_[i] * z[i] + 0.5 * dt * b[i];
  rhs(tmp, c);
  for (std::size_t i = 0; i < n; ++i) {
    tmp[i] = decay_half_[i] * decay_half_[i] * z[i] + decay_half_[i] * dt * c[i];
  }
  rhs(tmp, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double e1 = decay_half_[i], e2 = e1 * e1;
    z[i] = e2 * z[i] + dt * (e2 * a[i] + 2.0 * e1 * (b[i] + c[i]) + d[i]) / 6.0;
  }
}

double NavierStokesModel::enstrophy_z(const std::vector<Complex>& z) const {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += mode_k2_[i] * std::norm(z[i]);
  return s;
}

double NavierStokesModel::enstrophy(const Vector& coeffs) const {
  double s = 0.0;
  for (int i = 0; i < n_dim_; ++i) s += eigen_[static_cast<std::size_t>(i)] * coeffs[i] * coeffs[i];
  return s;
}

void NavierStokesModel::guard(const std::vector<Complex>& z) const {
  double e = 0.0;
  for (const auto& v : z) e += std::norm(v);
  if (!std::isfinite(e) || e > kOverflowGuard * kOverflowGuard) {
    throw NumericalInstabilityError(kModule, "Navier-Stokes state norm exceeded 1e8; reduce dt (currently " +
                                                 std::to_string(params_.dt) + ")");
  }
}

StateVector NavierStokesModel::step(const StateVector& u) const {
  if (u.size() != n_dim_) throw ConfigurationError(kModule, "state dimension does not match the truncation");
  std::vector<Complex> z;
  to_complex(u.coeffs, z);
  for (int s = 0; s < substeps_; ++s) {
    substep(z);
    guard(z);
  }
  return StateVector(to_coeffs(z), BasisId::kStokesTorus);
}

StepWithFunctional NavierStokesModel::step_with_unit_p(const StateVector& u) const {
  if (u.size() != n_dim_) throw ConfigurationError(kModule, "state dimension does not match the truncation");
  const auto w = quadrature_weights(substeps_);
  std::vector<Complex> z;
  to_complex(u.coeffs, z);
  double integral = w[0] * enstrophy_z(z);
  for (int s = 1; s <= substeps_; ++s) {
    substep(z);
    guard(z);
    integral += w[static_cast<std::size_t>(s)] * enstrophy_z(z);
  }
  return {StateVector(to_coeffs(z), BasisId::kStokesTorus), integral + 1.0};
}

StepDiagnostics NavierStokesModel::energy_diagnostics(const StateVector& u) const {
  // d|z|^2/dt = -2 nu |z|_1^2 + 2 <h, z>; the convection term drops out.
  auto power = [&](const std::vector<Complex>& z) {
    double hz = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) hz += (std::conj(forcing_[i]) * z[i]).real();
    return -2.0 * params_.nu * enstrophy_z(z) + 2.0 * hz;
  };
  auto energy = [](const std::vector<Complex>& z) {
    double e = 0.0;
    for (const auto& v : z) e += std::norm(v);
    return e;
  };
  NavierStokesParams half_params = params_;
  half_params.dt = params_.dt / 2.0;
  const NavierStokesModel half(half_params);
  StepDiagnostics diag;
  std::vector<Complex> z;
  to_complex(u.coeffs, z);
  for (int s = 0; s < substeps_; ++s) {
    std::vector<Complex> mid = z, next = z;
    half.substep(mid);
    substep(next);
    const double e0 = energy(z), e1 = energy(next);
    const double predicted = params_.dt / 6.0 * (power(z) + 4.0 * power(mid) + power(next));
    const double scale = std::max({e0, e1, 1e-300});
    diag.max_energy_residual = std::max(diag.max_energy_residual, std::abs(e1 - e0 - predicted) / scale);
    z = std::move(next);
  }
  return diag;
}

namespace {

std::vector<std::pair<StateVector, StateVector>> calibration_pairs(const SystemSpec& spec, int n,
                                                                   std::uint64_t seed,
                                                                   const std::vector<double>& radii) {
  std::vector<std::pair<StateVector, StateVector>> pairs;
  const std::vector<double> gaps = {1e-3, 1e-1, 1.0};
  for (int i = 0; i < n; ++i) {
    Stream stream(seed, static_cast<std::uint64_t>(i), 0, StreamPurpose::kCalibration);
    const double r = radii[static_cast<std::size_t>(i) % radii.size()];
    StateVector u = random_state(spec, stream, r);
    const double gap = gaps[static_cast<std::size_t>(i / static_cast<int>(radii.size())) % gaps.size()];
    // Cycle through generic perturbations, perturbations in the upper half of
    // the spectrum (what coupled trajectories produce) and single basis
    // directions (the extremal case for the linear part).
    StateVector d = random_state(spec, stream, gap, 1.0);
    if (i % 3 == 1) d.coeffs.head(spec.n_dim / 2).setZero();
    if (i % 3 == 2) {
      const auto j = static_cast<Eigen::Index>(stream() % static_cast<std::uint64_t>(spec.n_dim));
      d.coeffs.setZero();
      d.coeffs[j] = gap;
    }
    if (d.norm() == 0.0) d.coeffs[spec.n_dim - 1] = gap;
    StateVector v(u.coeffs + d.coeffs, spec.basis);
    pairs.emplace_back(std::move(u), std::move(v));
  }
  return pairs;
}

}  // namespace

SystemSpec make_navier_stokes(const NavierStokesParams& params) {
  return make_navier_stokes(std::make_shared<const NavierStokesModel>(params));
}

SystemSpec make_navier_stokes(std::shared_ptr<const NavierStokesModel> model) {
  const NavierStokesParams& params = model->params();
  SystemSpec spec;
  spec.name = "navier_stokes";
  spec.n_dim = model->n_dim();
  spec.basis = BasisId::kStokesTorus;
  spec.step = [model](const StateVector& u) { return model->step(u); };
  spec.phi = [](const StateVector& u) { return 1.0 + energy_sq(u); };
  spec.level_dim.resize(static_cast<std::size_t>(spec.n_dim) + 1);
  spec.gamma.resize(static_cast<std::size_t>(spec.n_dim) + 1);
  const auto& eig = model->eigenvalues();
  for (int n = 0; n <= spec.n_dim; ++n) {
    spec.level_dim[static_cast<std::size_t>(n)] = n;
    spec.gamma[static_cast<std::size_t>(n)] = std::sqrt(eig[static_cast<std::size_t>(std::min(n, spec.n_dim - 1))]);
  }

  // Energy inequality |S u|^2 <= e^{-nu alpha_1} |u|^2 + |h|^2 / (nu alpha_1)^2.
  const double alpha1 = eig.front();
  const double q0 = std::exp(-params.nu * alpha1);
  const double theta = (1.0 / q0 - 1.0) / 2.0;
  double h2 = 0.0;
  for (double v : params.h) h2 += v * v;
  const double kh = h2 / (params.nu * params.nu * alpha1 * alpha1);
  spec.constants.alpha = 2.0;
  spec.constants.beta = 2.0;
  spec.constants.q = (1.0 + q0) / 2.0;
  spec.constants.c_phi = std::max(1.0 + 1.0 / theta, 1.0 - spec.constants.q + (1.0 + theta) * kh);

  spec.frak_p = [model](const StateVector& u) { return model->step_with_unit_p(u).frak_p; };
  spec.step_and_p = [model](const StateVector& u) { return model->step_with_unit_p(u); };
  double scale = params.p_scale;
  if (scale < 0.0) {
    const auto pairs = calibration_pairs(spec, params.calibration_pairs, params.calibration_seed,
                                         {0.05, 0.3, 1.0, 3.0});
    scale = fit_p_scale(spec, pairs, params.p_margin);
  }
  spec.frak_p = [model, scale](const StateVector& u) { return scale * model->step_with_unit_p(u).frak_p; };
  spec.step_and_p = [model, scale](const StateVector& u) {
    auto r = model->step_with_unit_p(u);
    r.frak_p *= scale;
    return r;
  };
  spec.catalogue["enstrophy"] = [model](const StateVector& u) { return model->enstrophy(u.coeffs); };
  spec.catalogue["p_scale"] = [scale](const StateVector&) { return scale; };
  finalize_system(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Ginzburg-Landau

GinzburgLandauModel::GinzburgLandauModel(GinzburgLandauParams params) : params_(std::move(params)) {
  if (params_.dim != 1) {
    throw ConfigurationError(kModule, "Ginzburg-Landau is implemented for spatial dimension 1 only");
  }
  if (params_.modes < 1) throw ConfigurationError(kModule, "Ginzburg-Landau needs at least one mode");
  if (!(params_.nu > 0.0) || !(params_.a > 0.0)) throw ConfigurationError(kModule, "nu and a must be positive");
  if (!(params_.epsilon > 0.0) || params_.epsilon > 1.0) throw ConfigurationError(kModule, "epsilon must lie in (0, 1]");
  substeps_ = substep_count(params_.dt);
  const int j_max = params_.modes;
  nodes_ = 2 * j_max + 1;
  weight_ = std::numbers::pi / (nodes_ + 1);
  const double c = std::sqrt(2.0 / std::numbers::pi);
  synth_.resize(nodes_, j_max);
  proj_.resize(j_max, nodes_);
  for (int m = 0; m < nodes_; ++m) {
    const double x = (m + 1) * weight_;
    for (int j = 1; j <= j_max; ++j) {
      const double s = std::sin(j * x);
      synth_(m, j - 1) = c * s / j;
      proj_(j - 1, m) = j * c * weight_ * s;
    }
  }
  forcing_ = CVector::Zero(j_max);
  if (!params_.h.empty()) {
    if (static_cast<int>(params_.h.size()) != 2 * j_max) {
      throw ConfigurationError(kModule, "forcing h must have 2 * modes coordinates");
    }
    for (int j = 0; j < j_max; ++j) {
      forcing_[j] = Complex(params_.h[static_cast<std::size_t>(2 * j)], params_.h[static_cast<std::size_t>(2 * j + 1)]);
    }
  }
  half_factor_.resize(j_max);
  for (int j = 1; j <= j_max; ++j) {
    half_factor_[j - 1] = std::exp(-Complex(params_.nu, 1.0) * static_cast<double>(j * j) * params_.dt / 2.0);
  }
}

GinzburgLandauModel::CVector GinzburgLandauModel::to_complex(const Vector& coeffs) const {
  CVector w(params_.modes);
  for (int j = 0; j < params_.modes; ++j) w[j] = Complex(coeffs[2 * j], coeffs[2 * j + 1]);
  return w;
}

Vector GinzburgLandauModel::to_coeffs(const CVector& w) const {
  Vector c(2 * params_.modes);
  for (int j = 0; j < params_.modes; ++j) {
    c[2 * j] = w[j].real();
    c[2 * j + 1] = w[j].imag();
  }
  return c;
}

GinzburgLandauModel::CVector GinzburgLandauModel::rhs(const CVector& w) const {
  const CVector u = synth_.cast<Complex>() * w;
  CVector g(nodes_);
  for (int m = 0; m < nodes_; ++m) g[m] = Complex(0.0, -params_.a) * std::norm(u[m]) * u[m];
  return forcing_ + proj_.cast<Complex>() * g;
}

void GinzburgLandauModel::substep(CVector& w) const {
  const double dt = params_.dt;
  const CVector& e = half_factor_;
  const CVector a = rhs(w);
  const CVector b = rhs(e.cwiseProduct(w + 0.5 * dt * a));
  const CVector c = rhs(e.cwiseProduct(w) + 0.5 * dt * b);
  const CVector e2 = e.cwiseProduct(e);
  const CVector d = rhs(e2.cwiseProduct(w) + dt * e.cwiseProduct(c));
  w = e2.cwiseProduct(w) + dt / 6.0 * (e2.cwiseProduct(a) + 2.0 * e.cwiseProduct(b + c) + d);
}

void GinzburgLandauModel::guard(const CVector& w) const {
  const double n = w.norm();
  if (!std::isfinite(n) || n > kOverflowGuard) {
    throw NumericalInstabilityError(kModule, "Ginzburg-Landau state norm exceeded 1e8; reduce dt (currently " +
                                                 std::to_string(params_.dt) + ")");
  }
}

StateVector GinzburgLandauModel::step(const StateVector& u) const {
  if (u.size() != n_dim()) throw ConfigurationError(kModule, "state dimension does not match the truncation");
  CVector w = to_complex(u.coeffs);
  for (int s = 0; s < substeps_; ++s) {
    substep(w);
    guard(w);
  }
  return StateVector(to_coeffs(w), BasisId::kDirichletSine);
}

StepWithFunctional GinzburgLandauModel::step_with_unit_p(const StateVector& u) const {
  if (u.size() != n_dim()) throw ConfigurationError(kModule, "state dimension does not match the truncation");
  const auto q = quadrature_weights(substeps_);
  CVector w = to_complex(u.coeffs);
  auto integrand = [](const CVector& v) {
    const double n2 = v.squaredNorm();
    return n2 * n2;
  };
  double integral = q[0] * integrand(w);
  for (int s = 1; s <= substeps_; ++s) {
    substep(w);
    guard(w);
    integral += q[static_cast<std::size_t>(s)] * integrand(w);
  }
  return {StateVector(to_coeffs(w), BasisId::kDirichletSine), integral + 1.0};
}

std::vector<std::complex<double>> GinzburgLandauModel::grid_values(const Vector& coeffs) const {
  const CVector u = synth_.cast<Complex>() * to_complex(coeffs);
  return std::vector<Complex>(u.data(), u.data() + u.size());
}

double GinzburgLandauModel::l4_power4(const Vector& coeffs) const {
  double s = 0.0;
  for (const auto& v : grid_values(coeffs)) {
    const double m = std::norm(v);
    s += m * m;
  }
  return weight_ * s;
}

double GinzburgLandauModel::l2_norm(const Vector& coeffs) const {
  double s = 0.0;
  for (int j = 0; j < params_.modes; ++j) {
    const double jj = static_cast<double>((j + 1) * (j + 1));
    s += (coeffs[2 * j] * coeffs[2 * j] + coeffs[2 * j + 1] * coeffs[2 * j + 1]) / jj;
  }
  return std::sqrt(s);
}

double GinzburgLandauModel::hamiltonian(const Vector& coeffs) const {
  return 0.5 * coeffs.squaredNorm() + params_.a / 4.0 * l4_power4(coeffs);
}

SystemSpec make_ginzburg_landau(const GinzburgLandauParams& params) {
  return make_ginzburg_landau(std::make_shared<const GinzburgLandauModel>(params));
}

SystemSpec make_ginzburg_landau(std::shared_ptr<const GinzburgLandauModel> model) {
  const GinzburgLandauParams& params = model->params();
  SystemSpec spec;
  spec.name = "ginzburg_landau";
  spec.n_dim = model->n_dim();
  spec.basis = BasisId::kDirichletSine;
  spec.step = [model](const StateVector& u) { return model->step(u); };
  // 4 H^2 rather than H^2 so that Phi >= 1 + |u|^4 holds with H >= |u|^2 / 2.
  spec.phi = [model](const StateVector& u) {
    const double h = model->hamiltonian(u.coeffs);
    return 1.0 + 4.0 * h * h;
  };
  const int j_max = params.modes;
  spec.level_dim.resize(static_cast<std::size_t>(j_max) + 1);
  spec.gamma.resize(static_cast<std::size_t>(j_max) + 1);
  for (int n = 0; n <= j_max; ++n) {
    spec.level_dim[static_cast<std::size_t>(n)] = 2 * n;
    spec.gamma[static_cast<std::size_t>(n)] = std::pow(static_cast<double>((n + 1) * (n + 1)), params.epsilon);
  }
  // sup |u|^2 <= (pi / 4) |u|^2_H on (0, pi) gives the growth bound with beta = 8.
  const double cubic = params.a * std::numbers::pi / 8.0;
  const double growth_c = 1.0 + std::max(1.0, cubic) * std::max(1.0, cubic);
  spec.constants.alpha = 4.0;
  spec.constants.beta = 8.0;

  const std::vector<double> radii = {0.05, 0.3, 1.0, 2.0, 3.0};
  double q = params.q;
  double c_phi = params.c_phi;
  if (q < 0.0 || c_phi < 0.0) {
    // Contraction of Phi along S on large states, then the smallest C
    // absorbing every sampled pair, both from one seeded sample.
    std::vector<StateVector> us, vs;
    double rho = 0.0;
    for (int i = 0; i < params.calibration_samples; ++i) {
      Stream stream(params.calibration_seed, static_cast<std::uint64_t>(i), 1, StreamPurpose::kCalibration);
      const double r = radii[static_cast<std::size_t>(i) % radii.size()];
      us.push_back(random_state(spec, stream, r));
      vs.push_back(random_state(spec, stream, 0.5 * stream.uniform() * radii.back()));
    }
    std::vector<StateVector> sus;
    for (const auto& u : us) {
      sus.push_back(model->step(u));
      const double phi_u = spec.phi(u);
      if (phi_u >= 2.0) rho = std::max(rho, spec.phi(sus.back()) / phi_u);
    }
    if (q < 0.0) {
      if (!(rho < 1.0)) throw DegenerateInputError(kModule, "Phi does not contract along S on the calibration sample");
      q = (1.0 + rho) / 2.0;
    }
    if (c_phi < 0.0) {
      double c = 0.0;
      for (std::size_t i = 0; i < us.size(); ++i) {
        for (std::size_t j = 0; j < vs.size(); j += 7) {
          StateVector w(sus[i].coeffs + vs[(i + j) % vs.size()].coeffs, spec.basis);
          const double need = (spec.phi(w) - q * spec.phi(us[i])) / spec.phi(vs[(i + j) % vs.size()]);
          c = std::max(c, need);
        }
      }
      c_phi = std::max(growth_c, params.p_margin * c);
    }
  }
  spec.constants.q = q;
  spec.constants.c_phi = std::max(c_phi, growth_c);

  spec.frak_p = [model](const StateVector& u) { return model->step_with_unit_p(u).frak_p; };
  spec.step_and_p = [model](const StateVector& u) { return model->step_with_unit_p(u); };
  double scale = params.p_scale;
  if (scale < 0.0) {
    const auto pairs = calibration_pairs(spec, params.calibration_samples / 4, params.calibration_seed, radii);
    scale = fit_p_scale(spec, pairs, params.p_margin);
  }
  spec.frak_p = [model, scale](const StateVector& u) { return scale * model->step_with_unit_p(u).frak_p; };
  spec.step_and_p = [model, scale](const StateVector& u) {
    auto r = model->step_with_unit_p(u);
    r.frak_p *= scale;
    return r;
  };
  spec.catalogue["hamiltonian"] = [model](const StateVector& u) { return model->hamiltonian(u.coeffs); };
  spec.catalogue["l2_norm"] = [model](const StateVector& u) { return model->l2_norm(u.coeffs); };
  spec.catalogue["p_scale"] = [scale](const StateVector&) { return scale; };
  finalize_system(spec);
  return spec;
}

GronwallFit ginzburg_landau_gronwall(const GinzburgLandauModel& model, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw ConfigurationError(kModule, "Gronwall fit needs at least two samples");
  GinzburgLandauParams p = model.params();
  SystemSpec shape;
  shape.n_dim = model.n_dim();
  shape.basis = BasisId::kDirichletSine;
  shape.level_dim.resize(static_cast<std::size_t>(p.modes) + 1);
  for (int n = 0; n <= p.modes; ++n) shape.level_dim[static_cast<std::size_t>(n)] = 2 * n;
  const std::vector<double> radii = {0.1, 0.5, 1.0, 2.0, 3.0};
  auto sample = [&](std::uint64_t purpose_step) {
    std::vector<std::pair<double, double>> out;  // (H^2(u), H^2(S u))
    for (std::size_t i = 0; i < n_samples; ++i) {
      Stream stream(seed, i, purpose_step, StreamPurpose::kCalibration);
      const StateVector u = random_state(shape, stream, radii[i % radii.size()]);
      const double h0 = model.hamiltonian(u.coeffs);
      const double h1 = model.hamiltonian(model.step(u).coeffs);
      out.emplace_back(h0 * h0, h1 * h1);
    }
    return out;
  };
  const auto fit_sample = sample(0);
  double ratio = 0.0;
  for (const auto& [a, b] : fit_sample) {
    if (a >= 1.0) ratio = std::max(ratio, b / a);
  }
  GronwallFit fit;
  // Midpoint between the worst sampled ratio and 1 leaves room for states
  // outside the fitting sample.
  fit.c = -std::log((1.0 + ratio) / 2.0);
  const double decay = std::exp(-fit.c);
  for (const auto& [a, b] : fit_sample) fit.c3 = std::max(fit.c3, b - decay * a);
  fit.c3 = 1.25 * fit.c3 + 1e-12;
  const auto held_out = sample(1);
  fit.samples = held_out.size();
  for (const auto& [a, b] : held_out) {
    if (b > decay * a + fit.c3) ++fit.violations;
  }
  return fit;
}

// ---------------------------------------------------------------------------

StateVector random_state(const SystemSpec& spec, Stream& stream, double radius, double decay) {
  Vector g(spec.n_dim);
  const int levels = spec.levels() > 0 ? spec.levels() : spec.n_dim;
  for (int j = 0; j < spec.n_dim; ++j) {
    const double level = static_cast<double>(j) * levels / spec.n_dim;
    g[j] = stream.normal() * std::pow(decay, level);
  }
  const double n = g.norm();
  if (n > 0.0) g *= radius / n;
  return StateVector(g, spec.basis);
}

std::map<std::string, StateFunctional> observables(const SystemSpec& spec) {
  std::map<std::string, StateFunctional> out = spec.catalogue;
  out.erase("p_scale");
  out["energy"] = [](const StateVector& u) { return u.norm(); };
  out["energy2"] = [](const StateVector& u) { return u.coeffs.squaredNorm(); };
  for (int j = 0; j < spec.n_dim; ++j) {
    out["coord:" + std::to_string(j)] = [j](const StateVector& u) { return u.coeffs[j]; };
  }
  return out;
}

}  // namespace kicklab
