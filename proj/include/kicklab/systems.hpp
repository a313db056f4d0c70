#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kicklab/core_model.hpp"

namespace kicklab {

// ---------------------------------------------------------------------------
// Linear test map S(u) = a u with Phi(u) = 1 + |u|^2 and p = 0.

struct LinearTestParams {
  int dim = 1;
  double a = 0.5;
  /// Optional gamma_N override (one entry per level 0..dim). Defaults to the
  /// constant 1/|a|, for which the squeezing inequality is an equality.
  std::vector<double> gamma;
};

StateVector linear_step(const LinearTestParams& params, const StateVector& u);

/// q = |a| (0.5 when a = 0) and C = 1/(1 - q) make the dissipativity
/// inequality hold identically.
SystemSpec make_linear_test(const LinearTestParams& params);

// ---------------------------------------------------------------------------
// Galerkin 2D Navier-Stokes on the torus [0, 2pi]^2.

enum class Integrator { kIntegratingFactorRk4, kSemiImplicitEuler };

Integrator integrator_from_string(const std::string& name);
const char* integrator_name(Integrator integrator);

struct NavierStokesParams {
  int modes = 8;          // M: wavevectors with max(|kx|, |ky|) <= M / 2
  double nu = 0.1;
  std::vector<double> h;  // forcing coordinates, empty means zero
  double dt = 1.0 / 64.0;
  Integrator integrator = Integrator::kIntegratingFactorRk4;
  /// Scale C of p(u) = C int_0^1 (|S_t u|_1^2 + 1) dt. A negative value asks
  /// for calibration on `calibration_pairs` seeded pairs.
  double p_scale = -1.0;
  double p_margin = 1.25;
  int calibration_pairs = 48;
  std::uint64_t calibration_seed = 20240601;
};

/// One real basis vector cos(k.x) k_perp / (pi sqrt2 |k|) or the sin analogue.
struct TorusMode {
  int kx = 0;
  int ky = 0;
  bool is_sin = false;
  double k2() const { return static_cast<double>(kx * kx + ky * ky); }
};

struct StepDiagnostics {
  double max_energy_residual = 0.0;  // relative, per sub-step
};

/// Spectral Galerkin model. Coordinates come in (cos, sin) pairs per
/// half-plane wavevector, ordered by |k|^2, then (ky, kx).
class NavierStokesModel {
 public:
  explicit NavierStokesModel(NavierStokesParams params);

  const NavierStokesParams& params() const { return params_; }
  int n_dim() const { return n_dim_; }
  const std::vector<TorusMode>& basis() const { return basis_; }
  /// Stokes eigenvalue |k|^2 of each coordinate.
  const std::vector<double>& eigenvalues() const { return eigen_; }

  StateVector step(const StateVector& u) const;
  /// S(u) together with int_0^1 (|S_t u|_1^2 + 1) dt (Simpson on the sub-steps).
  StepWithFunctional step_with_unit_p(const StateVector& u) const;
  /// Per sub-step energy balance residual of the integrator along S_t(u).
  StepDiagnostics energy_diagnostics(const StateVector& u) const;

  /// Coordinates of the projected convection term B(u).
  Vector nonlinear_term(const Vector& coeffs) const;

  /// |u|_1^2 = sum |k|^2 coef^2.
  double enstrophy(const Vector& coeffs) const;

  /// Coordinate index of (kx, ky, sin?) in the half-plane representation.
  int coordinate_of(int kx, int ky, bool is_sin) const;

 private:
  using Complex = std::complex<double>;
  struct Triad {
    int k;
    int p;
    bool p_conj;
    int q;
    bool q_conj;
    double coef;
  };

  void rhs(const std::vector<Complex>& z, std::vector<Complex>& out) const;
  void substep(std::vector<Complex>& z) const;
  void to_complex(const Vector& coeffs, std::vector<Complex>& z) const;
  Vector to_coeffs(const std::vector<Complex>& z) const;
  double enstrophy_z(const std::vector<Complex>& z) const;
  void guard(const std::vector<Complex>& z) const;

  NavierStokesParams params_;
  int n_dim_ = 0;
  int n_modes_ = 0;
  int substeps_ = 0;
  std::vector<TorusMode> basis_;
  std::vector<double> eigen_;
  std::vector<double> mode_k2_;
  std::vector<Triad> triads_;
  std::vector<Complex> forcing_;
  std::vector<double> decay_half_;  // exp(-nu |k|^2 dt / 2)
};

SystemSpec make_navier_stokes(const NavierStokesParams& params);
/// Spec whose S and p evaluate through `model`.
SystemSpec make_navier_stokes(std::shared_ptr<const NavierStokesModel> model);

// ---------------------------------------------------------------------------
// Complex Ginzburg-Landau on (0, pi) with Dirichlet conditions, H = H_0^1.

struct GinzburgLandauParams {
  int dim = 1;
  int modes = 16;
  double nu = 0.5;
  double a = 1.0;
  std::vector<double> h;  // interleaved (Re, Im) coordinates, empty means zero
  double dt = 1.0 / 64.0;
  double epsilon = 0.5;   // gamma_N = alpha_{N+1}^epsilon
  double p_scale = -1.0;  // negative: calibrate
  double p_margin = 1.25;
  double q = -1.0;        // negative: calibrate together with C
  double c_phi = -1.0;
  int calibration_samples = 200;
  std::uint64_t calibration_seed = 20240602;
};

/// Pseudo-spectral Galerkin model. Coordinates are interleaved real and
/// imaginary parts w_j of u = sum w_j e_j with e_j = sqrt(2/pi) sin(jx) / j.
class GinzburgLandauModel {
 public:
  explicit GinzburgLandauModel(GinzburgLandauParams params);

  const GinzburgLandauParams& params() const { return params_; }
  int n_dim() const { return 2 * params_.modes; }

  StateVector step(const StateVector& u) const;
  /// S(u) together with int_0^1 (|S_t u|^4 + 1) dt.
  StepWithFunctional step_with_unit_p(const StateVector& u) const;

  /// H(u) = int |grad u|^2 / 2 + a |u|^4 / 4.
  double hamiltonian(const Vector& coeffs) const;
  double l2_norm(const Vector& coeffs) const;
  double l4_power4(const Vector& coeffs) const;
  /// Values u(x_m) on the interior quadrature nodes.
  std::vector<std::complex<double>> grid_values(const Vector& coeffs) const;

 private:
  using Complex = std::complex<double>;
  using CVector = Eigen::VectorXcd;

  CVector rhs(const CVector& w) const;
  void substep(CVector& w) const;
  CVector to_complex(const Vector& coeffs) const;
  Vector to_coeffs(const CVector& w) const;
  void guard(const CVector& w) const;

  GinzburgLandauParams params_;
  int substeps_ = 0;
  int nodes_ = 0;
  Eigen::MatrixXd synth_;  // nodes x modes: u(x_m) = synth * w
  Eigen::MatrixXd proj_;   // modes x nodes: H-coordinates of a grid function
  CVector forcing_;
  CVector half_factor_;    // exp(-(nu + i) j^2 dt / 2)
  double weight_ = 0.0;    // quadrature weight pi / (nodes + 1)
};

SystemSpec make_ginzburg_landau(const GinzburgLandauParams& params);
SystemSpec make_ginzburg_landau(std::shared_ptr<const GinzburgLandauModel> model);

struct GronwallFit {
  double c = 0.0;       // decay rate in H^2(S u) <= e^{-c} H^2(u) + C3
  double c3 = 0.0;
  std::size_t violations = 0;  // on the held-out sample
  std::size_t samples = 0;
};

/// Fits (c, C3) of the time-1 Gronwall bound for H^2 on one seeded sample and
/// counts violations on an independent one.
GronwallFit ginzburg_landau_gronwall(const GinzburgLandauModel& model, std::size_t n_samples, std::uint64_t seed);

/// Random state with coordinate j scaled like decay^j and total H-norm `radius`.
StateVector random_state(const SystemSpec& spec, Stream& stream, double radius, double decay = 0.8);

/// Named observables of a system: "energy" (|u|), "energy2" (|u|^2),
/// coordinate projections "coord:<j>", plus system-specific entries such as
/// "enstrophy" (Navier-Stokes) and "hamiltonian" (Ginzburg-Landau).
std::map<std::string, StateFunctional> observables(const SystemSpec& spec);

}  // namespace kicklab
