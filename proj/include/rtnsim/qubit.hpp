#pragma once

#include <array>
#include <complex>

namespace rtnsim {

// Energies are h-frequencies in GHz; returned angular frequencies are rad/s.
struct TransmonParams {
  double ec_ghz = 0.2;
  double ej_ghz = 15.0;
  double min_ej_over_ec = 20.0;
};

//! Throws ParameterError unless ec > 0, ej > 0 and ej/ec meets the bound.
void validate(const TransmonParams& params);

// Bias points with |cos(pi phi)| at or below this are rejected.
inline constexpr double kMinCosFlux = 0.01;

double transmon_frequency(const TransmonParams& params, double phi_b);

//! Principal-branch bias in [0, 0.5) at which the qubit sits at f01_hz.
double invert_frequency(const TransmonParams& params, double f01_hz);

//! d omega01 / d phi_b in rad/s per flux quantum.
double frequency_derivative(const TransmonParams& params, double phi_b);

//! Attainable f01 range in Hz over the admissible part of the principal branch.
std::pair<double, double> frequency_range_hz(const TransmonParams& params);

struct WorkingPoint {
  double phi_b = 0.0;
  double omega01 = 0.0;
  double domega_dphi = 0.0;
};

WorkingPoint working_point(const TransmonParams& params, double phi_b);

using DensityMatrix = std::array<std::array<std::complex<double>, 2>, 2>;

//! Throws ValidationError unless rho is Hermitian, unit trace and PSD to `tol`.
void validate_density_matrix(const DensityMatrix& rho, double tol = 1e-9);

//! Free evolution under relaxation time t1 plus an accumulated phase:
//! rho11 decays as exp(-t/t1) with the lost population returned to |0>,
//! coherences scale by exp(-t/(2 t1)) exp(+-i phase).
DensityMatrix density_matrix_evolution(const DensityMatrix& rho0, double t, double t1,
                                       double accumulated_phase);

//! 2 t1 t2phi / (2 t1 + t2phi); t2phi may be +infinity.
double t2_from_t1_tphi(double t1, double t2phi);

}  // namespace rtnsim
