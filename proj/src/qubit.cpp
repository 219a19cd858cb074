#include "rtnsim/qubit.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "rtnsim/error.hpp"

namespace rtnsim {

namespace {

constexpr double kTwoPiGiga = 2.0 * std::numbers::pi * 1e9;

double checked_cos(double phi_b) {
  if (!std::isfinite(phi_b)) {
    throw DomainError("bias flux must be finite");
  }
  const double c = std::cos(std::numbers::pi * phi_b);
  if (std::abs(c) <= kMinCosFlux) {
    throw DomainError("bias flux " + std::to_string(phi_b) +
                      " is too close to half a flux quantum");
  }
  return c;
}

}  // namespace

void validate(const TransmonParams& params) {
  if (!(params.ec_ghz > 0.0) || !std::isfinite(params.ec_ghz)) {
    throw ParameterError("ec_ghz must be positive");
  }
  if (!(params.ej_ghz > 0.0) || !std::isfinite(params.ej_ghz)) {
    throw ParameterError("ej_ghz must be positive");
  }
  if (params.ej_ghz / params.ec_ghz < params.min_ej_over_ec) {
    throw ParameterError("ej/ec = " + std::to_string(params.ej_ghz / params.ec_ghz) +
                         " is below the transmon bound " +
                         std::to_string(params.min_ej_over_ec));
  }
}

double transmon_frequency(const TransmonParams& params, double phi_b) {
  validate(params);
  const double c = checked_cos(phi_b);
  const double f_ghz = std::sqrt(8.0 * params.ec_ghz * params.ej_ghz * std::abs(c)) - params.ec_ghz;
  if (!(f_ghz > 0.0)) {
    throw DomainError("qubit frequency is not positive at bias " + std::to_string(phi_b));
  }
  return kTwoPiGiga * f_ghz;
}

double frequency_derivative(const TransmonParams& params, double phi_b) {
  (void)transmon_frequency(params, phi_b);
  const double c = std::cos(std::numbers::pi * phi_b);
  const double s = std::sin(std::numbers::pi * phi_b);
  const double root = std::sqrt(8.0 * params.ec_ghz * params.ej_ghz);
  // d|cos|/dphi = -sign(cos) pi sin.
  const double dabs = -std::copysign(1.0, c) * std::numbers::pi * s;
  return kTwoPiGiga * root * dabs / (2.0 * std::sqrt(std::abs(c)));
}

std::pair<double, double> frequency_range_hz(const TransmonParams& params) {
  validate(params);
  const double root = std::sqrt(8.0 * params.ec_ghz * params.ej_ghz);
  const double lo = std::max(0.0, root * std::sqrt(kMinCosFlux) - params.ec_ghz);
  const double hi = root - params.ec_ghz;
  return {lo * 1e9, hi * 1e9};
}

double invert_frequency(const TransmonParams& params, double f01_hz) {
  validate(params);
  const auto [lo, hi] = frequency_range_hz(params);
  if (!(f01_hz > lo && f01_hz <= hi)) {
    throw DomainError("target frequency " + std::to_string(f01_hz) +
                      " Hz outside the attainable band (" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "] Hz");
  }
  const double g = f01_hz / 1e9 + params.ec_ghz;
  const double c = std::min(1.0, g * g / (8.0 * params.ec_ghz * params.ej_ghz));
  return std::acos(c) / std::numbers::pi;
}

WorkingPoint working_point(const TransmonParams& params, double phi_b) {
  return WorkingPoint{phi_b, transmon_frequency(params, phi_b),
                      frequency_derivative(params, phi_b)};
}

void validate_density_matrix(const DensityMatrix& rho, double tol) {
  for (const auto& row : rho) {
    for (const auto& z : row) {
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
        throw ValidationError("density matrix has non-finite entries");
      }
    }
  }
  if (std::abs(rho[0][0].imag()) > tol || std::abs(rho[1][1].imag()) > tol ||
      std::abs(rho[0][1] - std::conj(rho[1][0])) > tol) {
    throw ValidationError("density matrix is not Hermitian");
  }
  const double p0 = rho[0][0].real();
  const double p1 = rho[1][1].real();
  if (std::abs(p0 + p1 - 1.0) > tol) {
    throw ValidationError("density matrix trace is not 1");
  }
  if (p0 < -tol || p1 < -tol || std::norm(rho[0][1]) > p0 * p1 + tol) {
    throw ValidationError("density matrix is not positive semidefinite");
  }
}

DensityMatrix density_matrix_evolution(const DensityMatrix& rho0, double t, double t1,
                                       double accumulated_phase) {
  validate_density_matrix(rho0);
  if (!(t >= 0.0)) {
    throw ParameterError("evolution time must be non-negative");
  }
  if (!(t1 > 0.0)) {
    throw ParameterError("t1 must be positive");
  }
  const double decay = std::exp(-t / t1);
  const double p1 = rho0[1][1].real() * decay;
  const auto coherence =
      rho0[0][1] * std::exp(-t / (2.0 * t1)) * std::polar(1.0, accumulated_phase);
  DensityMatrix out;
  out[0][0] = 1.0 - p1;
  out[1][1] = p1;
  out[0][1] = coherence;
  out[1][0] = std::conj(coherence);
  return out;
}

double t2_from_t1_tphi(double t1, double t2phi) {
  if (!(t1 > 0.0) || !(t2phi > 0.0)) {
    throw ParameterError("t1 and t2phi must be positive");
  }
  if (std::isinf(t2phi)) {
    return 2.0 * t1;
  }
  return 2.0 * t1 * t2phi / (2.0 * t1 + t2phi);
}

}  // namespace rtnsim
