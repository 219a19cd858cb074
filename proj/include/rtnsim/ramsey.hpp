#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rtnsim/noise.hpp"
#include "rtnsim/qubit.hpp"

namespace rtnsim {

enum class PhaseMode {
  kLinearized,     // slope at the bias times the exact flux integral
  kGridNonlinear,  // left-rectangle rule on the full spectrum at integration_dt
};

struct BathSpec {
  bool enabled = true;
  std::size_t n_sources = 3000;
  double amplitude = 1.5e-7;  // flux quanta per fluctuator
  double lambda_min = 1e2;    // Hz
  double lambda_max = 1e9;    // Hz
};

struct RamseyConfig {
  TransmonParams qubit;
  double phi_b = -0.06051;
  double detuning = 0.0;           // rad/s
  double horizon = 50e-6;          // s
  double integration_dt = 0.2e-9;  // s, grid-nonlinear mode only
  double output_dt = 50e-9;        // s
  std::size_t repetitions = 3000;
  double t1 = 20e-6;               // s
  BathSpec bath;
  std::vector<RtnSource> strong;
  PhaseMode mode = PhaseMode::kLinearized;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0 = all cores
  // Flip the sign of every noise path (antithetic runs).
  bool negate_noise = false;
};

//! Throws ParameterError / DomainError for an unusable configuration.
void validate(const RamseyConfig& config);

//! Number of output cells; the grid is t_i = i * output_dt, i = 0..cells.
std::size_t output_cells(const RamseyConfig& config);

//! All fluctuator paths of one repetition.
struct NoiseRealization {
  std::vector<RtnPath> paths;
};

//! Bath of the configuration, drawn from the dedicated bath stream so every
//! repetition sees the same fluctuator rates.
FlickerBath config_bath(const RamseyConfig& config);

//! Explicit paths for repetition `index`: bath members first, then strong RTNs.
NoiseRealization sample_realization(const RamseyConfig& config, const FlickerBath& bath,
                                    std::uint64_t index);

double accumulate_phase(const NoiseRealization& realization, double t,
                        const TransmonParams& params, double phi_b, PhaseMode mode,
                        double integration_dt = 0.2e-9);

//! Phase on the grid t_i = i * output_dt (i = 0..cells) by the event-merged
//! left-rectangle rule with step integration_dt, using the full spectrum.
std::vector<double> grid_nonlinear_phases(const NoiseRealization& realization,
                                          const TransmonParams& params, double phi_b,
                                          double integration_dt, double output_dt,
                                          std::size_t cells);

struct DecayTrace {
  std::vector<double> times;
  std::vector<std::complex<double>> decay_factor;
  std::vector<double> envelope;
  std::vector<double> p1;
  std::vector<double> modulus_stderr;  // standard error of |decay_factor|
  double t1 = 0.0;
  double detuning = 0.0;
  std::size_t repetitions = 0;  // repetitions that entered the average
  std::size_t failed_repetitions = 0;
  std::string first_failure;
};

DecayTrace decay_factor_mc(const RamseyConfig& config);

//! p1 = (1 + cos(detuning t + arg decay) E) / 2 per time point.
std::vector<double> ramsey_curve(const DecayTrace& trace, double detuning);

std::vector<double> beating_envelope_model(std::span<const double> times,
                                           std::span<const double> base,
                                           double delta_omega_split);

std::vector<double> multi_rtn_envelope_model(std::span<const double> times,
                                             std::span<const double> base,
                                             std::span<const double> amplitudes,
                                             double domega_dphi);

//! n amplitudes uniform on the simplex sum = b0_total (sorted-uniform gaps).
std::vector<double> distribute_amplitudes(std::size_t n, double b0_total, Sampler& sampler);

//! Time of the first envelope node: the first local minimum of
//! envelope / baseline that drops below `depth`, refined by a parabola.
//! Returns +infinity when there is none.
double first_node_time(std::span<const double> times, std::span<const double> envelope,
                       std::span<const double> baseline, double depth = 0.3);

//! 1 - min(envelope / baseline) over times in [0, window_end].
double beating_contrast(std::span<const double> times, std::span<const double> envelope,
                        std::span<const double> baseline, double window_end);

struct SweepRow {
  double f01_hz = 0.0;
  bool ok = false;
  std::string error;
  WorkingPoint point;
  DecayTrace trace;
  double t2star = std::numeric_limits<double>::quiet_NaN();
  bool t2star_converged = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double t2star_mean = std::numeric_limits<double>::quiet_NaN();
  double t2star_max = std::numeric_limits<double>::quiet_NaN();
};

//! One decay_factor_mc run per target frequency with the bias set by
//! invert_frequency (keeping the sign of base.phi_b) and the same seed on
//! every row. Unattainable rows are reported, not fatal.
SweepResult frequency_sweep(const RamseyConfig& base, std::span<const double> f01_hz);

}  // namespace rtnsim
