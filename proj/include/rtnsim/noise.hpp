#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rtnsim/rng.hpp"

namespace rtnsim {

// Flux is expressed in units of the flux quantum, rates in switches per
// second, times in seconds, angular frequencies in rad/s.

// Largest RTN amplitude for which the small-flux linearization is trusted.
inline constexpr double kMaxRtnAmplitude = 0.01;

//! One bistable fluctuator.
struct RtnSource {
  double amplitude = 0.0;  // b, flux quanta
  double rate = 0.0;       // lambda, switches per second
};

//! Validates the fluctuator parameters; throws ParameterError.
RtnSource make_rtn_source(double amplitude, double rate);

//! One realized sample function s0 * b * (-1)^N(t) on [0, horizon].
struct RtnPath {
  RtnSource source;
  int initial_sign = 1;
  std::vector<double> switch_times;  // strictly ascending, inside [0, horizon]
  double horizon = 0.0;

  std::size_t switch_count() const noexcept { return switch_times.size(); }
};

//! Inverse CDF of the 1/lambda density on [lambda_min, lambda_max].
double sample_switching_rate(double lambda_min, double lambda_max, double u);

//! Poisson count, uniform initial sign, then that many sorted uniform switch
//! times on [0, horizon].
RtnPath sample_rtn_path(const RtnSource& source, double horizon, Sampler& sampler);

double rtn_value_at(const RtnPath& path, double t);

//! Exact integral of the path over [0, t]; linear in the number of switches.
double rtn_integral(const RtnPath& path, double t);

//! Equal-amplitude fluctuators with log-uniform switching rates.
struct FlickerBath {
  std::vector<RtnSource> sources;
  double lambda_min = 0.0;
  double lambda_max = 0.0;

  double amplitude() const noexcept {
    return sources.empty() ? 0.0 : sources.front().amplitude;
  }
  // P0 = N / ln(lambda_max / lambda_min).
  double density_normalization() const;
};

FlickerBath build_flicker_bath(std::size_t n_sources, double amplitude, double lambda_min,
                               double lambda_max, Sampler& sampler);

//! Kolmogorov-Smirnov p-value of log(rates) against the uniform law on
//! [log lambda_min, log lambda_max].
double log_rate_uniformity_pvalue(const FlickerBath& bath);

double flicker_value_at(std::span<const RtnPath> paths, double t);

// How the switching rate maps onto the exponential correlation rate of the
// telegraph signal. A symmetric Poisson-switched +-b signal has
// E[x(t)x(s)] = b^2 exp(-2 lambda |t-s|); the as-printed convention uses
// exp(-lambda |t-s|).
enum class CorrelationConvention { kPoisson, kAsPrinted };

double correlation_rate(double switching_rate, CorrelationConvention convention);

//! b^2 * 2 lambda / (omega^2 + lambda^2), the two-sided PSD of an
//! exponentially correlated signal with correlation rate lambda.
double lorentzian_psd(double lambda, double amplitude, double omega);

struct FlickerPsdTheory {
  double lorentzian_sum = 0.0;  // sum over member Lorentzians
  double closed_form = 0.0;     // integral over the 1/lambda density
  double asymptote = 0.0;       // pi b^2 P0 / omega
};

FlickerPsdTheory flicker_psd_theory(
    const FlickerBath& bath, double omega,
    CorrelationConvention convention = CorrelationConvention::kPoisson);

//! Accumulates the running flux integral of many fluctuators on the uniform
//! grid t_i = i * cell, i = 0..cells.
//!
//! Explicit paths contribute their slope changes at each switch, which costs
//! O(switches). Fast fluctuators are instead sampled cell by cell: the number
//! of switches inside a cell is Poisson, and given k switches the fraction of
//! the cell spent in the starting state is Beta(floor(k/2)+1, ceil(k/2))
//! distributed. Both routes give the exact law of the grid integrals.
class GridIntegral {
 public:
  GridIntegral(double cell, std::size_t cells);

  double cell() const noexcept { return cell_; }
  std::size_t cells() const noexcept { return cells_; }
  double horizon() const noexcept { return cell_ * static_cast<double>(cells_); }

  void add_path(const RtnPath& path, double scale = 1.0);
  void add_cell_sampled(const RtnSource& source, Sampler& sampler, double scale = 1.0);

  //! Adds one fluctuator, choosing explicit switches when the expected count
  //! per cell is at most `cell_sampling_threshold` and cell sampling otherwise.
  void add_source(const RtnSource& source, Sampler& sampler, double scale = 1.0,
                  double cell_sampling_threshold = 3.5);

  //! Integral at every grid point (cells + 1 values, first is 0).
  std::vector<double> cumulative() const;
  //! Mean flux over every cell (cells values).
  std::vector<double> cell_averages() const;

  void clear();

 private:
  void add_switches(std::span<const double> times, int initial_sign, double amplitude);

  double cell_;
  std::size_t cells_;
  double slope_ = 0.0;
  std::vector<double> slope_change_;   // dC
  std::vector<double> offset_change_;  // dD
  std::vector<double> cell_integral_;  // directly sampled cells
};

//! Cell-averaged total flux of `sources` on `samples` cells of width dt.
std::vector<double> sample_noise_trace(std::span<const RtnSource> sources, double dt,
                                       std::size_t samples, Sampler& sampler);

enum class PsdWindow { kNone, kHann };

//! Averaged one-sided periodogram, normalized to 1 at the reference
//! frequency.
struct PsdEstimate {
  std::vector<double> frequencies;  // Hz, bins 1..N/2
  std::vector<double> values;
  double normalization_frequency = 0.0;
  std::size_t paths_averaged = 0;
  double band_low = 0.0;   // resolvable band, Hz
  double band_high = 0.0;
  double reference = 0.0;  // raw PSD level that was mapped to 1

  //! Log-log interpolated value at f.
  double value_at(double f) const;
};

struct PsdOptions {
  PsdWindow window = PsdWindow::kNone;
  unsigned threads = 1;
  // Samples are averages over their cell (as from sample_noise_trace);
  // divide out the boxcar response sinc^2(pi f dt).
  bool cell_averaged = false;
};

//! Resolvable band of a record of n samples at spacing dt: from ten
//! frequency bins up to one quarter of the Nyquist frequency.
std::pair<double, double> resolvable_band(std::size_t n, double dt);

PsdEstimate estimate_psd(std::span<const std::vector<double>> realizations, double dt,
                         double normalization_frequency, const PsdOptions& options = {});

//! Least-squares slope of log(values) against log(frequencies) over the
//! frequencies inside [f_low, f_high], after averaging into log-spaced bins.
double loglog_slope(std::span<const double> frequencies, std::span<const double> values,
                    double f_low, double f_high, int bins_per_decade = 10);

}  // namespace rtnsim
