#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rtnsim {

enum class FitModel {
  kExponential,  // (1 + cos(dw t) exp(-G t)) / 2
  kBeating,      // (1 + cos(dw t) exp(-G t) |cos(split t / 2)|) / 2
};

const char* to_string(FitModel model);

struct FitResult {
  FitModel model = FitModel::kExponential;
  double gamma = std::numeric_limits<double>::quiet_NaN();        // 1/s
  double delta_omega = std::numeric_limits<double>::quiet_NaN();  // rad/s, >= 0
  double delta_omega_split = 0.0;                                 // rad/s, beating only
  double gamma_stderr = std::numeric_limits<double>::quiet_NaN();
  double delta_omega_stderr = std::numeric_limits<double>::quiet_NaN();
  double split_stderr = std::numeric_limits<double>::quiet_NaN();
  double residual_rms = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool non_identifiable = false;
  int iterations = 0;
  std::size_t samples = 0;
  // Beating model only: nested-model F-test against the exponential fit.
  double f_statistic = std::numeric_limits<double>::quiet_NaN();
  double f_pvalue = std::numeric_limits<double>::quiet_NaN();
  bool model_preferred = false;
  std::string diagnostics;

  double t2star() const { return 1.0 / gamma; }
};

struct FitOptions {
  // Optional starting values; NaN means "derive from the data".
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double delta_omega = std::numeric_limits<double>::quiet_NaN();
  double delta_omega_split = std::numeric_limits<double>::quiet_NaN();
  int max_iterations = 200;
  double step_tolerance = 1e-10;
  double residual_tolerance = 1e-12;
  double f_test_alpha = 0.01;
  int starts = 5;
};

FitResult fit_exponential_ramsey(std::span<const double> times, std::span<const double> p1,
                                 const FitOptions& options = {});

//! Multi-start fit of the beating model; also runs the exponential fit and
//! sets model_preferred when the F-test rejects the nested model at
//! f_test_alpha and the fitted node pi/split lies inside the data.
FitResult fit_beating_ramsey(std::span<const double> times, std::span<const double> p1,
                             const FitOptions& options = {});

//! Least-squares exp(-G t) through an envelope.
FitResult fit_envelope_decay(std::span<const double> times, std::span<const double> envelope,
                             const FitOptions& options = {});

struct T2StarRow {
  double t2star = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool non_identifiable = false;
  double residual_rms = std::numeric_limits<double>::quiet_NaN();
};

struct T2StarSummary {
  std::vector<T2StarRow> rows;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::size_t converged_rows = 0;
};

T2StarSummary extract_t2star_sweep(std::span<const double> times,
                                   std::span<const std::vector<double>> envelopes);

}  // namespace rtnsim
