#pragma once

#include <complex>
#include <span>

#include "rtnsim/noise.hpp"

namespace rtnsim {

// Single-fluctuator decay factor <exp(i phi(t))> with phi' = v * sign(t),
// where v = (d omega01 / d phi_b) * b.
struct SeriesSpec {
  double coupling_v = 0.0;  // rad/s
  double lambda = 0.0;      // switches per second
  int n_max = 0;
};

inline constexpr int kMaxSeriesOrder = 6;

struct SeriesValue {
  std::complex<double> value;
  double tail_bound = 0.0;    // P(N(t) > n_max)
  bool tail_warning = false;  // tail_bound above 1e-6
};

//! Sum of the first n_max + 1 terms of the switch-count expansion. The n-th
//! term is exp(-lambda t) lambda^n times the ordered n-fold time integral of
//! the sign-averaged phase factor. Each nesting level is a running integral
//! on 32-point Gauss-Legendre panels short enough that the phase turns by at
//! most two radians per panel.
SeriesValue truncated_decay(const SeriesSpec& spec, double t,
                            CorrelationConvention convention = CorrelationConvention::kPoisson);

//! All-order decay factor from the conditional two-state system
//! x' = [[iv - k, k], [k, -iv - k]] x, x(0) = (1/2, 1/2), summed over states.
//! k is the sign-exchange rate implied by the convention.
std::complex<double> exact_decay(const SeriesSpec& spec, double t,
                                 CorrelationConvention convention = CorrelationConvention::kPoisson);

std::complex<double> product_decay(std::span<const SeriesSpec> specs, double t,
                                   CorrelationConvention convention = CorrelationConvention::kPoisson);

}  // namespace rtnsim
