#include "rtnsim/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rtnsim/error.hpp"

namespace rtnsim {

namespace {

void check_time(const RtnPath& path, double t) {
  if (!(t >= 0.0 && t <= path.horizon)) {
    throw RangeError("time " + std::to_string(t) + " s outside path horizon [0, " +
                     std::to_string(path.horizon) + "]");
  }
}

// Sorted uniforms on [0, horizon]. Small counts are drawn and sorted
// directly; large counts use normalized exponential spacings, which have the
// same joint law as the order statistics.
void sorted_uniform_times(std::size_t n, double horizon, Sampler& sampler,
                          std::vector<double>& out) {
  out.resize(n);
  if (n <= 64) {
    for (auto& t : out) {
      t = sampler.uniform() * horizon;
    }
    std::sort(out.begin(), out.end());
    return;
  }
  double total = 0.0;
  for (auto& t : out) {
    total += sampler.exponential();
    t = total;
  }
  total += sampler.exponential();
  const double scale = horizon / total;
  for (auto& t : out) {
    t *= scale;
  }
}

// Pairs of coincident switch times cancel; keeps the list strictly ascending.
void drop_coincident(std::vector<double>& times) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < times.size();) {
    if (r + 1 < times.size() && times[r + 1] == times[r]) {
      r += 2;
      continue;
    }
    times[w++] = times[r++];
  }
  times.resize(w);
}

}  // namespace

RtnSource make_rtn_source(double amplitude, double rate) {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
    throw ParameterError("RTN amplitude must be finite and non-negative");
  }
  if (amplitude > kMaxRtnAmplitude) {
    throw ParameterError("RTN amplitude " + std::to_string(amplitude) +
                         " exceeds the small-flux limit of 0.01 flux quanta");
  }
  if (!(rate >= 0.0) || !std::isfinite(rate)) {
    throw ParameterError("RTN switching rate must be finite and non-negative");
  }
  return RtnSource{amplitude, rate};
}

double sample_switching_rate(double lambda_min, double lambda_max, double u) {
  if (!(lambda_min > 0.0 && lambda_min < lambda_max) || !std::isfinite(lambda_max)) {
    throw ParameterError("switching-rate cutoffs must satisfy 0 < lambda_min < lambda_max");
  }
  if (!(u >= 0.0 && u <= 1.0)) {
    throw ParameterError("uniform variate must lie in [0, 1]");
  }
  if (u == 1.0) {
    return lambda_max;
  }
  return lambda_min * std::pow(lambda_max / lambda_min, u);
}

RtnPath sample_rtn_path(const RtnSource& source, double horizon, Sampler& sampler) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ParameterError("path horizon must be positive");
  }
  const RtnSource checked = make_rtn_source(source.amplitude, source.rate);
  RtnPath path;
  path.source = checked;
  path.horizon = horizon;
  const std::uint64_t n = sampler.poisson(checked.rate * horizon);
  path.initial_sign = sampler.sign();
  path.switch_times.resize(n);
  for (auto& t : path.switch_times) {
    t = sampler.uniform() * horizon;
  }
  std::sort(path.switch_times.begin(), path.switch_times.end());
  drop_coincident(path.switch_times);
  return path;
}

double rtn_value_at(const RtnPath& path, double t) {
  check_time(path, t);
  const auto flips = std::upper_bound(path.switch_times.begin(), path.switch_times.end(), t) -
                     path.switch_times.begin();
  const double value = path.initial_sign * path.source.amplitude;
  return flips % 2 == 0 ? value : -value;
}

double rtn_integral(const RtnPath& path, double t) {
  check_time(path, t);
  // s0 b (sum_k (-1)^(k+1) 2 t_k + (-1)^n t) over switches up to t.
  double alternating = 0.0;
  double parity = 1.0;
  for (const double tk : path.switch_times) {
    if (tk > t) {
      break;
    }
    alternating += parity * 2.0 * tk;
    parity = -parity;
  }
  return path.initial_sign * path.source.amplitude * (alternating + parity * t);
}

double FlickerBath::density_normalization() const {
  return static_cast<double>(sources.size()) / std::log(lambda_max / lambda_min);
}

FlickerBath build_flicker_bath(std::size_t n_sources, double amplitude, double lambda_min,
                               double lambda_max, Sampler& sampler) {
  if (n_sources < 1) {
    throw ParameterError("a flicker bath needs at least one fluctuator");
  }
  // Validates the cutoffs even before the first draw.
  (void)sample_switching_rate(lambda_min, lambda_max, 0.0);
  FlickerBath bath;
  bath.lambda_min = lambda_min;
  bath.lambda_max = lambda_max;
  bath.sources.reserve(n_sources);
  for (std::size_t i = 0; i < n_sources; ++i) {
    const double rate = sample_switching_rate(lambda_min, lambda_max, sampler.uniform());
    bath.sources.push_back(make_rtn_source(amplitude, rate));
  }
  return bath;
}

double log_rate_uniformity_pvalue(const FlickerBath& bath) {
  const std::size_t n = bath.sources.size();
  if (n == 0) {
    throw ParameterError("empty bath");
  }
  std::vector<double> u(n);
  const double span = std::log(bath.lambda_max / bath.lambda_min);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = std::log(bath.sources[i].rate / bath.lambda_min) / span;
  }
  std::sort(u.begin(), u.end());
  double d = 0.0;
  const double nd = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    d = std::max({d, static_cast<double>(i + 1) / nd - u[i], u[i] - static_cast<double>(i) / nd});
  }
  // Asymptotic Kolmogorov distribution with Stephens' small-sample correction.
  const double root = std::sqrt(nd);
  const double x = (root + 0.12 + 0.11 / root) * d;
  if (x < 1e-3) {
    return 1.0;
  }
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    q += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) {
      break;
    }
  }
  return std::clamp(q, 0.0, 1.0);
}

double flicker_value_at(std::span<const RtnPath> paths, double t) {
  double total = 0.0;
  for (const auto& path : paths) {
    total += rtn_value_at(path, t);
  }
  return total;
}

double correlation_rate(double switching_rate, CorrelationConvention convention) {
  return convention == CorrelationConvention::kPoisson ? 2.0 * switching_rate : switching_rate;
}

double lorentzian_psd(double lambda, double amplitude, double omega) {
  if (!(lambda > 0.0)) {
    throw ParameterError("Lorentzian rate must be positive");
  }
  return amplitude * amplitude * 2.0 * lambda / (omega * omega + lambda * lambda);
}

FlickerPsdTheory flicker_psd_theory(const FlickerBath& bath, double omega,
                                    CorrelationConvention convention) {
  if (!(omega > 0.0)) {
    throw ParameterError("flicker PSD requires omega > 0");
  }
  if (bath.sources.empty()) {
    throw ParameterError("empty bath");
  }
  FlickerPsdTheory out;
  for (const auto& s : bath.sources) {
    out.lorentzian_sum += lorentzian_psd(correlation_rate(s.rate, convention), s.amplitude, omega);
  }
  const double b = bath.amplitude();
  const double p0 = bath.density_normalization();
  const double g_min = correlation_rate(bath.lambda_min, convention);
  const double g_max = correlation_rate(bath.lambda_max, convention);
  out.closed_form =
      2.0 * b * b * p0 * (std::atan(g_max / omega) - std::atan(g_min / omega)) / omega;
  out.asymptote = std::numbers::pi * b * b * p0 / omega;
  return out;
}

GridIntegral::GridIntegral(double cell, std::size_t cells)
    : cell_(cell),
      cells_(cells),
      slope_change_(cells + 1, 0.0),
      offset_change_(cells + 1, 0.0),
      cell_integral_(cells, 0.0) {
  if (!(cell > 0.0) || cells == 0) {
    throw ParameterError("grid needs a positive cell width and at least one cell");
  }
}

void GridIntegral::add_switches(std::span<const double> times, int initial_sign,
                                double amplitude) {
  const double value0 = initial_sign * amplitude;
  slope_ += value0;
  const double inv_cell = 1.0 / cell_;
  double before = value0;
  for (const double tk : times) {
    const double change = -2.0 * before;
    auto j = static_cast<std::size_t>(std::ceil(tk * inv_cell));
    // Guard rounding: grid index j must be the first with j*cell >= tk.
    if (j > 0 && static_cast<double>(j - 1) * cell_ >= tk) {
      --j;
    } else if (static_cast<double>(j) * cell_ < tk) {
      ++j;
    }
    if (j <= cells_) {
      slope_change_[j] += change;
      offset_change_[j] += change * tk;
    }
    before = -before;
  }
}

void GridIntegral::add_path(const RtnPath& path, double scale) {
  add_switches(path.switch_times, path.initial_sign, scale * path.source.amplitude);
}

void GridIntegral::add_cell_sampled(const RtnSource& source, Sampler& sampler, double scale) {
  const PoissonTable switches(source.rate * cell_);
  // Given k switches the starting-state fraction is Beta(floor(k/2)+1, ceil(k/2)).
  thread_local std::vector<GammaShape> shapes;
  const double full = scale * source.amplitude * cell_;
  double level = sampler.sign() * full;
  for (std::size_t j = 0; j < cells_; ++j) {
    const std::uint64_t k = switches(sampler);
    if (k == 0) {
      cell_integral_[j] += level;
      continue;
    }
    // Fraction of the cell spent in the starting state.
    double frac = 0.0;
    if (k == 1) {
      frac = sampler.uniform();
    } else if (k == 2) {
      frac = std::sqrt(sampler.uniform());
    } else {
      const std::size_t a = k / 2 + 1;
      const std::size_t c = k + 1 - a;
      while (shapes.size() < a) {
        shapes.emplace_back(static_cast<double>(shapes.size() + 1));
      }
      const double x = sampler.gamma(shapes[a - 1]);
      const double y = sampler.gamma(shapes[c - 1]);
      frac = x / (x + y);
    }
    cell_integral_[j] += level * (2.0 * frac - 1.0);
    if (k % 2 == 1) {
      level = -level;
    }
  }
}

void GridIntegral::add_source(const RtnSource& source, Sampler& sampler, double scale,
                              double cell_sampling_threshold) {
  if (source.rate * cell_ > cell_sampling_threshold) {
    add_cell_sampled(source, sampler, scale);
    return;
  }
  thread_local std::vector<double> times;
  const std::uint64_t n = sampler.poisson(source.rate * horizon());
  const int sign = sampler.sign();
  sorted_uniform_times(n, horizon(), sampler, times);
  add_switches(times, sign, scale * source.amplitude);
}

std::vector<double> GridIntegral::cumulative() const {
  std::vector<double> out(cells_ + 1);
  double c = 0.0;
  double d = 0.0;
  double f = 0.0;
  for (std::size_t i = 0; i <= cells_; ++i) {
    const double t = static_cast<double>(i) * cell_;
    c += slope_change_[i];
    d += offset_change_[i];
    out[i] = slope_ * t + (c * t - d) + f;
    if (i < cells_) {
      f += cell_integral_[i];
    }
  }
  return out;
}

std::vector<double> GridIntegral::cell_averages() const {
  const auto running = cumulative();
  std::vector<double> out(cells_);
  for (std::size_t i = 0; i < cells_; ++i) {
    out[i] = (running[i + 1] - running[i]) / cell_;
  }
  return out;
}

void GridIntegral::clear() {
  slope_ = 0.0;
  std::fill(slope_change_.begin(), slope_change_.end(), 0.0);
  std::fill(offset_change_.begin(), offset_change_.end(), 0.0);
  std::fill(cell_integral_.begin(), cell_integral_.end(), 0.0);
}

std::vector<double> sample_noise_trace(std::span<const RtnSource> sources, double dt,
                                       std::size_t samples, Sampler& sampler) {
  GridIntegral grid(dt, samples);
  for (const auto& s : sources) {
    grid.add_source(s, sampler);
  }
  return grid.cell_averages();
}

}  // namespace rtnsim
