#include "rtnsim/ramsey.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rtnsim/error.hpp"
#include "rtnsim/fit.hpp"
#include "rtnsim/parallel.hpp"

namespace rtnsim {

namespace {

// Repetitions per sequentially accumulated block. Fixed, so the reduction
// tree depends only on M and never on the thread count.
constexpr std::size_t kBlock = 16;

// Smallest j with j * step >= t.
std::size_t first_index_at_or_after(double t, double step) {
  auto j = static_cast<std::size_t>(std::max(0.0, std::ceil(t / step)));
  if (j > 0 && static_cast<double>(j - 1) * step >= t) {
    --j;
  } else if (static_cast<double>(j) * step < t) {
    ++j;
  }
  return j;
}

struct Moments {
  std::vector<double> c, s, cc, ss, cs;
  std::size_t used = 0;
  std::size_t failed = 0;
  std::size_t first_failed_index = 0;
  std::string first_failure;

  explicit Moments(std::size_t points = 0)
      : c(points), s(points), cc(points), ss(points), cs(points) {}

  void add(const std::vector<double>& phase) {
    for (std::size_t i = 0; i < phase.size(); ++i) {
      const double x = std::cos(phase[i]);
      const double y = std::sin(phase[i]);
      c[i] += x;
      s[i] += y;
      cc[i] += x * x;
      ss[i] += y * y;
      cs[i] += x * y;
    }
    ++used;
  }

  void merge(const Moments& o) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] += o.c[i];
      s[i] += o.s[i];
      cc[i] += o.cc[i];
      ss[i] += o.ss[i];
      cs[i] += o.cs[i];
    }
    used += o.used;
    if (o.failed > 0 && (failed == 0 || o.first_failed_index < first_failed_index)) {
      first_failed_index = o.first_failed_index;
      first_failure = o.first_failure;
    }
    failed += o.failed;
  }
};

std::vector<double> linearized_phases(const RamseyConfig& config, const FlickerBath& bath,
                                      double slope, std::uint64_t index, GridIntegral& grid) {
  grid.clear();
  Sampler sampler(config.seed, index);
  const double scale = config.negate_noise ? -1.0 : 1.0;
  for (const auto& s : bath.sources) {
    grid.add_source(s, sampler, scale);
  }
  for (const auto& s : config.strong) {
    grid.add_source(s, sampler, scale);
  }
  auto phase = grid.cumulative();
  for (auto& p : phase) {
    p *= slope;
  }
  return phase;
}

NoiseRealization negated(NoiseRealization r) {
  for (auto& p : r.paths) {
    p.initial_sign = -p.initial_sign;
  }
  return r;
}

}  // namespace

void validate(const RamseyConfig& config) {
  validate(config.qubit);
  (void)frequency_derivative(config.qubit, config.phi_b);
  if (!(config.horizon > 0.0) || !std::isfinite(config.horizon)) {
    throw ParameterError("horizon must be positive");
  }
  if (!(config.output_dt > 0.0) || config.output_dt > config.horizon) {
    throw ParameterError("output spacing must be positive and no longer than the horizon");
  }
  if (!(config.integration_dt > 0.0) || config.integration_dt > config.output_dt) {
    throw ParameterError("integration step must be positive and no longer than the output spacing");
  }
  if (config.mode == PhaseMode::kGridNonlinear) {
    const double ratio = config.output_dt / config.integration_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-6 * ratio) {
      throw ParameterError("output spacing must be a whole number of integration steps");
    }
  }
  if (config.repetitions < 1) {
    throw ParameterError("at least one repetition is required");
  }
  if (!(config.t1 > 0.0)) {
    throw ParameterError("t1 must be positive");
  }
  if (!std::isfinite(config.detuning)) {
    throw ParameterError("detuning must be finite");
  }
  for (const auto& s : config.strong) {
    (void)make_rtn_source(s.amplitude, s.rate);
  }
  if (config.bath.enabled) {
    if (config.bath.n_sources < 1) {
      throw ParameterError("an enabled bath needs at least one fluctuator");
    }
    (void)make_rtn_source(config.bath.amplitude, config.bath.lambda_min);
    (void)sample_switching_rate(config.bath.lambda_min, config.bath.lambda_max, 0.0);
  }
  (void)output_cells(config);
}

std::size_t output_cells(const RamseyConfig& config) {
  const double ratio = config.horizon / config.output_dt;
  const auto cells = static_cast<std::size_t>(std::llround(ratio));
  if (cells < 1 || std::abs(ratio - static_cast<double>(cells)) > 1e-6 * ratio) {
    throw ParameterError("horizon must be a whole number of output steps");
  }
  return cells;
}

FlickerBath config_bath(const RamseyConfig& config) {
  if (!config.bath.enabled) {
    return FlickerBath{};
  }
  Sampler sampler(config.seed, kBathStream);
  return build_flicker_bath(config.bath.n_sources, config.bath.amplitude,
                            config.bath.lambda_min, config.bath.lambda_max, sampler);
}

NoiseRealization sample_realization(const RamseyConfig& config, const FlickerBath& bath,
                                    std::uint64_t index) {
  Sampler sampler(config.seed, index);
  NoiseRealization r;
  r.paths.reserve(bath.sources.size() + config.strong.size());
  for (const auto& s : bath.sources) {
    r.paths.push_back(sample_rtn_path(s, config.horizon, sampler));
  }
  for (const auto& s : config.strong) {
    r.paths.push_back(sample_rtn_path(s, config.horizon, sampler));
  }
  return config.negate_noise ? negated(std::move(r)) : r;
}

std::vector<double> grid_nonlinear_phases(const NoiseRealization& realization,
                                          const TransmonParams& params, double phi_b,
                                          double integration_dt, double output_dt,
                                          std::size_t cells) {
  const auto per_cell = static_cast<std::size_t>(std::llround(output_dt / integration_dt));
  if (per_cell < 1) {
    throw ParameterError("output spacing shorter than the integration step");
  }
  struct Event {
    double t;
    double delta;
  };
  std::vector<Event> events;
  double flux = 0.0;
  for (const auto& p : realization.paths) {
    double value = p.initial_sign * p.source.amplitude;
    flux += value;
    for (const double t : p.switch_times) {
      events.push_back(Event{t, -2.0 * value});
      value = -value;
    }
  }
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.t < b.t; });

  const double omega0 = transmon_frequency(params, phi_b);
  double rate = transmon_frequency(params, phi_b + flux) - omega0;
  std::vector<double> out(cells + 1, 0.0);
  double phase = 0.0;
  std::size_t step = 0;
  std::size_t e = 0;
  for (std::size_t i = 1; i <= cells; ++i) {
    const std::size_t target = i * per_cell;
    while (step < target) {
      const std::size_t change = e < events.size()
                                     ? first_index_at_or_after(events[e].t, integration_dt)
                                     : target;
      if (change <= step) {
        // Every event up to the left edge of this step is in effect.
        const double edge = static_cast<double>(step) * integration_dt;
        while (e < events.size() && events[e].t <= edge) {
          flux += events[e].delta;
          ++e;
        }
        rate = transmon_frequency(params, phi_b + flux) - omega0;
        continue;
      }
      const std::size_t stop = std::min(target, change);
      phase += rate * static_cast<double>(stop - step) * integration_dt;
      step = stop;
    }
    out[i] = phase;
  }
  return out;
}

double accumulate_phase(const NoiseRealization& realization, double t,
                        const TransmonParams& params, double phi_b, PhaseMode mode,
                        double integration_dt) {
  for (const auto& p : realization.paths) {
    if (!(t >= 0.0 && t <= p.horizon)) {
      throw RangeError("time outside the realization horizon");
    }
  }
  if (mode == PhaseMode::kLinearized) {
    double integral = 0.0;
    for (const auto& p : realization.paths) {
      integral += rtn_integral(p, t);
    }
    return frequency_derivative(params, phi_b) * integral;
  }
  if (t == 0.0) {
    return 0.0;
  }
  const auto steps = static_cast<std::size_t>(std::floor(t / integration_dt + 1e-9));
  double phase = 0.0;
  if (steps > 0) {
    phase = grid_nonlinear_phases(realization, params, phi_b, integration_dt,
                                  integration_dt * static_cast<double>(steps), 1)[1];
  }
  // Remaining partial step, left-point value.
  const double done = static_cast<double>(steps) * integration_dt;
  if (t > done) {
    double flux = 0.0;
    for (const auto& p : realization.paths) {
      flux += rtn_value_at(p, done);
    }
    phase += (transmon_frequency(params, phi_b + flux) - transmon_frequency(params, phi_b)) *
             (t - done);
  }
  return phase;
}

DecayTrace decay_factor_mc(const RamseyConfig& config) {
  validate(config);
  const std::size_t cells = output_cells(config);
  const std::size_t points = cells + 1;
  const FlickerBath bath = config_bath(config);
  const double slope = frequency_derivative(config.qubit, config.phi_b);
  const std::size_t m = config.repetitions;
  const std::size_t blocks = (m + kBlock - 1) / kBlock;

  std::vector<Moments> partial(blocks);
  parallel_for(blocks, config.threads, [&](std::size_t b) {
    Moments acc(points);
    GridIntegral grid(config.output_dt, cells);
    const std::size_t end = std::min(m, (b + 1) * kBlock);
    for (std::size_t rep = b * kBlock; rep < end; ++rep) {
      try {
        if (config.mode == PhaseMode::kLinearized) {
          acc.add(linearized_phases(config, bath, slope, rep, grid));
        } else {
          const auto r = sample_realization(config, bath, rep);
          acc.add(grid_nonlinear_phases(r, config.qubit, config.phi_b, config.integration_dt,
                                        config.output_dt, cells));
        }
      } catch (const Error& err) {
        if (acc.failed == 0) {
          acc.first_failed_index = rep;
          acc.first_failure = err.what();
        }
        ++acc.failed;
      }
    }
    partial[b] = std::move(acc);
  });
  const Moments total =
      pairwise_reduce(std::move(partial), [](Moments& a, const Moments& b) { a.merge(b); });
  if (total.used == 0) {
    throw RuntimeError("every repetition failed; first failure: " + total.first_failure);
  }

  DecayTrace trace;
  trace.t1 = config.t1;
  trace.detuning = config.detuning;
  trace.repetitions = total.used;
  trace.failed_repetitions = total.failed;
  trace.first_failure = total.first_failure;
  trace.times.resize(points);
  trace.decay_factor.resize(points);
  trace.envelope.resize(points);
  trace.modulus_stderr.resize(points);
  const double n = static_cast<double>(total.used);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) * config.output_dt;
    trace.times[i] = t;
    const double mc = total.c[i] / n;
    const double ms = total.s[i] / n;
    trace.decay_factor[i] = {mc, ms};
    const double modulus = std::hypot(mc, ms);
    trace.envelope[i] = modulus * std::exp(-t / (2.0 * config.t1));
    if (total.used > 1) {
      const double k = n / (n - 1.0);
      const double vc = std::max(0.0, (total.cc[i] / n - mc * mc) * k);
      const double vs = std::max(0.0, (total.ss[i] / n - ms * ms) * k);
      const double cv = (total.cs[i] / n - mc * ms) * k;
      double var = 0.0;
      if (modulus > 1e-12) {
        var = (mc * mc * vc + ms * ms * vs + 2.0 * mc * ms * cv) / (modulus * modulus);
      } else {
        var = vc + vs;
      }
      trace.modulus_stderr[i] = std::sqrt(std::max(var, 0.0) / n);
    }
  }
  trace.p1 = ramsey_curve(trace, config.detuning);
  return trace;
}

std::vector<double> ramsey_curve(const DecayTrace& trace, double detuning) {
  std::vector<double> p1(trace.times.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto z = trace.decay_factor[i];
    const double arg = (z == std::complex<double>(0.0, 0.0)) ? 0.0 : std::arg(z);
    p1[i] = 0.5 * (1.0 + std::cos(detuning * trace.times[i] + arg) * trace.envelope[i]);
  }
  return p1;
}

std::vector<double> beating_envelope_model(std::span<const double> times,
                                           std::span<const double> base,
                                           double delta_omega_split) {
  if (times.size() != base.size()) {
    throw ParameterError("time and envelope series differ in length");
  }
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::abs(std::cos(delta_omega_split * times[i] / 2.0)) * base[i];
  }
  return out;
}

std::vector<double> multi_rtn_envelope_model(std::span<const double> times,
                                             std::span<const double> base,
                                             std::span<const double> amplitudes,
                                             double domega_dphi) {
  if (times.size() != base.size()) {
    throw ParameterError("time and envelope series differ in length");
  }
  std::vector<double> out(base.begin(), base.end());
  for (const double b : amplitudes) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] *= std::abs(std::cos(domega_dphi * b * times[i]));
    }
  }
  return out;
}

std::vector<double> distribute_amplitudes(std::size_t n, double b0_total, Sampler& sampler) {
  if (n < 1) {
    throw ParameterError("at least one amplitude is required");
  }
  if (!(b0_total > 0.0) || !std::isfinite(b0_total)) {
    throw ParameterError("total amplitude must be positive");
  }
  std::vector<double> cuts(n - 1);
  for (auto& c : cuts) {
    c = sampler.uniform();
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> out(n);
  double prev = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    out[i] = (cuts[i] - prev) * b0_total;
    prev = cuts[i];
  }
  out[n - 1] = (1.0 - prev) * b0_total;
  return out;
}

double first_node_time(std::span<const double> times, std::span<const double> envelope,
                       std::span<const double> baseline, double depth) {
  if (times.size() != envelope.size() || times.size() != baseline.size()) {
    throw ParameterError("series differ in length");
  }
  const std::size_t n = times.size();
  std::vector<double> ratio(n);
  for (std::size_t i = 0; i < n; ++i) {
    ratio[i] = baseline[i] > 0.0 ? envelope[i] / baseline[i] : 0.0;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (ratio[i] < depth && ratio[i] <= ratio[i - 1] && ratio[i] <= ratio[i + 1]) {
      const double a = ratio[i - 1];
      const double b = ratio[i];
      const double c = ratio[i + 1];
      const double denom = a - 2.0 * b + c;
      double offset = 0.0;
      if (denom > 0.0) {
        offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
      }
      const double h = offset >= 0.0 ? times[i + 1] - times[i] : times[i] - times[i - 1];
      return times[i] + offset * h;
    }
  }
  return std::numeric_limits<double>::infinity();
}

double beating_contrast(std::span<const double> times, std::span<const double> envelope,
                        std::span<const double> baseline, double window_end) {
  if (times.size() != envelope.size() || times.size() != baseline.size()) {
    throw ParameterError("series differ in length");
  }
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < times.size() && times[i] <= window_end; ++i) {
    if (baseline[i] > 0.0) {
      lowest = std::min(lowest, envelope[i] / baseline[i]);
    }
  }
  if (!std::isfinite(lowest)) {
    throw ParameterError("contrast window holds no usable samples");
  }
  return 1.0 - lowest;
}

SweepResult frequency_sweep(const RamseyConfig& base, std::span<const double> f01_hz) {
  SweepResult out;
  out.rows.resize(f01_hz.size());
  const double sign = base.phi_b < 0.0 ? -1.0 : 1.0;
  std::vector<double> times;
  std::vector<std::vector<double>> envelopes;
  std::vector<std::size_t> fitted_rows;
  for (std::size_t k = 0; k < f01_hz.size(); ++k) {
    auto& row = out.rows[k];
    row.f01_hz = f01_hz[k];
    try {
      RamseyConfig cfg = base;
      cfg.phi_b = sign * invert_frequency(base.qubit, f01_hz[k]);
      row.point = working_point(base.qubit, cfg.phi_b);
      row.trace = decay_factor_mc(cfg);
      row.ok = true;
      times = row.trace.times;
      envelopes.push_back(row.trace.envelope);
      fitted_rows.push_back(k);
    } catch (const Error& err) {
      row.error = err.what();
    }
  }
  if (!envelopes.empty()) {
    const T2StarSummary summary = extract_t2star_sweep(times, envelopes);
    for (std::size_t j = 0; j < fitted_rows.size(); ++j) {
      auto& row = out.rows[fitted_rows[j]];
      row.t2star = summary.rows[j].t2star;
      row.t2star_converged = summary.rows[j].converged;
    }
    out.t2star_mean = summary.mean;
    out.t2star_max = summary.max;
  }
  return out;
}

}  // namespace rtnsim
