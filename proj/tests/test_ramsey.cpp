#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "rtnsim/analytic.hpp"
#include "rtnsim/error.hpp"
#include "rtnsim/ramsey.hpp"

using namespace rtnsim;

namespace {

RamseyConfig strong_only(double amplitude, double rate) {
  RamseyConfig cfg;
  cfg.bath.enabled = false;
  cfg.strong = {make_rtn_source(amplitude, rate)};
  cfg.horizon = 5e-6;
  cfg.output_dt = 50e-9;
  cfg.integration_dt = 0.2e-9;
  cfg.repetitions = 4000;
  cfg.threads = 1;
  return cfg;
}

RamseyConfig small_bath() {
  RamseyConfig cfg;
  cfg.bath.n_sources = 40;
  cfg.bath.amplitude = 2e-6;
  cfg.bath.lambda_max = 1e7;
  cfg.strong = {make_rtn_source(4.2e-5, 2e5)};
  cfg.horizon = 2e-6;
  cfg.output_dt = 50e-9;
  cfg.repetitions = 200;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("single fluctuator Monte Carlo matches the exact decay factor") {
  for (const double rate : {5e4, 1e6, 2e7}) {
    CAPTURE(rate);
    const auto cfg = strong_only(4.2e-5, rate);
    const auto trace = decay_factor_mc(cfg);
    REQUIRE(trace.repetitions == cfg.repetitions);
    CHECK(trace.failed_repetitions == 0);
    const double v = frequency_derivative(cfg.qubit, cfg.phi_b) * 4.2e-5;
    for (std::size_t i = 0; i < trace.times.size(); i += 10) {
      const double t = trace.times[i];
      const auto exact = exact_decay({v, rate, 0}, t);
      // Each quadrature of the estimate has variance at most 1/M.
      CHECK(std::abs(trace.decay_factor[i] - exact) < 5.0 * std::sqrt(2.0 / cfg.repetitions));
      CHECK(trace.envelope[i] ==
            doctest::Approx(std::abs(trace.decay_factor[i]) * std::exp(-t / (2.0 * cfg.t1))));
    }
  }
}

TEST_CASE("no noise leaves pure relaxation and a clean fringe") {
  RamseyConfig cfg = strong_only(4.2e-5, 1e5);
  cfg.strong.clear();
  cfg.repetitions = 3;
  cfg.detuning = 2.0 * std::numbers::pi * 2e6;
  const auto trace = decay_factor_mc(cfg);
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    const double t = trace.times[i];
    CHECK(trace.decay_factor[i] == std::complex<double>(1.0, 0.0));
    CHECK(trace.envelope[i] == doctest::Approx(std::exp(-t / (2.0 * cfg.t1))));
    CHECK(trace.p1[i] ==
          doctest::Approx(0.5 * (1.0 + std::cos(cfg.detuning * t) * trace.envelope[i])));
    CHECK(trace.modulus_stderr[i] == 0.0);
  }
  CHECK(trace.p1.front() == doctest::Approx(1.0));
}

TEST_CASE("results are independent of the thread count and keyed by the seed") {
  auto cfg = small_bath();
  const auto one = decay_factor_mc(cfg);
  cfg.threads = 3;
  const auto three = decay_factor_mc(cfg);
  CHECK(one.decay_factor == three.decay_factor);
  CHECK(one.p1 == three.p1);
  CHECK(one.modulus_stderr == three.modulus_stderr);
  cfg.seed = 2;
  const auto other = decay_factor_mc(cfg);
  CHECK(other.decay_factor != one.decay_factor);
}

TEST_CASE("negating the noise conjugates the linearized decay factor") {
  auto cfg = small_bath();
  const auto plain = decay_factor_mc(cfg);
  cfg.negate_noise = true;
  const auto flipped = decay_factor_mc(cfg);
  for (std::size_t i = 0; i < plain.times.size(); ++i) {
    CHECK(std::abs(flipped.decay_factor[i] - std::conj(plain.decay_factor[i])) < 1e-12);
  }
}

TEST_CASE("grid-nonlinear phases track the linearized phases for small flux") {
  const auto cfg = small_bath();
  const auto bath = config_bath(cfg);
  CHECK(bath.sources.size() == cfg.bath.n_sources);
  const std::size_t cells = output_cells(cfg);
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto real = sample_realization(cfg, bath, r);
    CHECK(real.paths.size() == cfg.bath.n_sources + cfg.strong.size());
    const auto grid =
        grid_nonlinear_phases(real, cfg.qubit, cfg.phi_b, cfg.integration_dt, cfg.output_dt, cells);
    REQUIRE(grid.size() == cells + 1);
    CHECK(grid[0] == 0.0);
    for (std::size_t i = 0; i <= cells; i += 8) {
      const double t = static_cast<double>(i) * cfg.output_dt;
      const double lin = accumulate_phase(real, t, cfg.qubit, cfg.phi_b, PhaseMode::kLinearized);
      // Curvature correction is of order omega'' b^2 t / 2, far below 1e-3 rad here.
      CHECK(std::abs(grid[i] - lin) < 1e-3);
      CHECK(accumulate_phase(real, t, cfg.qubit, cfg.phi_b, PhaseMode::kGridNonlinear) ==
            doctest::Approx(grid[i]).epsilon(1e-9).scale(1e-9));
    }
    CHECK_THROWS_AS(
        accumulate_phase(real, 1.0, cfg.qubit, cfg.phi_b, PhaseMode::kLinearized), RangeError);
  }
}

TEST_CASE("grid-nonlinear Monte Carlo agrees with the linearized run") {
  auto cfg = small_bath();
  cfg.horizon = 1e-6;
  cfg.repetitions = 50;
  const auto lin = decay_factor_mc(cfg);
  cfg.mode = PhaseMode::kGridNonlinear;
  const auto grid = decay_factor_mc(cfg);
  for (std::size_t i = 0; i < lin.times.size(); ++i) {
    CHECK(std::abs(lin.decay_factor[i] - grid.decay_factor[i]) < 1e-3);
  }
}

TEST_CASE("configuration validation") {
  auto cfg = strong_only(4.2e-5, 1e5);
  CHECK_NOTHROW(validate(cfg));
  CHECK(output_cells(cfg) == 100);
  auto bad = cfg;
  bad.output_dt = 1e-5;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = cfg;
  bad.output_dt = 33e-9;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = cfg;
  bad.repetitions = 0;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = cfg;
  bad.t1 = 0.0;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = cfg;
  bad.strong = {RtnSource{0.5, 1.0}};
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = cfg;
  bad.phi_b = 0.5;
  CHECK_THROWS_AS(validate(bad), DomainError);
  bad = cfg;
  bad.mode = PhaseMode::kGridNonlinear;
  bad.integration_dt = 0.3e-9;
  CHECK_THROWS_AS(validate(bad), ParameterError);
}

TEST_CASE("envelope models") {
  const std::vector<double> t = {0.0, 1e-6, 2e-6};
  const std::vector<double> base = {1.0, 0.9, 0.8};
  const auto beat = beating_envelope_model(t, base, 1e6);
  CHECK(beat[1] == doctest::Approx(0.9 * std::abs(std::cos(0.5))));
  const std::vector<double> amps = {1e-5, 2e-5};
  const auto multi = multi_rtn_envelope_model(t, base, amps, 1e10);
  CHECK(multi[2] ==
        doctest::Approx(0.8 * std::abs(std::cos(1e10 * 1e-5 * 2e-6) * std::cos(1e10 * 2e-5 * 2e-6))));
  // One fluctuator of amplitude b beats at 2 b domega/dphi.
  const std::vector<double> one = {3e-5};
  const auto a = multi_rtn_envelope_model(t, base, one, 1e10);
  const auto b = beating_envelope_model(t, base, 2.0 * 1e10 * 3e-5);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]));
  }
  CHECK_THROWS_AS(beating_envelope_model(t, std::vector<double>{1.0}, 1.0), ParameterError);
}

TEST_CASE("amplitudes are spread over the simplex") {
  Sampler s(4, 0);
  for (const std::size_t n : {1, 2, 8}) {
    const auto amps = distribute_amplitudes(n, 8e-5, s);
    REQUIRE(amps.size() == n);
    double total = 0.0;
    for (const double a : amps) {
      CHECK(a >= 0.0);
      total += a;
    }
    CHECK(total == doctest::Approx(8e-5).epsilon(1e-12));
  }
  // Each share of a uniform simplex point has mean b0 / n.
  double first = 0.0;
  for (int i = 0; i < 20000; ++i) {
    first += distribute_amplitudes(4, 1.0, s)[0];
  }
  CHECK(first / 20000 == doctest::Approx(0.25).epsilon(0.02));
  CHECK_THROWS_AS(distribute_amplitudes(0, 1.0, s), ParameterError);
  CHECK_THROWS_AS(distribute_amplitudes(2, 0.0, s), ParameterError);
}

TEST_CASE("first node and contrast on synthetic envelopes") {
  std::vector<double> t, env, base;
  const double a = 2.0 * std::numbers::pi * 1e5;
  for (int i = 0; i <= 400; ++i) {
    t.push_back(i * 25e-9);
    base.push_back(std::exp(-t.back() / 40e-6));
    env.push_back(base.back() * std::abs(std::cos(a * t.back())));
  }
  const double node = std::numbers::pi / (2.0 * a);
  CHECK(first_node_time(t, env, base) == doctest::Approx(node).epsilon(0.01));
  CHECK(beating_contrast(t, env, base, node) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(beating_contrast(t, env, base, node / 2.0) ==
        doctest::Approx(1.0 - std::cos(a * node / 2.0)).epsilon(1e-6));
  CHECK(std::isinf(first_node_time(t, base, base)));
  CHECK_THROWS_AS(beating_contrast(t, env, base, -1.0), ParameterError);
}

TEST_CASE("frequency sweep uses the inverted bias and reports unattainable rows") {
  RamseyConfig cfg = strong_only(4.2e-5, 1e5);
  cfg.strong.clear();
  cfg.horizon = 20e-6;
  cfg.output_dt = 200e-9;
  cfg.repetitions = 2;
  const std::vector<double> targets = {3.5e9, 4.5e9, 9e9};
  const auto sweep = frequency_sweep(cfg, targets);
  REQUIRE(sweep.rows.size() == 3);
  for (int k = 0; k < 2; ++k) {
    const auto& row = sweep.rows[k];
    CHECK(row.ok);
    CHECK(row.point.phi_b < 0.0);
    CHECK(row.point.omega01 == doctest::Approx(2.0 * std::numbers::pi * targets[k]));
    CHECK(row.t2star_converged);
    CHECK(row.t2star == doctest::Approx(2.0 * cfg.t1).epsilon(1e-6));
  }
  CHECK_FALSE(sweep.rows[2].ok);
  CHECK_FALSE(sweep.rows[2].error.empty());
  CHECK(sweep.t2star_max == doctest::Approx(2.0 * cfg.t1).epsilon(1e-6));
}
