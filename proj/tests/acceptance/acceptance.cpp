// Acceptance gate: runs every acceptance criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit status is nonzero when any
// criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "rtnsim/analytic.hpp"
#include "rtnsim/app.hpp"
#include "rtnsim/fit.hpp"
#include "rtnsim/noise.hpp"
#include "rtnsim/parallel.hpp"
#include "rtnsim/qubit.hpp"
#include "rtnsim/ramsey.hpp"

using namespace rtnsim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw std::runtime_error("missing column " + name);
    }
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    out.push_back(cell);
  }
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      continue;
    }
    if (t.header.empty()) {
      t.header = split_csv(line);
    } else {
      t.rows.push_back(split_csv(line));
    }
  }
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("rtnsim_acceptance_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      r[idx[k]] = avg;
    }
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// The paper's working point and strong fluctuator.
constexpr double kPhiWork = -0.06051;
constexpr double kStrongB = 4.2e-5;
constexpr double kStrongRate = 50.0;

RamseyConfig strong_rtn_config() {
  RamseyConfig cfg;
  cfg.bath.enabled = false;
  cfg.strong = {make_rtn_source(kStrongB, kStrongRate)};
  cfg.phi_b = kPhiWork;
  cfg.repetitions = 3000;
  cfg.horizon = 50e-6;
  cfg.output_dt = 50e-9;
  cfg.detuning = 2.0 * std::numbers::pi * 2e6;
  cfg.threads = 0;
  return cfg;
}

// 1. Flicker PSD from 3000 fluctuators.
Outcome criterion_psd() {
  ScratchDir dir("psd");
  Config c;
  c.set("run.threads", "0");
  const auto start = Clock::now();
  run_command(c, "psd", dir.path);
  const double runtime = seconds_since(start);

  const Table t = read_csv(dir.path / "psd.csv");
  const auto fc = t.column("freq_hz");
  const auto ec = t.column("psd_estimated");
  const auto lc = t.column("psd_lorentzian_sum");
  const auto ic = t.column("psd_ideal_1f");
  std::vector<double> f, est, lor, ideal;
  for (const auto& row : t.rows) {
    f.push_back(std::stod(row[fc]));
    est.push_back(std::stod(row[ec]));
    lor.push_back(std::stod(row[lc]));
    ideal.push_back(std::stod(row[ic]));
  }
  const double slope = loglog_slope(f, est, f.front(), f.back());
  auto rms = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] / b[i] - 1.0;
      s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.size()));
  };
  const double r_el = rms(est, lor);
  const double r_ei = rms(est, ideal);
  const double r_li = rms(lor, ideal);
  const bool accurate = std::abs(slope + 1.0) <= 0.1 && r_el <= 0.15 && r_ei <= 0.15 &&
                        r_li <= 0.15;
  const bool fast = runtime < 60.0;
  Outcome o;
  o.pass = accurate && fast;
  o.detail = "slope " + fmt("%.4f", slope) + " over [" + fmt("%.4g", f.front()) + ", " +
             fmt("%.4g", f.back()) + "] Hz; RMS est/lorentzian " + fmt("%.3f", r_el) +
             ", est/ideal " + fmt("%.3f", r_ei) + ", lorentzian/ideal " + fmt("%.3f", r_li) +
             "; runtime " + fmt("%.1f", runtime) + " s on " +
             std::to_string(resolve_threads(0)) + " thread(s) (limit 60 s)";
  return o;
}

// 2. Single strong RTN beating at the working point.
Outcome criterion_single_rtn() {
  const RamseyConfig cfg = strong_rtn_config();
  const auto start = Clock::now();
  const DecayTrace trace = decay_factor_mc(cfg);
  const FitResult fit = fit_beating_ramsey(trace.times, trace.p1);
  const double runtime = seconds_since(start);
  const double slope = frequency_derivative(cfg.qubit, cfg.phi_b);
  double worst = 0.0;
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    const double t = trace.times[i];
    const double model = std::exp(-kStrongRate * t) * std::abs(std::cos(slope * kStrongB * t)) *
                         std::exp(-t / (2.0 * cfg.t1));
    worst = std::max(worst, std::abs(trace.envelope[i] - model));
  }
  const double limit = 3.0 / std::sqrt(3000.0);
  const double expected = 2.0 * std::abs(slope) * kStrongB;
  const double rel = std::abs(fit.delta_omega_split - expected) / expected;
  Outcome o;
  o.pass = worst <= limit && rel <= 0.02 && fit.converged && runtime < 120.0;
  o.detail = "max envelope deviation " + fmt("%.4f", worst) + " (limit " + fmt("%.4f", limit) +
             "); fitted split " + fmt("%.6g", fit.delta_omega_split) + " vs " +
             fmt("%.6g", expected) + " rad/s (" + fmt("%.2f", 100.0 * rel) + "%); runtime " +
             fmt("%.1f", runtime) + " s";
  return o;
}

// 3. Zero-switch probability of a 50 Hz fluctuator over 50 us.
Outcome criterion_zero_switch() {
  const auto src = make_rtn_source(kStrongB, kStrongRate);
  Sampler s(1, 0);
  const int n = 100000;
  int zero = 0;
  for (int i = 0; i < n; ++i) {
    zero += sample_rtn_path(src, 50e-6, s).switch_count() == 0 ? 1 : 0;
  }
  const double p = static_cast<double>(zero) / n;
  Outcome o;
  o.pass = std::abs(p - 0.9975) <= 0.0005;
  o.detail = "P(n=0) = " + fmt("%.5f", p) + " from 1e5 paths (target 0.9975 +- 0.0005)";
  return o;
}

// Largest |MC - exact| in standard errors over 20 checkpoints on [0, 50 us],
// real and imaginary parts separately, from 1e6 direct path averages.
double exact_vs_paths(double lambda, std::uint64_t seed) {
  const TransmonParams q;
  const double b = kStrongB;
  const double v = std::abs(frequency_derivative(q, kPhiWork)) * b;
  const double horizon = 50e-6;
  const int checkpoints = 20;
  const auto src = make_rtn_source(b, lambda);
  std::vector<double> sc(checkpoints, 0.0), ss(checkpoints, 0.0), scc(checkpoints, 0.0),
      sss(checkpoints, 0.0);
  Sampler s(seed, 0);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const auto path = sample_rtn_path(src, horizon, s);
    for (int k = 0; k < checkpoints; ++k) {
      const double t = horizon * (k + 1) / checkpoints;
      const double phase = v / b * rtn_integral(path, t);
      const double c = std::cos(phase), si = std::sin(phase);
      sc[k] += c;
      ss[k] += si;
      scc[k] += c * c;
      sss[k] += si * si;
    }
  }
  double worst = 0.0;
  for (int k = 0; k < checkpoints; ++k) {
    const double t = horizon * (k + 1) / checkpoints;
    const auto exact = exact_decay({v, lambda, 0}, t);
    const double mc = sc[k] / n, ms = ss[k] / n;
    const double se_c = std::sqrt((scc[k] / n - mc * mc) / (n - 1.0));
    const double se_s = std::sqrt((sss[k] / n - ms * ms) / (n - 1.0));
    worst = std::max({worst, std::abs(mc - exact.real()) / se_c,
                      std::abs(ms - exact.imag()) / se_s});
  }
  return worst;
}

// 4. Exact decay against a direct path average at the working point, and the
// n=0 series check. A fast-switching regime is reported alongside, ungated.
Outcome criterion_exact_oracle() {
  const TransmonParams q;
  const double v = std::abs(frequency_derivative(q, kPhiWork)) * kStrongB;
  const double worst = exact_vs_paths(kStrongRate, 4);
  const double fast = exact_vs_paths(1e5, 4);
  double series_gap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double t = 50e-6 * k / 100.0;
    const double sv = std::abs(truncated_decay({v, kStrongRate, 0}, t).value);
    const double eq = std::exp(-kStrongRate * t) * std::abs(std::cos(v * t));
    series_gap = std::max(series_gap, std::abs(sv - eq));
  }
  Outcome o;
  o.pass = worst <= 3.0 && series_gap <= 1e-12;
  o.detail = "largest |MC - exact| " + fmt("%.2f", worst) +
             " standard errors over 20 checkpoints (1e6 paths, lambda 50 Hz); n=0 series gap " +
             fmt("%.1e", series_gap) + "; ungated lambda 1e5 Hz regime " + fmt("%.2f", fast) +
             " standard errors";
  return o;
}

// 5. Joint decay of two fluctuators against the product of separate runs.
Outcome criterion_product() {
  RamseyConfig base = strong_rtn_config();
  const RtnSource a = make_rtn_source(2e-5, 1e6);
  const RtnSource b = make_rtn_source(1.5e-5, 1e6);
  RamseyConfig joint = base, only_a = base, only_b = base;
  joint.strong = {a, b};
  only_a.strong = {a};
  only_a.seed = 2;
  only_b.strong = {b};
  only_b.seed = 3;
  const auto tj = decay_factor_mc(joint);
  const auto ta = decay_factor_mc(only_a);
  const auto tb = decay_factor_mc(only_b);
  double worst = 0.0;
  for (std::size_t i = 0; i < tj.times.size(); ++i) {
    const double mj = std::abs(tj.decay_factor[i]);
    const double ma = std::abs(ta.decay_factor[i]);
    const double mb = std::abs(tb.decay_factor[i]);
    const double se = std::sqrt(tj.modulus_stderr[i] * tj.modulus_stderr[i] +
                                mb * mb * ta.modulus_stderr[i] * ta.modulus_stderr[i] +
                                ma * ma * tb.modulus_stderr[i] * tb.modulus_stderr[i]);
    if (se > 0.0) {
      worst = std::max(worst, std::abs(mj - ma * mb) / se);
    }
  }
  Outcome o;
  o.pass = worst <= 3.0;
  o.detail = "largest |joint - product| " + fmt("%.2f", worst) +
             " combined standard errors over [0, 50] us (M=3000 each)";
  return o;
}

// 6. Relaxation-limited Ramsey decay.
Outcome criterion_t1_limit() {
  RamseyConfig cfg = strong_rtn_config();
  cfg.strong.clear();
  cfg.repetitions = 4;
  const auto trace = decay_factor_mc(cfg);
  const auto fit = fit_exponential_ramsey(trace.times, trace.p1);
  const double t2 = fit.t2star();
  const double rel = std::abs(t2 - 2.0 * cfg.t1) / (2.0 * cfg.t1);
  Outcome o;
  o.pass = fit.converged && rel <= 0.03;
  o.detail = "fitted T2 " + fmt("%.4g", t2 * 1e6) + " us vs 40 us (" + fmt("%.3f", 100.0 * rel) +
             "%)";
  return o;
}

// 7. Twenty-point frequency sweep with and without the strong fluctuator.
Outcome criterion_sweep() {
  RamseyConfig base = strong_rtn_config();
  base.bath.enabled = true;
  base.repetitions = 200;
  base.strong.clear();
  std::vector<double> grid(20);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = (2.6 + (4.69 - 2.6) * static_cast<double>(i) / 19.0) * 1e9;
  }
  const auto quiet = frequency_sweep(base, grid);
  RamseyConfig noisy = base;
  noisy.strong = {make_rtn_source(kStrongB, kStrongRate)};
  const auto loud = frequency_sweep(noisy, grid);

  std::vector<double> t2, slope, node, node_slope;
  std::size_t best = 0;
  bool all_ok = true;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto& q = quiet.rows[k];
    const auto& l = loud.rows[k];
    all_ok = all_ok && q.ok && l.ok && q.t2star_converged;
    if (!q.ok || !l.ok) {
      continue;
    }
    t2.push_back(q.t2star);
    slope.push_back(std::abs(q.point.domega_dphi));
    if (q.t2star > quiet.rows[best].t2star) {
      best = k;
    }
    std::vector<double> baseline(l.trace.times.size());
    for (std::size_t i = 0; i < baseline.size(); ++i) {
      baseline[i] = std::exp(-l.trace.times[i] / (2.0 * base.t1));
    }
    node.push_back(first_node_time(l.trace.times, l.trace.envelope, baseline));
    node_slope.push_back(std::abs(l.point.domega_dphi));
  }
  const double rho = spearman(t2, slope);
  // Node times ordered by increasing slope must fall strictly.
  std::vector<std::size_t> order(node.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return node_slope[a] < node_slope[b]; });
  bool decreasing = true;
  for (std::size_t i = 1; i < order.size(); ++i) {
    decreasing = decreasing && std::isfinite(node[order[i]]) &&
                 node[order[i]] < node[order[i - 1]];
  }
  const bool max_at_sweet_end = best == grid.size() - 1;
  Outcome o;
  o.pass = all_ok && max_at_sweet_end && rho <= -0.9 && decreasing;
  o.detail = "T2* max at " + fmt("%.4g", grid[best] / 1e9) + " GHz (" +
             fmt("%.3g", quiet.rows[best].t2star * 1e6) + " us), min " +
             fmt("%.3g", *std::min_element(t2.begin(), t2.end()) * 1e6) + " us; Spearman " +
             fmt("%.3f", rho) + "; first node " +
             fmt("%.3g", node[order.front()] * 1e6) + " -> " +
             fmt("%.3g", node[order.back()] * 1e6) + " us, strictly decreasing: " +
             (decreasing ? "yes" : "no") + " (M=200, full bath)";
  return o;
}

// 8. Median beating contrast as the amplitude is split over N fluctuators.
Outcome criterion_splitting() {
  ScratchDir dir("multi");
  Config c;
  c.set("run.threads", "0");
  run_command(c, "multi-rtn", dir.path);
  const Table t = read_csv(dir.path / "contrast.csv");
  const auto nc = t.column("n_sources");
  const auto cc = t.column("beating_contrast");
  std::map<long, std::vector<double>> by_n;
  for (const auto& row : t.rows) {
    by_n[std::stol(row[nc])].push_back(std::stod(row[cc]));
  }
  std::string detail = "median contrast";
  bool decreasing = by_n.size() == 4;
  double previous = INFINITY;
  for (const auto& [n, values] : by_n) {
    const double m = median(values);
    detail += " N=" + std::to_string(n) + ": " + fmt("%.3f", m);
    decreasing = decreasing && values.size() == 10 && m < previous;
    previous = m;
  }
  Outcome o;
  o.pass = decreasing;
  o.detail = detail + " (10 seeds each)";
  return o;
}

// 9. Fit round trips under 3000-shot binomial readout noise.
Outcome criterion_fit_round_trip() {
  const double gamma = 0.05e6;
  const double delta = 2.0 * std::numbers::pi * 0.5e6;
  const double split = 2.0 * 9219575869.581286 * kStrongB;
  const std::size_t points = 1001;
  std::vector<double> t(points);
  for (std::size_t i = 0; i < points; ++i) {
    t[i] = 50e-6 * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  struct Stats {
    double worst = 0.0;
    double sum = 0.0;
  };
  std::map<std::string, Stats> stats;
  auto track = [&](const std::string& name, double got, double truth) {
    const double rel = (got - truth) / truth;
    auto& s = stats[name];
    s.worst = std::max(s.worst, std::abs(rel));
    s.sum += rel;
  };
  const int seeds = 100;
  int failures = 0;
  for (int seed = 1; seed <= seeds; ++seed) {
    for (const bool beating : {false, true}) {
      Sampler s(static_cast<std::uint64_t>(seed) + (beating ? 1000 : 0), kReadoutStream);
      std::vector<double> p(points);
      for (std::size_t i = 0; i < points; ++i) {
        const double clean =
            0.5 * (1.0 + std::cos(delta * t[i]) * std::exp(-gamma * t[i]) *
                             (beating ? std::abs(std::cos(split * t[i] / 2.0)) : 1.0));
        p[i] = static_cast<double>(s.binomial(3000, clean)) / 3000.0;
      }
      if (beating) {
        const auto fit = fit_beating_ramsey(t, p);
        failures += fit.converged && fit.model_preferred ? 0 : 1;
        track("beating gamma", fit.gamma, gamma);
        track("beating delta_omega", fit.delta_omega, delta);
        track("split", fit.delta_omega_split, split);
      } else {
        const auto fit = fit_exponential_ramsey(t, p);
        failures += fit.converged ? 0 : 1;
        track("gamma", fit.gamma, gamma);
        track("delta_omega", fit.delta_omega, delta);
      }
    }
  }
  bool pass = failures == 0;
  std::string detail;
  for (const auto& [name, s] : stats) {
    const double bias = s.sum / seeds;
    pass = pass && s.worst <= 0.02 && std::abs(bias) < 0.005;
    detail += name + " worst " + fmt("%.2f", 100.0 * s.worst) + "% bias " +
              fmt("%+.3f", 100.0 * bias) + "%; ";
  }
  Outcome o;
  o.pass = pass;
  o.detail = detail + std::to_string(failures) + " unconverged or unpreferred fits (100 seeds)";
  return o;
}

// 10. Byte-identical outputs across repeated runs and thread counts.
Outcome criterion_determinism() {
  ScratchDir dir("determinism");
  Config c;
  c.merge_string(R"(
[bath]
n_sources = 300
[ramsey]
repetitions = 64
horizon_us = 10.0
[psd]
horizon_ms = 0.2
realizations = 8
normalization_hz = 2e5
[sweep]
points = 4
[multi_rtn]
seeds = 3
)",
                 "determinism");
  const char* commands[] = {"psd", "ramsey", "sweep", "multi-rtn", "fit"};
  std::size_t compared = 0;
  bool identical = true;
  std::string mismatch;
  for (const char* cmd : commands) {
    std::vector<fs::path> runs;
    int k = 0;
    for (const char* threads : {"1", "1", "8", "8"}) {
      Config run = c;
      run.set("run.threads", threads);
      if (std::string(cmd) == "fit") {
        run.set("fit.input_csv", "'" + (dir.path / "ramsey_0" / "ramsey.csv").string() + "'");
      }
      const fs::path out = dir.path / (std::string(cmd) + "_" + std::to_string(k++));
      run_command(run, cmd, out);
      runs.push_back(out);
    }
    for (const auto& entry : fs::directory_iterator(runs.front())) {
      const std::string reference = slurp(entry.path());
      for (std::size_t r = 1; r < runs.size(); ++r) {
        ++compared;
        if (slurp(runs[r] / entry.path().filename()) != reference) {
          identical = false;
          mismatch = entry.path().filename().string();
        }
      }
    }
  }
  Outcome o;
  o.pass = identical && compared > 0;
  o.detail = std::to_string(compared) +
             " file comparisons over psd, ramsey, sweep, multi-rtn, fit at 1 and 8 threads" +
             (identical ? "" : "; first mismatch " + mismatch);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_psd},           {2, criterion_single_rtn},   {3, criterion_zero_switch},
      {4, criterion_exact_oracle},  {5, criterion_product},      {6, criterion_t1_limit},
      {7, criterion_sweep},         {8, criterion_splitting},    {9, criterion_fit_round_trip},
      {10, criterion_determinism},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    Outcome o;
    const auto start = Clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
