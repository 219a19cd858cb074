#include "rtnsim/fit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <string>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include "rtnsim/error.hpp"

namespace rtnsim {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// eval(theta, residuals, jacobian-or-null)
using Evaluate = std::function<void(const VectorXd&, VectorXd&, MatrixXd*)>;
using Project = std::function<void(VectorXd&)>;

struct LmOutcome {
  VectorXd theta;
  double rss = 0.0;
  int iterations = 0;
  bool converged = false;
  MatrixXd jtj;
};

LmOutcome levenberg_marquardt(VectorXd theta, const Evaluate& eval, const Project& project,
                              const FitOptions& options) {
  VectorXd r;
  MatrixXd jac;
  project(theta);
  eval(theta, r, &jac);
  double rss = r.squaredNorm();
  double mu = 1e-3;
  LmOutcome out;
  const double tiny_rss = 1e-30 * static_cast<double>(r.size());
  for (int it = 1; it <= options.max_iterations; ++it) {
    out.iterations = it;
    if (!std::isfinite(rss)) {
      break;
    }
    if (rss <= tiny_rss) {
      out.converged = true;
      break;
    }
    const MatrixXd a = jac.transpose() * jac;
    const VectorXd g = jac.transpose() * r;
    const double floor = 1e-12 * std::max(a.diagonal().maxCoeff(), 1e-300);
    MatrixXd damped = a;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      damped(i, i) += mu * std::max(a(i, i), floor);
    }
    const VectorXd step = damped.ldlt().solve(-g);
    VectorXd trial = theta + step;
    project(trial);
    const VectorXd applied = trial - theta;
    bool small_step = true;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      if (std::abs(applied(i)) >
          options.step_tolerance * (std::abs(theta(i)) + options.step_tolerance)) {
        small_step = false;
      }
    }
    VectorXd r_trial;
    eval(trial, r_trial, nullptr);
    const double rss_trial = r_trial.squaredNorm();
    if (std::isfinite(rss_trial) && rss_trial < rss) {
      const double drop = rss - rss_trial;
      theta = trial;
      rss = rss_trial;
      eval(theta, r, &jac);
      mu = std::max(mu / 3.0, 1e-15);
      if (small_step || drop <= options.residual_tolerance * rss) {
        out.converged = true;
        break;
      }
    } else {
      if (small_step) {
        out.converged = true;
        break;
      }
      mu *= 4.0;
      if (mu > 1e20) {
        break;
      }
    }
  }
  out.theta = theta;
  out.rss = rss;
  out.jtj = jac.transpose() * jac;
  return out;
}

struct Data {
  std::vector<double> t;  // scaled to [0, ~1]
  std::vector<double> y;  // 2 p1 - 1, or envelope values
  double scale = 1.0;     // seconds per scaled unit
};

Data prepare(std::span<const double> times, std::span<const double> values, bool ramsey) {
  if (times.size() != values.size()) {
    throw ValidationError("time and data series differ in length");
  }
  if (times.size() < 8) {
    throw ValidationError("a fit needs at least 8 samples");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || !std::isfinite(values[i])) {
      throw ValidationError("data contain non-finite values");
    }
    if (times[i] < 0.0) {
      throw ValidationError("times must be non-negative");
    }
    if (i > 0 && !(times[i] > times[i - 1])) {
      throw ValidationError("times must be strictly increasing");
    }
  }
  Data d;
  d.scale = times.back();
  if (!(d.scale > 0.0)) {
    throw ValidationError("time span must be positive");
  }
  d.t.resize(times.size());
  d.y.resize(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    d.t[i] = times[i] / d.scale;
    d.y[i] = ramsey ? 2.0 * values[i] - 1.0 : values[i];
  }
  return d;
}

double median_spacing(const std::vector<double>& t) {
  std::vector<double> gaps(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) {
    gaps[i - 1] = t[i] - t[i - 1];
  }
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2),
                   gaps.end());
  return gaps[gaps.size() / 2];
}

// Dominant angular frequency of y by a fine DFT scan with parabolic refinement.
double dominant_frequency(const Data& d) {
  const double span = d.t.back() - d.t.front();
  const double nyquist = std::numbers::pi / median_spacing(d.t);
  const double step = std::numbers::pi / (2.0 * span);
  const auto count = static_cast<std::size_t>(nyquist / step);
  std::vector<double> power(count + 1);
  for (std::size_t k = 0; k <= count; ++k) {
    const double w = step * static_cast<double>(k);
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < d.t.size(); ++i) {
      acc += d.y[i] * std::polar(1.0, -w * d.t[i]);
    }
    power[k] = std::norm(acc);
  }
  const auto best = static_cast<std::size_t>(
      std::max_element(power.begin(), power.end()) - power.begin());
  double w = step * static_cast<double>(best);
  if (best > 0 && best < count) {
    const double a = power[best - 1];
    const double b = power[best];
    const double c = power[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) {
      w += step * 0.5 * (a - c) / denom;
    }
  }
  return std::max(w, 0.0);
}

struct Peak {
  double t;
  double value;
};

// Largest |y| within consecutive windows of the given width.
std::vector<Peak> window_maxima(const Data& d, double width) {
  std::vector<Peak> out;
  std::size_t i = 0;
  while (i < d.t.size()) {
    const double end = d.t[i] + width;
    Peak p{d.t[i], std::abs(d.y[i])};
    for (; i < d.t.size() && d.t[i] < end; ++i) {
      if (std::abs(d.y[i]) > p.value) {
        p = Peak{d.t[i], std::abs(d.y[i])};
      }
    }
    out.push_back(p);
  }
  return out;
}

double window_width(const Data& d, double omega) {
  const double span = d.t.back() - d.t.front();
  const double period = omega > 0.0 ? 2.0 * std::numbers::pi / omega : span;
  return std::clamp(period, 2.0 * median_spacing(d.t), span / 10.0);
}

// Decay rate from a log-linear fit of the window maxima.
double initial_gamma(const std::vector<Peak>& peaks, double span) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = 0;
  for (const auto& p : peaks) {
    if (p.value <= 0.02) {
      continue;
    }
    const double y = std::log(p.value);
    sx += p.t;
    sy += y;
    sxx += p.t * p.t;
    sxy += p.t * y;
    ++n;
  }
  const double fallback = 1.0 / span;
  if (n < 2) {
    return fallback;
  }
  const double nd = static_cast<double>(n);
  const double denom = nd * sxx - sx * sx;
  if (!(denom > 0.0)) {
    return fallback;
  }
  const double slope = (nd * sxy - sx * sy) / denom;
  return slope < 0.0 ? -slope : 0.1 * fallback;
}

double abs_cos_derivative(double x, double t) {
  // d|cos(s t/2)|/ds with x = s t / 2; one-sided (rising) at nodes.
  const double c = std::cos(x);
  const double s = std::sin(x);
  if (c == 0.0) {
    return std::abs(s) * t / 2.0;
  }
  return -std::copysign(1.0, c) * s * t / 2.0;
}

void eval_exponential(const Data& d, const VectorXd& th, VectorXd& r, MatrixXd* jac) {
  const std::size_t n = d.t.size();
  r.resize(static_cast<Eigen::Index>(n));
  if (jac != nullptr) {
    jac->resize(static_cast<Eigen::Index>(n), 2);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = d.t[i];
    const double e = std::exp(-th(0) * t);
    const double c = std::cos(th(1) * t);
    const auto row = static_cast<Eigen::Index>(i);
    // Residuals in p1 units.
    r(row) = 0.5 * c * e - 0.5 * d.y[i];
    if (jac != nullptr) {
      (*jac)(row, 0) = -0.5 * t * c * e;
      (*jac)(row, 1) = -0.5 * t * std::sin(th(1) * t) * e;
    }
  }
}

void eval_beating(const Data& d, const VectorXd& th, VectorXd& r, MatrixXd* jac) {
  const std::size_t n = d.t.size();
  r.resize(static_cast<Eigen::Index>(n));
  if (jac != nullptr) {
    jac->resize(static_cast<Eigen::Index>(n), 3);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = d.t[i];
    const double e = std::exp(-th(0) * t);
    const double c = std::cos(th(1) * t);
    const double x = th(2) * t / 2.0;
    const double b = std::abs(std::cos(x));
    const auto row = static_cast<Eigen::Index>(i);
    r(row) = 0.5 * c * e * b - 0.5 * d.y[i];
    if (jac != nullptr) {
      (*jac)(row, 0) = -0.5 * t * c * e * b;
      (*jac)(row, 1) = -0.5 * t * std::sin(th(1) * t) * e * b;
      (*jac)(row, 2) = 0.5 * c * e * abs_cos_derivative(x, t);
    }
  }
}

void eval_envelope(const Data& d, const VectorXd& th, VectorXd& r, MatrixXd* jac) {
  const std::size_t n = d.t.size();
  r.resize(static_cast<Eigen::Index>(n));
  if (jac != nullptr) {
    jac->resize(static_cast<Eigen::Index>(n), 1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(-th(0) * d.t[i]);
    const auto row = static_cast<Eigen::Index>(i);
    r(row) = e - d.y[i];
    if (jac != nullptr) {
      (*jac)(row, 0) = -d.t[i] * e;
    }
  }
}

void keep_gamma_nonnegative(VectorXd& th) { th(0) = std::max(th(0), 0.0); }

// Standard errors s^2 (J^T J)^-1 in scaled units; NaN when singular.
std::vector<double> standard_errors(const LmOutcome& lm, std::size_t n) {
  const auto p = static_cast<std::size_t>(lm.theta.size());
  std::vector<double> out(p, std::numeric_limits<double>::quiet_NaN());
  if (n <= p) {
    return out;
  }
  Eigen::FullPivLU<MatrixXd> lu(lm.jtj);
  if (!lu.isInvertible()) {
    return out;
  }
  const double s2 = lm.rss / static_cast<double>(n - p);
  const MatrixXd cov = lu.inverse() * s2;
  for (std::size_t i = 0; i < p; ++i) {
    const double v = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    out[i] = v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

bool flat_data(const Data& d) {
  double mx = 0.0;
  for (const double v : d.y) {
    mx = std::max(mx, std::abs(v));
  }
  return mx < 1e-9;
}

// The fitted envelope has died before the second sample: nothing constrains
// the parameters any more.
bool dead_envelope(const Data& d, double gamma) {
  const double first = d.t.size() > 1 ? d.t[1] : d.t[0];
  return gamma * first > 50.0;
}

FitResult flat_result(FitModel model, std::size_t n) {
  FitResult res;
  res.model = model;
  res.gamma = std::numeric_limits<double>::infinity();
  res.non_identifiable = true;
  res.converged = false;
  res.samples = n;
  res.diagnostics = "data carry no oscillation or decay to fit";
  return res;
}

FitResult exponential_fit(const Data& d, const FitOptions& options) {
  const std::size_t n = d.t.size();
  if (flat_data(d)) {
    return flat_result(FitModel::kExponential, n);
  }
  const double span = d.t.back() - d.t.front();
  const double w0 = std::isnan(options.delta_omega) ? dominant_frequency(d)
                                                    : options.delta_omega * d.scale;
  const double g0 = std::isnan(options.gamma)
                        ? initial_gamma(window_maxima(d, window_width(d, w0)), span)
                        : options.gamma * d.scale;
  VectorXd theta(2);
  theta << g0, w0;
  const LmOutcome lm = levenberg_marquardt(
      theta, [&](const VectorXd& th, VectorXd& r, MatrixXd* j) { eval_exponential(d, th, r, j); },
      keep_gamma_nonnegative, options);
  const auto se = standard_errors(lm, n);
  FitResult res;
  res.model = FitModel::kExponential;
  res.gamma = lm.theta(0) / d.scale;
  res.delta_omega = std::abs(lm.theta(1)) / d.scale;
  res.gamma_stderr = se[0] / d.scale;
  res.delta_omega_stderr = se[1] / d.scale;
  res.residual_rms = std::sqrt(lm.rss / static_cast<double>(n));
  res.converged = lm.converged;
  res.iterations = lm.iterations;
  res.samples = n;
  if (dead_envelope(d, lm.theta(0))) {
    res.non_identifiable = true;
    res.converged = false;
    res.diagnostics = "fitted decay is complete before the second sample";
  } else if (!lm.converged) {
    res.diagnostics = "iteration cap reached without meeting the tolerances";
  }
  return res;
}

// Split starting values pi / t_node from the deepest envelope minima. The
// envelope is a sliding maximum of |y| over half a carrier period.
std::vector<double> split_starts(const Data& d, double w0, double g0, int starts) {
  const double span = d.t.back() - d.t.front();
  const double width = window_width(d, w0);
  const std::size_t n = d.t.size();
  std::vector<double> env(n, 0.0);
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (d.t[i] - d.t[lo] > 0.25 * width) {
      ++lo;
    }
    while (hi + 1 < n && d.t[hi + 1] - d.t[i] <= 0.25 * width) {
      ++hi;
    }
    for (std::size_t j = lo; j <= hi; ++j) {
      env[i] = std::max(env[i], std::abs(d.y[j]));
    }
    env[i] *= std::exp(g0 * d.t[i]);
  }
  // Keep points that are the first minimum within one carrier period either side.
  std::vector<Peak> minima;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    bool lowest = true;
    for (std::size_t j = i; j-- > 0 && d.t[i] - d.t[j] <= width;) {
      lowest = lowest && env[j] > env[i];
    }
    for (std::size_t j = i + 1; j < n && d.t[j] - d.t[i] <= width; ++j) {
      lowest = lowest && env[j] >= env[i];
    }
    if (lowest && d.t[i] - d.t.front() > width && d.t.back() - d.t[i] > width) {
      minima.push_back(Peak{d.t[i], env[i]});
    }
  }
  std::sort(minima.begin(), minima.end(),
            [](const Peak& a, const Peak& b) { return a.value < b.value; });
  std::vector<double> out;
  for (const auto& m : minima) {
    if (static_cast<int>(out.size()) >= starts) {
      break;
    }
    out.push_back(std::numbers::pi / m.t);
  }
  if (out.empty()) {
    out.push_back(std::numbers::pi / span);
  }
  return out;
}

}  // namespace

const char* to_string(FitModel model) {
  return model == FitModel::kExponential ? "exponential" : "beating";
}

FitResult fit_exponential_ramsey(std::span<const double> times, std::span<const double> p1,
                                 const FitOptions& options) {
  return exponential_fit(prepare(times, p1, true), options);
}

FitResult fit_beating_ramsey(std::span<const double> times, std::span<const double> p1,
                             const FitOptions& options) {
  const Data d = prepare(times, p1, true);
  const std::size_t n = d.t.size();
  if (flat_data(d)) {
    return flat_result(FitModel::kBeating, n);
  }
  const FitResult base = exponential_fit(d, options);
  const double span = d.t.back() - d.t.front();
  const double w0 = std::isnan(options.delta_omega) ? base.delta_omega * d.scale
                                                    : options.delta_omega * d.scale;
  const double g0 = std::isnan(options.gamma)
                        ? initial_gamma(window_maxima(d, window_width(d, w0)), span)
                        : options.gamma * d.scale;
  std::vector<double> starts;
  if (!std::isnan(options.delta_omega_split)) {
    starts.push_back(options.delta_omega_split * d.scale);
  } else {
    starts = split_starts(d, w0, g0, options.starts);
  }

  // The nested exponential optimum with zero split is always a candidate, so
  // the beating fit never ends above the exponential residual.
  std::vector<std::array<double, 3>> candidates;
  for (const double s0 : starts) {
    candidates.push_back({g0, w0, s0});
  }
  if (base.converged && std::isnan(options.delta_omega_split)) {
    candidates.push_back({base.gamma * d.scale, base.delta_omega * d.scale, 0.0});
  }

  LmOutcome best;
  bool have = false;
  for (const auto& c : candidates) {
    VectorXd theta(3);
    theta << c[0], c[1], c[2];
    LmOutcome lm = levenberg_marquardt(
        theta, [&](const VectorXd& th, VectorXd& r, MatrixXd* j) { eval_beating(d, th, r, j); },
        keep_gamma_nonnegative, options);
    const bool better = !have || (lm.converged && !best.converged) ||
                        (lm.converged == best.converged && lm.rss < best.rss);
    if (better) {
      best = std::move(lm);
      have = true;
    }
  }

  const auto se = standard_errors(best, n);
  FitResult res;
  res.model = FitModel::kBeating;
  res.gamma = best.theta(0) / d.scale;
  res.delta_omega = std::abs(best.theta(1)) / d.scale;
  res.delta_omega_split = std::abs(best.theta(2)) / d.scale;
  res.gamma_stderr = se[0] / d.scale;
  res.delta_omega_stderr = se[1] / d.scale;
  res.split_stderr = se[2] / d.scale;
  res.residual_rms = std::sqrt(best.rss / static_cast<double>(n));
  res.converged = best.converged;
  res.iterations = best.iterations;
  res.samples = n;
  if (dead_envelope(d, best.theta(0))) {
    res.non_identifiable = true;
    res.converged = false;
    res.diagnostics = "fitted decay is complete before the second sample";
    return res;
  }

  const double rss_exp = base.residual_rms * base.residual_rms * static_cast<double>(n);
  const double rss_beat = best.rss;
  if (n > 3 && rss_beat > 0.0) {
    const double dof = static_cast<double>(n - 3);
    res.f_statistic = std::max(0.0, (rss_exp - rss_beat) / (rss_beat / dof));
    const boost::math::fisher_f_distribution<double> dist(1.0, dof);
    res.f_pvalue = boost::math::cdf(boost::math::complement(dist, res.f_statistic));
  } else if (rss_beat == 0.0 && rss_exp > 0.0) {
    res.f_statistic = std::numeric_limits<double>::infinity();
    res.f_pvalue = 0.0;
  }
  const bool node_inside =
      res.delta_omega_split > 0.0 &&
      std::numbers::pi / res.delta_omega_split <= times.back();
  res.model_preferred =
      res.converged && res.f_pvalue < options.f_test_alpha && node_inside;
  if (!res.converged) {
    res.diagnostics = "iteration cap reached without meeting the tolerances";
  } else if (!res.model_preferred) {
    res.diagnostics = node_inside ? "beating term not significant against the exponential model"
                                  : "fitted node lies beyond the data; split is unresolved";
  }
  return res;
}

FitResult fit_envelope_decay(std::span<const double> times, std::span<const double> envelope,
                             const FitOptions& options) {
  const Data d = prepare(times, envelope, false);
  const std::size_t n = d.t.size();
  const double span = d.t.back() - d.t.front();
  double g0 = options.gamma * d.scale;
  if (std::isnan(options.gamma)) {
    std::vector<Peak> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      points.push_back(Peak{d.t[i], d.y[i]});
    }
    g0 = initial_gamma(points, span);
  }
  VectorXd theta(1);
  theta << g0;
  const LmOutcome lm = levenberg_marquardt(
      theta, [&](const VectorXd& th, VectorXd& r, MatrixXd* j) { eval_envelope(d, th, r, j); },
      keep_gamma_nonnegative, options);
  const auto se = standard_errors(lm, n);
  FitResult res;
  res.model = FitModel::kExponential;
  res.gamma = lm.theta(0) / d.scale;
  res.gamma_stderr = se[0] / d.scale;
  res.delta_omega = 0.0;
  res.residual_rms = std::sqrt(lm.rss / static_cast<double>(n));
  res.converged = lm.converged;
  res.iterations = lm.iterations;
  res.samples = n;
  if (lm.theta(0) * span < 1e-9) {
    res.non_identifiable = true;
    res.converged = false;
    res.diagnostics = "envelope shows no decay over the record";
  } else if (dead_envelope(d, lm.theta(0))) {
    res.non_identifiable = true;
    res.converged = false;
    res.diagnostics = "fitted decay is complete before the second sample";
  } else if (!lm.converged) {
    res.diagnostics = "iteration cap reached without meeting the tolerances";
  }
  return res;
}

T2StarSummary extract_t2star_sweep(std::span<const double> times,
                                   std::span<const std::vector<double>> envelopes) {
  T2StarSummary out;
  out.rows.reserve(envelopes.size());
  double sum = 0.0;
  for (const auto& row : envelopes) {
    T2StarRow r;
    try {
      const FitResult fit = fit_envelope_decay(times, row);
      r.converged = fit.converged;
      r.non_identifiable = fit.non_identifiable;
      r.residual_rms = fit.residual_rms;
      r.t2star = fit.t2star();
    } catch (const Error&) {
      r.converged = false;
    }
    if (r.converged) {
      sum += r.t2star;
      ++out.converged_rows;
      out.max = std::isnan(out.max) ? r.t2star : std::max(out.max, r.t2star);
    }
    out.rows.push_back(r);
  }
  if (out.converged_rows > 0) {
    out.mean = sum / static_cast<double>(out.converged_rows);
  }
  return out;
}

}  // namespace rtnsim
