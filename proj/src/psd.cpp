#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "rtnsim/error.hpp"
#include "rtnsim/noise.hpp"
#include "rtnsim/parallel.hpp"

namespace rtnsim {

namespace {

// FFTW planning is not thread safe; execution with new arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwDeleter>;

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    FftwBuffer<double> in(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    FftwBuffer<fftw_complex> out(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1))));
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  // |X_k|^2 for k = 0..n/2.
  void power(std::span<const double> x, std::vector<double>& out) const {
    FftwBuffer<double> in(static_cast<double*>(fftw_malloc(sizeof(double) * n_)));
    FftwBuffer<fftw_complex> spec(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n_ / 2 + 1))));
    std::copy(x.begin(), x.end(), in.get());
    fftw_execute_dft_r2c(plan_, in.get(), spec.get());
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      out[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    }
  }

 private:
  std::size_t n_;
  fftw_plan plan_;
};

// Least-squares line through (log f, log v) for bins within [lo, hi].
std::pair<double, double> loglog_line(std::span<const double> f, std::span<const double> v,
                                      double lo, double hi) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] < lo || f[i] > hi || !(v[i] > 0.0)) {
      continue;
    }
    const double x = std::log(f[i]);
    const double y = std::log(v[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) {
    return {0.0, n == 1 ? sy : 0.0};
  }
  const double nd = static_cast<double>(n);
  const double denom = nd * sxx - sx * sx;
  const double slope = denom > 0.0 ? (nd * sxy - sx * sy) / denom : 0.0;
  return {slope, (sy - slope * sx) / nd};
}

// Window around f holding at least three bins.
std::pair<double, double> local_window(std::span<const double> freqs, double f) {
  double ratio = 1.25;
  for (;;) {
    const double lo = f / ratio;
    const double hi = f * ratio;
    const auto count = std::count_if(freqs.begin(), freqs.end(),
                                     [&](double x) { return x >= lo && x <= hi; });
    if (count >= 3 || ratio > 1e6) {
      return {lo, hi};
    }
    ratio *= 1.5;
  }
}

double local_loglog_value(std::span<const double> freqs, std::span<const double> values,
                          double f) {
  const auto [lo, hi] = local_window(freqs, f);
  const auto [slope, intercept] = loglog_line(freqs, values, lo, hi);
  return std::exp(intercept + slope * std::log(f));
}

}  // namespace

double PsdEstimate::value_at(double f) const {
  if (!(f > 0.0)) {
    throw ParameterError("frequency must be positive");
  }
  return local_loglog_value(frequencies, values, f);
}

std::pair<double, double> resolvable_band(std::size_t n, double dt) {
  const double record = static_cast<double>(n) * dt;
  return {10.0 / record, 1.0 / (8.0 * dt)};
}

PsdEstimate estimate_psd(std::span<const std::vector<double>> realizations, double dt,
                         double normalization_frequency, const PsdOptions& options) {
  if (realizations.size() < 2) {
    throw ParameterError("PSD estimation needs at least two realizations");
  }
  if (!(dt > 0.0)) {
    throw ParameterError("sample spacing must be positive");
  }
  const std::size_t n = realizations.front().size();
  if (n < 16) {
    throw ParameterError("PSD estimation needs at least 16 samples per realization");
  }
  for (const auto& r : realizations) {
    if (r.size() != n) {
      throw ParameterError("all realizations must share one uniform grid");
    }
  }
  const auto [band_low, band_high] = resolvable_band(n, dt);
  if (!(band_low < band_high)) {
    throw ParameterError("record too short to resolve any band");
  }
  if (!(normalization_frequency >= band_low && normalization_frequency <= band_high)) {
    throw ParameterError("normalization frequency " + std::to_string(normalization_frequency) +
                         " Hz outside resolvable band [" + std::to_string(band_low) + ", " +
                         std::to_string(band_high) + "] Hz");
  }

  std::vector<double> window(n, 1.0);
  if (options.window == PsdWindow::kHann) {
    for (std::size_t i = 0; i < n; ++i) {
      window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                        static_cast<double>(n)));
    }
  }
  double window_power = 0.0;
  for (const double w : window) {
    window_power += w * w;
  }
  window_power /= static_cast<double>(n);

  const RealFft fft(n);
  const std::size_t bins = n / 2;
  std::vector<std::vector<double>> periodograms(realizations.size());
  parallel_for(realizations.size(), options.threads, [&](std::size_t r) {
    const auto& x = realizations[r];
    const double mean = pairwise_sum(x.data(), n) / static_cast<double>(n);
    std::vector<double> centered(n);
    for (std::size_t i = 0; i < n; ++i) {
      centered[i] = (x[i] - mean) * window[i];
    }
    std::vector<double> power;
    fft.power(centered, power);
    const double scale = dt / (static_cast<double>(n) * window_power);
    auto& p = periodograms[r];
    p.resize(bins);
    for (std::size_t k = 1; k <= bins; ++k) {
      const double one_sided = (2 * k == n) ? 1.0 : 2.0;
      p[k - 1] = one_sided * scale * power[k];
    }
  });

  const std::size_t count = periodograms.size();
  auto total = pairwise_reduce(std::move(periodograms), [](std::vector<double>& a,
                                                           const std::vector<double>& b) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      a[k] += b[k];
    }
  });

  PsdEstimate est;
  est.frequencies.resize(bins);
  for (std::size_t k = 1; k <= bins; ++k) {
    est.frequencies[k - 1] = static_cast<double>(k) / (static_cast<double>(n) * dt);
  }
  for (std::size_t k = 0; k < bins; ++k) {
    total[k] /= static_cast<double>(count);
    if (options.cell_averaged) {
      const double x = std::numbers::pi * est.frequencies[k] * dt;
      const double sinc = std::sin(x) / x;
      total[k] /= sinc * sinc;
    }
  }
  est.reference = local_loglog_value(est.frequencies, total, normalization_frequency);
  est.values = std::move(total);
  if (est.reference > 0.0) {
    for (auto& v : est.values) {
      v /= est.reference;
    }
  }
  est.normalization_frequency = normalization_frequency;
  est.paths_averaged = count;
  est.band_low = band_low;
  est.band_high = band_high;
  return est;
}

double loglog_slope(std::span<const double> frequencies, std::span<const double> values,
                    double f_low, double f_high, int bins_per_decade) {
  if (frequencies.size() != values.size()) {
    throw ParameterError("frequency and value series differ in length");
  }
  if (!(f_low > 0.0 && f_low < f_high)) {
    throw ParameterError("slope band must satisfy 0 < f_low < f_high");
  }
  const double width = std::log(10.0) / bins_per_decade;
  const auto nbins = static_cast<std::size_t>(std::ceil(std::log(f_high / f_low) / width));
  std::vector<double> sum_logf(nbins, 0.0), sum_v(nbins, 0.0);
  std::vector<std::size_t> counts(nbins, 0);
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    const double f = frequencies[i];
    if (f < f_low || f > f_high) {
      continue;
    }
    auto b = static_cast<std::size_t>(std::log(f / f_low) / width);
    b = std::min(b, nbins - 1);
    sum_logf[b] += std::log(f);
    sum_v[b] += values[i];
    ++counts[b];
  }
  std::vector<double> bf, bv;
  for (std::size_t b = 0; b < nbins; ++b) {
    if (counts[b] > 0 && sum_v[b] > 0.0) {
      bf.push_back(std::exp(sum_logf[b] / static_cast<double>(counts[b])));
      bv.push_back(sum_v[b] / static_cast<double>(counts[b]));
    }
  }
  if (bf.size() < 2) {
    throw ParameterError("slope band holds fewer than two populated bins");
  }
  return loglog_line(bf, bv, 0.0, std::numeric_limits<double>::infinity()).first;
}

}  // namespace rtnsim
