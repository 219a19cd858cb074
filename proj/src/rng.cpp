#include "rtnsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include "rtnsim/error.hpp"

namespace rtnsim {

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
    : counter_(mix(seed ^ mix(stream + 0xd1b54a32d192ed03ULL))) {}

double Sampler::exponential() {
  boost::random::exponential_distribution<double> dist;
  return dist(rng_);
}

double Sampler::normal() {
  boost::random::normal_distribution<double> dist;
  return dist(rng_);
}

// Marsaglia-Tsang squeeze method; shapes below one are boosted by U^(1/a).
double Sampler::gamma(double shape) {
  if (!(shape > 0.0)) {
    throw ParameterError("gamma shape must be positive");
  }
  if (shape < 1.0) {
    return gamma(shape + 1.0) * std::pow(uniform_open(), 1.0 / shape);
  }
  return gamma(GammaShape(shape));
}

GammaShape::GammaShape(double s) : shape(s), d(s - 1.0 / 3.0), c(1.0 / std::sqrt(9.0 * d)) {
  if (!(s >= 1.0)) {
    throw ParameterError("cached gamma shape must be at least one");
  }
}

double Sampler::gamma(const GammaShape& shape) {
  if (shape.shape == 1.0) {
    return exponential();
  }
  const double d = shape.d;
  const double c = shape.c;
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) {
      return d * v;
    }
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return d * v;
    }
  }
}

double Sampler::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

std::uint64_t Sampler::poisson(double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw ParameterError("poisson mean must be finite and non-negative");
  }
  if (mean == 0.0) {
    return 0;
  }
  if (mean < 30.0) {
    // Sequential inversion; exact and cheap for small means.
    const double u = uniform();
    double pmf = std::exp(-mean);
    double cdf = pmf;
    std::uint64_t k = 0;
    while (u >= cdf && pmf > 0.0) {
      ++k;
      pmf *= mean / static_cast<double>(k);
      cdf += pmf;
    }
    return k;
  }
  boost::random::poisson_distribution<std::uint64_t, double> dist(mean);
  return dist(rng_);
}

std::uint64_t Sampler::binomial(std::uint64_t trials, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("binomial probability must lie in [0, 1]");
  }
  if (trials > static_cast<std::uint64_t>(std::numeric_limits<long long>::max())) {
    throw ParameterError("binomial trial count too large");
  }
  boost::random::binomial_distribution<long long, double> dist(static_cast<long long>(trials), p);
  return static_cast<std::uint64_t>(dist(rng_));
}

// Walker alias table over k = 0..kmax. The mass beyond kmax is below 1e-30,
// far under the resolution of a 53-bit uniform, so the truncation is invisible.
PoissonTable::PoissonTable(double mean) : mean_(mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw ParameterError("poisson mean must be finite and non-negative");
  }
  const auto kmax = static_cast<std::size_t>(mean + 12.0 * std::sqrt(mean) + 25.0);
  const std::size_t n = kmax + 1;
  std::vector<double> scaled(n);
  const double log_mean = mean > 0.0 ? std::log(mean) : 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double kd = static_cast<double>(k);
    scaled[k] = mean > 0.0 ? std::exp(kd * log_mean - mean - std::lgamma(kd + 1.0))
                           : (k == 0 ? 1.0 : 0.0);
    total += scaled[k];
  }
  std::vector<std::uint32_t> small, large;
  for (std::size_t k = 0; k < n; ++k) {
    scaled[k] *= static_cast<double>(n) / total;
    (scaled[k] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(k));
  }
  prob_.assign(n, 1.0);
  alias_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    alias_[k] = static_cast<std::uint32_t>(k);
  }
  while (!small.empty() && !large.empty()) {
    const std::uint32_t s = small.back();
    small.pop_back();
    const std::uint32_t l = large.back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] -= 1.0 - scaled[s];
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
}

std::uint64_t PoissonTable::operator()(Sampler& sampler) const {
  const double x = sampler.uniform() * static_cast<double>(prob_.size());
  const auto i = static_cast<std::size_t>(x);
  const double f = x - static_cast<double>(i);
  return f < prob_[i] ? i : alias_[i];
}

}  // namespace rtnsim
