#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace rtnsim {

//! Counter-based 64-bit generator keyed by (seed, stream).
//!
//! Output k of a stream is a bijective mix of key + (k+1)*golden, so any
//! stream can be created independently of every other one. Realization m of
//! an ensemble always draws from stream m, which keeps results identical
//! under any parallel schedule.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    counter_ += kGolden;
    return mix(counter_);
  }

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t counter_;
};

// Reserved stream ids. Ensemble realizations use ids [0, M).
inline constexpr std::uint64_t kBathStream = 0xB4A7'0000'0000'0001ULL;
inline constexpr std::uint64_t kAmplitudeStream = 0xA3B1'0000'0000'0002ULL;
inline constexpr std::uint64_t kReadoutStream = 0x5E4D'0000'0000'0003ULL;

// Precomputed constants for Marsaglia-Tsang gamma draws with shape >= 1.
struct GammaShape {
  explicit GammaShape(double shape);
  double shape;
  double d;
  double c;
};

//! Variate generation on top of one CounterRng stream.
class Sampler {
 public:
  Sampler(std::uint64_t seed, std::uint64_t stream) noexcept : rng_(seed, stream) {}
  explicit Sampler(CounterRng rng) noexcept : rng_(rng) {}

  // [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  // (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(rng_() >> 12) + 0.5) * 0x1.0p-52;
  }
  int sign() noexcept { return (rng_() >> 63) != 0U ? 1 : -1; }

  double exponential();
  double normal();
  double gamma(double shape);
  double gamma(const GammaShape& shape);
  double beta(double a, double b);
  std::uint64_t poisson(double mean);
  std::uint64_t binomial(std::uint64_t trials, double p);

  CounterRng& engine() noexcept { return rng_; }

 private:
  CounterRng rng_;
};

//! Poisson variates of one fixed mean by the alias method. Built once per
//! source and reused for every cell of every realization.
class PoissonTable {
 public:
  explicit PoissonTable(double mean);

  std::uint64_t operator()(Sampler& sampler) const;
  double mean() const noexcept { return mean_; }

 private:
  double mean_;
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

}  // namespace rtnsim
