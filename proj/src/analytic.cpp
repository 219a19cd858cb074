#include "rtnsim/analytic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "rtnsim/error.hpp"

namespace rtnsim {

namespace {

void check_spec(const SeriesSpec& spec, double t) {
  if (!(spec.coupling_v >= 0.0) || !std::isfinite(spec.coupling_v)) {
    throw ParameterError("coupling must be finite and non-negative");
  }
  if (!(spec.lambda >= 0.0) || !std::isfinite(spec.lambda)) {
    throw ParameterError("switching rate must be finite and non-negative");
  }
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw ParameterError("time must be finite and non-negative");
  }
}

double exchange_rate(double lambda, CorrelationConvention convention) {
  // The two-state chain with flip rate k has correlation exp(-2 k tau).
  return 0.5 * correlation_rate(lambda, convention);
}

using Rule = boost::math::quadrature::gauss<double, 32>;
constexpr std::size_t kNodes = 32;

// Gauss-Legendre nodes on [0, 1] and the matrix S with
// S[i][m] = integral over [0, x_i] of the m-th Lagrange basis polynomial, so
// S applied to samples at the nodes gives the running integral at the nodes.
struct UnitRule {
  std::array<double, kNodes> x{};
  std::array<double, kNodes> w{};
  std::array<std::array<double, kNodes>, kNodes> running{};

  UnitRule() {
    const auto& abscissa = Rule::abscissa();
    const auto& weights = Rule::weights();
    std::array<std::pair<double, double>, kNodes> nodes{};
    std::size_t i = 0;
    for (std::size_t j = 0; j < abscissa.size(); ++j) {
      nodes[i++] = {0.5 * (1.0 - abscissa[j]), 0.5 * weights[j]};
      if (abscissa[j] != 0.0) {
        nodes[i++] = {0.5 * (1.0 + abscissa[j]), 0.5 * weights[j]};
      }
    }
    std::sort(nodes.begin(), nodes.end());
    for (std::size_t n = 0; n < kNodes; ++n) {
      x[n] = nodes[n].first;
      w[n] = nodes[n].second;
    }
    // Barycentric weights of the node set.
    std::array<double, kNodes> bary{};
    for (std::size_t m = 0; m < kNodes; ++m) {
      double prod = 1.0;
      for (std::size_t n = 0; n < kNodes; ++n) {
        if (n != m) {
          prod *= x[m] - x[n];
        }
      }
      bary[m] = 1.0 / prod;
    }
    // The rule itself integrates the degree-31 basis exactly on [0, x_i].
    for (std::size_t r = 0; r < kNodes; ++r) {
      for (std::size_t q = 0; q < kNodes; ++q) {
        const double s = x[r] * x[q];
        double denom = 0.0;
        std::array<double, kNodes> terms{};
        std::size_t hit = kNodes;
        for (std::size_t m = 0; m < kNodes; ++m) {
          if (s == x[m]) {
            hit = m;
            break;
          }
          terms[m] = bary[m] / (s - x[m]);
          denom += terms[m];
        }
        for (std::size_t m = 0; m < kNodes; ++m) {
          const double basis = hit < kNodes ? (m == hit ? 1.0 : 0.0) : terms[m] / denom;
          running[r][m] += x[r] * w[q] * basis;
        }
      }
    }
  }
};

const UnitRule& unit_rule() {
  static const UnitRule rule;
  return rule;
}

// Largest phase advance of one level factor across a single panel.
constexpr double kPanelPhase = 2.0;
constexpr double kMaxPanels = 1e6;

// Ordered integral over 0 < t_1 < ... < t_n < t of
// exp(i v sum_k (-1)^(k+1) 2 t_k), built level by level as
// F_k(u) = integral_0^u exp(+-2 i v s) F_{k-1}(s) ds on composite panels.
std::complex<double> ordered_integral(int n, double t, double v) {
  const auto& rule = unit_rule();
  const double panels_d = std::max(1.0, std::ceil(2.0 * v * t / kPanelPhase));
  if (panels_d > kMaxPanels) {
    throw ParameterError("coupling times duration too large for the truncated series");
  }
  const auto panels = static_cast<std::size_t>(panels_d);
  const double h = t / panels_d;
  std::vector<std::complex<double>> f(panels * kNodes, 1.0);
  std::vector<std::complex<double>> g(panels * kNodes);
  std::complex<double> total = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double rate = (k % 2 == 1 ? 2.0 : -2.0) * v;
    std::complex<double> offset = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = h * static_cast<double>(p);
      std::array<std::complex<double>, kNodes> integrand{};
      for (std::size_t m = 0; m < kNodes; ++m) {
        integrand[m] = std::polar(1.0, rate * (a + h * rule.x[m])) * f[p * kNodes + m];
      }
      for (std::size_t r = 0; r < kNodes; ++r) {
        std::complex<double> acc = 0.0;
        for (std::size_t m = 0; m < kNodes; ++m) {
          acc += rule.running[r][m] * integrand[m];
        }
        g[p * kNodes + r] = offset + h * acc;
      }
      std::complex<double> whole = 0.0;
      for (std::size_t m = 0; m < kNodes; ++m) {
        whole += rule.w[m] * integrand[m];
      }
      offset += h * whole;
    }
    total = offset;
    f.swap(g);
  }
  return total;
}

}  // namespace

SeriesValue truncated_decay(const SeriesSpec& spec, double t, CorrelationConvention convention) {
  check_spec(spec, t);
  if (spec.n_max < 0) {
    throw ParameterError("truncation order must be non-negative");
  }
  if (spec.n_max > kMaxSeriesOrder) {
    throw ParameterError("truncation order above 6 is rejected; use exact_decay");
  }
  const double k = exchange_rate(spec.lambda, convention);
  const double v = spec.coupling_v;
  double total = 0.0;
  double power = 1.0;
  for (int n = 0; n <= spec.n_max; ++n) {
    // Averaging over the initial sign keeps the real part.
    const double tail_phase = v * ((n % 2 == 0) ? t : -t);
    const double integral =
        (n == 0) ? std::cos(tail_phase)
                 : (std::polar(1.0, tail_phase) * ordered_integral(n, t, v)).real();
    total += power * integral;
    power *= k;
  }
  SeriesValue out;
  out.value = std::exp(-k * t) * total;
  out.tail_bound = (k * t > 0.0) ? boost::math::gamma_p(spec.n_max + 1.0, k * t) : 0.0;
  out.tail_warning = out.tail_bound > 1e-6;
  return out;
}

std::complex<double> exact_decay(const SeriesSpec& spec, double t,
                                 CorrelationConvention convention) {
  check_spec(spec, t);
  const double k = exchange_rate(spec.lambda, convention);
  const double v = spec.coupling_v;
  const std::complex<double> kappa = std::sqrt(std::complex<double>(k * k - v * v, 0.0));
  const std::complex<double> z = kappa * t;
  if (std::abs(z) < 1e-3) {
    // e^{-kt} [cosh z + k t sinh(z)/z] by series.
    const std::complex<double> z2 = z * z;
    const std::complex<double> ch = 1.0 + z2 / 2.0 + z2 * z2 / 24.0;
    const std::complex<double> sh = 1.0 + z2 / 6.0 + z2 * z2 / 120.0;
    return std::exp(-k * t) * (ch + k * t * sh);
  }
  const std::complex<double> ratio = k / kappa;
  const std::complex<double> grow = std::exp((kappa - k) * t);
  const std::complex<double> fall = std::exp(-(kappa + k) * t);
  return 0.5 * ((1.0 + ratio) * grow + (1.0 - ratio) * fall);
}

std::complex<double> product_decay(std::span<const SeriesSpec> specs, double t,
                                   CorrelationConvention convention) {
  std::complex<double> out = 1.0;
  for (const auto& s : specs) {
    out *= exact_decay(s, t, convention);
  }
  return out;
}

}  // namespace rtnsim
