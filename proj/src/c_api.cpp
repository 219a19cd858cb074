#include "rtnsim/rtnsim.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "rtnsim/analytic.hpp"
#include "rtnsim/app.hpp"
#include "rtnsim/error.hpp"
#include "rtnsim/fit.hpp"
#include "rtnsim/qubit.hpp"
#include "rtnsim/ramsey.hpp"

struct rtnsim_config {
  rtnsim::Config config;
};

struct rtnsim_trace {
  rtnsim::DecayTrace trace;
};

namespace {

thread_local std::string last_error;

rtnsim_status fail(rtnsim_status status, const char* message) {
  last_error = message;
  return status;
}

// Runs body and maps every exception onto a status code.
template <class Body>
rtnsim_status guarded(Body&& body) {
  try {
    body();
    last_error.clear();
    return RTNSIM_OK;
  } catch (const rtnsim::ParameterError& e) {
    return fail(RTNSIM_E_PARAMETER, e.what());
  } catch (const rtnsim::DomainError& e) {
    return fail(RTNSIM_E_DOMAIN, e.what());
  } catch (const rtnsim::RangeError& e) {
    return fail(RTNSIM_E_RANGE, e.what());
  } catch (const rtnsim::ValidationError& e) {
    return fail(RTNSIM_E_VALIDATION, e.what());
  } catch (const rtnsim::ConfigError& e) {
    return fail(RTNSIM_E_CONFIG, e.what());
  } catch (const rtnsim::IoError& e) {
    return fail(RTNSIM_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RTNSIM_E_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(RTNSIM_E_RUNTIME, e.what());
  } catch (...) {
    return fail(RTNSIM_E_RUNTIME, "unknown failure");
  }
}

#define RTNSIM_REQUIRE(ptr)                                   \
  do {                                                        \
    if ((ptr) == nullptr) {                                   \
      return fail(RTNSIM_E_NULL, #ptr " must not be NULL");   \
    }                                                         \
  } while (0)

rtnsim::TransmonParams transmon(double ec, double ej) {
  rtnsim::TransmonParams p;
  p.ec_ghz = ec;
  p.ej_ghz = ej;
  return p;
}

}  // namespace

extern "C" {

const char* rtnsim_version(void) { return rtnsim::kToolVersion; }

const char* rtnsim_status_name(rtnsim_status status) {
  switch (status) {
    case RTNSIM_OK: return "ok";
    case RTNSIM_E_PARAMETER: return "parameter error";
    case RTNSIM_E_DOMAIN: return "domain error";
    case RTNSIM_E_RANGE: return "range error";
    case RTNSIM_E_VALIDATION: return "validation error";
    case RTNSIM_E_CONFIG: return "config error";
    case RTNSIM_E_IO: return "io error";
    case RTNSIM_E_RUNTIME: return "runtime error";
    case RTNSIM_E_NULL: return "null argument";
  }
  return "unknown status";
}

const char* rtnsim_last_error(void) { return last_error.c_str(); }

rtnsim_status rtnsim_config_create(rtnsim_config** out) {
  RTNSIM_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new rtnsim_config{}; });
}

void rtnsim_config_destroy(rtnsim_config* config) { delete config; }

rtnsim_status rtnsim_config_load_file(rtnsim_config* config, const char* path) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(path);
  return guarded([&] { config->config.merge_file(path); });
}

rtnsim_status rtnsim_config_load_string(rtnsim_config* config, const char* toml) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(toml);
  return guarded([&] { config->config.merge_string(toml); });
}

rtnsim_status rtnsim_config_apply_env(rtnsim_config* config, const char* const* environ_block) {
  RTNSIM_REQUIRE(config);
  return guarded([&] { config->config.merge_environment(environ_block); });
}

rtnsim_status rtnsim_config_set(rtnsim_config* config, const char* key, const char* value) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(key);
  RTNSIM_REQUIRE(value);
  return guarded([&] { config->config.set(key, value); });
}

rtnsim_status rtnsim_config_hash(const rtnsim_config* config, uint64_t* out) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(out);
  return guarded([&] { *out = config->config.hash(); });
}

rtnsim_status rtnsim_config_dump(const rtnsim_config* config, char* buf, size_t capacity,
                                 size_t* needed) {
  RTNSIM_REQUIRE(config);
  return guarded([&] {
    const std::string text = config->config.canonical_text();
    if (needed != nullptr) {
      *needed = text.size() + 1;
    }
    if (buf != nullptr && capacity > 0) {
      const std::size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

rtnsim_status rtnsim_run(const rtnsim_config* config, const char* command, const char* out_dir,
                         rtnsim_log_fn log, void* user) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(command);
  return guarded([&] {
    const std::string dir =
        out_dir != nullptr ? std::string(out_dir) : config->config.string("output.dir");
    rtnsim::LogSink sink;
    if (log != nullptr) {
      sink = [log, user](std::string_view line) { log(std::string(line).c_str(), user); };
    }
    rtnsim::run_command(config->config, command, dir, sink);
  });
}

rtnsim_status rtnsim_transmon_frequency(double ec_ghz, double ej_ghz, double phi_b,
                                        double* omega01_rad_per_s) {
  RTNSIM_REQUIRE(omega01_rad_per_s);
  return guarded([&] {
    *omega01_rad_per_s = rtnsim::transmon_frequency(transmon(ec_ghz, ej_ghz), phi_b);
  });
}

rtnsim_status rtnsim_frequency_derivative(double ec_ghz, double ej_ghz, double phi_b,
                                          double* rad_per_s_per_phi0) {
  RTNSIM_REQUIRE(rad_per_s_per_phi0);
  return guarded([&] {
    *rad_per_s_per_phi0 = rtnsim::frequency_derivative(transmon(ec_ghz, ej_ghz), phi_b);
  });
}

rtnsim_status rtnsim_invert_frequency(double ec_ghz, double ej_ghz, double f01_hz,
                                      double* phi_b) {
  RTNSIM_REQUIRE(phi_b);
  return guarded([&] { *phi_b = rtnsim::invert_frequency(transmon(ec_ghz, ej_ghz), f01_hz); });
}

rtnsim_status rtnsim_t2_from_t1_tphi(double t1, double t2phi, double* t2) {
  RTNSIM_REQUIRE(t2);
  return guarded([&] { *t2 = rtnsim::t2_from_t1_tphi(t1, t2phi); });
}

rtnsim_status rtnsim_exact_decay(double coupling_v, double lambda, double t, double* re,
                                 double* im) {
  RTNSIM_REQUIRE(re);
  RTNSIM_REQUIRE(im);
  return guarded([&] {
    const auto z = rtnsim::exact_decay(rtnsim::SeriesSpec{coupling_v, lambda, 0}, t);
    *re = z.real();
    *im = z.imag();
  });
}

rtnsim_status rtnsim_truncated_decay(double coupling_v, double lambda, int n_max, double t,
                                     double* re, double* im, double* tail_bound) {
  RTNSIM_REQUIRE(re);
  RTNSIM_REQUIRE(im);
  return guarded([&] {
    const auto v = rtnsim::truncated_decay(rtnsim::SeriesSpec{coupling_v, lambda, n_max}, t);
    *re = v.value.real();
    *im = v.value.imag();
    if (tail_bound != nullptr) {
      *tail_bound = v.tail_bound;
    }
  });
}

rtnsim_status rtnsim_ramsey_simulate(const rtnsim_config* config, rtnsim_trace** out) {
  RTNSIM_REQUIRE(config);
  RTNSIM_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    const auto rc = rtnsim::ramsey_config(config->config);
    auto trace = std::make_unique<rtnsim_trace>();
    trace->trace = rtnsim::decay_factor_mc(rc);
    *out = trace.release();
  });
}

void rtnsim_trace_destroy(rtnsim_trace* trace) { delete trace; }

size_t rtnsim_trace_length(const rtnsim_trace* trace) {
  return trace == nullptr ? 0 : trace->trace.times.size();
}

rtnsim_status rtnsim_trace_copy(const rtnsim_trace* trace, rtnsim_trace_field field, double* dst,
                                size_t capacity) {
  RTNSIM_REQUIRE(trace);
  RTNSIM_REQUIRE(dst);
  const auto& t = trace->trace;
  const std::size_t n = std::min(capacity, t.times.size());
  for (std::size_t i = 0; i < n; ++i) {
    switch (field) {
      case RTNSIM_TRACE_TIME: dst[i] = t.times[i]; break;
      case RTNSIM_TRACE_P1: dst[i] = t.p1[i]; break;
      case RTNSIM_TRACE_ENVELOPE: dst[i] = t.envelope[i]; break;
      case RTNSIM_TRACE_DECAY_RE: dst[i] = t.decay_factor[i].real(); break;
      case RTNSIM_TRACE_DECAY_IM: dst[i] = t.decay_factor[i].imag(); break;
      case RTNSIM_TRACE_STDERR: dst[i] = t.modulus_stderr[i]; break;
      default: return fail(RTNSIM_E_PARAMETER, "unknown trace field");
    }
  }
  last_error.clear();
  return RTNSIM_OK;
}

rtnsim_status rtnsim_fit_ramsey(const double* times, const double* p1, size_t n,
                                rtnsim_fit_model model, double f_test_alpha,
                                rtnsim_fit_result* out) {
  RTNSIM_REQUIRE(times);
  RTNSIM_REQUIRE(p1);
  RTNSIM_REQUIRE(out);
  return guarded([&] {
    rtnsim::FitOptions opts;
    opts.f_test_alpha = f_test_alpha;
    const std::span<const double> t(times, n);
    const std::span<const double> y(p1, n);
    rtnsim::FitResult r;
    if (model == RTNSIM_FIT_EXPONENTIAL) {
      r = rtnsim::fit_exponential_ramsey(t, y, opts);
    } else if (model == RTNSIM_FIT_BEATING) {
      r = rtnsim::fit_beating_ramsey(t, y, opts);
    } else {
      throw rtnsim::ParameterError("unknown fit model");
    }
    *out = rtnsim_fit_result{static_cast<int>(model), r.gamma, r.delta_omega,
                             r.delta_omega_split, r.residual_rms, r.converged ? 1 : 0,
                             r.non_identifiable ? 1 : 0, r.iterations,
                             r.model_preferred ? 1 : 0, r.f_pvalue};
  });
}

}  // extern "C"
