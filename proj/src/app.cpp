#include "rtnsim/app.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <list>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

#include "rtnsim/error.hpp"
#include "rtnsim/fit.hpp"
#include "rtnsim/noise.hpp"
#include "rtnsim/parallel.hpp"

namespace rtnsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kDefaultsVersion = 1;

std::pair<std::string, std::string> split_key(std::string_view key) {
  const auto dot = key.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == key.size()) {
    throw ConfigError("configuration key '" + std::string(key) + "' must look like section.name");
  }
  return {std::string(key.substr(0, dot)), std::string(key.substr(dot + 1))};
}

toml::table parse_toml(std::string_view text, std::string_view origin) {
  try {
    return toml::parse(text, origin);
  } catch (const toml::parse_error& err) {
    std::ostringstream msg;
    msg << "cannot parse " << origin << ": " << err.description() << " at line "
        << err.source().begin.line;
    throw ConfigError(msg.str());
  }
}

// Parses a single TOML value; anything that is not valid TOML becomes a string.
toml::table parse_value(std::string_view value) {
  try {
    auto t = toml::parse("v = " + std::string(value));
    return t;
  } catch (const toml::parse_error&) {
    toml::table t;
    t.insert("v", std::string(value));
    return t;
  }
}

const char* type_name(const toml::node& n) {
  if (n.is_integer()) return "integer";
  if (n.is_floating_point()) return "float";
  if (n.is_boolean()) return "boolean";
  if (n.is_string()) return "string";
  if (n.is_array()) return "array";
  if (n.is_table()) return "table";
  return "value";
}

// Stores `value` under `name` with the type of the existing entry, or throws
// ConfigError.
void assign_typed(toml::table& section, const std::string& name, const toml::node& value,
                  const std::string& key) {
  const toml::node& reference = *section.get(name);
  auto mismatch = [&] {
    return ConfigError("configuration key '" + key + "' expects " + type_name(reference) +
                       ", got " + type_name(value));
  };
  if (reference.is_floating_point()) {
    if (value.is_floating_point()) {
      section.insert_or_assign(name, value.as_floating_point()->get());
    } else if (value.is_integer()) {
      section.insert_or_assign(name, static_cast<double>(value.as_integer()->get()));
    } else {
      throw mismatch();
    }
  } else if (reference.is_integer()) {
    if (!value.is_integer()) {
      throw mismatch();
    }
    section.insert_or_assign(name, value.as_integer()->get());
  } else if (reference.is_boolean()) {
    if (!value.is_boolean()) {
      throw mismatch();
    }
    section.insert_or_assign(name, value.as_boolean()->get());
  } else if (reference.is_string()) {
    if (!value.is_string()) {
      throw mismatch();
    }
    section.insert_or_assign(name, value.as_string()->get());
  } else if (reference.is_array()) {
    if (!value.is_array()) {
      throw mismatch();
    }
    const auto& ref = *reference.as_array();
    const bool floats = !ref.empty() && ref[0].is_floating_point();
    toml::array out;
    for (const auto& item : *value.as_array()) {
      if (floats && item.is_integer()) {
        out.push_back(static_cast<double>(item.as_integer()->get()));
      } else if (floats && item.is_floating_point()) {
        out.push_back(item.as_floating_point()->get());
      } else if (!floats && item.is_integer()) {
        out.push_back(item.as_integer()->get());
      } else {
        throw ConfigError("configuration key '" + key + "' expects an array of " +
                          (floats ? "numbers" : "integers"));
      }
    }
    section.insert_or_assign(name, std::move(out));
  } else {
    throw mismatch();
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

struct Config::Impl {
  toml::table doc;
  std::set<std::string> touched;

  Impl() : doc(parse_toml(defaults_toml(), "defaults")) {}

  const toml::node& reference(const std::string& section, const std::string& name) const {
    const auto* sec = doc.get_as<toml::table>(section);
    if (sec == nullptr) {
      throw ConfigError("unknown configuration section [" + section + "]");
    }
    const auto* node = sec->get(name);
    if (node == nullptr) {
      throw ConfigError("unknown configuration key '" + section + "." + name + "'");
    }
    return *node;
  }

  void assign(const std::string& section, const std::string& name, const toml::node& value) {
    const std::string key = section + "." + name;
    (void)reference(section, name);
    assign_typed(*doc.get_as<toml::table>(section), name, value, key);
    touched.insert(key);
  }

  void merge(const toml::table& user) {
    for (const auto& [k, v] : user) {
      const std::string section(k.str());
      if (section == "defaults_version") {
        if (!v.is_integer() || v.as_integer()->get() != kDefaultsVersion) {
          throw ConfigError("config targets defaults_version other than " +
                            std::to_string(kDefaultsVersion));
        }
        continue;
      }
      const auto* table = v.as_table();
      if (table == nullptr) {
        throw ConfigError("top-level key '" + section + "' must be a [section]");
      }
      for (const auto& [name, value] : *table) {
        assign(section, std::string(name.str()), value);
      }
    }
  }

  const toml::node& at(std::string_view key) const {
    const auto [section, name] = split_key(key);
    return reference(section, name);
  }
};

Config::Config() : impl_(std::make_unique<Impl>()) {}
Config::~Config() = default;
Config::Config(const Config& other) : impl_(std::make_unique<Impl>(*other.impl_)) {}
Config& Config::operator=(const Config& other) {
  if (this != &other) {
    impl_ = std::make_unique<Impl>(*other.impl_);
  }
  return *this;
}

void Config::merge_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  merge_string(text.str(), path.string());
}

void Config::merge_string(std::string_view toml_text, std::string_view origin) {
  impl_->merge(parse_toml(toml_text, origin));
}

void Config::merge_environment(const char* const* environ_block, std::string_view prefix) {
  if (environ_block == nullptr) {
    return;
  }
  std::map<std::string, std::string> overrides;
  for (const char* const* e = environ_block; *e != nullptr; ++e) {
    const std::string_view entry(*e);
    if (entry.substr(0, prefix.size()) != prefix) {
      continue;
    }
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) {
      continue;
    }
    const std::string name(entry.substr(prefix.size(), eq - prefix.size()));
    const auto sep = name.find("__");
    if (sep == std::string::npos) {
      throw ConfigError("environment override " + std::string(entry.substr(0, eq)) +
                        " must look like " + std::string(prefix) + "SECTION__KEY");
    }
    overrides[to_lower(name.substr(0, sep)) + "." + to_lower(name.substr(sep + 2))] =
        std::string(entry.substr(eq + 1));
  }
  // Sorted application keeps the result independent of environment order.
  for (const auto& [key, value] : overrides) {
    set(key, value);
  }
}

void Config::set(std::string_view key, std::string_view value) {
  const auto [section, name] = split_key(key);
  const auto parsed = parse_value(value);
  impl_->assign(section, name, *parsed.get("v"));
}

std::vector<std::string> Config::defaulted_keys() const {
  std::vector<std::string> out;
  for (const auto& [section, table] : impl_->doc) {
    const auto* t = table.as_table();
    if (t == nullptr) {
      continue;
    }
    for (const auto& [name, v] : *t) {
      std::string key = std::string(section.str()) + "." + std::string(name.str());
      if (impl_->touched.count(key) == 0) {
        out.push_back(std::move(key));
      }
    }
  }
  return out;
}

std::string Config::canonical_text() const {
  toml::table copy = impl_->doc;
  if (auto* run = copy.get_as<toml::table>("run")) {
    run->erase("threads");
  }
  if (auto* out = copy.get_as<toml::table>("output")) {
    out->erase("dir");
  }
  std::ostringstream os;
  os << copy;
  return os.str();
}

std::uint64_t Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : canonical_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double Config::number(std::string_view key) const {
  const auto& n = impl_->at(key);
  if (const auto* f = n.as_floating_point()) {
    return f->get();
  }
  if (const auto* i = n.as_integer()) {
    return static_cast<double>(i->get());
  }
  throw ConfigError("configuration key '" + std::string(key) + "' is not a number");
}

std::int64_t Config::integer(std::string_view key) const {
  const auto* i = impl_->at(key).as_integer();
  if (i == nullptr) {
    throw ConfigError("configuration key '" + std::string(key) + "' is not an integer");
  }
  return i->get();
}

bool Config::boolean(std::string_view key) const {
  const auto* b = impl_->at(key).as_boolean();
  if (b == nullptr) {
    throw ConfigError("configuration key '" + std::string(key) + "' is not a boolean");
  }
  return b->get();
}

std::string Config::string(std::string_view key) const {
  const auto* s = impl_->at(key).as_string();
  if (s == nullptr) {
    throw ConfigError("configuration key '" + std::string(key) + "' is not a string");
  }
  return s->get();
}

std::vector<double> Config::numbers(std::string_view key) const {
  const auto* a = impl_->at(key).as_array();
  if (a == nullptr) {
    throw ConfigError("configuration key '" + std::string(key) + "' is not an array");
  }
  std::vector<double> out;
  for (const auto& item : *a) {
    if (const auto* f = item.as_floating_point()) {
      out.push_back(f->get());
    } else if (const auto* i = item.as_integer()) {
      out.push_back(static_cast<double>(i->get()));
    } else {
      throw ConfigError("configuration key '" + std::string(key) + "' must hold numbers");
    }
  }
  return out;
}

std::vector<std::int64_t> Config::integers(std::string_view key) const {
  const auto* a = impl_->at(key).as_array();
  if (a == nullptr) {
    throw ConfigError("configuration key '" + std::string(key) + "' is not an array");
  }
  std::vector<std::int64_t> out;
  for (const auto& item : *a) {
    const auto* i = item.as_integer();
    if (i == nullptr) {
      throw ConfigError("configuration key '" + std::string(key) + "' must hold integers");
    }
    out.push_back(i->get());
  }
  return out;
}

std::string format_number(double x) {
  if (std::isnan(x)) {
    return "nan";
  }
  if (std::isinf(x)) {
    return x > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

std::size_t positive_count(const Config& c, std::string_view key, std::int64_t minimum = 1) {
  const auto v = c.integer(key);
  if (v < minimum) {
    throw ConfigError("configuration key '" + std::string(key) + "' must be at least " +
                      std::to_string(minimum));
  }
  return static_cast<std::size_t>(v);
}

std::uint64_t config_seed(const Config& c) {
  const auto seed = c.integer("run.seed");
  if (seed < 0) {
    throw ConfigError("run.seed must be non-negative");
  }
  return static_cast<std::uint64_t>(seed);
}

// Model-level validation failures during setup are configuration errors.
template <class F>
void config_check(F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(std::string("invalid configuration: ") + err.what());
  }
}

unsigned config_threads(const Config& c) {
  const auto threads = c.integer("run.threads");
  if (threads < 0 || threads > 4096) {
    throw ConfigError("run.threads must lie in [0, 4096]");
  }
  return static_cast<unsigned>(threads);
}

}  // namespace

RamseyConfig ramsey_config(const Config& c) {
  RamseyConfig rc;
  rc.qubit.ec_ghz = c.number("qubit.ec_ghz");
  rc.qubit.ej_ghz = c.number("qubit.ej_ghz");
  rc.qubit.min_ej_over_ec = c.number("qubit.min_ej_over_ec");
  rc.t1 = c.number("qubit.t1_us") * 1e-6;
  rc.phi_b = c.number("qubit.phi_b_phi0");
  rc.bath.enabled = c.boolean("bath.enabled");
  rc.bath.n_sources = positive_count(c, "bath.n_sources");
  rc.bath.amplitude = c.number("bath.amplitude_phi0");
  rc.bath.lambda_min = c.number("bath.lambda_min_hz");
  rc.bath.lambda_max = c.number("bath.lambda_max_hz");
  const auto amps = c.numbers("strong_rtn.amplitudes_phi0");
  const auto rates = c.numbers("strong_rtn.rates_hz");
  if (amps.size() != rates.size()) {
    throw ConfigError("strong_rtn.amplitudes_phi0 and strong_rtn.rates_hz differ in length");
  }
  for (std::size_t i = 0; i < amps.size(); ++i) {
    rc.strong.push_back(RtnSource{amps[i], rates[i]});
  }
  rc.horizon = c.number("ramsey.horizon_us") * 1e-6;
  rc.output_dt = c.number("ramsey.output_dt_ns") * 1e-9;
  rc.integration_dt = c.number("ramsey.integration_dt_ns") * 1e-9;
  rc.repetitions = positive_count(c, "ramsey.repetitions");
  rc.detuning = 2.0 * std::numbers::pi * c.number("ramsey.detuning_mhz") * 1e6;
  const std::string mode = c.string("run.mode");
  if (mode == "linearized") {
    rc.mode = PhaseMode::kLinearized;
  } else if (mode == "grid") {
    rc.mode = PhaseMode::kGridNonlinear;
  } else {
    throw ConfigError("run.mode must be 'linearized' or 'grid', got '" + mode + "'");
  }
  rc.seed = config_seed(c);
  rc.threads = config_threads(c);
  return rc;
}

namespace {

// Output files written under temporary names; renamed together on commit,
// deleted if the command fails first.
class Staging {
 public:
  explicit Staging(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
      throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    }
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    if (!committed_) {
      for (auto& f : files_) {
        f.stream.close();
        std::error_code ec;
        fs::remove(f.temp, ec);
      }
    }
  }

  std::ofstream& open(const std::string& name) {
    File f;
    f.target = dir_ / name;
    f.temp = dir_ / ("." + name + ".tmp");
    f.stream.open(f.temp, std::ios::binary | std::ios::trunc);
    if (!f.stream) {
      throw IoError("cannot write " + f.temp.string());
    }
    files_.push_back(std::move(f));
    return files_.back().stream;
  }

  std::vector<fs::path> commit() {
    for (auto& f : files_) {
      f.stream.flush();
      if (!f.stream) {
        throw IoError("write failed for " + f.target.string());
      }
      f.stream.close();
    }
    std::vector<fs::path> out;
    for (auto& f : files_) {
      std::error_code ec;
      fs::rename(f.temp, f.target, ec);
      if (ec) {
        throw IoError("cannot rename " + f.temp.string() + ": " + ec.message());
      }
      out.push_back(f.target);
    }
    committed_ = true;
    return out;
  }

 private:
  struct File {
    fs::path target;
    fs::path temp;
    std::ofstream stream;
  };
  fs::path dir_;
  std::list<File> files_;
  bool committed_ = false;
};

struct Context {
  const Config& config;
  std::string command;
  std::uint64_t seed;
  unsigned threads;
  LogSink log;

  void notice(const std::string& line) const {
    if (log) {
      log(line);
    }
  }
};

void write_header(std::ostream& os, const Context& ctx) {
  os << "# rtnsim " << kToolVersion << "\n";
  os << "# command " << ctx.command << "\n";
  os << "# defaults_version " << kDefaultsVersion << "\n";
  os << "# config_hash " << hex64(ctx.config.hash()) << "\n";
  os << "# seed " << ctx.seed << "\n";
  os << "# effective config:\n";
  std::istringstream text(ctx.config.canonical_text());
  for (std::string line; std::getline(text, line);) {
    os << (line.empty() ? "#" : "# " + line) << "\n";
  }
}

json metadata(const Context& ctx) {
  return json{{"tool", "rtnsim"},
              {"version", kToolVersion},
              {"command", ctx.command},
              {"defaults_version", kDefaultsVersion},
              {"config_hash", hex64(ctx.config.hash())},
              {"seed", ctx.seed}};
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json fit_json(const FitResult& f) {
  json j{{"model", to_string(f.model)},
         {"gamma_per_s", number_or_null(f.gamma)},
         {"gamma_stderr_per_s", number_or_null(f.gamma_stderr)},
         {"t2star_s", number_or_null(f.t2star())},
         {"delta_omega_rad_per_s", number_or_null(f.delta_omega)},
         {"delta_omega_stderr_rad_per_s", number_or_null(f.delta_omega_stderr)},
         {"residual_rms", number_or_null(f.residual_rms)},
         {"converged", f.converged},
         {"non_identifiable", f.non_identifiable},
         {"iterations", f.iterations},
         {"samples", f.samples},
         {"diagnostics", f.diagnostics}};
  if (f.model == FitModel::kBeating) {
    j["delta_omega_split_rad_per_s"] = number_or_null(f.delta_omega_split);
    j["delta_omega_split_stderr_rad_per_s"] = number_or_null(f.split_stderr);
    j["f_statistic"] = number_or_null(f.f_statistic);
    j["f_pvalue"] = number_or_null(f.f_pvalue);
    j["model_preferred"] = f.model_preferred;
  }
  return j;
}

json fit_pair_json(std::span<const double> t, std::span<const double> p1, double alpha) {
  FitOptions opts;
  opts.f_test_alpha = alpha;
  const FitResult expo = fit_exponential_ramsey(t, p1, opts);
  const FitResult beat = fit_beating_ramsey(t, p1, opts);
  return json{{"exponential", fit_json(expo)},
              {"beating", fit_json(beat)},
              {"preferred", beat.model_preferred ? "beating" : "exponential"}};
}

double f_test_alpha(const Config& c) {
  const double a = c.number("fit.f_test_alpha");
  if (!(a > 0.0 && a < 1.0)) {
    throw ConfigError("fit.f_test_alpha must lie in (0, 1)");
  }
  return a;
}

std::vector<fs::path> cmd_psd(const Context& ctx, const fs::path& out_dir) {
  const Config& c = ctx.config;
  RamseyConfig rc = ramsey_config(c);
  const double horizon = c.number("psd.horizon_ms") * 1e-3;
  const double dt = c.number("psd.dt_ns") * 1e-9;
  const std::size_t m = positive_count(c, "psd.realizations", 2);
  const double f_norm = c.number("psd.normalization_hz");
  const std::string window = c.string("psd.window");
  if (window != "none" && window != "hann") {
    throw ConfigError("psd.window must be 'none' or 'hann'");
  }
  if (!(dt > 0.0) || !(horizon > 0.0)) {
    throw ConfigError("psd.horizon_ms and psd.dt_ns must be positive");
  }
  const double ratio = horizon / dt;
  const auto n = static_cast<std::size_t>(std::llround(ratio));
  if (n < 16 || std::abs(ratio - static_cast<double>(n)) > 1e-6 * ratio) {
    throw ConfigError("psd.horizon_ms must be a whole number (at least 16) of psd.dt_ns steps");
  }
  const auto [band_low, band_high] = resolvable_band(n, dt);
  if (!(f_norm >= band_low && f_norm <= band_high)) {
    throw ConfigError("psd.normalization_hz lies outside the resolvable band [" +
                      format_number(band_low) + ", " + format_number(band_high) + "] Hz");
  }
  if (rc.bath.enabled) {
    config_check([&] {
      (void)make_rtn_source(rc.bath.amplitude, rc.bath.lambda_min);
      (void)sample_switching_rate(rc.bath.lambda_min, rc.bath.lambda_max, 0.0);
    });
  }
  const FlickerBath bath = config_bath(rc);
  ctx.notice("psd: " + std::to_string(bath.sources.size()) + " fluctuators, " +
             std::to_string(m) + " realizations of " + std::to_string(n) + " samples");

  std::vector<std::vector<double>> traces(m);
  parallel_for(m, ctx.threads, [&](std::size_t i) {
    Sampler sampler(ctx.seed, i);
    traces[i] = sample_noise_trace(bath.sources, dt, n, sampler);
  });
  PsdOptions opts;
  opts.window = window == "hann" ? PsdWindow::kHann : PsdWindow::kNone;
  opts.threads = ctx.threads;
  opts.cell_averaged = true;
  const PsdEstimate est = estimate_psd(traces, dt, f_norm, opts);

  const bool has_theory = !bath.sources.empty() && bath.amplitude() > 0.0;
  const double theory_ref =
      has_theory ? flicker_psd_theory(bath, 2.0 * std::numbers::pi * f_norm).lorentzian_sum : 0.0;

  Staging staging(out_dir);
  auto& os = staging.open("psd.csv");
  write_header(os, ctx);
  os << "# resolvable_band_hz " << format_number(band_low) << " " << format_number(band_high)
     << "\n";
  os << "freq_hz,psd_estimated,psd_lorentzian_sum,psd_ideal_1f\n";
  std::vector<double> f_band, v_band;
  for (std::size_t k = 0; k < est.frequencies.size(); ++k) {
    const double f = est.frequencies[k];
    if (f < band_low || f > band_high) {
      continue;
    }
    const double lor =
        has_theory
            ? flicker_psd_theory(bath, 2.0 * std::numbers::pi * f).lorentzian_sum / theory_ref
            : 0.0;
    os << format_number(f) << "," << format_number(est.values[k]) << "," << format_number(lor)
       << "," << format_number(f_norm / f) << "\n";
    f_band.push_back(f);
    v_band.push_back(est.values[k]);
  }
  if (est.reference > 0.0 && f_band.size() >= 2) {
    const double slope = loglog_slope(f_band, v_band, band_low, band_high);
    ctx.notice("psd: log-log slope " + format_number(slope) + " over the resolvable band");
  }
  return staging.commit();
}

std::vector<double> readout_sample(const std::vector<double>& p1, std::uint64_t shots,
                                   std::uint64_t seed) {
  Sampler sampler(seed, kReadoutStream);
  std::vector<double> out(p1.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const double p = std::clamp(p1[i], 0.0, 1.0);
    out[i] = static_cast<double>(sampler.binomial(shots, p)) / static_cast<double>(shots);
  }
  return out;
}

std::vector<fs::path> cmd_ramsey(const Context& ctx, const fs::path& out_dir) {
  const Config& c = ctx.config;
  const RamseyConfig rc = ramsey_config(c);
  const double alpha = f_test_alpha(c);
  const bool readout = c.boolean("ramsey.readout_noise");
  const std::size_t shots = positive_count(c, "ramsey.shots");
  config_check([&] { validate(rc); });
  ctx.notice("ramsey: " + std::to_string(rc.repetitions) + " repetitions, " +
             std::to_string(output_cells(rc) + 1) + " output points");
  const DecayTrace trace = decay_factor_mc(rc);
  if (trace.failed_repetitions > 0) {
    ctx.notice("ramsey: " + std::to_string(trace.failed_repetitions) +
               " repetitions failed and were excluded; first: " + trace.first_failure);
  }
  const std::vector<double> p1 =
      readout ? readout_sample(trace.p1, shots, rc.seed) : trace.p1;

  const WorkingPoint wp = working_point(rc.qubit, rc.phi_b);
  json doc = metadata(ctx);
  doc["working_point"] = {{"phi_b_phi0", wp.phi_b},
                          {"omega01_rad_per_s", wp.omega01},
                          {"domega_dphi_rad_per_s_per_phi0", wp.domega_dphi}};
  json expected = json::array();
  for (const auto& s : rc.strong) {
    expected.push_back(2.0 * std::abs(wp.domega_dphi) * s.amplitude);
  }
  doc["expected_split_rad_per_s"] = expected;
  doc["repetitions_used"] = trace.repetitions;
  doc["repetitions_failed"] = trace.failed_repetitions;
  doc["fits"] = fit_pair_json(trace.times, p1, alpha);

  Staging staging(out_dir);
  auto& os = staging.open("ramsey.csv");
  write_header(os, ctx);
  os << "time_s,p1,envelope,decay_re,decay_im\n";
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    os << format_number(trace.times[i]) << "," << format_number(p1[i]) << ","
       << format_number(trace.envelope[i]) << "," << format_number(trace.decay_factor[i].real())
       << "," << format_number(trace.decay_factor[i].imag()) << "\n";
  }
  staging.open("fit.json") << doc.dump(2) << "\n";
  return staging.commit();
}

std::vector<double> sweep_grid_hz(const Config& c) {
  const double lo = c.number("sweep.f01_min_ghz");
  const double hi = c.number("sweep.f01_max_ghz");
  const std::size_t points = positive_count(c, "sweep.points");
  if (!(lo > 0.0) || !(hi >= lo)) {
    throw ConfigError("sweep needs 0 < f01_min_ghz <= f01_max_ghz");
  }
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double frac = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    out[i] = (lo + (hi - lo) * frac) * 1e9;
  }
  return out;
}

std::vector<double> t1_baseline(const std::vector<double>& times, double t1) {
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    out[i] = std::exp(-times[i] / (2.0 * t1));
  }
  return out;
}

std::vector<fs::path> cmd_sweep(const Context& ctx, const fs::path& out_dir) {
  const Config& c = ctx.config;
  const RamseyConfig rc = ramsey_config(c);
  const auto grid = sweep_grid_hz(c);
  config_check([&] { validate(rc); });
  ctx.notice("sweep: " + std::to_string(grid.size()) + " frequencies x " +
             std::to_string(rc.repetitions) + " repetitions");
  const SweepResult result = frequency_sweep(rc, grid);

  Staging staging(out_dir);
  auto& sweep = staging.open("sweep.csv");
  write_header(sweep, ctx);
  sweep << "f01_hz,time_s,envelope\n";
  auto& t2 = staging.open("t2star.csv");
  write_header(t2, ctx);
  t2 << "f01_hz,t2star_s,converged,phi_b_phi0,domega_dphi_rad_per_s_per_phi0,first_node_s,"
        "status\n";
  std::size_t best = result.rows.size();
  for (std::size_t k = 0; k < result.rows.size(); ++k) {
    const auto& row = result.rows[k];
    if (!row.ok) {
      ctx.notice("sweep: skipped " + format_number(row.f01_hz) + " Hz: " + row.error);
      t2 << format_number(row.f01_hz) << ",nan,0,nan,nan,nan,unattainable\n";
      continue;
    }
    for (std::size_t i = 0; i < row.trace.times.size(); ++i) {
      sweep << format_number(row.f01_hz) << "," << format_number(row.trace.times[i]) << ","
            << format_number(row.trace.envelope[i]) << "\n";
    }
    const double node = first_node_time(row.trace.times, row.trace.envelope,
                                        t1_baseline(row.trace.times, rc.t1));
    t2 << format_number(row.f01_hz) << "," << format_number(row.t2star) << ","
       << (row.t2star_converged ? 1 : 0) << "," << format_number(row.point.phi_b) << ","
       << format_number(row.point.domega_dphi) << "," << format_number(node) << ",ok\n";
    if (row.t2star_converged &&
        (best == result.rows.size() || row.t2star > result.rows[best].t2star)) {
      best = k;
    }
  }
  t2 << "mean," << format_number(result.t2star_mean) << ",,,,,summary\n";
  t2 << "max," << format_number(result.t2star_max) << ",,,,,summary";
  if (best < result.rows.size()) {
    t2 << " at " << format_number(result.rows[best].f01_hz) << " Hz";
  }
  t2 << "\n";
  return staging.commit();
}

std::vector<fs::path> cmd_multi_rtn(const Context& ctx, const fs::path& out_dir) {
  const Config& c = ctx.config;
  RamseyConfig rc = ramsey_config(c);
  const auto counts = c.integers("multi_rtn.n_sources");
  const double b0 = c.number("multi_rtn.b0_phi0");
  const double rate = c.number("multi_rtn.rate_hz");
  const std::size_t seeds = positive_count(c, "multi_rtn.seeds");
  rc.phi_b = c.number("multi_rtn.phi_b_phi0");
  rc.bath.enabled = c.boolean("multi_rtn.include_bath");
  if (counts.empty()) {
    throw ConfigError("multi_rtn.n_sources must list at least one count");
  }
  for (const auto n : counts) {
    if (n < 1) {
      throw ConfigError("multi_rtn.n_sources entries must be at least 1");
    }
  }
  if (!(b0 > 0.0) || b0 > kMaxRtnAmplitude) {
    throw ConfigError("multi_rtn.b0_phi0 must lie in (0, 0.01]");
  }
  rc.strong = {RtnSource{b0, rate}};
  config_check([&] { validate(rc); });
  const double slope = frequency_derivative(rc.qubit, rc.phi_b);
  const double window_end = slope == 0.0 ? rc.horizon
                                         : std::numbers::pi / (2.0 * std::abs(slope) * b0);

  Staging staging(out_dir);
  auto& env = staging.open("multi_rtn.csv");
  write_header(env, ctx);
  env << "n_sources,seed,time_s,envelope,product_model\n";
  auto& con = staging.open("contrast.csv");
  write_header(con, ctx);
  con << "n_sources,seed,beating_contrast\n";

  std::vector<std::vector<double>> baselines(seeds);
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = ctx.seed + s;
    if (rc.bath.enabled) {
      RamseyConfig base = rc;
      base.strong.clear();
      base.seed = seed;
      baselines[s] = decay_factor_mc(base).envelope;
    }
  }
  for (const auto n : counts) {
    std::vector<double> contrasts;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = ctx.seed + s;
      Sampler amp_sampler(seed, kAmplitudeStream + static_cast<std::uint64_t>(n));
      const auto amps = distribute_amplitudes(static_cast<std::size_t>(n), b0, amp_sampler);
      RamseyConfig run = rc;
      run.seed = seed;
      run.strong.clear();
      for (const double b : amps) {
        run.strong.push_back(RtnSource{b, rate});
      }
      const DecayTrace trace = decay_factor_mc(run);
      const auto baseline =
          rc.bath.enabled ? baselines[s] : t1_baseline(trace.times, rc.t1);
      const auto model = multi_rtn_envelope_model(trace.times, baseline, amps, slope);
      for (std::size_t i = 0; i < trace.times.size(); ++i) {
        env << n << "," << seed << "," << format_number(trace.times[i]) << ","
            << format_number(trace.envelope[i]) << "," << format_number(model[i]) << "\n";
      }
      const double contrast = beating_contrast(trace.times, trace.envelope, baseline, window_end);
      contrasts.push_back(contrast);
      con << n << "," << seed << "," << format_number(contrast) << "\n";
    }
    std::sort(contrasts.begin(), contrasts.end());
    const std::size_t h = contrasts.size() / 2;
    const double median = contrasts.size() % 2 == 1 ? contrasts[h]
                                                    : 0.5 * (contrasts[h - 1] + contrasts[h]);
    ctx.notice("multi-rtn: N=" + std::to_string(n) + " median contrast " +
               format_number(median));
  }
  return staging.commit();
}

struct Series {
  std::vector<double> t;
  std::vector<double> p1;
};

Series read_time_p1_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open input " + path.string());
  }
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  std::ptrdiff_t it = -1, ip = -1;
  std::size_t width = 0;
  std::size_t lineno = 0;
  Series s;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line == "\r") {
      continue;
    }
    const auto cells = split(line);
    if (it < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "time_s") it = static_cast<std::ptrdiff_t>(i);
        if (cells[i] == "p1") ip = static_cast<std::ptrdiff_t>(i);
      }
      if (it < 0 || ip < 0) {
        throw ValidationError(path.string() + ": header must name time_s and p1 columns");
      }
      width = cells.size();
      continue;
    }
    if (cells.size() != width) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": wrong number of fields");
    }
    auto parse = [&](const std::string& text) {
      double v = 0.0;
      const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
      if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad number '" +
                              text + "'");
      }
      return v;
    };
    s.t.push_back(parse(cells[static_cast<std::size_t>(it)]));
    s.p1.push_back(parse(cells[static_cast<std::size_t>(ip)]));
  }
  if (it < 0) {
    throw ValidationError(path.string() + ": no header row");
  }
  return s;
}

std::vector<fs::path> cmd_fit(const Context& ctx, const fs::path& out_dir) {
  const Config& c = ctx.config;
  const std::string input = c.string("fit.input_csv");
  const double alpha = f_test_alpha(c);
  if (input.empty()) {
    throw ConfigError("fit.input_csv is empty; name a CSV with time_s and p1 columns");
  }
  const Series s = read_time_p1_csv(input);
  ctx.notice("fit: " + std::to_string(s.t.size()) + " samples from " + input);
  json doc = metadata(ctx);
  doc["input"] = input;
  doc["fits"] = fit_pair_json(s.t, s.p1, alpha);
  Staging staging(out_dir);
  staging.open("fit.json") << doc.dump(2) << "\n";
  return staging.commit();
}

}  // namespace

std::vector<fs::path> run_command(const Config& config, std::string_view command,
                                  const fs::path& out_dir, const LogSink& log) {
  Context ctx{config, std::string(command), 0, 0, log};
  ctx.seed = config_seed(config);
  ctx.threads = config_threads(config);
  const auto defaulted = config.defaulted_keys();
  if (!defaulted.empty()) {
    std::string line = "notice: " + std::to_string(defaulted.size()) + " keys at defaults:";
    for (const auto& k : defaulted) {
      line += " " + k;
    }
    ctx.notice(line);
  }
  if (command == "psd") return cmd_psd(ctx, out_dir);
  if (command == "ramsey") return cmd_ramsey(ctx, out_dir);
  if (command == "sweep") return cmd_sweep(ctx, out_dir);
  if (command == "multi-rtn") return cmd_multi_rtn(ctx, out_dir);
  if (command == "fit") return cmd_fit(ctx, out_dir);
  throw ConfigError("unknown command '" + std::string(command) +
                    "'; expected psd, ramsey, sweep, multi-rtn or fit");
}

}  // namespace rtnsim
