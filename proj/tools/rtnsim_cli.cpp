#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>

#include <CLI11.hpp>

#include "rtnsim/rtnsim.h"

extern char** environ;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void print_line(const char* line, void*) { std::fprintf(stderr, "rtnsim: %s\n", line); }

int report(rtnsim_status status, const char* stage) {
  std::fprintf(stderr, "rtnsim: error stage=%s kind=\"%s\" message=\"%s\"\n", stage,
               rtnsim_status_name(status), rtnsim_last_error());
  return status == RTNSIM_E_CONFIG ? kExitConfig : kExitRuntime;
}

struct ConfigHandle {
  rtnsim_config* ptr = nullptr;
  ~ConfigHandle() { rtnsim_config_destroy(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-telegraph and 1/f flux-noise dephasing simulator"};
  app.set_version_flag("--version", std::string(rtnsim_version()));
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string mode;
  unsigned threads = 0;
  std::string input;

  app.add_option("--config", config_path, "TOML configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides run.seed)")
                       ->check(CLI::Range(std::uint64_t{0},
                                          static_cast<std::uint64_t>(
                                              std::numeric_limits<std::int64_t>::max())));
  app.add_option("--out", out_dir, "Output directory (overrides output.dir)");
  app.add_option("--mode", mode, "Phase integration mode")
      ->check(CLI::IsMember({"linearized", "grid"}));
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  const char* commands[][2] = {
      {"psd", "Flicker-noise power spectral density"},
      {"ramsey", "Ensemble Ramsey fringe, envelope and fits"},
      {"sweep", "Envelope and T2* across qubit frequencies"},
      {"multi-rtn", "Beating contrast as one amplitude is split across fluctuators"},
      {"fit", "Re-fit an external time_s,p1 CSV"},
  };
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c[0], c[1]);
    sub->fallthrough();
    if (std::string(c[0]) == "fit") {
      sub->add_option("--input", input, "CSV with time_s and p1 columns (overrides fit.input_csv)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ConfigHandle config;
  rtnsim_status st = rtnsim_config_create(&config.ptr);
  if (st != RTNSIM_OK) {
    return report(st, "config");
  }
  if (!config_path.empty() &&
      (st = rtnsim_config_load_file(config.ptr, config_path.c_str())) != RTNSIM_OK) {
    return report(st, "config");
  }
  if ((st = rtnsim_config_apply_env(config.ptr, environ)) != RTNSIM_OK) {
    return report(st, "environment");
  }
  if (*seed_opt &&
      (st = rtnsim_config_set(config.ptr, "run.seed", std::to_string(seed).c_str())) !=
          RTNSIM_OK) {
    return report(st, "arguments");
  }
  if (!mode.empty() &&
      (st = rtnsim_config_set(config.ptr, "run.mode", ("\"" + mode + "\"").c_str())) !=
          RTNSIM_OK) {
    return report(st, "arguments");
  }
  if (*threads_opt &&
      (st = rtnsim_config_set(config.ptr, "run.threads", std::to_string(threads).c_str())) !=
          RTNSIM_OK) {
    return report(st, "arguments");
  }
  if (!input.empty()) {
    std::string quoted = "'" + input + "'";
    if ((st = rtnsim_config_set(config.ptr, "fit.input_csv", quoted.c_str())) != RTNSIM_OK) {
      return report(st, "arguments");
    }
  }
  st = rtnsim_run(config.ptr, command.c_str(), out_dir.empty() ? nullptr : out_dir.c_str(),
                  print_line, nullptr);
  if (st != RTNSIM_OK) {
    return report(st, command.c_str());
  }
  return kExitOk;
}
