#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "rtnsim/ramsey.hpp"

namespace rtnsim {

inline constexpr const char* kToolVersion = "1.0.0";

//! Text of the shipped defaults file.
std::string_view defaults_toml();

//! Effective configuration: the shipped defaults overlaid by a config file,
//! environment overrides and explicit settings, in that order. Every key must
//! exist in the defaults and keep its type.
class Config {
 public:
  Config();
  ~Config();
  Config(const Config& other);
  Config& operator=(const Config& other);

  void merge_file(const std::filesystem::path& path);
  void merge_string(std::string_view toml_text, std::string_view origin = "string");

  //! Applies VARS of the form <prefix>SECTION__KEY=value; value is parsed as
  //! a TOML value and falls back to a bare string.
  void merge_environment(const char* const* environ_block, std::string_view prefix = "RTNSIM_");

  //! key = "section.name"; value is TOML value syntax (bare words are strings).
  void set(std::string_view key, std::string_view value);

  //! Keys still at their shipped default.
  std::vector<std::string> defaulted_keys() const;

  //! Effective document as TOML, excluding keys that never change results
  //! (run.threads, output.dir).
  std::string canonical_text() const;

  //! FNV-1a 64 of canonical_text().
  std::uint64_t hash() const;

  // Typed accessors; throw ConfigError on a missing key or wrong type.
  double number(std::string_view key) const;
  std::int64_t integer(std::string_view key) const;
  bool boolean(std::string_view key) const;
  std::string string(std::string_view key) const;
  std::vector<double> numbers(std::string_view key) const;
  std::vector<std::int64_t> integers(std::string_view key) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

//! RamseyConfig described by the [run], [qubit], [bath], [strong_rtn] and
//! [ramsey] sections.
RamseyConfig ramsey_config(const Config& config);

using LogSink = std::function<void(std::string_view line)>;

//! Runs one of psd | ramsey | sweep | multi-rtn | fit, writing its files into
//! out_dir. Files are written under temporary names and renamed only when the
//! whole command succeeds. Returns the paths written.
std::vector<std::filesystem::path> run_command(const Config& config, std::string_view command,
                                               const std::filesystem::path& out_dir,
                                               const LogSink& log = {});

//! Shortest round-trip decimal form of x.
std::string format_number(double x);

}  // namespace rtnsim
