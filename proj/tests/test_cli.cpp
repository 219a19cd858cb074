#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Sandbox {
  fs::path root;
  Sandbox() {
    root = fs::temp_directory_path() / ("rtnsim_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "small.toml") << R"([bath]
n_sources = 30
lambda_max_hz = 1e6
[ramsey]
horizon_us = 5.0
repetitions = 64
[psd]
horizon_ms = 0.2
realizations = 6
normalization_hz = 2e5
[sweep]
points = 3
[multi_rtn]
n_sources = [1, 2]
seeds = 2
)";
  }
  ~Sandbox() { fs::remove_all(root); }
};

struct Result {
  int code = -1;
  std::string err;
};

// Runs the CLI with a clean RTNSIM_* environment; `env` is prepended verbatim.
Result run(const Sandbox& box, const std::string& args, const std::string& env = "") {
  const fs::path err = box.root / "stderr.txt";
  const std::string cmd = "env -u RTNSIM_RUN__THREADS " + env + " '" RTNSIM_CLI_PATH "' " +
                          args + " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool has_temporaries(const fs::path& dir) {
  if (!fs::exists(dir)) {
    return false;
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".tmp") {
      return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("help, version and argument errors") {
  const Sandbox box;
  CHECK(run(box, "--help").code == 0);
  CHECK(run(box, "--version").code == 0);
  CHECK(run(box, "").code == 2);
  CHECK(run(box, "dance").code == 2);
  CHECK(run(box, "ramsey --mode sideways").code == 2);
  CHECK(run(box, "ramsey --seed -1").code == 2);
  CHECK(run(box, "ramsey --seed 9223372036854775808").code == 2);
  CHECK(run(box, "ramsey --config /nonexistent.toml").code == 2);
}

TEST_CASE("configuration problems exit with code 2 and a structured message") {
  const Sandbox box;
  const auto out = (box.root / "o").string();
  auto r = run(box, "ramsey --out " + out, "RTNSIM_QUBIT__BOGUS=1");
  CHECK(r.code == 2);
  CHECK(r.err.find("rtnsim: error stage=environment kind=\"config error\"") != std::string::npos);
  r = run(box, "ramsey --out " + out, "RTNSIM_QUBIT__EJ_GHZ=1.0");
  CHECK(r.code == 2);
  CHECK(r.err.find("stage=ramsey") != std::string::npos);
  std::ofstream(box.root / "bad.toml") << "[ramsey]\nrepetitions = \"lots\"\n";
  r = run(box, "ramsey --out " + out + " --config " + (box.root / "bad.toml").string());
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("runtime failures exit with code 3 and leave no partial files") {
  const Sandbox box;
  const auto out = box.root / "fitout";
  auto r = run(box, "fit --input /nonexistent.csv --out " + out.string());
  CHECK(r.code == 3);
  CHECK(r.err.find("kind=\"io error\"") != std::string::npos);
  std::ofstream(box.root / "bad.csv") << "time_s,p1\n0,1\nxx,2\n";
  r = run(box, "fit --input " + (box.root / "bad.csv").string() + " --out " + out.string());
  CHECK(r.code == 3);
  CHECK_FALSE(has_temporaries(out));
  CHECK_FALSE(fs::exists(out / "fit.json"));
}

TEST_CASE("every command is byte-identical at one and eight threads") {
  const Sandbox box;
  const auto cfg = (box.root / "small.toml").string();
  const char* commands[] = {"psd", "ramsey", "sweep", "multi-rtn"};
  for (const char* c : commands) {
    CAPTURE(c);
    const auto a = box.root / (std::string(c) + "_1");
    const auto b = box.root / (std::string(c) + "_8");
    REQUIRE(run(box, std::string(c) + " --config " + cfg + " --threads 1 --out " + a.string())
                .code == 0);
    REQUIRE(run(box, std::string(c) + " --config " + cfg + " --threads 8 --out " + b.string())
                .code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      CAPTURE(e.path().filename());
      CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
      ++files;
    }
    CHECK(files > 0);
    CHECK_FALSE(has_temporaries(a));
  }
}

TEST_CASE("seed and mode flags reach the effective configuration") {
  const Sandbox box;
  const auto cfg = (box.root / "small.toml").string();
  const auto a = box.root / "s1";
  const auto b = box.root / "s2";
  REQUIRE(run(box, "ramsey --config " + cfg + " --seed 11 --out " + a.string()).code == 0);
  REQUIRE(run(box, "ramsey --config " + cfg + " --seed 12 --mode grid --out " + b.string())
              .code == 0);
  const auto ta = slurp(a / "ramsey.csv");
  const auto tb = slurp(b / "ramsey.csv");
  CHECK(ta.find("# seed 11\n") != std::string::npos);
  CHECK(tb.find("# seed 12\n") != std::string::npos);
  CHECK(tb.find("mode = 'grid'") != std::string::npos);
  CHECK(ta != tb);
  // The written fringe can be re-fitted by the fit command.
  const auto f = box.root / "refit";
  CHECK(run(box, "fit --input " + (a / "ramsey.csv").string() + " --out " + f.string()).code == 0);
  CHECK(fs::exists(f / "fit.json"));
}
