#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

#ifndef FGRM_CLI_PATH
#error "FGRM_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FGRM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

// Small enough to pretrain in well under a second.
const char* kTinyConfig = R"({
  "seed": 5,
  "out_dir": "out",
  "scenes": {"height": 8, "width": 8, "classes": 2, "regions": 3, "count": 10,
             "ambiguity_width": 1.0, "noise": 0.05, "min_class_fraction": 0.05},
  "model": {"widths": [2], "kernel": 3},
  "pretrain": {"epochs": 1, "batch_size": 4, "learning_rate": 0.001},
  "tuner": {"epochs": 1, "batch_size": 2, "monitor_images": 2},
  "metrics": {"box_patch": 4, "map_samples": 1}
})";

struct CliDir {
  fs::path root;
  fs::path config;
  CliDir() : root("test_tmp_cli") {
    fs::remove_all(root);
    fs::create_directories(root);
    config = root / "config.json";
    std::ofstream out(config);
    out << kTinyConfig;
  }
  ~CliDir() { fs::remove_all(root); }
  std::string out_dir() const { return (root / "out").string(); }
  std::string flags() const {
    return "--config " + config.string() + " --out-dir " + out_dir();
  }
};

}  // namespace

TEST_CASE("cli maps error classes to exit codes") {
  CliDir dir;
  // missing config file -> io error
  CHECK(run_cli("--config " + (dir.root / "nope.json").string() + " pretrain") == 4);
  // malformed config -> config error
  const fs::path bad = dir.root / "bad.json";
  {
    std::ofstream out(bad);
    out << "{broken";
  }
  CHECK(run_cli("--config " + bad.string() + " pretrain") == 2);
  // unknown field -> config error
  const fs::path unknown = dir.root / "unknown.json";
  {
    std::ofstream out(unknown);
    out << R"({"seed":1,"out_dir":"o","bogus":1})";
  }
  CHECK(run_cli("--config " + unknown.string() + " pretrain") == 2);
  // CLI misuse -> 2; help -> 0
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--config x pretrain --no-such-flag") == 2);
  CHECK(run_cli("--help") == 0);
  // checkpoint missing -> io error
  CHECK(run_cli(dir.flags() + " tune --checkpoint " + (dir.root / "no.fgrm").string()) == 4);
}

TEST_CASE("cli pretrain, eval and rerun determinism") {
  CliDir dir;
  REQUIRE(run_cli(dir.flags() + " pretrain") == 0);
  const fs::path out = dir.out_dir();
  const fs::path ckpt = out / "pretrain" / "checkpoint.fgrm";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(out / "pretrain" / "log.csv"));
  CHECK(fs::exists(out / "dataset" / "manifest.json"));
  CHECK(fs::exists(out / "dataset" / "images" / "0000.pgm"));
  CHECK(fs::exists(out / "dataset" / "masks" / "0009.pgm"));

  // eval on the test split
  REQUIRE(run_cli(dir.flags() + " eval --checkpoint " + ckpt.string() + " --split test") == 0);
  const fs::path report = out / "eval_test_pretrain" / "report.json";
  CHECK(fs::exists(report));
  CHECK(fs::exists(out / "eval_test_pretrain" / "reliability.csv"));
  CHECK(fs::exists(out / "eval_test_pretrain" / "scatter.csv"));
  CHECK(fs::exists(out / "eval_test_pretrain" / "maps" / "alea_0000.pgm"));

  // eval refuses a split before the dataset exists
  CHECK(run_cli("--config " + dir.config.string() + " --out-dir " +
                (dir.root / "fresh").string() + " eval --checkpoint " + ckpt.string()) == 4);

  // rerunning pretrain reproduces the checkpoint bytes exactly
  std::ifstream a(ckpt, std::ios::binary);
  const std::string before((std::istreambuf_iterator<char>(a)),
                           std::istreambuf_iterator<char>());
  a.close();
  REQUIRE(run_cli(dir.flags() + " pretrain") == 0);
  std::ifstream b(ckpt, std::ios::binary);
  const std::string after((std::istreambuf_iterator<char>(b)),
                          std::istreambuf_iterator<char>());
  CHECK(before == after);
}

TEST_CASE("cli tune produces a tuned checkpoint and log") {
  CliDir dir;
  REQUIRE(run_cli(dir.flags() + " pretrain") == 0);
  const fs::path out = dir.out_dir();
  const fs::path ckpt = out / "pretrain" / "checkpoint.fgrm";
  REQUIRE(run_cli(dir.flags() + " tune --checkpoint " + ckpt.string()) == 0);
  CHECK(fs::exists(out / "tune_id" / "checkpoint.fgrm"));
  CHECK(fs::exists(out / "tune_id" / "log.csv"));
  // reward override routes to a different stage directory
  REQUIRE(run_cli(dir.flags() + " tune --checkpoint " + ckpt.string() + " --reward ood") == 0);
  CHECK(fs::exists(out / "tune_ood" / "checkpoint.fgrm"));
  // unknown reward -> config error
  CHECK(run_cli(dir.flags() + " tune --checkpoint " + ckpt.string() + " --reward zzz") == 2);
}
