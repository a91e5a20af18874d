#include <cstdlib>
#include <string>

#include "doctest.h"
#include "fgrm/errors.hpp"
#include "fgrm/experiment.hpp"

using fgrm::ExperimentConfig;

namespace {

const char* kMinimal = R"({"seed": 1, "out_dir": "run"})";

}  // namespace

TEST_CASE("minimal config parses with library defaults") {
  const ExperimentConfig cfg = ExperimentConfig::from_json_text(kMinimal, "test");
  CHECK(cfg.seed == 1);
  CHECK(cfg.out_dir == "run");
  CHECK(cfg.scenes.height == 32);
  CHECK(cfg.scenes.classes == 3);
  CHECK(cfg.scenes.count == 782);
  CHECK(cfg.scenes.seed == 1);  // follows the experiment seed
  CHECK(cfg.model_widths == std::vector<int>{8, 8, 8});
  CHECK(cfg.pretrain.epochs == 10);
  CHECK(cfg.tuner.reward == fgrm::RewardMode::id);
  CHECK(cfg.tuner.beta == 0.1);
  CHECK(cfg.metrics.ece_bins == 15);
  // derived sub-seeds differ from each other
  CHECK(cfg.pretrain.seed != cfg.tuner.seed);
}

TEST_CASE("nested fields override the defaults") {
  const char* text = R"({
    "seed": 7,
    "out_dir": "x",
    "scenes": {"height": 16, "width": 16, "classes": 2, "regions": 3, "count": 20},
    "model": {"widths": [4], "kernel": 3},
    "pretrain": {"epochs": 2, "learning_rate": 0.001},
    "tuner": {"reward": "ood", "beta": 0.5, "fisher_mode": "reciprocal",
              "kl_mode": "dirichlet", "reward_correctness": "argmax"},
    "metrics": {"ece_bins": 10, "box_patch": 4}
  })";
  const ExperimentConfig cfg = ExperimentConfig::from_json_text(text, "test");
  CHECK(cfg.scenes.height == 16);
  CHECK(cfg.scenes.classes == 2);
  CHECK(cfg.model_widths == std::vector<int>{4});
  CHECK(cfg.pretrain.epochs == 2);
  CHECK(cfg.tuner.reward == fgrm::RewardMode::ood);
  CHECK(cfg.tuner.beta == 0.5);
  CHECK(cfg.tuner.fisher_mode == fgrm::FisherMode::reciprocal);
  CHECK(cfg.tuner.kl_mode == fgrm::KlMode::dirichlet);
  CHECK(cfg.tuner.reward_correctness == fgrm::CorrectnessSource::argmax);
  CHECK(cfg.metrics.ece_bins == 10);
  const fgrm::ModelConfig mc = cfg.model_config();
  CHECK(mc.height == 16);
  CHECK(mc.classes == 2);
  CHECK(mc.widths == std::vector<int>{4});
}

TEST_CASE("unknown fields are rejected with their full path") {
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(R"({"seed":1,"out_dir":"x","bogus":3})", "test"),
      doctest::Contains("bogus"), fgrm::ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(
          R"({"seed":1,"out_dir":"x","tuner":{"bogus":3}})", "test"),
      doctest::Contains("tuner.bogus"), fgrm::ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(
          R"({"seed":1,"out_dir":"x","scenes":{"hieght":16}})", "test"),
      doctest::Contains("scenes.hieght"), fgrm::ConfigError);
}

TEST_CASE("missing required fields and type mismatches are config errors") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_text(R"({"out_dir":"x"})", "test"),
                       doctest::Contains("seed"), fgrm::ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_text(R"({"seed":1})", "test"),
                       doctest::Contains("out_dir"), fgrm::ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(R"({"seed":"one","out_dir":"x"})", "test"),
      doctest::Contains("seed"), fgrm::ConfigError);
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(
          R"({"seed":1,"out_dir":"x","pretrain":{"epochs":"ten"}})", "test"),
      doctest::Contains("pretrain.epochs"), fgrm::ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("{not json", "test"), fgrm::ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("[1,2]", "test"), fgrm::ConfigError);
}

TEST_CASE("semantic validation catches cross-field problems") {
  // box_patch must divide the scene size
  CHECK_THROWS_WITH_AS(
      ExperimentConfig::from_json_text(
          R"({"seed":1,"out_dir":"x","metrics":{"box_patch":7}})", "test"),
      doctest::Contains("box_patch"), fgrm::ConfigError);
  // unknown enum value
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(
                      R"({"seed":1,"out_dir":"x","tuner":{"reward":"both"}})", "test"),
                  fgrm::ConfigError);
}

TEST_CASE("config hash ignores out_dir but tracks every other field") {
  const ExperimentConfig a = ExperimentConfig::from_json_text(kMinimal, "test");
  const ExperimentConfig b =
      ExperimentConfig::from_json_text(R"({"seed": 1, "out_dir": "elsewhere"})", "test");
  CHECK(a.config_hash() == b.config_hash());
  CHECK(a.config_hash().size() == 16);

  const ExperimentConfig c =
      ExperimentConfig::from_json_text(R"({"seed": 2, "out_dir": "run"})", "test");
  CHECK(c.config_hash() != a.config_hash());
  const ExperimentConfig d = ExperimentConfig::from_json_text(
      R"({"seed": 1, "out_dir": "run", "tuner": {"beta": 0.2}})", "test");
  CHECK(d.config_hash() != a.config_hash());

  // stable across processes: hash of the default config is a pure function
  CHECK(a.config_hash() == ExperimentConfig::from_json_text(kMinimal, "x").config_hash());
}

TEST_CASE("canonical json reparses to the same hash") {
  const ExperimentConfig a = ExperimentConfig::from_json_text(
      R"({"seed": 3, "out_dir": "r", "tuner": {"beta": 0.25}})", "test");
  const ExperimentConfig b = ExperimentConfig::from_json_text(a.canonical_json(), "canon");
  CHECK(b.config_hash() == a.config_hash());
  CHECK(b.tuner.beta == 0.25);
}

TEST_CASE("out_dir resolution honors the environment root") {
  ExperimentConfig cfg = ExperimentConfig::from_json_text(kMinimal, "test");
  ::unsetenv("FGRM_OUT_ROOT");
  CHECK(fgrm::resolve_out_dir(cfg) == "run");
  ::setenv("FGRM_OUT_ROOT", "/tmp/fgrm_root", 1);
  CHECK(fgrm::resolve_out_dir(cfg) == "/tmp/fgrm_root/run");
  ::unsetenv("FGRM_OUT_ROOT");
}
