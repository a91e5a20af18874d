#pragma once
// Experiment configuration (one JSON file drives every subcommand) and the
// four run entry points behind the CLI. Every artifact a run writes embeds
// the config hash and seed, and reruns with identical config and seed
// produce byte-identical artifacts.

#include <cstdint>
#include <string>
#include <vector>

#include "fgrm/metrics.hpp"
#include "fgrm/model.hpp"
#include "fgrm/pretrain.hpp"
#include "fgrm/scenes.hpp"
#include "fgrm/tuner.hpp"

namespace fgrm {

struct MetricsConfig {
  int ece_bins = 15;
  int mi_levels = 10;
  int box_patch = 8;
  // Ratios default to the epistemic map; this switches them to aleatoric.
  bool ood_on_aleatoric = false;
  CorruptionKind eval_corruption = CorruptionKind::gaussian_noise;
  int eval_severity = 3;
  int map_samples = 4;        // samples whose maps are exported as PGM
  int scatter_max_rows = 50000;

  void validate() const;  // throws ConfigError
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir;
  SceneSpec scenes;
  std::vector<int> model_widths = {8, 8, 8};
  int model_kernel = 3;
  PretrainConfig pretrain;
  TunerConfig tuner;
  MetricsConfig metrics;

  // Strict parse: unknown fields are rejected with their full path, type
  // mismatches name the field. "seed" and "out_dir" are required.
  static ExperimentConfig from_json_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text, const std::string& origin);

  // Canonical form (every field, sorted keys); hashing covers all of it
  // except out_dir, so moving a run directory does not change identity.
  std::string canonical_json() const;
  std::string config_hash() const;  // 16 hex chars, FNV-1a 64

  // Model shape follows the scene spec; only widths/kernel are configurable.
  ModelConfig model_config() const;

  void validate() const;  // throws ConfigError
};

// Output root: config out_dir, unless the FGRM_OUT_ROOT environment variable
// is set, in which case a relative out_dir nests under it.
std::string resolve_out_dir(const ExperimentConfig& config);

struct PretrainRunResult {
  std::string checkpoint_path;
  double final_loss = 0.0;
  double final_dice = 0.0;
};
PretrainRunResult run_pretrain(const ExperimentConfig& config);

struct TuneRunResult {
  std::string checkpoint_path;
  TuneLogRow final_row;
  int eta_halvings = 0;
};
TuneRunResult run_tune(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& reward_override = "");

struct EvalRunResult {
  std::string report_path;
  CalibrationReport report;
};
// split: train | val | test. With ood=true the split is corrupted with the
// configured eval corruption and ratios against the clean maps are reported.
// manifest_path empty means "<out>/dataset/manifest.json" (written by
// run_pretrain); a missing manifest is an IoError telling the user to run
// pretrain first. tag overrides the derived output directory suffix.
EvalRunResult run_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& split, bool ood,
                       const std::string& manifest_path = "", const std::string& tag = "");

struct AblationCell {
  std::string mode;  // "finegrained" | "uniform"
  double beta = 0.0;
  double test_ece = 0.0;
  double test_dice = 0.0;
  double max_drift = 0.0;
};
struct AblationRunResult {
  std::string summary_path;
  std::vector<AblationCell> cells;
};
AblationRunResult run_ablation(const ExperimentConfig& config,
                               const std::string& checkpoint_path,
                               const std::vector<double>& betas,
                               const std::vector<std::string>& modes);

}  // namespace fgrm
