#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgrm/errors.hpp"
#include "fgrm/experiment.hpp"
#include "fgrm/metrics.hpp"

namespace {

fgrm::ExperimentConfig load_config(const std::string& path, const std::string& out_dir) {
  fgrm::ExperimentConfig cfg = fgrm::ExperimentConfig::from_json_file(path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

std::vector<double> parse_sweep(const std::string& sweep) {
  // "beta=0.01,0.1,1.0"
  const std::string prefix = "beta=";
  if (sweep.rfind(prefix, 0) != 0) {
    throw fgrm::ConfigError("--sweep must look like beta=0.01,0.1,1.0, got '" + sweep + "'");
  }
  std::vector<double> betas;
  std::string rest = sweep.substr(prefix.size());
  size_t pos = 0;
  while (pos <= rest.size()) {
    const size_t comma = rest.find(',', pos);
    const std::string tok = rest.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (tok.empty()) throw fgrm::ConfigError("--sweep has an empty beta value");
    try {
      size_t used = 0;
      betas.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw fgrm::ConfigError("--sweep: cannot parse beta value '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (betas.empty()) throw fgrm::ConfigError("--sweep lists no beta values");
  return betas;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fgrm: evidential segmentation with calibration-reward fine tuning"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir_override;
  app.add_option("--config", config_path, "experiment config JSON")->required();
  app.add_option("--out-dir", out_dir_override, "override the config's output directory");

  auto* cmd_pretrain = app.add_subcommand("pretrain", "generate data and pretrain the model");

  std::string tune_checkpoint, tune_reward;
  auto* cmd_tune = app.add_subcommand("tune", "fine tune a pretrained checkpoint");
  cmd_tune->add_option("--checkpoint", tune_checkpoint, "pretrained checkpoint")->required();
  cmd_tune->add_option("--reward", tune_reward, "reward mode override (id or ood)");

  std::string eval_checkpoint, eval_split = "test", eval_manifest, eval_tag;
  bool eval_ood = false;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
  cmd_eval->add_option("--split", eval_split, "train, val or test (default test)");
  cmd_eval->add_flag("--ood", eval_ood, "evaluate under the configured corruption");
  cmd_eval->add_option("--manifest", eval_manifest, "dataset manifest path override");
  cmd_eval->add_option("--tag", eval_tag, "custom name for the eval output directory");

  std::string abl_checkpoint, abl_sweep = "beta=0.01,0.1,1.0";
  std::vector<std::string> abl_modes = {"finegrained", "uniform"};
  auto* cmd_abl = app.add_subcommand("ablation", "sweep beta and fisher weighting modes");
  cmd_abl->add_option("--checkpoint", abl_checkpoint, "pretrained checkpoint")->required();
  cmd_abl->add_option("--sweep", abl_sweep, "beta sweep, e.g. beta=0.01,0.1,1.0");
  cmd_abl->add_option("--modes", abl_modes, "weighting modes (finegrained, uniform)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const fgrm::ExperimentConfig cfg = load_config(config_path, out_dir_override);

    if (cmd_pretrain->parsed()) {
      const fgrm::PretrainRunResult r = fgrm::run_pretrain(cfg);
      std::printf("pretrain done: checkpoint=%s loss=%s dice=%s\n", r.checkpoint_path.c_str(),
                  fgrm::fmt_double(r.final_loss).c_str(), fgrm::fmt_double(r.final_dice).c_str());
    } else if (cmd_tune->parsed()) {
      const fgrm::TuneRunResult r = fgrm::run_tune(cfg, tune_checkpoint, tune_reward);
      std::printf("tune done: checkpoint=%s reward=%s ece=%s dice=%s kl=%s drift=%s\n",
                  r.checkpoint_path.c_str(), fgrm::fmt_double(r.final_row.reward).c_str(),
                  fgrm::fmt_double(r.final_row.ece).c_str(),
                  fgrm::fmt_double(r.final_row.dice).c_str(),
                  fgrm::fmt_double(r.final_row.kl).c_str(),
                  fgrm::fmt_double(r.final_row.max_drift).c_str());
    } else if (cmd_eval->parsed()) {
      const fgrm::EvalRunResult r =
          fgrm::run_eval(cfg, eval_checkpoint, eval_split, eval_ood, eval_manifest, eval_tag);
      std::printf("eval done: report=%s ece=%s dice=%s", r.report_path.c_str(),
                  fgrm::fmt_double(r.report.ece).c_str(),
                  fgrm::fmt_double(r.report.dice_mean).c_str());
      if (r.report.has_ood) {
        std::printf(" pixel_ratio=%s box_ratio=%s",
                    fgrm::fmt_double(r.report.pixel_ratio).c_str(),
                    fgrm::fmt_double(r.report.box_ratio).c_str());
      }
      std::printf("\n");
    } else if (cmd_abl->parsed()) {
      const std::vector<double> betas = parse_sweep(abl_sweep);
      const fgrm::AblationRunResult r =
          fgrm::run_ablation(cfg, abl_checkpoint, betas, abl_modes);
      std::printf("ablation done: summary=%s cells=%zu\n", r.summary_path.c_str(),
                  r.cells.size());
      for (const auto& c : r.cells) {
        std::printf("  mode=%s beta=%g test_ece=%s test_dice=%s drift=%s\n", c.mode.c_str(),
                    c.beta, fgrm::fmt_double(c.test_ece).c_str(),
                    fgrm::fmt_double(c.test_dice).c_str(),
                    fgrm::fmt_double(c.max_drift).c_str());
      }
    }
    return 0;
  } catch (const fgrm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fgrm::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const fgrm::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
