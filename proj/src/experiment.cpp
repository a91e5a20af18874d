#include "fgrm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fgrm/checkpoint.hpp"
#include "fgrm/errors.hpp"
#include "fgrm/pgm.hpp"
#include "fgrm/rng.hpp"
#include "json.hpp"

namespace fgrm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kPretrainSeedTag = 0x70726574ull;
constexpr uint64_t kTuneSeedTag = 0x74756e65ull;

void check_known(const json& obj, const std::string& prefix,
                 std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) {
      throw ConfigError("unknown config field '" +
                        (prefix.empty() ? it.key() : prefix + "." + it.key()) + "'");
    }
  }
}

const json* find(const json& obj, const char* name) {
  const auto it = obj.find(name);
  return it == obj.end() ? nullptr : &*it;
}

[[noreturn]] void type_fail(const std::string& prefix, const char* name, const char* want,
                            const json& v) {
  throw ConfigError("config field '" + (prefix.empty() ? name : prefix + "." + name) +
                    "': expected " + want + ", got " + v.type_name());
}

int get_int(const json& obj, const std::string& prefix, const char* name, int def) {
  const json* v = find(obj, name);
  if (!v) return def;
  if (!v->is_number_integer()) type_fail(prefix, name, "integer", *v);
  return v->get<int>();
}

double get_num(const json& obj, const std::string& prefix, const char* name, double def) {
  const json* v = find(obj, name);
  if (!v) return def;
  if (!v->is_number()) type_fail(prefix, name, "number", *v);
  return v->get<double>();
}

bool get_bool(const json& obj, const std::string& prefix, const char* name, bool def) {
  const json* v = find(obj, name);
  if (!v) return def;
  if (!v->is_boolean()) type_fail(prefix, name, "boolean", *v);
  return v->get<bool>();
}

std::string get_str(const json& obj, const std::string& prefix, const char* name,
                    const std::string& def) {
  const json* v = find(obj, name);
  if (!v) return def;
  if (!v->is_string()) type_fail(prefix, name, "string", *v);
  return v->get<std::string>();
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

void MetricsConfig::validate() const {
  if (ece_bins < 1) throw ConfigError("metrics.ece_bins must be >= 1");
  if (mi_levels < 2) throw ConfigError("metrics.mi_levels must be >= 2");
  if (box_patch < 1) throw ConfigError("metrics.box_patch must be >= 1");
  if (eval_severity < 1 || eval_severity > 5) {
    throw ConfigError("metrics.eval_severity must be in [1,5]");
  }
  if (map_samples < 0) throw ConfigError("metrics.map_samples must be >= 0");
  if (scatter_max_rows < 1) throw ConfigError("metrics.scatter_max_rows must be >= 1");
}

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("config field 'out_dir' must not be empty");
  scenes.validate();
  model_config().validate();
  pretrain.validate();
  tuner.validate();
  metrics.validate();
  if (scenes.height % metrics.box_patch != 0 || scenes.width % metrics.box_patch != 0) {
    throw ConfigError("metrics.box_patch " + std::to_string(metrics.box_patch) +
                      " must divide the scene size " + std::to_string(scenes.height) + "x" +
                      std::to_string(scenes.width));
  }
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig mc;
  mc.classes = scenes.classes;
  mc.height = scenes.height;
  mc.width = scenes.width;
  mc.in_channels = scenes.channels;
  mc.widths = model_widths;
  mc.kernel = model_kernel;
  return mc;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text, path);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text,
                                                  const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config " + origin + " is not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config " + origin + " must be a JSON object");
  check_known(root, "", {"seed", "out_dir", "scenes", "model", "pretrain", "tuner", "metrics"});

  ExperimentConfig cfg;
  const json* seed = find(root, "seed");
  if (!seed) throw ConfigError("config missing required field 'seed'");
  if (!seed->is_number_integer() || (seed->is_number_integer() && seed->get<int64_t>() < 0)) {
    type_fail("", "seed", "non-negative integer", *seed);
  }
  cfg.seed = seed->get<uint64_t>();
  const json* out_dir = find(root, "out_dir");
  if (!out_dir) throw ConfigError("config missing required field 'out_dir'");
  if (!out_dir->is_string()) type_fail("", "out_dir", "string", *out_dir);
  cfg.out_dir = out_dir->get<std::string>();

  if (const json* s = find(root, "scenes")) {
    if (!s->is_object()) type_fail("", "scenes", "object", *s);
    check_known(*s, "scenes",
                {"height", "width", "classes", "regions", "ambiguity_width", "noise",
                 "min_class_fraction", "count"});
    cfg.scenes.height = get_int(*s, "scenes", "height", cfg.scenes.height);
    cfg.scenes.width = get_int(*s, "scenes", "width", cfg.scenes.width);
    cfg.scenes.classes = get_int(*s, "scenes", "classes", cfg.scenes.classes);
    cfg.scenes.regions = get_int(*s, "scenes", "regions", cfg.scenes.regions);
    cfg.scenes.ambiguity_width =
        get_num(*s, "scenes", "ambiguity_width", cfg.scenes.ambiguity_width);
    cfg.scenes.noise = get_num(*s, "scenes", "noise", cfg.scenes.noise);
    cfg.scenes.min_class_fraction =
        get_num(*s, "scenes", "min_class_fraction", cfg.scenes.min_class_fraction);
    cfg.scenes.count = get_int(*s, "scenes", "count", cfg.scenes.count);
  }

  if (const json* m = find(root, "model")) {
    if (!m->is_object()) type_fail("", "model", "object", *m);
    check_known(*m, "model", {"widths", "kernel"});
    if (const json* w = find(*m, "widths")) {
      if (!w->is_array()) type_fail("model", "widths", "array of integers", *w);
      cfg.model_widths.clear();
      for (const auto& e : *w) {
        if (!e.is_number_integer()) type_fail("model", "widths", "array of integers", *w);
        cfg.model_widths.push_back(e.get<int>());
      }
    }
    cfg.model_kernel = get_int(*m, "model", "kernel", cfg.model_kernel);
  }

  if (const json* p = find(root, "pretrain")) {
    if (!p->is_object()) type_fail("", "pretrain", "object", *p);
    check_known(*p, "pretrain", {"learning_rate", "batch_size", "epochs"});
    cfg.pretrain.learning_rate =
        get_num(*p, "pretrain", "learning_rate", cfg.pretrain.learning_rate);
    cfg.pretrain.batch_size = get_int(*p, "pretrain", "batch_size", cfg.pretrain.batch_size);
    cfg.pretrain.epochs = get_int(*p, "pretrain", "epochs", cfg.pretrain.epochs);
  }

  if (const json* t = find(root, "tuner")) {
    if (!t->is_object()) type_fail("", "tuner", "object", *t);
    check_known(*t, "tuner",
                {"reward", "beta", "learning_rate", "epochs", "batch_size", "fisher_mode",
                 "fisher_unit_mean", "fisher_epsilon", "kl_mode", "reward_correctness",
                 "per_image_reward", "reward_bins", "ece_floor", "corruption",
                 "corruption_severity", "monitor_images"});
    cfg.tuner.reward =
        reward_mode_from_string(get_str(*t, "tuner", "reward", to_string(cfg.tuner.reward)));
    cfg.tuner.beta = get_num(*t, "tuner", "beta", cfg.tuner.beta);
    cfg.tuner.learning_rate = get_num(*t, "tuner", "learning_rate", cfg.tuner.learning_rate);
    cfg.tuner.epochs = get_int(*t, "tuner", "epochs", cfg.tuner.epochs);
    cfg.tuner.batch_size = get_int(*t, "tuner", "batch_size", cfg.tuner.batch_size);
    cfg.tuner.fisher_mode = fisher_mode_from_string(
        get_str(*t, "tuner", "fisher_mode", to_string(cfg.tuner.fisher_mode)));
    cfg.tuner.fisher_unit_mean =
        get_bool(*t, "tuner", "fisher_unit_mean", cfg.tuner.fisher_unit_mean);
    cfg.tuner.fisher_epsilon = get_num(*t, "tuner", "fisher_epsilon", cfg.tuner.fisher_epsilon);
    cfg.tuner.kl_mode =
        kl_mode_from_string(get_str(*t, "tuner", "kl_mode", to_string(cfg.tuner.kl_mode)));
    cfg.tuner.reward_correctness = correctness_from_string(
        get_str(*t, "tuner", "reward_correctness", to_string(cfg.tuner.reward_correctness)));
    cfg.tuner.per_image_reward =
        get_bool(*t, "tuner", "per_image_reward", cfg.tuner.per_image_reward);
    cfg.tuner.reward_bins = get_int(*t, "tuner", "reward_bins", cfg.tuner.reward_bins);
    cfg.tuner.ece_floor = get_num(*t, "tuner", "ece_floor", cfg.tuner.ece_floor);
    cfg.tuner.corruption = corruption_from_string(
        get_str(*t, "tuner", "corruption", to_string(cfg.tuner.corruption)));
    cfg.tuner.corruption_severity =
        get_int(*t, "tuner", "corruption_severity", cfg.tuner.corruption_severity);
    cfg.tuner.monitor_images = get_int(*t, "tuner", "monitor_images", cfg.tuner.monitor_images);
  }

  if (const json* m = find(root, "metrics")) {
    if (!m->is_object()) type_fail("", "metrics", "object", *m);
    check_known(*m, "metrics",
                {"ece_bins", "mi_levels", "box_patch", "ood_on_aleatoric", "eval_corruption",
                 "eval_severity", "map_samples", "scatter_max_rows"});
    cfg.metrics.ece_bins = get_int(*m, "metrics", "ece_bins", cfg.metrics.ece_bins);
    cfg.metrics.mi_levels = get_int(*m, "metrics", "mi_levels", cfg.metrics.mi_levels);
    cfg.metrics.box_patch = get_int(*m, "metrics", "box_patch", cfg.metrics.box_patch);
    cfg.metrics.ood_on_aleatoric =
        get_bool(*m, "metrics", "ood_on_aleatoric", cfg.metrics.ood_on_aleatoric);
    cfg.metrics.eval_corruption = corruption_from_string(
        get_str(*m, "metrics", "eval_corruption", to_string(cfg.metrics.eval_corruption)));
    cfg.metrics.eval_severity = get_int(*m, "metrics", "eval_severity", cfg.metrics.eval_severity);
    cfg.metrics.map_samples = get_int(*m, "metrics", "map_samples", cfg.metrics.map_samples);
    cfg.metrics.scatter_max_rows =
        get_int(*m, "metrics", "scatter_max_rows", cfg.metrics.scatter_max_rows);
  }

  cfg.scenes.seed = cfg.seed;
  cfg.pretrain.seed = mix_seed(cfg.seed, {kPretrainSeedTag});
  cfg.tuner.seed = mix_seed(cfg.seed, {kTuneSeedTag});
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["scenes"] = {{"height", scenes.height},
                 {"width", scenes.width},
                 {"classes", scenes.classes},
                 {"regions", scenes.regions},
                 {"ambiguity_width", scenes.ambiguity_width},
                 {"noise", scenes.noise},
                 {"min_class_fraction", scenes.min_class_fraction},
                 {"count", scenes.count}};
  j["model"] = {{"widths", model_widths}, {"kernel", model_kernel}};
  j["pretrain"] = {{"learning_rate", pretrain.learning_rate},
                   {"batch_size", pretrain.batch_size},
                   {"epochs", pretrain.epochs}};
  j["tuner"] = {{"reward", to_string(tuner.reward)},
                {"beta", tuner.beta},
                {"learning_rate", tuner.learning_rate},
                {"epochs", tuner.epochs},
                {"batch_size", tuner.batch_size},
                {"fisher_mode", to_string(tuner.fisher_mode)},
                {"fisher_unit_mean", tuner.fisher_unit_mean},
                {"fisher_epsilon", tuner.fisher_epsilon},
                {"kl_mode", to_string(tuner.kl_mode)},
                {"reward_correctness", to_string(tuner.reward_correctness)},
                {"per_image_reward", tuner.per_image_reward},
                {"reward_bins", tuner.reward_bins},
                {"ece_floor", tuner.ece_floor},
                {"corruption", to_string(tuner.corruption)},
                {"corruption_severity", tuner.corruption_severity},
                {"monitor_images", tuner.monitor_images}};
  j["metrics"] = {{"ece_bins", metrics.ece_bins},
                  {"mi_levels", metrics.mi_levels},
                  {"box_patch", metrics.box_patch},
                  {"ood_on_aleatoric", metrics.ood_on_aleatoric},
                  {"eval_corruption", to_string(metrics.eval_corruption)},
                  {"eval_severity", metrics.eval_severity},
                  {"map_samples", metrics.map_samples},
                  {"scatter_max_rows", metrics.scatter_max_rows}};
  return j.dump(2);
}

std::string ExperimentConfig::config_hash() const {
  json j = json::parse(canonical_json());
  j.erase("out_dir");
  return hex16(fnv1a64(j.dump()));
}

std::string resolve_out_dir(const ExperimentConfig& config) {
  const char* root = std::getenv("FGRM_OUT_ROOT");
  if (root && *root) return (fs::path(root) / config.out_dir).string();
  return config.out_dir;
}

namespace {

void write_pretrain_log(const fs::path& path, const std::vector<PretrainLogRow>& rows,
                        const std::string& hash, uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << "# config_hash=" << hash << " seed=" << seed << "\n";
  out << "epoch,loss,dice\n";
  for (const auto& r : rows) {
    out << r.epoch << "," << fmt_double(r.loss) << "," << fmt_double(r.dice) << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_tune_log(const fs::path& path, const std::vector<TuneLogRow>& rows,
                    const std::string& hash, uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << "# config_hash=" << hash << " seed=" << seed << "\n";
  out << "step,reward,ece,dice,kl,grad_norm,max_drift\n";
  for (const auto& r : rows) {
    out << r.step << "," << fmt_double(r.reward) << "," << fmt_double(r.ece) << ","
        << fmt_double(r.dice) << "," << fmt_double(r.kl) << "," << fmt_double(r.grad_norm)
        << "," << fmt_double(r.max_drift) << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<SceneSample> select_samples(const std::vector<SceneSample>& all,
                                        const std::vector<int>& indices) {
  std::vector<SceneSample> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(all[static_cast<size_t>(i)]);
  return out;
}

void check_architecture(const ExperimentConfig& config, const EvidentialModel& model) {
  const ModelConfig expect = config.model_config();
  if (!model.config().same_architecture(expect)) {
    const auto desc = [](const ModelConfig& m) {
      std::string w;
      for (size_t i = 0; i < m.widths.size(); ++i) {
        if (i) w += ",";
        w += std::to_string(m.widths[i]);
      }
      return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" +
             std::to_string(m.in_channels) + " classes=" + std::to_string(m.classes) +
             " widths=[" + w + "] kernel=" + std::to_string(m.kernel);
    };
    throw ConfigError("checkpoint architecture (" + desc(model.config()) +
                      ") does not match the config (" + desc(expect) + ")");
  }
}

struct EvalAccum {
  std::vector<double> conf;
  std::vector<uint8_t> correct;
  std::vector<int> pred, gt;
  std::vector<std::vector<double>> alea, epis;
};

EvalAccum accumulate(const EvidentialModel& model, const std::vector<SceneSample>& samples) {
  NoGradGuard ng;
  EvalAccum acc;
  for (const SceneSample& s : samples) {
    const DirichletPrediction pred = model.forward(s.image);
    const std::vector<int> labels = pred.argmax_labels();
    const std::vector<double> c = pred.confidence();
    const UncertaintyMaps maps = uncertainty_maps(pred);
    for (size_t j = 0; j < labels.size(); ++j) {
      acc.conf.push_back(c[j]);
      acc.correct.push_back(labels[j] == s.mask[j] ? 1 : 0);
    }
    acc.pred.insert(acc.pred.end(), labels.begin(), labels.end());
    acc.gt.insert(acc.gt.end(), s.mask.begin(), s.mask.end());
    acc.alea.push_back(maps.aleatoric);
    acc.epis.push_back(maps.epistemic);
  }
  return acc;
}

struct SplitMetrics {
  double ece_value = 0.0;
  double dice_mean = 0.0;
};

SplitMetrics quick_metrics(const EvidentialModel& model, const std::vector<SceneSample>& samples,
                           int ece_bins) {
  const EvalAccum acc = accumulate(model, samples);
  SplitMetrics m;
  m.ece_value = ece(acc.conf, acc.correct, ece_bins);
  double dice_acc = 0.0;
  for (int c = 0; c < model.config().classes; ++c) dice_acc += dice(acc.pred, acc.gt, c);
  m.dice_mean = dice_acc / model.config().classes;
  return m;
}

}  // namespace

PretrainRunResult run_pretrain(const ExperimentConfig& config) {
  config.validate();
  const std::string hash = config.config_hash();
  const fs::path out = resolve_out_dir(config);
  ensure_dir(out / "pretrain");

  const std::vector<SceneSample> samples = generate_dataset(config.scenes);
  const SplitIndices splits = split_indices(config.scenes.count, config.seed);
  write_dataset((out / "dataset").string(), samples, splits, config.scenes, hash);

  const std::vector<SceneSample> train = select_samples(samples, splits.train);
  PretrainResult res = pretrain(train, config.model_config(), config.pretrain);

  const fs::path ckpt = out / "pretrain" / "checkpoint.fgrm";
  save_checkpoint(ckpt.string(), res.model, {hash, config.seed, "pretrain"});
  write_pretrain_log(out / "pretrain" / "log.csv", res.log, hash, config.seed);

  PretrainRunResult r;
  r.checkpoint_path = ckpt.string();
  r.final_loss = res.log.back().loss;
  r.final_dice = res.log.back().dice;
  return r;
}

TuneRunResult run_tune(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& reward_override) {
  config.validate();
  const std::string hash = config.config_hash();
  const fs::path out = resolve_out_dir(config);

  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  check_architecture(config, lc.model);

  TunerConfig tc = config.tuner;
  if (!reward_override.empty()) tc.reward = reward_mode_from_string(reward_override);

  const std::vector<SceneSample> samples = generate_dataset(config.scenes);
  const SplitIndices splits = split_indices(config.scenes.count, config.seed);
  const std::vector<SceneSample> val = select_samples(samples, splits.val);

  TuneResult res = tune(lc.model, val, tc);

  const std::string stage = std::string("tune_") + to_string(tc.reward);
  ensure_dir(out / stage);
  const fs::path ckpt = out / stage / "checkpoint.fgrm";
  save_checkpoint(ckpt.string(), res.model, {hash, config.seed, stage});
  write_tune_log(out / stage / "log.csv", res.log, hash, config.seed);

  TuneRunResult r;
  r.checkpoint_path = ckpt.string();
  r.final_row = res.log.back();
  r.eta_halvings = res.eta_halvings;
  return r;
}

EvalRunResult run_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& split, bool ood, const std::string& manifest_path,
                       const std::string& tag) {
  config.validate();
  if (split != "train" && split != "val" && split != "test") {
    throw ConfigError("eval split must be train, val or test, got '" + split + "'");
  }
  const std::string hash = config.config_hash();
  const fs::path out = resolve_out_dir(config);

  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  check_architecture(config, lc.model);

  const std::string manifest =
      manifest_path.empty() ? (out / "dataset" / "manifest.json").string() : manifest_path;
  if (!fs::exists(manifest)) {
    throw IoError("dataset manifest not found at " + manifest + "; run pretrain first");
  }
  const LoadedDataset ds = load_dataset(manifest);
  if (ds.spec.height != config.scenes.height || ds.spec.width != config.scenes.width ||
      ds.spec.classes != config.scenes.classes) {
    throw ConfigError("dataset manifest geometry does not match the config");
  }

  const std::vector<int>& indices = split == "train"  ? ds.splits.train
                                    : split == "val"  ? ds.splits.val
                                                      : ds.splits.test;
  if (indices.empty()) throw ConfigError("split '" + split + "' is empty in " + manifest);
  const std::vector<SceneSample> clean = select_samples(ds.samples, indices);

  std::vector<SceneSample> subject = clean;
  if (ood) {
    for (auto& s : subject) {
      s = corrupt(s, config.metrics.eval_corruption, config.metrics.eval_severity);
    }
  }

  const EvalAccum acc = accumulate(lc.model, subject);
  const int classes = lc.model.config().classes;
  const int height = lc.model.config().height;
  const int width = lc.model.config().width;

  CalibrationReport report;
  report.split = split;
  report.stage = lc.meta.stage;
  report.config_hash = hash;
  report.seed = config.seed;
  report.n_images = static_cast<int64_t>(subject.size());
  report.n_pixels = static_cast<int64_t>(acc.conf.size());
  report.bins = reliability_bins(acc.conf, acc.correct, config.metrics.ece_bins);
  report.ece = ece(acc.conf, acc.correct, config.metrics.ece_bins);

  std::vector<double> pooled_alea;
  pooled_alea.reserve(acc.conf.size());
  for (const auto& m : acc.alea) pooled_alea.insert(pooled_alea.end(), m.begin(), m.end());
  std::vector<uint8_t> errors(acc.correct.size());
  for (size_t i = 0; i < errors.size(); ++i) errors[i] = acc.correct[i] ? 0 : 1;
  const MiEstimate mi = uncertainty_error_mi(pooled_alea, errors, config.metrics.mi_levels);
  report.mi_nats = mi.nats;
  report.mi_scaled = mi.nats * 100.0;
  report.mi_degenerate = mi.degenerate;

  double dice_acc = 0.0;
  for (int c = 0; c < classes; ++c) {
    report.dice_per_class.push_back(dice(acc.pred, acc.gt, c));
    dice_acc += report.dice_per_class.back();
  }
  report.dice_mean = dice_acc / classes;

  double alea_c = 0.0, alea_i = 0.0, epis_sum = 0.0;
  int64_t n_c = 0, n_i = 0;
  for (size_t i = 0; i < acc.correct.size(); ++i) {
    if (acc.correct[i]) {
      alea_c += pooled_alea[i];
      ++n_c;
    } else {
      alea_i += pooled_alea[i];
      ++n_i;
    }
  }
  for (const auto& m : acc.epis) {
    for (double v : m) epis_sum += v;
  }
  report.aleatoric_correct_mean = n_c > 0 ? alea_c / n_c : 0.0;
  report.aleatoric_incorrect_mean = n_i > 0 ? alea_i / n_i : 0.0;
  report.epistemic_mean =
      acc.conf.empty() ? 0.0 : epis_sum / static_cast<double>(acc.conf.size());

  if (ood) {
    const EvalAccum clean_acc = accumulate(lc.model, clean);
    const auto& subject_maps = config.metrics.ood_on_aleatoric ? acc.alea : acc.epis;
    const auto& clean_maps = config.metrics.ood_on_aleatoric ? clean_acc.alea : clean_acc.epis;
    const OodRatios ratios =
        ood_ratios(subject_maps, clean_maps, height, width, config.metrics.box_patch);
    report.has_ood = true;
    report.pixel_ratio = ratios.pixel_ratio;
    report.box_ratio = ratios.box_ratio;
  }

  std::string dirname = "eval_" + split + (ood ? "_ood" : "") + "_" + lc.meta.stage;
  if (!tag.empty()) dirname = "eval_" + tag;
  const fs::path eval_dir = out / dirname;
  ensure_dir(eval_dir / "maps");

  write_report_json((eval_dir / "report.json").string(), report);
  write_reliability_csv((eval_dir / "reliability.csv").string(), report.bins, hash, config.seed);

  {
    std::ofstream sc(eval_dir / "scatter.csv");
    if (!sc) throw IoError("cannot open " + (eval_dir / "scatter.csv").string());
    sc << "# config_hash=" << hash << " seed=" << config.seed << "\n";
    sc << "uncertainty,error\n";
    const size_t stride =
        std::max<size_t>(1, pooled_alea.size() / static_cast<size_t>(
                                                     config.metrics.scatter_max_rows));
    for (size_t i = 0; i < pooled_alea.size(); i += stride) {
      sc << fmt_double(pooled_alea[i]) << "," << int(errors[i]) << "\n";
    }
    if (!sc) throw IoError("write failed for " + (eval_dir / "scatter.csv").string());
  }

  const std::string comment = "config_hash=" + hash + " seed=" + std::to_string(config.seed);
  const int n_maps = std::min<int>(config.metrics.map_samples,
                                   static_cast<int>(subject.size()));
  for (int i = 0; i < n_maps; ++i) {
    std::string name = std::to_string(i);
    while (name.size() < 4) name.insert(name.begin(), '0');
    const auto to8 = [](const std::vector<double>& m) {
      std::vector<uint8_t> out8(m.size());
      for (size_t j = 0; j < m.size(); ++j) {
        out8[j] = static_cast<uint8_t>(std::lround(std::clamp(m[j], 0.0, 1.0) * 255.0));
      }
      return out8;
    };
    write_pgm8((eval_dir / "maps" / ("alea_" + name + ".pgm")).string(), width, height,
               to8(acc.alea[static_cast<size_t>(i)]), comment);
    write_pgm8((eval_dir / "maps" / ("epis_" + name + ".pgm")).string(), width, height,
               to8(acc.epis[static_cast<size_t>(i)]), comment);
    std::vector<uint8_t> pred8(static_cast<size_t>(height) * width);
    for (size_t j = 0; j < pred8.size(); ++j) {
      pred8[j] = static_cast<uint8_t>(
          acc.pred[static_cast<size_t>(i) * pred8.size() + j]);
    }
    write_pgm8((eval_dir / "maps" / ("pred_" + name + ".pgm")).string(), width, height, pred8,
               comment);
  }

  EvalRunResult r;
  r.report_path = (eval_dir / "report.json").string();
  r.report = report;
  return r;
}

AblationRunResult run_ablation(const ExperimentConfig& config,
                               const std::string& checkpoint_path,
                               const std::vector<double>& betas,
                               const std::vector<std::string>& modes) {
  config.validate();
  if (betas.empty()) throw ConfigError("ablation: empty beta sweep");
  if (modes.empty()) throw ConfigError("ablation: empty mode list");
  for (const std::string& m : modes) {
    if (m != "finegrained" && m != "uniform") {
      throw ConfigError("ablation mode must be finegrained or uniform, got '" + m + "'");
    }
  }
  for (double b : betas) {
    if (b < 0.0) throw ConfigError("ablation: beta must be >= 0, got " + fmt_short(b));
  }

  const std::string hash = config.config_hash();
  const fs::path out = resolve_out_dir(config);

  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  check_architecture(config, lc.model);

  const std::vector<SceneSample> samples = generate_dataset(config.scenes);
  const SplitIndices splits = split_indices(config.scenes.count, config.seed);
  const std::vector<SceneSample> val = select_samples(samples, splits.val);
  const std::vector<SceneSample> test = select_samples(samples, splits.test);

  AblationRunResult result;
  for (const std::string& mode : modes) {
    for (double beta : betas) {
      TunerConfig tc = config.tuner;
      tc.beta = beta;
      tc.fisher_mode = mode == "uniform"
                           ? FisherMode::uniform
                           : (config.tuner.fisher_mode == FisherMode::uniform
                                  ? FisherMode::squared
                                  : config.tuner.fisher_mode);
      TuneResult res = tune(lc.model, val, tc);
      const SplitMetrics m = quick_metrics(res.model, test, config.metrics.ece_bins);

      const fs::path cell = out / "ablation" / (mode + "_beta" + fmt_short(beta));
      ensure_dir(cell);
      write_tune_log(cell / "log.csv", res.log, hash, config.seed);

      AblationCell row;
      row.mode = mode;
      row.beta = beta;
      row.test_ece = m.ece_value;
      row.test_dice = m.dice_mean;
      row.max_drift = res.log.back().max_drift;
      result.cells.push_back(row);
    }
  }

  const fs::path summary = out / "ablation" / "summary.csv";
  std::ofstream sm(summary);
  if (!sm) throw IoError("cannot open " + summary.string());
  sm << "# config_hash=" << hash << " seed=" << config.seed << "\n";
  sm << "mode,beta,test_ece,test_dice,max_drift\n";
  for (const auto& c : result.cells) {
    sm << c.mode << "," << fmt_short(c.beta) << "," << fmt_double(c.test_ece) << ","
       << fmt_double(c.test_dice) << "," << fmt_double(c.max_drift) << "\n";
  }
  if (!sm) throw IoError("write failed for " + summary.string());
  result.summary_path = summary.string();
  return result;
}

}  // namespace fgrm
