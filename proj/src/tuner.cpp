#include "fgrm/tuner.hpp"

#include <algorithm>
#include <cmath>

#include "fgrm/errors.hpp"
#include "fgrm/metrics.hpp"

namespace fgrm {

namespace {

constexpr uint64_t kShuffleTag = 0x74756e73ull;
constexpr uint64_t kActionTag = 0x74756e61ull;
constexpr double kLogFloor = 1e-12;

}  // namespace

const char* to_string(RewardMode v) { return v == RewardMode::id ? "id" : "ood"; }
const char* to_string(FisherMode v) {
  switch (v) {
    case FisherMode::squared:
      return "squared";
    case FisherMode::reciprocal:
      return "reciprocal";
    case FisherMode::uniform:
      return "uniform";
  }
  throw ConfigError("unknown fisher mode");
}
const char* to_string(KlMode v) {
  return v == KlMode::categorical ? "categorical" : "dirichlet";
}
const char* to_string(CorrectnessSource v) {
  return v == CorrectnessSource::sampled ? "sampled" : "argmax";
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "id") return RewardMode::id;
  if (s == "ood") return RewardMode::ood;
  throw ConfigError("unknown reward mode '" + s + "' (expected id or ood)");
}
FisherMode fisher_mode_from_string(const std::string& s) {
  if (s == "squared") return FisherMode::squared;
  if (s == "reciprocal") return FisherMode::reciprocal;
  if (s == "uniform") return FisherMode::uniform;
  throw ConfigError("unknown fisher mode '" + s +
                    "' (expected squared, reciprocal or uniform)");
}
KlMode kl_mode_from_string(const std::string& s) {
  if (s == "categorical") return KlMode::categorical;
  if (s == "dirichlet") return KlMode::dirichlet;
  throw ConfigError("unknown kl mode '" + s + "' (expected categorical or dirichlet)");
}
CorrectnessSource correctness_from_string(const std::string& s) {
  if (s == "sampled") return CorrectnessSource::sampled;
  if (s == "argmax") return CorrectnessSource::argmax;
  throw ConfigError("unknown correctness source '" + s + "' (expected sampled or argmax)");
}

void TunerConfig::validate() const {
  if (beta < 0.0) throw ConfigError("tuner.beta must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("tuner.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("tuner.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("tuner.batch_size must be >= 1");
  if (!(fisher_epsilon > 0.0)) throw ConfigError("tuner.fisher_epsilon must be positive");
  if (reward_bins < 1) throw ConfigError("tuner.reward_bins must be >= 1");
  if (!(ece_floor > 0.0 && ece_floor < 1.0)) {
    throw ConfigError("tuner.ece_floor must be in (0,1)");
  }
  if (corruption_severity < 1 || corruption_severity > 5) {
    throw ConfigError("tuner.corruption_severity must be in [1,5]");
  }
  if (monitor_images < 1) throw ConfigError("tuner.monitor_images must be >= 1");
}

double reward_id(double ece_value, double floor, bool* clamped) {
  if (!(floor > 0.0)) throw ConfigError("reward_id: floor must be positive");
  if (!(ece_value >= 0.0)) {
    throw NumericError("reward_id: ece must be >= 0, got " + fmt_double(ece_value));
  }
  const bool hit = ece_value < floor;
  if (clamped) *clamped = hit;
  return -std::log(hit ? floor : ece_value);
}

double reward_ood(const std::vector<std::vector<double>>& corrupted_maps,
                  const std::vector<std::vector<double>>& clean_maps) {
  if (corrupted_maps.empty() || clean_maps.empty()) {
    throw ConfigError("reward_ood: both map sets must be non-empty");
  }
  auto pooled_mean = [](const std::vector<std::vector<double>>& maps) {
    double acc = 0.0;
    int64_t n = 0;
    for (const auto& m : maps) {
      for (double v : m) acc += v;
      n += static_cast<int64_t>(m.size());
    }
    if (n == 0) throw ConfigError("reward_ood: empty uncertainty map");
    return acc / static_cast<double>(n);
  };
  const double clean = pooled_mean(clean_maps);
  if (!(clean > 0.0)) throw NumericError("reward_ood: clean uncertainty mean is not positive");
  return pooled_mean(corrupted_maps) / clean;
}

ActionSample sample_actions(const DirichletPrediction& pred, Rng& rng) {
  const auto& p = pred.p_bar.values();
  const int k = pred.classes;
  const int64_t pixels = static_cast<int64_t>(pred.height) * pred.width;
  ActionSample out;
  out.actions.resize(static_cast<size_t>(pixels));
  for (int64_t i = 0; i < pixels; ++i) {
    out.actions[static_cast<size_t>(i)] =
        rng.categorical(std::span<const double>(&p[i * k], static_cast<size_t>(k)));
  }
  const Tensor mask = one_hot(out.actions, pred.height, pred.width, k);
  out.loglik = sum(mask * log(pred.p_bar));
  return out;
}

namespace {

Tensor greedy_loglik(const DirichletPrediction& pred) {
  const std::vector<int> labels = pred.argmax_labels();
  const Tensor mask = one_hot(labels, pred.height, pred.width, pred.classes);
  return sum(mask * log(pred.p_bar));
}

struct SquaredScores {
  std::vector<std::string> names;
  std::vector<std::vector<double>> sq;
  double raw_mean = 0.0;
};

SquaredScores squared_scores(ParameterSet& params, const Tensor& loglik, int batch_count) {
  params.zero_grad();
  backward(loglik);
  SquaredScores raw;
  const double inv = 1.0 / static_cast<double>(batch_count);
  double total = 0.0;
  int64_t n = 0;
  for (auto& [name, tensor] : params) {
    const auto& g = tensor.grad();
    std::vector<double> sq(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("fisher_diagonal: non-finite gradient in parameter '" + name + "'");
      }
      const double gi = g[i] * inv;  // batch-mean score
      sq[i] = gi * gi;
      total += sq[i];
    }
    n += static_cast<int64_t>(g.size());
    raw.names.push_back(name);
    raw.sq.push_back(std::move(sq));
  }
  raw.raw_mean = n > 0 ? total / static_cast<double>(n) : 0.0;
  params.zero_grad();
  return raw;
}

FisherDiagonal finalize_fisher(SquaredScores raw, const TunerConfig& config) {
  FisherDiagonal out;
  out.names = std::move(raw.names);
  out.raw_mean = raw.raw_mean;
  out.weights = std::move(raw.sq);
  switch (config.fisher_mode) {
    case FisherMode::squared:
      break;
    case FisherMode::reciprocal:
      for (auto& w : out.weights) {
        for (auto& v : w) v = 1.0 / (v + config.fisher_epsilon);
      }
      break;
    case FisherMode::uniform:
      for (auto& w : out.weights) std::fill(w.begin(), w.end(), 1.0);
      return out;
  }
  if (config.fisher_unit_mean) {
    double total = 0.0;
    int64_t n = 0;
    for (const auto& w : out.weights) {
      for (double v : w) total += v;
      n += static_cast<int64_t>(w.size());
    }
    if (total == 0.0) {
      // degenerate score (e.g. all gradients zero): fall back to uniform
      for (auto& w : out.weights) std::fill(w.begin(), w.end(), 1.0);
    } else {
      const double scale = static_cast<double>(n) / total;
      for (auto& w : out.weights) {
        for (auto& v : w) v *= scale;
      }
    }
  }
  return out;
}

FisherDiagonal uniform_fisher(const ParameterSet& params) {
  FisherDiagonal out;
  for (const auto& [name, tensor] : params) {
    out.names.push_back(name);
    out.weights.emplace_back(static_cast<size_t>(tensor.size()), 1.0);
  }
  return out;
}

}  // namespace

FisherDiagonal fisher_diagonal(const EvidentialModel& policy,
                               const std::vector<const SceneSample*>& batch,
                               const TunerConfig& config) {
  config.validate();
  // Grad buffers are scratch space, not model state.
  ParameterSet& params = const_cast<EvidentialModel&>(policy).params();
  if (config.fisher_mode == FisherMode::uniform) return uniform_fisher(params);
  if (batch.empty()) throw ConfigError("fisher_diagonal: empty batch");
  Tensor total = Tensor::scalar(0.0);
  for (const SceneSample* s : batch) {
    total = total + greedy_loglik(policy.forward(s->image));
  }
  return finalize_fisher(squared_scores(params, total, static_cast<int>(batch.size())), config);
}

Tensor kl_penalty(const DirichletPrediction& policy_pred,
                  const DirichletPrediction& reference_pred, KlMode mode) {
  if (policy_pred.height != reference_pred.height ||
      policy_pred.width != reference_pred.width ||
      policy_pred.classes != reference_pred.classes) {
    throw ConfigError("kl_penalty: predictions have different shapes");
  }
  if (mode == KlMode::categorical) {
    const Tensor& p = policy_pred.p_bar;
    const Tensor q = Tensor::from_values(reference_pred.p_bar.shape(),
                                         reference_pred.p_bar.values());
    const Tensor diff = log(clamp_min(p, kLogFloor)) - log(clamp_min(q, kLogFloor));
    return mean(sum(p * diff, {2}, /*keepdims=*/false));
  }
  // Dirichlet-to-Dirichlet KL per pixel.
  const Tensor& a = policy_pred.alpha;
  const Tensor& s = policy_pred.s;
  const Tensor ar = Tensor::from_values(reference_pred.alpha.shape(),
                                        reference_pred.alpha.values());
  const Tensor sr =
      Tensor::from_values(reference_pred.s.shape(), reference_pred.s.values());
  const Tensor t1 = lgamma(s) - sum(lgamma(a), {2}, /*keepdims=*/true);
  const Tensor t1r = lgamma(sr) - sum(lgamma(ar), {2}, /*keepdims=*/true);
  const Tensor t2 = sum((a - ar) * (digamma(a) - digamma(s)), {2}, /*keepdims=*/true);
  return mean(t1 - t1r + t2);
}

namespace {

struct BatchState {
  std::vector<DirichletPrediction> preds;
  std::vector<DirichletPrediction> ref_preds;  // built under NoGradGuard
  std::vector<ActionSample> actions;
};

// Pools confidence/correctness over the given images per the configured
// correctness source and returns the ECE-based reward.
double id_reward(const std::vector<const SceneSample*>& batch, const BatchState& state,
                 const TunerConfig& config, std::vector<double>* per_image, StepStats* stats) {
  std::vector<double> conf;
  std::vector<uint8_t> correct;
  std::vector<double> rewards;
  double pooled_reward = 0.0;

  auto flush = [&](bool pooled) {
    const double e = ece(conf, correct, config.reward_bins);
    bool clamped = false;
    const double r = reward_id(e, config.ece_floor, &clamped);
    stats->ece_clamped = stats->ece_clamped || clamped;
    if (pooled) {
      stats->batch_ece = e;
      pooled_reward = r;
    } else {
      rewards.push_back(r);
    }
  };

  for (size_t b = 0; b < batch.size(); ++b) {
    const SceneSample& scene = *batch[b];
    const DirichletPrediction& pred = state.preds[b];
    const auto& p = pred.p_bar.values();
    const int k = pred.classes;
    const int64_t pixels = static_cast<int64_t>(pred.height) * pred.width;
    const std::vector<int> greedy = pred.argmax_labels();
    for (int64_t i = 0; i < pixels; ++i) {
      const int chosen = config.reward_correctness == CorrectnessSource::sampled
                             ? state.actions[b].actions[static_cast<size_t>(i)]
                             : greedy[static_cast<size_t>(i)];
      conf.push_back(p[i * k + chosen]);
      correct.push_back(chosen == scene.mask[static_cast<size_t>(i)] ? 1 : 0);
    }
    if (config.per_image_reward) {
      flush(false);
      conf.clear();
      correct.clear();
    }
  }

  if (config.per_image_reward) {
    *per_image = rewards;
    double acc = 0.0;
    for (double r : rewards) acc += r;
    return acc / static_cast<double>(rewards.size());
  }
  flush(true);
  per_image->assign(batch.size(), pooled_reward);
  return pooled_reward;
}

double ood_reward(const std::vector<const SceneSample*>& batch, const BatchState& state,
                  const EvidentialModel& policy, const TunerConfig& config,
                  std::vector<double>* per_image) {
  std::vector<std::vector<double>> clean, corrupted;
  for (size_t b = 0; b < batch.size(); ++b) {
    clean.push_back(uncertainty_maps(state.preds[b]).epistemic);
    const SceneSample ood = corrupt(*batch[b], config.corruption, config.corruption_severity);
    NoGradGuard ng;
    corrupted.push_back(uncertainty_maps(policy.forward(ood.image)).epistemic);
  }
  if (config.per_image_reward) {
    per_image->clear();
    double acc = 0.0;
    for (size_t b = 0; b < batch.size(); ++b) {
      const double r = reward_ood({corrupted[b]}, {clean[b]});
      per_image->push_back(r);
      acc += r;
    }
    return acc / static_cast<double>(batch.size());
  }
  const double r = reward_ood(corrupted, clean);
  per_image->assign(batch.size(), r);
  return r;
}

}  // namespace

StepStats fgrm_step(EvidentialModel& policy, const EvidentialModel& reference,
                    const std::vector<const SceneSample*>& batch, const TunerConfig& config,
                    Rng& rng) {
  config.validate();
  if (batch.empty()) throw ConfigError("fgrm_step: empty batch");
  if (!policy.config().same_architecture(reference.config())) {
    throw ConfigError("fgrm_step: policy and reference architectures differ");
  }
  ParameterSet& params = policy.params();
  StepStats stats;

  BatchState state;
  for (const SceneSample* s : batch) {
    state.preds.push_back(policy.forward(s->image));
    state.actions.push_back(sample_actions(state.preds.back(), rng));
    NoGradGuard ng;
    state.ref_preds.push_back(reference.forward(s->image));
  }

  FisherDiagonal fisher;
  if (config.fisher_mode == FisherMode::uniform) {
    fisher = uniform_fisher(params);
  } else {
    Tensor greedy_total = Tensor::scalar(0.0);
    for (const auto& pred : state.preds) greedy_total = greedy_total + greedy_loglik(pred);
    fisher = finalize_fisher(
        squared_scores(params, greedy_total, static_cast<int>(batch.size())), config);
  }

  std::vector<double> per_image;
  stats.reward = config.reward == RewardMode::id
                     ? id_reward(batch, state, config, &per_image, &stats)
                     : ood_reward(batch, state, policy, config, &per_image);

  Tensor weighted = Tensor::scalar(0.0);
  for (size_t b = 0; b < batch.size(); ++b) {
    weighted = weighted + Tensor::scalar(per_image[b]) * state.actions[b].loglik;
  }
  params.zero_grad();
  backward(weighted);
  const std::vector<double> g_like = params.flat_grads();

  Tensor kl_total = Tensor::scalar(0.0);
  for (size_t b = 0; b < batch.size(); ++b) {
    kl_total = kl_total + kl_penalty(state.preds[b], state.ref_preds[b], config.kl_mode);
  }
  Tensor kl = kl_total / static_cast<double>(batch.size());
  stats.kl = kl.item();
  params.zero_grad();
  backward(kl);
  const std::vector<double> g_kl = params.flat_grads();
  params.zero_grad();

  std::vector<double> fisher_flat;
  fisher_flat.reserve(g_like.size());
  for (const auto& w : fisher.weights) fisher_flat.insert(fisher_flat.end(), w.begin(), w.end());

  std::vector<double> direction(g_like.size());
  double norm_sq = 0.0;
  for (size_t i = 0; i < direction.size(); ++i) {
    direction[i] = fisher_flat[i] * g_like[i] - config.beta * g_kl[i];
    norm_sq += direction[i] * direction[i];
  }
  stats.grad_norm = std::sqrt(norm_sq);

  const std::vector<double> theta = params.flat_values();
  std::vector<double> candidate(theta.size());
  double eta = config.learning_rate;
  for (int attempt = 0;; ++attempt) {
    bool finite = true;
    for (size_t i = 0; i < theta.size(); ++i) {
      candidate[i] = theta[i] + eta * direction[i];
      finite = finite && std::isfinite(candidate[i]);
    }
    if (finite) break;
    if (attempt == 1) throw NumericError("fgrm_step: non-finite parameter update");
    eta *= 0.5;
    stats.eta_halved = true;
  }
  params.set_flat_values(candidate);
  stats.max_drift = params.max_abs_diff(reference.params());
  return stats;
}

TuneResult tune(const EvidentialModel& pretrained, const std::vector<SceneSample>& val,
                const TunerConfig& config) {
  config.validate();
  if (val.empty()) throw ConfigError("tune: empty validation set");

  TuneResult result{pretrained.clone(), {}, 0};
  EvidentialModel reference = pretrained.clone();
  EvidentialModel& policy = result.model;

  Rng shuffle_rng(mix_seed(config.seed, {kShuffleTag}));
  Rng action_rng(mix_seed(config.seed, {kActionTag}));
  const size_t monitor_n = std::min(static_cast<size_t>(config.monitor_images), val.size());

  auto monitor = [&](int step, const StepStats* st) {
    NoGradGuard ng;
    std::vector<double> conf;
    std::vector<uint8_t> correct;
    std::vector<int> pred_labels, gt_labels;
    for (size_t i = 0; i < monitor_n; ++i) {
      const SceneSample& s = val[i];
      const DirichletPrediction pred = policy.forward(s.image);
      const std::vector<int> labels = pred.argmax_labels();
      const std::vector<double> c = pred.confidence();
      for (size_t j = 0; j < labels.size(); ++j) {
        conf.push_back(c[j]);
        correct.push_back(labels[j] == s.mask[j] ? 1 : 0);
      }
      pred_labels.insert(pred_labels.end(), labels.begin(), labels.end());
      gt_labels.insert(gt_labels.end(), s.mask.begin(), s.mask.end());
    }
    double dice_acc = 0.0;
    for (int c = 0; c < policy.config().classes; ++c) dice_acc += dice(pred_labels, gt_labels, c);
    TuneLogRow row;
    row.step = step;
    row.ece = ece(conf, correct, config.reward_bins);
    row.dice = dice_acc / policy.config().classes;
    if (st) {
      row.reward = st->reward;
      row.kl = st->kl;
      row.grad_norm = st->grad_norm;
      row.max_drift = st->max_drift;
    }
    result.log.push_back(row);
  };

  monitor(0, nullptr);
  const int n = static_cast<int>(val.size());
  std::vector<int> order(val.size());
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i >= 1; --i) {
      const int j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int start = 0; start < n; start += config.batch_size) {
      const int stop = std::min(n, start + config.batch_size);
      std::vector<const SceneSample*> batch;
      for (int b = start; b < stop; ++b) {
        batch.push_back(&val[static_cast<size_t>(order[static_cast<size_t>(b)])]);
      }
      const StepStats stats = fgrm_step(policy, reference, batch, config, action_rng);
      result.eta_halvings += stats.eta_halved ? 1 : 0;
      ++step;
      monitor(step, &stats);
    }
  }
  return result;
}

}  // namespace fgrm
