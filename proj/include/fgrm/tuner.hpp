#pragma once
// Fine-grained reward-model tuning.
//
// Starting from a frozen pretrained model theta_hat, the policy phi is
// updated by ascent on  E[R * log pi_phi(actions)] - beta * KL(phi || theta_hat):
//
//   phi += eta * (F . R grad log pi_phi(y_s | x) - beta grad KL)
//
// where F is a per-parameter Fisher weight derived from the squared score of
// the policy's own greedy actions (mode "squared"; "reciprocal" inverts it,
// "uniform" disables weighting for ablations). Rewards are calibration
// metrics, not likelihoods: -ln ECE on clean batches (reward "id") or the
// corrupted / clean epistemic-uncertainty ratio (reward "ood"). Actions are
// per-pixel class draws from the policy's predictive distribution.

#include <cstdint>
#include <string>
#include <vector>

#include "fgrm/model.hpp"
#include "fgrm/rng.hpp"
#include "fgrm/scenes.hpp"

namespace fgrm {

enum class RewardMode { id, ood };
enum class FisherMode { squared, reciprocal, uniform };
enum class KlMode { categorical, dirichlet };
enum class CorrectnessSource { sampled, argmax };

const char* to_string(RewardMode v);
const char* to_string(FisherMode v);
const char* to_string(KlMode v);
const char* to_string(CorrectnessSource v);
RewardMode reward_mode_from_string(const std::string& s);
FisherMode fisher_mode_from_string(const std::string& s);
KlMode kl_mode_from_string(const std::string& s);
CorrectnessSource correctness_from_string(const std::string& s);

struct TunerConfig {
  RewardMode reward = RewardMode::id;
  double beta = 0.1;            // KL penalty strength
  double learning_rate = 1.4e-6;  // ascent step eta
  int epochs = 10;
  int batch_size = 4;
  uint64_t seed = 1;

  FisherMode fisher_mode = FisherMode::squared;
  bool fisher_unit_mean = true;  // rescale weights to mean 1
  double fisher_epsilon = 1e-8;  // reciprocal-mode denominator guard

  KlMode kl_mode = KlMode::categorical;
  // Correctness signal inside the ID reward: judge the sampled actions
  // (default; the estimator then carries first-order signal) or the argmax
  // prediction (reward is then independent of the sampled actions).
  CorrectnessSource reward_correctness = CorrectnessSource::sampled;
  bool per_image_reward = false;  // one reward per image instead of per batch
  int reward_bins = 15;           // ECE bins inside the ID reward
  double ece_floor = 1e-6;        // ECE clamp inside -ln(.)

  CorruptionKind corruption = CorruptionKind::gaussian_noise;  // OOD reward
  int corruption_severity = 3;

  int monitor_images = 8;  // fixed validation prefix scored into the log

  void validate() const;  // throws ConfigError
};

struct FisherDiagonal {
  std::vector<std::string> names;               // parameter order
  std::vector<std::vector<double>> weights;     // aligned with names
  double raw_mean = 0.0;                        // mean squared score before weighting
};

struct ActionSample {
  std::vector<int> actions;  // per-pixel class draws
  Tensor loglik;             // scalar graph node: sum_pixels ln p_bar[action]
};

// -ln(max(ece_value, floor)); *clamped reports whether the floor was hit.
double reward_id(double ece_value, double floor = 1e-6, bool* clamped = nullptr);

// Mean pixel uncertainty of the corrupted maps over the clean maps.
double reward_ood(const std::vector<std::vector<double>>& corrupted_maps,
                  const std::vector<std::vector<double>>& clean_maps);

ActionSample sample_actions(const DirichletPrediction& pred, Rng& rng);

// Fisher weights from the squared score of the batch's greedy actions.
// All-zero scores fall back to uniform weights; non-finite gradients raise
// NumericError naming the parameter.
FisherDiagonal fisher_diagonal(const EvidentialModel& policy,
                               const std::vector<const SceneSample*>& batch,
                               const TunerConfig& config);

// Mean over pixels of KL(policy || reference) on the chosen representation
// (categorical predictive means, or the full Dirichlet densities).
// Graph-linked through the policy prediction only.
Tensor kl_penalty(const DirichletPrediction& policy_pred,
                  const DirichletPrediction& reference_pred,
                  KlMode mode = KlMode::categorical);

struct StepStats {
  double reward = 0.0;
  double batch_ece = 0.0;  // ID mode only
  double kl = 0.0;
  double grad_norm = 0.0;   // L2 norm of the full ascent direction
  double max_drift = 0.0;   // max |phi - theta_hat| after the update
  bool ece_clamped = false;
  bool eta_halved = false;
};

// One update on one batch. The reference model must share the architecture;
// a non-finite update retries once at eta/2, then raises NumericError.
StepStats fgrm_step(EvidentialModel& policy, const EvidentialModel& reference,
                    const std::vector<const SceneSample*>& batch, const TunerConfig& config,
                    Rng& rng);

struct TuneLogRow {
  int step = 0;
  double reward = 0.0;
  double ece = 0.0;   // monitor subset, argmax confidence
  double dice = 0.0;  // monitor subset, mean over classes
  double kl = 0.0;
  double grad_norm = 0.0;
  double max_drift = 0.0;
};

struct TuneResult {
  EvidentialModel model;
  std::vector<TuneLogRow> log;  // row 0 is the pre-tuning state
  int eta_halvings = 0;
};

// Full tuning run over the validation set. Deterministic in (model, val,
// config); zero epochs returns the pretrained parameters unchanged.
TuneResult tune(const EvidentialModel& pretrained, const std::vector<SceneSample>& val,
                const TunerConfig& config);

}  // namespace fgrm
