#pragma once
// Evidential pretraining: Adam on the expected-cross-entropy loss.

#include <cstdint>
#include <vector>

#include "fgrm/model.hpp"
#include "fgrm/scenes.hpp"

namespace fgrm {

struct PretrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int epochs = 10;
  uint64_t seed = 1;  // drives both parameter init and shuffle order

  void validate() const;  // throws ConfigError
};

struct PretrainLogRow {
  int epoch = 0;      // 1-based, row 0 is the pre-training state
  double loss = 0.0;  // mean batch loss of the epoch (NaN for row 0)
  double dice = 0.0;  // mean-over-classes Dice on the training set
};

struct PretrainResult {
  EvidentialModel model;
  std::vector<PretrainLogRow> log;
};

// Trains a fresh model. Throws ConfigError on an empty dataset and
// NumericError when the loss goes non-finite.
PretrainResult pretrain(const std::vector<SceneSample>& train, const ModelConfig& model_config,
                        const PretrainConfig& config);

// Mean-over-classes Dice of argmax predictions, pixels pooled over samples.
double dataset_mean_dice(const EvidentialModel& model, const std::vector<SceneSample>& samples);

}  // namespace fgrm
