#include "fgrm/pretrain.hpp"

#include <cmath>
#include <limits>

#include "fgrm/errors.hpp"
#include "fgrm/metrics.hpp"
#include "fgrm/optim.hpp"
#include "fgrm/rng.hpp"

namespace fgrm {

namespace {

constexpr uint64_t kInitTag = 0x696e6974ull;
constexpr uint64_t kShuffleTag = 0x73687566ull;

}  // namespace

void PretrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
}

double dataset_mean_dice(const EvidentialModel& model, const std::vector<SceneSample>& samples) {
  NoGradGuard ng;
  std::vector<int> pred, gt;
  pred.reserve(samples.size() * static_cast<size_t>(model.config().height) *
               model.config().width);
  gt.reserve(pred.capacity());
  for (const SceneSample& s : samples) {
    const DirichletPrediction p = model.forward(s.image);
    const std::vector<int> labels = p.argmax_labels();
    pred.insert(pred.end(), labels.begin(), labels.end());
    gt.insert(gt.end(), s.mask.begin(), s.mask.end());
  }
  const int k = model.config().classes;
  double acc = 0.0;
  for (int c = 0; c < k; ++c) acc += dice(pred, gt, c);
  return acc / k;
}

PretrainResult pretrain(const std::vector<SceneSample>& train, const ModelConfig& model_config,
                        const PretrainConfig& config) {
  config.validate();
  model_config.validate();
  if (train.empty()) throw ConfigError("pretrain: empty training set");

  PretrainResult result{EvidentialModel(model_config, mix_seed(config.seed, {kInitTag})), {}};
  EvidentialModel& model = result.model;
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(),
                        dataset_mean_dice(model, train)});

  Adam adam(AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(mix_seed(config.seed, {kShuffleTag}));
  const int n = static_cast<int>(train.size());
  std::vector<int> order(train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i >= 1; --i) {
      const int j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int stop = std::min(n, start + config.batch_size);
      model.params().zero_grad();
      Tensor total = Tensor::scalar(0.0);
      for (int b = start; b < stop; ++b) {
        const SceneSample& s = train[static_cast<size_t>(order[static_cast<size_t>(b)])];
        const DirichletPrediction pred = model.forward(s.image);
        const Tensor mask = one_hot(s.mask, s.height, s.width, model_config.classes);
        total = total + evidential_loss(pred, mask);
      }
      Tensor loss = total / static_cast<double>(stop - start);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
      }
      backward(loss);
      adam.step(model.params());
      epoch_loss += loss_value;
      ++batches;
    }
    result.log.push_back(
        {epoch, epoch_loss / batches, dataset_mean_dice(model, train)});
  }
  return result;
}

}  // namespace fgrm
