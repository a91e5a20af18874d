#pragma once
// Evidential segmentation network.
//
// A small stack of 3x3 conv layers (softplus activations, constant spatial
// resolution) followed by a 1x1 evidence head. Head outputs z are mapped to
// Dirichlet concentrations alpha = softplus(z) + 1, so alpha >= 1 always and
// zero head output still yields usable (maximally vague) evidence. The mean
// p_bar = alpha / S is the predictive distribution, S = sum_k alpha_k.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fgrm/tensor.hpp"

namespace fgrm {

struct ModelConfig {
  int classes = 3;
  int height = 32;
  int width = 32;
  int in_channels = 1;
  std::vector<int> widths = {8, 8, 8};  // hidden conv channel counts
  int kernel = 3;

  void validate() const;  // throws ConfigError
  bool same_architecture(const ModelConfig& other) const;
};

struct DirichletPrediction {
  int height = 0, width = 0, classes = 0;
  Tensor alpha;  // [H, W, K]
  Tensor s;      // [H, W, 1]
  Tensor p_bar;  // [H, W, K]

  std::vector<int> argmax_labels() const;    // per-pixel argmax of p_bar
  std::vector<double> confidence() const;    // per-pixel max of p_bar
};

struct UncertaintyMaps {
  int height = 0, width = 0;
  std::vector<double> aleatoric;  // entropy of p_bar, normalized by ln K -> [0, 1]
  std::vector<double> epistemic;  // K / S in (0, 1]
};

class EvidentialModel {
 public:
  // Fresh He-style initialization from the seed.
  EvidentialModel(ModelConfig config, uint64_t seed);
  // Adopt existing parameters (checkpoint load, clone).
  EvidentialModel(ModelConfig config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Builds the graph when recording is enabled and the image is given as a
  // tensor. Expects pixel intensities roughly in [0, 1]; they are recentred
  // to [-1, 1] internally.
  DirichletPrediction forward(const Tensor& image) const;
  DirichletPrediction forward(std::span<const double> image_hwc) const;

  EvidentialModel clone() const;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

// Expected cross-entropy of the label under Dir(alpha):
// mean over pixels of sum_k y_k (psi(S) - psi(alpha_k)).
// mask must be a one-hot [H, W, K] tensor matching the prediction.
Tensor evidential_loss(const DirichletPrediction& pred, const Tensor& onehot_mask);

UncertaintyMaps uncertainty_maps(const DirichletPrediction& pred);

}  // namespace fgrm
