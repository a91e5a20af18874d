#pragma once
// Adam with bias correction, operating on a ParameterSet's .grad buffers.

#include <vector>

#include "fgrm/tensor.hpp"

namespace fgrm {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one update from the currently accumulated gradients.
  // Throws NumericError on non-finite gradients.
  void step(ParameterSet& params);

  int64_t steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  int64_t t_ = 0;
  std::vector<double> m_, v_;  // flat moments, lazily sized
};

}  // namespace fgrm
