#pragma once
// Central-difference verification of reverse-mode gradients.

#include <functional>
#include <string>
#include <vector>

#include "fgrm/tensor.hpp"

namespace fgrm {

struct GradCheckEntry {
  std::string param;
  int64_t flat_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  // Entries exceeding the tolerance, ordered by parameter then index.
  std::vector<GradCheckEntry> flagged;
  bool ok() const { return flagged.empty(); }
};

// model_fn must map the current parameter values to a scalar loss,
// deterministically and without side effects. Every parameter element is
// perturbed by +-h; rel err uses max(1, |analytic|, |numeric|) in the
// denominator so near-zero gradients are compared absolutely.
GradCheckReport grad_check(const std::function<Tensor(ParameterSet&)>& model_fn,
                           ParameterSet& params, double tolerance, double h = 1e-5);

}  // namespace fgrm
