#include "fgrm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fgrm {

GradCheckReport grad_check(const std::function<Tensor(ParameterSet&)>& model_fn,
                           ParameterSet& params, double tolerance, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  params.zero_grad();
  Tensor loss = model_fn(params);
  const BackwardResult bres = backward(loss);
  if (bres.detached) {
    throw std::invalid_argument("grad_check: loss is detached from the parameters");
  }

  GradCheckReport report;
  for (auto& [name, tensor] : params) {
    const std::vector<double> analytic = tensor.grad();
    auto& values = tensor.mutable_values();
    for (size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double lp, lm;
      {
        NoGradGuard ng;
        values[i] = saved + h;
        lp = model_fn(params).item();
        values[i] = saved - h;
        lm = model_fn(params).item();
      }
      values[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      GradCheckEntry entry{name, static_cast<int64_t>(i), analytic[i], numeric, rel};
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = entry;
      }
      if (rel > tolerance) report.flagged.push_back(entry);
    }
  }
  return report;
}

}  // namespace fgrm
