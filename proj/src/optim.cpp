#include "fgrm/optim.hpp"

#include <cmath>

#include "fgrm/errors.hpp"

namespace fgrm {

void Adam::step(ParameterSet& params) {
  const size_t n = static_cast<size_t>(params.total_size());
  if (m_.empty()) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  } else if (m_.size() != n) {
    throw NumericError("Adam::step: parameter count changed mid-run");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  size_t pos = 0;
  for (auto& [name, tensor] : params) {
    const auto& grad = tensor.grad();
    auto& values = tensor.mutable_values();
    for (size_t i = 0; i < values.size(); ++i, ++pos) {
      const double g = grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("Adam::step: non-finite gradient in parameter '" + name + "'");
      }
      m_[pos] = config_.beta1 * m_[pos] + (1.0 - config_.beta1) * g;
      v_[pos] = config_.beta2 * v_[pos] + (1.0 - config_.beta2) * g * g;
      const double mhat = m_[pos] / bc1;
      const double vhat = v_[pos] / bc2;
      values[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace fgrm
