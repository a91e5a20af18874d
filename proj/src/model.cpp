#include "fgrm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fgrm/errors.hpp"
#include "fgrm/rng.hpp"

namespace fgrm {

void ModelConfig::validate() const {
  if (classes < 2) throw ConfigError("model.classes must be >= 2, got " + std::to_string(classes));
  if (height < 4 || width < 4) {
    throw ConfigError("model.height/width must be >= 4, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (in_channels < 1) {
    throw ConfigError("model.in_channels must be >= 1, got " + std::to_string(in_channels));
  }
  if (widths.empty()) throw ConfigError("model.widths must not be empty");
  for (int w : widths) {
    if (w < 1) throw ConfigError("model.widths entries must be >= 1, got " + std::to_string(w));
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("model.kernel must be odd and >= 1, got " + std::to_string(kernel));
  }
}

bool ModelConfig::same_architecture(const ModelConfig& other) const {
  return classes == other.classes && height == other.height && width == other.width &&
         in_channels == other.in_channels && widths == other.widths && kernel == other.kernel;
}

namespace {

Tensor he_conv(Rng& rng, int kh, int kw, int cin, int cout) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
  std::vector<double> v(static_cast<size_t>(kh) * kw * cin * cout);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from_values({kh, kw, cin, cout}, std::move(v));
}

}  // namespace

EvidentialModel::EvidentialModel(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(mix_seed(seed, {0x6d6f64656cull}));
  int cin = config_.in_channels;
  for (size_t i = 0; i < config_.widths.size(); ++i) {
    const int cout = config_.widths[i];
    const std::string base = "conv" + std::to_string(i);
    params_.add(base + ".weight", he_conv(rng, config_.kernel, config_.kernel, cin, cout));
    params_.add(base + ".bias", Tensor::zeros({cout}));
    cin = cout;
  }
  params_.add("head.weight", he_conv(rng, 1, 1, cin, config_.classes));
  params_.add("head.bias", Tensor::zeros({config_.classes}));
}

EvidentialModel::EvidentialModel(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  int cin = config_.in_channels;
  for (size_t i = 0; i < config_.widths.size(); ++i) {
    const std::string base = "conv" + std::to_string(i);
    const Tensor& w = params_.at(base + ".weight");
    const Shape expect{config_.kernel, config_.kernel, cin, config_.widths[i]};
    if (w.shape() != expect) {
      throw ConfigError("parameter " + base + ".weight has shape " + shape_str(w.shape()) +
                        ", architecture expects " + shape_str(expect));
    }
    params_.at(base + ".bias");
    cin = config_.widths[i];
  }
  const Tensor& hw = params_.at("head.weight");
  const Shape expect{1, 1, cin, config_.classes};
  if (hw.shape() != expect) {
    throw ConfigError("parameter head.weight has shape " + shape_str(hw.shape()) +
                      ", architecture expects " + shape_str(expect));
  }
  params_.at("head.bias");
}

DirichletPrediction EvidentialModel::forward(const Tensor& image) const {
  const Shape expect{config_.height, config_.width, config_.in_channels};
  if (image.shape() != expect) {
    throw std::invalid_argument("forward: image shape " + shape_str(image.shape()) +
                                ", model expects " + shape_str(expect));
  }
  Tensor x = image * 2.0 - 1.0;
  for (size_t i = 0; i < config_.widths.size(); ++i) {
    const std::string base = "conv" + std::to_string(i);
    x = softplus(conv2d_same(x, params_.at(base + ".weight")) + params_.at(base + ".bias"));
  }
  Tensor logits = conv2d_same(x, params_.at("head.weight")) + params_.at("head.bias");
  DirichletPrediction pred;
  pred.height = config_.height;
  pred.width = config_.width;
  pred.classes = config_.classes;
  pred.alpha = softplus(logits) + 1.0;
  pred.s = sum(pred.alpha, {2}, /*keepdims=*/true);
  pred.p_bar = pred.alpha / pred.s;
  return pred;
}

DirichletPrediction EvidentialModel::forward(std::span<const double> image_hwc) const {
  const int64_t want =
      static_cast<int64_t>(config_.height) * config_.width * config_.in_channels;
  if (static_cast<int64_t>(image_hwc.size()) != want) {
    throw std::invalid_argument("forward: got " + std::to_string(image_hwc.size()) +
                                " pixels, model expects " + std::to_string(want));
  }
  return forward(Tensor::from_values({config_.height, config_.width, config_.in_channels},
                                     {image_hwc.begin(), image_hwc.end()}));
}

EvidentialModel EvidentialModel::clone() const {
  return EvidentialModel(config_, params_.clone());
}

std::vector<int> DirichletPrediction::argmax_labels() const {
  const auto& p = p_bar.values();
  const int64_t pixels = static_cast<int64_t>(height) * width;
  std::vector<int> out(static_cast<size_t>(pixels));
  for (int64_t i = 0; i < pixels; ++i) {
    const double* row = &p[i * classes];
    int best = 0;
    for (int k = 1; k < classes; ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[i] = best;
  }
  return out;
}

std::vector<double> DirichletPrediction::confidence() const {
  const auto& p = p_bar.values();
  const int64_t pixels = static_cast<int64_t>(height) * width;
  std::vector<double> out(static_cast<size_t>(pixels));
  for (int64_t i = 0; i < pixels; ++i) {
    const double* row = &p[i * classes];
    double best = row[0];
    for (int k = 1; k < classes; ++k) best = std::max(best, row[k]);
    out[i] = best;
  }
  return out;
}

Tensor evidential_loss(const DirichletPrediction& pred, const Tensor& onehot_mask) {
  const Shape expect{pred.height, pred.width, pred.classes};
  if (onehot_mask.shape() != expect) {
    throw std::invalid_argument("evidential_loss: mask shape " + shape_str(onehot_mask.shape()) +
                                " does not match prediction " + shape_str(expect));
  }
  const auto& mv = onehot_mask.values();
  const int64_t pixels = static_cast<int64_t>(pred.height) * pred.width;
  for (int64_t i = 0; i < pixels; ++i) {
    double row = 0.0;
    bool onehot = true;
    for (int k = 0; k < pred.classes; ++k) {
      const double v = mv[i * pred.classes + k];
      if (v != 0.0 && v != 1.0) onehot = false;
      row += v;
    }
    if (!onehot || row != 1.0) {
      throw std::invalid_argument("evidential_loss: mask row " + std::to_string(i) +
                                  " is not one-hot");
    }
  }
  // per pixel: sum_k y_k (psi(S) - psi(alpha_k))
  Tensor per_class = onehot_mask * (digamma(pred.s) - digamma(pred.alpha));
  return mean(sum(per_class, {2}, /*keepdims=*/false));
}

UncertaintyMaps uncertainty_maps(const DirichletPrediction& pred) {
  UncertaintyMaps maps;
  maps.height = pred.height;
  maps.width = pred.width;
  const int64_t pixels = static_cast<int64_t>(pred.height) * pred.width;
  maps.aleatoric.resize(static_cast<size_t>(pixels));
  maps.epistemic.resize(static_cast<size_t>(pixels));
  const auto& p = pred.p_bar.values();
  const auto& s = pred.s.values();
  const double inv_ln_k = 1.0 / std::log(static_cast<double>(pred.classes));
  for (int64_t i = 0; i < pixels; ++i) {
    double h = 0.0;
    for (int k = 0; k < pred.classes; ++k) {
      const double v = p[i * pred.classes + k];
      if (v > 0.0) h -= v * std::log(v);
    }
    maps.aleatoric[i] = h * inv_ln_k;
    maps.epistemic[i] = static_cast<double>(pred.classes) / s[i];
  }
  return maps;
}

}  // namespace fgrm
