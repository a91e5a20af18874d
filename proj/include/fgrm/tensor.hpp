#pragma once
// Dense double-precision tensors with reverse-mode autodiff.
//
// A Tensor is a shared handle to a graph node. Ops record their parents plus
// a backward closure; backward() walks the graph in reverse creation order,
// which makes gradient accumulation deterministic, and adds into the .grad
// buffers of the leaves. Graph recording can be suspended with NoGradGuard
// (used for the frozen reference model and all evaluation passes).
//
// Layout is row-major with the last axis innermost. Images are [H, W, C],
// per-pixel class quantities [H, W, K], conv kernels [Kh, Kw, Cin, Cout].

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fgrm {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode;

// Adds the contribution of `gout` (gradient at self's output) into the parent
// buffers. parent_grads[i] is null when parent i does not require grad.
using BackwardFn = std::function<void(const TensorNode& self,
                                      const std::vector<double>& gout,
                                      const std::vector<std::vector<double>*>& parent_grads)>;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // leaves only, sized on first accumulation
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> parents;
  BackwardFn backward;
  int64_t index = 0;  // global creation order

  bool is_leaf() const { return parents.empty(); }
};

// RAII guard disabling graph recording on the current thread. Ops executed
// under the guard produce constant leaves regardless of parent flags.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

class Tensor {
 public:
  Tensor() = default;

  // Leaf constructors.
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  // Op constructor; drops the graph link (constant leaf) when recording is
  // off or no parent requires grad.
  static Tensor make_op(std::string op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return checked()->shape; }
  int64_t size() const { return static_cast<int64_t>(checked()->values.size()); }
  int dim(int axis) const;

  const std::vector<double>& values() const { return checked()->values; }
  std::vector<double>& mutable_values();  // leaves only

  bool requires_grad() const { return checked()->requires_grad; }
  bool is_leaf() const { return checked()->is_leaf(); }
  const std::string& op_name() const { return checked()->op; }
  int64_t creation_index() const { return checked()->index; }

  // Accumulated gradient of a leaf; zeros until backward() reaches it.
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;  // single-element tensors only

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  const std::shared_ptr<TensorNode>& checked() const;
  std::shared_ptr<TensorNode> node_;
};

struct BackwardResult {
  int leaves_reached = 0;
  // True when the loss had no path to any grad-requiring leaf; grads are
  // left untouched (all zero) in that case.
  bool detached = false;
};

// Reverse pass from a scalar loss. Throws std::invalid_argument when loss is
// not a single element. Leaf gradients accumulate across calls.
BackwardResult backward(const Tensor& loss);

// Elementwise arithmetic with numpy-style broadcasting (trailing axes
// aligned; a dimension may be stretched only from 1). Shape mismatches throw
// std::invalid_argument naming the op and both shapes.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);

// [m, k] x [k, n] -> [m, n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Direct 2-D convolution. input [H, W, Cin], kernel [Kh, Kw, Cin, Cout] with
// odd Kh, Kw; zero padding keeps the spatial size ("same").
Tensor conv2d_same(const Tensor& input, const Tensor& kernel);

// Reductions. Axis lists must be valid, duplicates rejected.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::vector<int> axes, bool keepdims = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::vector<int> axes, bool keepdims = false);
Tensor max(const Tensor& a, std::vector<int> axes, bool keepdims = false);

// Elementwise functions.
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);  // ln(1 + e^x), numerically stable
Tensor digamma(const Tensor& a);
Tensor lgamma(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);  // gradient passes where a > lo

// Softmax over the last axis, row max subtracted before exponentiation.
Tensor softmax_last(const Tensor& a);

// Escape hatch for tests: elementwise op with caller-supplied value and
// derivative functions (e.g. a deliberately wrong derivative as a negative
// control for grad_check).
Tensor custom_unary(const Tensor& a, const std::string& name,
                    std::function<double(double)> fn,
                    std::function<double(double)> dfn);

// One-hot [H, W, K] constant from per-pixel labels; labels outside [0, K)
// throw std::invalid_argument.
Tensor one_hot(std::span<const int> labels, int height, int width, int classes);

// Named collection of trainable leaves, iterated in insertion order.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  size_t count() const { return items_.size(); }
  int64_t total_size() const;
  void zero_grad();

  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void set_flat_values(std::span<const double> values);

  // max_i |a_i - b_i| over the concatenation; shapes must agree.
  double max_abs_diff(const ParameterSet& other) const;

  ParameterSet clone() const;  // deep copy with fresh leaves

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace fgrm
