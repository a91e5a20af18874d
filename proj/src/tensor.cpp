#include "fgrm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "fgrm/special.hpp"

namespace fgrm {

namespace {

std::atomic<int64_t> g_next_index{0};
thread_local int g_no_grad_depth = 0;

int64_t take_index() { return g_next_index.fetch_add(1, std::memory_order_relaxed); }

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_shape_dims(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) fail("tensor shape dimensions must be positive, got " + shape_str(shape));
  }
}

// Row-major strides; rank-0 yields an empty vector.
std::vector<int64_t> strides_of(const Shape& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
    s[d] = acc;
    acc *= shape[d];
  }
  return s;
}

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> sa, sb;  // per out-dim strides into a and b (0 = broadcast)
  int64_t n = 1;
  bool same = false;
};

BroadcastPlan make_broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.n = numel(a);
    p.same = true;
    return p;
  }
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int rank = std::max(ra, rb);
  p.out.assign(rank, 1);
  for (int d = 0; d < rank; ++d) {
    const int da = d - (rank - ra) >= 0 ? a[d - (rank - ra)] : 1;
    const int db = d - (rank - rb) >= 0 ? b[d - (rank - rb)] : 1;
    if (da != db && da != 1 && db != 1) {
      fail(std::string("op ") + op + ": cannot broadcast shapes " + shape_str(a) +
           " and " + shape_str(b));
    }
    p.out[d] = std::max(da, db);
  }
  const auto stra = strides_of(a);
  const auto strb = strides_of(b);
  p.sa.assign(rank, 0);
  p.sb.assign(rank, 0);
  for (int d = 0; d < rank; ++d) {
    const int ja = d - (rank - ra);
    const int jb = d - (rank - rb);
    if (ja >= 0 && a[ja] != 1) p.sa[d] = stra[ja];
    if (jb >= 0 && b[jb] != 1) p.sb[d] = strb[jb];
  }
  p.n = numel(p.out);
  return p;
}

// Calls f(linear_out, offset_a, offset_b) for every output element.
template <class F>
void for_each_pair(const Shape& out, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, F&& f) {
  const int rank = static_cast<int>(out.size());
  if (rank == 0) {
    f(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t lin = 0;; ++lin) {
    f(lin, ia, ib);
    int d = rank - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
}

// dfa/dfb: (gout, a, b, out) -> gradient contribution for that parent.
template <class FV, class DA, class DB>
Tensor elementwise_binary(const char* name, const Tensor& a, const Tensor& b, FV fval,
                          DA dfa, DB dfb) {
  BroadcastPlan plan = make_broadcast_plan(name, a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(plan.n));
  if (plan.same) {
    for (int64_t i = 0; i < plan.n; ++i) out[i] = fval(av[i], bv[i]);
  } else {
    for_each_pair(plan.out, plan.sa, plan.sb,
                  [&](int64_t lin, int64_t ia, int64_t ib) { out[lin] = fval(av[ia], bv[ib]); });
  }
  BackwardFn bw = [plan, dfa, dfb](const TensorNode& self, const std::vector<double>& gout,
                                   const std::vector<std::vector<double>*>& pg) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    std::vector<double>* ga = pg[0];
    std::vector<double>* gb = pg[1];
    if (plan.same) {
      for (int64_t i = 0; i < plan.n; ++i) {
        if (ga) (*ga)[i] += dfa(gout[i], av[i], bv[i], self.values[i]);
        if (gb) (*gb)[i] += dfb(gout[i], av[i], bv[i], self.values[i]);
      }
    } else {
      for_each_pair(plan.out, plan.sa, plan.sb, [&](int64_t lin, int64_t ia, int64_t ib) {
        if (ga) (*ga)[ia] += dfa(gout[lin], av[ia], bv[ib], self.values[lin]);
        if (gb) (*gb)[ib] += dfb(gout[lin], av[ia], bv[ib], self.values[lin]);
      });
    }
  };
  return Tensor::make_op(name, plan.out, std::move(out), {a, b}, std::move(bw));
}

// df: (gout, x, y) -> gradient contribution.
template <class FV, class DF>
Tensor elementwise_unary(const char* name, const Tensor& a, FV fval, DF df) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fval(av[i]);
  BackwardFn bw = [df](const TensorNode& self, const std::vector<double>& gout,
                       const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    const auto& av = self.parents[0]->values;
    auto& ga = *pg[0];
    for (size_t i = 0; i < av.size(); ++i) ga[i] += df(gout[i], av[i], self.values[i]);
  };
  return Tensor::make_op(name, a.shape(), std::move(out), {a}, std::move(bw));
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_axes(const char* op, const Shape& shape, std::vector<int>& axes) {
  if (axes.empty()) fail(std::string(op) + ": empty axis list");
  std::sort(axes.begin(), axes.end());
  for (size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= static_cast<int>(shape.size())) {
      fail(std::string(op) + ": axis " + std::to_string(axes[i]) +
           " out of range for shape " + shape_str(shape));
    }
    if (i > 0 && axes[i] == axes[i - 1]) {
      fail(std::string(op) + ": duplicate axis " + std::to_string(axes[i]));
    }
  }
}

struct ReducePlan {
  Shape out_shape;                 // respecting keepdims
  std::vector<int64_t> out_contrib;  // per input-dim stride into the output
  int64_t n_in = 1, n_out = 1, group = 1;  // group = elements reduced per output cell
};

ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  ReducePlan p;
  std::vector<bool> reduced(in.size(), false);
  for (int a : axes) reduced[a] = true;
  Shape compact;  // reduced dims dropped, used for stride computation
  for (size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      p.group *= in[d];
      if (keepdims) p.out_shape.push_back(1);
    } else {
      p.out_shape.push_back(in[d]);
      compact.push_back(in[d]);
    }
  }
  const auto cstr = strides_of(compact);
  p.out_contrib.assign(in.size(), 0);
  size_t j = 0;
  for (size_t d = 0; d < in.size(); ++d) {
    if (!reduced[d]) p.out_contrib[d] = cstr[j++];
  }
  p.n_in = numel(in);
  p.n_out = numel(p.out_shape);
  return p;
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_recording_enabled() { return g_no_grad_depth == 0; }

const std::shared_ptr<TensorNode>& Tensor::checked() const {
  if (!node_) fail("use of a default-constructed Tensor");
  return node_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape_dims(shape);
  auto node = std::make_shared<TensorNode>();
  node->values.assign(static_cast<size_t>(numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->index = take_index();
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape_dims(shape);
  if (static_cast<int64_t>(values.size()) != numel(shape)) {
    fail("from_values: " + std::to_string(values.size()) + " values for shape " +
         shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->index = take_index();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::make_op(std::string op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> parents, BackwardFn backward) {
  if (static_cast<int64_t>(values.size()) != numel(shape)) {
    fail("make_op " + op + ": value count does not match shape " + shape_str(shape));
  }
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = std::move(op);
  node->index = take_index();
  if (grad_recording_enabled() && any_grad && backward) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

int Tensor::dim(int axis) const {
  const auto& s = checked()->shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    fail("dim: axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::vector<double>& Tensor::mutable_values() {
  if (!checked()->is_leaf()) fail("mutable_values: tensor is not a leaf");
  return node_->values;
}

const std::vector<double>& Tensor::grad() const {
  auto& node = *checked();
  if (node.grad.size() != node.values.size()) node.grad.assign(node.values.size(), 0.0);
  return node.grad;
}

void Tensor::zero_grad() {
  auto& node = *checked();
  node.grad.assign(node.values.size(), 0.0);
}

double Tensor::item() const {
  const auto& v = checked()->values;
  if (v.size() != 1) fail("item: tensor has shape " + shape_str(node_->shape));
  return v[0];
}

BackwardResult backward(const Tensor& loss) {
  auto root = loss.node();
  if (!root) fail("backward: undefined tensor");
  if (root->values.size() != 1) {
    fail("backward: loss must have a single element, got shape " + shape_str(root->shape));
  }
  BackwardResult result;
  if (!root->requires_grad) {
    result.detached = true;
    return result;
  }
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TensorNode* x, const TensorNode* y) { return x->index > y->index; });

  std::unordered_map<TensorNode*, std::vector<double>> gmap;
  gmap[root.get()] = {1.0};
  for (TensorNode* n : order) {
    auto it = gmap.find(n);
    if (it == gmap.end()) continue;
    std::vector<double> gout = std::move(it->second);
    gmap.erase(it);
    if (n->is_leaf()) {
      if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
      for (size_t i = 0; i < gout.size(); ++i) n->grad[i] += gout[i];
      ++result.leaves_reached;
      continue;
    }
    std::vector<std::vector<double>*> pg(n->parents.size(), nullptr);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      TensorNode* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto& buf = gmap[p];
      if (buf.size() != p->values.size()) buf.assign(p->values.size(), 0.0);
      pg[i] = &buf;
    }
    n->backward(*n, gout, pg);
  }
  result.detached = (result.leaves_reached == 0);
  return result;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return g; });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return -g; });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y, double) { return g * y; },
      [](double g, double x, double, double) { return g * x; });
}

Tensor operator/(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y, double) { return g / y; },
      [](double g, double x, double y, double) { return -g * x / (y * y); });
}

Tensor operator-(const Tensor& a) {
  return elementwise_unary(
      "neg", a, [](double x) { return -x; },
      [](double g, double, double) { return -g; });
}

Tensor operator+(const Tensor& a, double b) { return a + Tensor::scalar(b); }
Tensor operator+(double a, const Tensor& b) { return Tensor::scalar(a) + b; }
Tensor operator-(const Tensor& a, double b) { return a - Tensor::scalar(b); }
Tensor operator-(double a, const Tensor& b) { return Tensor::scalar(a) - b; }
Tensor operator*(const Tensor& a, double b) { return a * Tensor::scalar(b); }
Tensor operator*(double a, const Tensor& b) { return Tensor::scalar(a) * b; }
Tensor operator/(const Tensor& a, double b) { return a / Tensor::scalar(b); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    fail("op matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double x = av[static_cast<size_t>(i) * k + kk];
      const double* brow = &bv[static_cast<size_t>(kk) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  BackwardFn bw = [m, k, n](const TensorNode& self, const std::vector<double>& gout,
                            const std::vector<std::vector<double>*>& pg) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (pg[0]) {
      auto& ga = *pg[0];
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = &gout[static_cast<size_t>(i) * n];
          const double* brow = &bv[static_cast<size_t>(kk) * n];
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[static_cast<size_t>(i) * k + kk] += acc;
        }
      }
    }
    if (pg[1]) {
      auto& gb = *pg[1];
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const double x = av[static_cast<size_t>(i) * k + kk];
          const double* grow = &gout[static_cast<size_t>(i) * n];
          double* gbrow = &gb[static_cast<size_t>(kk) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
      }
    }
  };
  return Tensor::make_op("matmul", {m, n}, std::move(out), {a, b}, std::move(bw));
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernel) {
  const auto& si = input.shape();
  const auto& sk = kernel.shape();
  if (si.size() != 3 || sk.size() != 4 || sk[2] != si[2]) {
    fail("op conv2d_same: incompatible shapes " + shape_str(si) + " and " + shape_str(sk));
  }
  if (sk[0] % 2 == 0 || sk[1] % 2 == 0) {
    fail("op conv2d_same: kernel spatial dims must be odd, got " + shape_str(sk));
  }
  const int h = si[0], w = si[1], cin = si[2];
  const int kh = sk[0], kw = sk[1], cout = sk[3];
  const int ph = kh / 2, pw = kw / 2;
  const auto& iv = input.values();
  const auto& kv = kernel.values();
  std::vector<double> out(static_cast<size_t>(h) * w * cout, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* orow = &out[(static_cast<size_t>(y) * w + x) * cout];
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = y + ky - ph;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = x + kx - pw;
          if (ix < 0 || ix >= w) continue;
          const double* ipx = &iv[(static_cast<size_t>(iy) * w + ix) * cin];
          const double* kbase = &kv[(static_cast<size_t>(ky) * kw + kx) * cin * cout];
          for (int ic = 0; ic < cin; ++ic) {
            const double v = ipx[ic];
            const double* krow = kbase + static_cast<size_t>(ic) * cout;
            for (int oc = 0; oc < cout; ++oc) orow[oc] += v * krow[oc];
          }
        }
      }
    }
  }
  BackwardFn bw = [h, w, cin, kh, kw, cout, ph, pw](
                      const TensorNode& self, const std::vector<double>& gout,
                      const std::vector<std::vector<double>*>& pg) {
    const auto& iv = self.parents[0]->values;
    const auto& kv = self.parents[1]->values;
    std::vector<double>* gi = pg[0];
    std::vector<double>* gk = pg[1];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double* grow = &gout[(static_cast<size_t>(y) * w + x) * cout];
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = x + kx - pw;
            if (ix < 0 || ix >= w) continue;
            const size_t ipos = (static_cast<size_t>(iy) * w + ix) * cin;
            const size_t kpos = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
            for (int ic = 0; ic < cin; ++ic) {
              const double* krow = &kv[kpos + static_cast<size_t>(ic) * cout];
              double acc = 0.0;
              for (int oc = 0; oc < cout; ++oc) acc += grow[oc] * krow[oc];
              if (gi) (*gi)[ipos + ic] += acc;
              if (gk) {
                const double v = iv[ipos + ic];
                double* gkrow = &(*gk)[kpos + static_cast<size_t>(ic) * cout];
                for (int oc = 0; oc < cout; ++oc) gkrow[oc] += v * grow[oc];
              }
            }
          }
        }
      }
    }
  };
  return Tensor::make_op("conv2d_same", {h, w, cout}, std::move(out), {input, kernel},
                         std::move(bw));
}

Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  BackwardFn bw = [](const TensorNode& self, const std::vector<double>& gout,
                     const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    auto& ga = *pg[0];
    const double g = gout[0];
    (void)self;
    for (auto& v : ga) v += g;
  };
  return Tensor::make_op("sum", {}, {acc}, {a}, std::move(bw));
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  const auto& av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  BackwardFn bw = [inv](const TensorNode& self, const std::vector<double>& gout,
                        const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    auto& ga = *pg[0];
    const double g = gout[0] * inv;
    (void)self;
    for (auto& v : ga) v += g;
  };
  return Tensor::make_op("mean", {}, {acc * inv}, {a}, std::move(bw));
}

namespace {

Tensor reduce_sum_impl(const char* name, const Tensor& a, std::vector<int> axes,
                       bool keepdims, bool take_mean) {
  check_axes(name, a.shape(), axes);
  ReducePlan plan = make_reduce_plan(a.shape(), axes, keepdims);
  const double scale = take_mean ? 1.0 / static_cast<double>(plan.group) : 1.0;
  const auto& av = a.values();
  std::vector<double> out(static_cast<size_t>(plan.n_out), 0.0);
  const auto in_str = strides_of(a.shape());
  for_each_pair(a.shape(), in_str, plan.out_contrib,
                [&](int64_t, int64_t ia, int64_t ob) { out[ob] += av[ia]; });
  if (take_mean) {
    for (auto& v : out) v *= scale;
  }
  Shape in_shape = a.shape();
  BackwardFn bw = [plan, in_shape, in_str, scale](const TensorNode& self,
                                                  const std::vector<double>& gout,
                                                  const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    (void)self;
    auto& ga = *pg[0];
    for_each_pair(in_shape, in_str, plan.out_contrib,
                  [&](int64_t, int64_t ia, int64_t ob) { ga[ia] += gout[ob] * scale; });
  };
  return Tensor::make_op(name, plan.out_shape, std::move(out), {a}, std::move(bw));
}

}  // namespace

Tensor sum(const Tensor& a, std::vector<int> axes, bool keepdims) {
  return reduce_sum_impl("sum", a, std::move(axes), keepdims, false);
}

Tensor mean(const Tensor& a, std::vector<int> axes, bool keepdims) {
  return reduce_sum_impl("mean", a, std::move(axes), keepdims, true);
}

Tensor max(const Tensor& a, std::vector<int> axes, bool keepdims) {
  check_axes("max", a.shape(), axes);
  ReducePlan plan = make_reduce_plan(a.shape(), axes, keepdims);
  const auto& av = a.values();
  std::vector<double> out(static_cast<size_t>(plan.n_out),
                          -std::numeric_limits<double>::infinity());
  // Ties resolve to the earliest linear index, making backward deterministic.
  auto argmax = std::make_shared<std::vector<int64_t>>(plan.n_out, int64_t{-1});
  const auto in_str = strides_of(a.shape());
  for_each_pair(a.shape(), in_str, plan.out_contrib, [&](int64_t, int64_t ia, int64_t ob) {
    if (av[ia] > out[ob]) {
      out[ob] = av[ia];
      (*argmax)[ob] = ia;
    }
  });
  BackwardFn bw = [argmax](const TensorNode& self, const std::vector<double>& gout,
                           const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    (void)self;
    auto& ga = *pg[0];
    for (size_t ob = 0; ob < argmax->size(); ++ob) ga[(*argmax)[ob]] += gout[ob];
  };
  return Tensor::make_op("max", plan.out_shape, std::move(out), {a}, std::move(bw));
}

Tensor exp(const Tensor& a) {
  return elementwise_unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
  return elementwise_unary(
      "log", a, [](double x) { return std::log(x); },
      [](double g, double x, double) { return g / x; });
}

Tensor softplus(const Tensor& a) {
  return elementwise_unary(
      "softplus", a, [](double x) { return stable_softplus(x); },
      [](double g, double x, double) { return g * sigmoid(x); });
}

Tensor digamma(const Tensor& a) {
  return elementwise_unary(
      "digamma", a, [](double x) { return digamma(x); },
      [](double g, double x, double) { return g * trigamma(x); });
}

Tensor lgamma(const Tensor& a) {
  return elementwise_unary(
      "lgamma", a, [](double x) { return std::lgamma(x); },
      [](double g, double x, double) { return g * digamma(x); });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return elementwise_unary(
      "clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double g, double x, double) { return x > lo ? g : 0.0; });
}

Tensor softmax_last(const Tensor& a) {
  const auto& shape = a.shape();
  if (shape.empty()) fail("op softmax_last: requires rank >= 1, got " + shape_str(shape));
  const int k = shape.back();
  const int64_t rows = numel(shape) / k;
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = &av[r * k];
    double* p = &out[r * k];
    double m = x[0];
    for (int j = 1; j < k; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      p[j] = std::exp(x[j] - m);
      s += p[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < k; ++j) p[j] *= inv;
  }
  BackwardFn bw = [rows, k](const TensorNode& self, const std::vector<double>& gout,
                            const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    auto& ga = *pg[0];
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = &self.values[r * k];
      const double* g = &gout[r * k];
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += p[j] * g[j];
      for (int j = 0; j < k; ++j) ga[r * k + j] += p[j] * (g[j] - dot);
    }
  };
  return Tensor::make_op("softmax_last", shape, std::move(out), {a}, std::move(bw));
}

Tensor custom_unary(const Tensor& a, const std::string& name,
                    std::function<double(double)> fn, std::function<double(double)> dfn) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i]);
  BackwardFn bw = [dfn](const TensorNode& self, const std::vector<double>& gout,
                        const std::vector<std::vector<double>*>& pg) {
    if (!pg[0]) return;
    const auto& av = self.parents[0]->values;
    auto& ga = *pg[0];
    for (size_t i = 0; i < av.size(); ++i) ga[i] += gout[i] * dfn(av[i]);
  };
  return Tensor::make_op(name, a.shape(), std::move(out), {a}, std::move(bw));
}

Tensor one_hot(std::span<const int> labels, int height, int width, int classes) {
  if (static_cast<int64_t>(labels.size()) != static_cast<int64_t>(height) * width) {
    fail("one_hot: " + std::to_string(labels.size()) + " labels for " +
         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  std::vector<double> values(labels.size() * static_cast<size_t>(classes), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= classes) {
      fail("one_hot: label " + std::to_string(c) + " outside [0," + std::to_string(classes) +
           ") at pixel " + std::to_string(i));
    }
    values[i * classes + c] = 1.0;
  }
  return Tensor::from_values({height, width, classes}, std::move(values));
}

Tensor& ParameterSet::add(const std::string& name, Tensor tensor) {
  if (contains(name)) fail("ParameterSet::add: duplicate name '" + name + "'");
  if (!tensor.defined() || !tensor.is_leaf()) {
    fail("ParameterSet::add: '" + name + "' must be a leaf tensor");
  }
  tensor.node()->requires_grad = true;
  items_.emplace_back(name, std::move(tensor));
  return items_.back().second;
}

Tensor& ParameterSet::at(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  fail("ParameterSet::at: no parameter named '" + name + "'");
}

const Tensor& ParameterSet::at(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  fail("ParameterSet::at: no parameter named '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

int64_t ParameterSet::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

std::vector<double> ParameterSet::flat_values() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_size()));
  for (const auto& [name, t] : items_) {
    const auto& v = t.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<double> ParameterSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_size()));
  for (const auto& [name, t] : items_) {
    const auto& g = t.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void ParameterSet::set_flat_values(std::span<const double> values) {
  if (static_cast<int64_t>(values.size()) != total_size()) {
    fail("set_flat_values: got " + std::to_string(values.size()) + " values, expected " +
         std::to_string(total_size()));
  }
  size_t pos = 0;
  for (auto& [name, t] : items_) {
    auto& v = t.mutable_values();
    std::copy(values.begin() + pos, values.begin() + pos + v.size(), v.begin());
    pos += v.size();
  }
}

double ParameterSet::max_abs_diff(const ParameterSet& other) const {
  if (count() != other.count()) {
    fail("max_abs_diff: parameter sets differ in size");
  }
  double worst = 0.0;
  for (size_t i = 0; i < items_.size(); ++i) {
    const auto& [na, ta] = items_[i];
    const auto& [nb, tb] = other.items_[i];
    if (na != nb || ta.shape() != tb.shape()) {
      fail("max_abs_diff: mismatched parameter '" + na + "' vs '" + nb + "'");
    }
    const auto& va = ta.values();
    const auto& vb = tb.values();
    for (size_t j = 0; j < va.size(); ++j) {
      worst = std::max(worst, std::abs(va[j] - vb[j]));
    }
  }
  return worst;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    out.add(name, Tensor::from_values(t.shape(), t.values()));
  }
  return out;
}

}  // namespace fgrm
