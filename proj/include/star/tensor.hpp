#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "star/error.hpp"

namespace star {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
class Tensor;

namespace detail {

// One record in the computation graph. Inputs are held by handle so the
// graph stays alive exactly as long as some output does; backward_fn is
// only installed when the node requires grad, which prunes constant
// subgraphs automatically.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<Tensor<T>> inputs;
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";
};

template <typename T>
inline void ensure_finite(std::span<const T> values, const char* op) {
  for (const T& v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(msg("non-finite value produced by ", op));
    }
  }
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad, T{0});
  }

  static Tensor full(Shape shape, T value) {
    return from_data(std::move(shape), {}, false, value);
  }

  static Tensor scalar(T value) { return from_data({}, std::vector<T>{value}); }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false,
                          T fill = T{0}) {
    auto node = std::make_shared<Node>();
    int64_t n = numel_of(shape);
    if (data.empty()) {
      data.assign(static_cast<size_t>(n), fill);
    } else if (static_cast<int64_t>(data.size()) != n) {
      throw DimensionError(detail::msg("data length ", data.size(),
                                       " does not match shape ", shape_str(shape)));
    }
    detail::ensure_finite<T>(data, "tensor construction");
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t extent(int64_t axis) const { return node_->shape[static_cast<size_t>(axis)]; }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  std::span<const T> grad() const {
    if (node_->grad.empty()) {
      throw ContractError("grad is not populated; run backward() first");
    }
    return node_->grad;
  }

  void zero_grad() {
    node_->grad.assign(node_->data.size(), T{0});
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError(detail::msg("item() needs a single-element tensor, got shape ",
                                      shape_str(shape())));
    }
    return node_->data[0];
  }

  // Reverse-mode sweep from a scalar. Visits each node once in reverse
  // topological order; repeated calls accumulate into existing grads.
  void backward() const {
    if (numel() != 1) {
      throw ContractError(detail::msg("backward() requires a scalar loss, got shape ",
                                      shape_str(shape())));
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next_input] = stack.back();
      if (next_input < node->inputs.size()) {
        Node* child = node->inputs[next_input].node_.get();
        ++next_input;
        if (child->requires_grad && !visited.count(child)) {
          visited.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    // Interior grads are scratch space for this sweep; only leaves keep
    // accumulating across calls.
    for (Node* node : order) {
      if (node->backward_fn) node->grad.assign(node->data.size(), T{0});
    }
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T{0});
    node_->grad[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward_fn) {
        node->backward_fn(*node);
        for (Tensor<T>& in : node->inputs) {
          if (in.node_->requires_grad && !in.node_->grad.empty()) {
            detail::ensure_finite<T>(in.node_->grad, node->op);
          }
        }
      }
    }
  }

  // Internal access for ops and serialization.
  Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;

  template <typename U>
  friend Tensor<U> make_op(Shape, std::vector<U>, std::vector<Tensor<U>>,
                           std::function<void(detail::TensorNode<U>&)>, const char*);
};

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                  std::function<void(detail::TensorNode<T>&)> backward_fn, const char* op) {
  detail::ensure_finite<T>(data, op);
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  Tensor<T> t;
  t.node_ = std::move(node);
  return t;
}

namespace detail {

template <typename T>
std::span<T> grad_of(Tensor<T>& t) {
  auto* node = t.node();
  if (node->grad.empty()) node->grad.assign(node->data.size(), T{0});
  return node->grad;
}

// Deterministic kernels: the reduction index always advances sequentially,
// so identical inputs give bit-identical outputs on one platform.
template <typename T>
void mm_nn_acc(const T* a, const T* b, T* out, int64_t p, int64_t q, int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    T* row = out + i * r;
    const T* arow = a + i * q;
    for (int64_t k = 0; k < q; ++k) {
      T av = arow[k];
      const T* brow = b + k * r;
      for (int64_t j = 0; j < r; ++j) row[j] += av * brow[j];
    }
  }
}

// out[p x r] += a[p x q] * b[r x q]^T
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* out, int64_t p, int64_t q, int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    const T* arow = a + i * q;
    T* orow = out + i * r;
    for (int64_t j = 0; j < r; ++j) {
      const T* brow = b + j * q;
      T acc{0};
      for (int64_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
}

// out[q x r] += a[p x q]^T * b[p x r]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* out, int64_t p, int64_t q, int64_t r) {
  for (int64_t i = 0; i < p; ++i) {
    const T* arow = a + i * q;
    const T* brow = b + i * r;
    for (int64_t k = 0; k < q; ++k) {
      T av = arow[k];
      T* orow = out + k * r;
      for (int64_t j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  }
}

inline bool is_trailing_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

// add supports equal shapes plus trailing broadcast: b's shape may be a
// suffix of a's (used for bias rows and per-part prompt residuals).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !detail::is_trailing_suffix(a.shape(), b.shape())) {
    throw DimensionError(detail::msg("add: incompatible shapes ", shape_str(a.shape()), " vs ",
                                     shape_str(b.shape())));
  }
  const int64_t n = a.numel();
  const int64_t bn = b.numel() == 0 ? 1 : b.numel();
  std::vector<T> out(static_cast<size_t>(n));
  auto ad = a.data();
  auto bd = b.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] + bd[i % bn];
  return make_op<T>(
      a.shape(), std::move(out), {a, b},
      [n, bn](detail::TensorNode<T>& node) {
        auto g = node.grad;
        auto& ai = node.inputs[0];
        auto& bi = node.inputs[1];
        if (ai.requires_grad()) {
          auto ga = detail::grad_of(ai);
          for (int64_t i = 0; i < n; ++i) ga[i] += g[static_cast<size_t>(i)];
        }
        if (bi.requires_grad()) {
          auto gb = detail::grad_of(bi);
          for (int64_t i = 0; i < n; ++i) gb[i % bn] += g[static_cast<size_t>(i)];
        }
      },
      "add");
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(detail::msg("subtract: shape mismatch ", shape_str(a.shape()), " vs ",
                                     shape_str(b.shape())));
  }
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  auto ad = a.data();
  auto bd = b.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] - bd[i];
  return make_op<T>(
      a.shape(), std::move(out), {a, b},
      [n](detail::TensorNode<T>& node) {
        auto g = node.grad;
        auto& ai = node.inputs[0];
        auto& bi = node.inputs[1];
        if (ai.requires_grad()) {
          auto ga = detail::grad_of(ai);
          for (int64_t i = 0; i < n; ++i) ga[i] += g[static_cast<size_t>(i)];
        }
        if (bi.requires_grad()) {
          auto gb = detail::grad_of(bi);
          for (int64_t i = 0; i < n; ++i) gb[i] -= g[static_cast<size_t>(i)];
        }
      },
      "subtract");
}

template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(detail::msg("multiply: shape mismatch ", shape_str(a.shape()), " vs ",
                                     shape_str(b.shape())));
  }
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  auto ad = a.data();
  auto bd = b.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] * bd[i];
  return make_op<T>(
      a.shape(), std::move(out), {a, b},
      [n](detail::TensorNode<T>& node) {
        auto g = node.grad;
        auto& ai = node.inputs[0];
        auto& bi = node.inputs[1];
        auto ad = ai.data();
        auto bd = bi.data();
        if (ai.requires_grad()) {
          auto ga = detail::grad_of(ai);
          for (int64_t i = 0; i < n; ++i) ga[i] += g[static_cast<size_t>(i)] * bd[i];
        }
        if (bi.requires_grad()) {
          auto gb = detail::grad_of(bi);
          for (int64_t i = 0; i < n; ++i) gb[i] += g[static_cast<size_t>(i)] * ad[i];
        }
      },
      "multiply");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  const int64_t n = a.numel();
  const T f = static_cast<T>(factor);
  std::vector<T> out(static_cast<size_t>(n));
  auto ad = a.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] * f;
  return make_op<T>(
      a.shape(), std::move(out), {a},
      [n, f](detail::TensorNode<T>& node) {
        auto g = node.grad;
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[static_cast<size_t>(i)] * f;
      },
      "scale");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  auto ad = a.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] > T{0} ? ad[i] : T{0};
  return make_op<T>(
      a.shape(), std::move(out), {a},
      [n](detail::TensorNode<T>& node) {
        auto g = node.grad;
        auto ad = node.inputs[0].data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < n; ++i) {
          if (ad[i] > T{0}) ga[i] += g[static_cast<size_t>(i)];
        }
      },
      "relu");
}

// ---------------------------------------------------------------------------
// Matmul with optional leading batch dims: [..xpxq] * [..xqxr] -> [..xpxr].
// Batch extents must match exactly or one operand carries none.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError(detail::msg("matmul: operands need >=2 dims, got ", shape_str(as),
                                     " and ", shape_str(bs)));
  }
  const int64_t p = as[as.size() - 2];
  const int64_t q = as[as.size() - 1];
  const int64_t q2 = bs[bs.size() - 2];
  const int64_t r = bs[bs.size() - 1];
  Shape abatch(as.begin(), as.end() - 2);
  Shape bbatch(bs.begin(), bs.end() - 2);
  if (q != q2 || (!abatch.empty() && !bbatch.empty() && abatch != bbatch)) {
    throw DimensionError(detail::msg("matmul: incompatible shapes ", shape_str(as), " and ",
                                     shape_str(bs)));
  }
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  const int64_t nb = numel_of(batch);
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<T> out(static_cast<size_t>(nb * p * r), T{0});
  const int64_t astride = abatch.empty() ? 0 : p * q;
  const int64_t bstride = bbatch.empty() ? 0 : q * r;
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (int64_t i = 0; i < nb; ++i) {
    detail::mm_nn_acc(ad + i * astride, bd + i * bstride, out.data() + i * p * r, p, q, r);
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), {a, b},
      [p, q, r, nb, astride, bstride](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto& ai = node.inputs[0];
        auto& bi = node.inputs[1];
        const T* ad = ai.data().data();
        const T* bd = bi.data().data();
        if (ai.requires_grad()) {
          T* ga = detail::grad_of(ai).data();
          for (int64_t i = 0; i < nb; ++i) {
            detail::mm_nt_acc(g + i * p * r, bd + i * bstride, ga + i * astride, p, r, q);
          }
        }
        if (bi.requires_grad()) {
          T* gb = detail::grad_of(bi).data();
          for (int64_t i = 0; i < nb; ++i) {
            detail::mm_tn_acc(ad + i * astride, g + i * p * r, gb + i * bstride, p, q, r);
          }
        }
      },
      "matmul");
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) {
    throw DimensionError(detail::msg("transpose_last2: need >=2 dims, got ", shape_str(s)));
  }
  const int64_t p = s[s.size() - 2];
  const int64_t q = s[s.size() - 1];
  const int64_t nb = a.numel() / (p * q);
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  auto ad = a.data();
  for (int64_t b = 0; b < nb; ++b) {
    const T* src = ad.data() + b * p * q;
    T* dst = out.data() + b * p * q;
    for (int64_t i = 0; i < p; ++i) {
      for (int64_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
    }
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [p, q, nb](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t b = 0; b < nb; ++b) {
          const T* src = g + b * p * q;
          T* dst = ga.data() + b * p * q;
          for (int64_t j = 0; j < q; ++j) {
            for (int64_t i = 0; i < p; ++i) dst[i * q + j] += src[j * p + i];
          }
        }
      },
      "transpose_last2");
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() < 1) {
    throw DimensionError(detail::msg("softmax_lastdim: empty last dimension in ", shape_str(s)));
  }
  const int64_t cols = s.back();
  const int64_t rows = a.numel() / cols;
  std::vector<T> out(static_cast<size_t>(a.numel()));
  auto ad = a.data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* x = ad.data() + i * cols;
    T* y = out.data() + i * cols;
    T mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T sum{0};
    for (int64_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int64_t j = 0; j < cols; ++j) y[j] /= sum;
  }
  return make_op<T>(
      a.shape(), std::move(out), {a},
      [rows, cols](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        const T* y = node.data.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < rows; ++i) {
          const T* gi = g + i * cols;
          const T* yi = y + i * cols;
          T dot{0};
          for (int64_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
          T* out = ga.data() + i * cols;
          for (int64_t j = 0; j < cols; ++j) out[j] += yi[j] * (gi[j] - dot);
        }
      },
      "softmax_lastdim");
}

// Mean over rows of -log softmax(logits)[target], computed with a stable
// log-sum-exp. logits must be [B x C].
template <typename T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits,
                                    const std::vector<int64_t>& targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2) {
    throw DimensionError(detail::msg("cross_entropy_from_logits: logits must be 2-D, got ",
                                     shape_str(s)));
  }
  const int64_t rows = s[0];
  const int64_t cols = s[1];
  if (static_cast<int64_t>(targets.size()) != rows) {
    throw ContractError(detail::msg("cross_entropy_from_logits: ", targets.size(),
                                    " targets for ", rows, " rows"));
  }
  for (int64_t t : targets) {
    if (t < 0 || t >= cols) {
      throw IndexError(detail::msg("target index ", t, " out of range for ", cols, " classes"));
    }
  }
  auto ld = logits.data();
  T loss{0};
  for (int64_t i = 0; i < rows; ++i) {
    const T* x = ld.data() + i * cols;
    T mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T sum{0};
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
    loss += (mx + std::log(sum)) - x[targets[static_cast<size_t>(i)]];
  }
  loss /= static_cast<T>(rows);
  auto targets_copy = targets;
  return make_op<T>(
      {}, std::vector<T>{loss}, {logits},
      [rows, cols, targets = std::move(targets_copy)](detail::TensorNode<T>& node) {
        const T g = node.grad[0] / static_cast<T>(rows);
        auto ld = node.inputs[0].data();
        auto gl = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < rows; ++i) {
          const T* x = ld.data() + i * cols;
          T* gi = gl.data() + i * cols;
          T mx = x[0];
          for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
          T sum{0};
          for (int64_t j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
          for (int64_t j = 0; j < cols; ++j) {
            T p = std::exp(x[j] - mx) / sum;
            gi[j] += g * (p - (j == targets[static_cast<size_t>(i)] ? T{1} : T{0}));
          }
        }
      },
      "cross_entropy_from_logits");
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T total{0};
  for (const T& v : a.data()) total += v;
  return make_op<T>(
      {}, std::vector<T>{total}, {a},
      [](detail::TensorNode<T>& node) {
        const T g = node.grad[0];
        auto ga = detail::grad_of(node.inputs[0]);
        for (T& v : ga) v += g;
      },
      "sum_all");
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

namespace detail {

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& a, int64_t axis, bool mean, const char* op) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw DimensionError(msg(op, ": axis ", axis, " out of range for ", shape_str(s)));
  }
  const int64_t extent = s[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i) {
    if (i != axis) out_shape.push_back(s[static_cast<size_t>(i)]);
  }
  const T denom = mean ? static_cast<T>(extent) : T{1};
  std::vector<T> out(static_cast<size_t>(outer * inner), T{0});
  auto ad = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t e = 0; e < extent; ++e) {
      const T* src = ad.data() + (o * extent + e) * inner;
      T* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (mean) {
    for (T& v : out) v /= denom;
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [outer, extent, inner, denom](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto ga = grad_of(node.inputs[0]);
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = g + o * inner;
          for (int64_t e = 0; e < extent; ++e) {
            T* dst = ga.data() + (o * extent + e) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] / denom;
          }
        }
      },
      op);
}

}  // namespace detail

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int64_t axis) {
  return detail::reduce_axis(a, axis, false, "sum_axis");
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int64_t axis) {
  return detail::reduce_axis(a, axis, true, "mean_axis");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (numel_of(new_shape) != a.numel()) {
    throw DimensionError(detail::msg("reshape: ", shape_str(a.shape()), " has ", a.numel(),
                                     " elements, target ", shape_str(new_shape), " has ",
                                     numel_of(new_shape)));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_op<T>(
      std::move(new_shape), std::move(out), {a},
      [](detail::TensorNode<T>& node) {
        auto ga = detail::grad_of(node.inputs[0]);
        const T* g = node.grad.data();
        for (size_t i = 0; i < node.grad.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

// Non-overlapping mean pooling along one axis; extent must divide evenly.
template <typename T>
Tensor<T> mean_pool_axis(const Tensor<T>& a, int64_t axis, int64_t stride) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw DimensionError(detail::msg("mean_pool_axis: axis ", axis, " out of range for ",
                                     shape_str(s)));
  }
  if (stride < 1 || s[static_cast<size_t>(axis)] % stride != 0) {
    throw ConfigError(detail::msg("mean_pool_axis: extent ", s[static_cast<size_t>(axis)],
                                  " not divisible by stride ", stride));
  }
  const int64_t extent = s[static_cast<size_t>(axis)];
  const int64_t pooled = extent / stride;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = pooled;
  std::vector<T> out(static_cast<size_t>(outer * pooled * inner), T{0});
  auto ad = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t pi = 0; pi < pooled; ++pi) {
      T* dst = out.data() + (o * pooled + pi) * inner;
      for (int64_t k = 0; k < stride; ++k) {
        const T* src = ad.data() + (o * extent + pi * stride + k) * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
      for (int64_t i = 0; i < inner; ++i) dst[i] /= static_cast<T>(stride);
    }
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [outer, pooled, inner, stride, extent](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t pi = 0; pi < pooled; ++pi) {
            const T* src = g + (o * pooled + pi) * inner;
            for (int64_t k = 0; k < stride; ++k) {
              T* dst = ga.data() + (o * extent + pi * stride + k) * inner;
              for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] / static_cast<T>(stride);
            }
          }
        }
      },
      "mean_pool_axis");
}

// ---------------------------------------------------------------------------
// Concatenation / slicing along the last dim, row gather, normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw DimensionError("concat_lastdim: inputs must have >=1 dim");
  int64_t total_last = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin(), s.end() - 1, first.begin(), first.end() - 1)) {
      throw DimensionError(detail::msg("concat_lastdim: shape ", shape_str(s),
                                       " incompatible with ", shape_str(first)));
    }
    total_last += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total_last;
  const int64_t rows = numel_of(first) / first.back();
  std::vector<T> out(static_cast<size_t>(rows * total_last));
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t cols = p.shape().back();
    offsets.push_back(off);
    auto pd = p.data();
    for (int64_t i = 0; i < rows; ++i) {
      std::copy_n(pd.data() + i * cols, cols, out.data() + i * total_last + off);
    }
    off += cols;
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), parts,
      [rows, total_last, offsets](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
          auto& in = node.inputs[pi];
          if (!in.requires_grad()) continue;
          const int64_t cols = in.shape().back();
          auto ga = detail::grad_of(in);
          for (int64_t i = 0; i < rows; ++i) {
            const T* src = g + i * total_last + offsets[pi];
            T* dst = ga.data() + i * cols;
            for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
          }
        }
      },
      "concat_lastdim");
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& a, int64_t start, int64_t len) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("slice_lastdim: input must have >=1 dim");
  const int64_t cols = s.back();
  if (start < 0 || len < 1 || start + len > cols) {
    throw DimensionError(detail::msg("slice_lastdim: range [", start, ", ", start + len,
                                     ") invalid for last dim ", cols));
  }
  const int64_t rows = a.numel() / cols;
  Shape out_shape = s;
  out_shape.back() = len;
  std::vector<T> out(static_cast<size_t>(rows * len));
  auto ad = a.data();
  for (int64_t i = 0; i < rows; ++i) {
    std::copy_n(ad.data() + i * cols + start, len, out.data() + i * len);
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [rows, cols, start, len](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < rows; ++i) {
          const T* src = g + i * len;
          T* dst = ga.data() + i * cols + start;
          for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
        }
      },
      "slice_lastdim");
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& indices) {
  const Shape& s = a.shape();
  if (s.size() < 2) {
    throw DimensionError(detail::msg("gather_rows: need >=2 dims, got ", shape_str(s)));
  }
  const int64_t rows = s[0];
  const int64_t cols = a.numel() / rows;
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= rows) {
      throw IndexError(detail::msg("gather_rows: index ", idx, " out of range for ", rows,
                                   " rows"));
    }
  }
  Shape out_shape = s;
  out_shape[0] = static_cast<int64_t>(indices.size());
  std::vector<T> out(static_cast<size_t>(cols) * indices.size());
  auto ad = a.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(ad.data() + indices[i] * cols, cols, out.data() + static_cast<int64_t>(i) * cols);
  }
  auto idx_copy = indices;
  return make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [cols, indices = std::move(idx_copy)](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (size_t i = 0; i < indices.size(); ++i) {
          const T* src = g + static_cast<int64_t>(i) * cols;
          T* dst = ga.data() + indices[i] * cols;
          for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

template <typename T>
Tensor<T> l2_normalize_lastdim(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() < 1) {
    throw DimensionError(detail::msg("l2_normalize_lastdim: bad shape ", shape_str(s)));
  }
  const int64_t cols = s.back();
  const int64_t rows = a.numel() / cols;
  std::vector<T> out(static_cast<size_t>(a.numel()));
  std::vector<T> norms(static_cast<size_t>(rows));
  auto ad = a.data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* x = ad.data() + i * cols;
    T sq{0};
    for (int64_t j = 0; j < cols; ++j) sq += x[j] * x[j];
    T norm = std::sqrt(sq);
    if (norm == T{0}) {
      throw NumericError("l2_normalize_lastdim: zero-norm row");
    }
    norms[static_cast<size_t>(i)] = norm;
    T* y = out.data() + i * cols;
    for (int64_t j = 0; j < cols; ++j) y[j] = x[j] / norm;
  }
  return make_op<T>(
      a.shape(), std::move(out), {a},
      [rows, cols, norms = std::move(norms)](detail::TensorNode<T>& node) {
        const T* g = node.grad.data();
        const T* y = node.data.data();
        auto ga = detail::grad_of(node.inputs[0]);
        for (int64_t i = 0; i < rows; ++i) {
          const T* gi = g + i * cols;
          const T* yi = y + i * cols;
          T dot{0};
          for (int64_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
          T* out = ga.data() + i * cols;
          const T norm = norms[static_cast<size_t>(i)];
          for (int64_t j = 0; j < cols; ++j) out[j] += (gi[j] - yi[j] * dot) / norm;
        }
      },
      "l2_normalize_lastdim");
}

// ---------------------------------------------------------------------------
// Parameters and SGD
// ---------------------------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

// Named parameter registry; names are checkpoint keys and must be unique.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) {
      throw ValidationError(detail::msg("duplicate parameter name '", name, "'"));
    }
    init.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, init});
    return init;
  }

  Tensor<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second].value;
  }

  const std::vector<Parameter<T>>& all() const { return params_; }
  std::vector<Parameter<T>>& all() { return params_; }
  size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& p : params_) {
      if (p.value.requires_grad()) p.value.zero_grad();
    }
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// p <- p - lr * (grad + weight_decay * p), then grads are zeroed.
// Frozen parameters (requires_grad == false) are skipped.
template <typename T>
void sgd_step(ParameterStore<T>& params, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw ContractError(detail::msg("sgd_step: lr must be positive, got ", lr));
  if (weight_decay < 0.0) {
    throw ContractError(detail::msg("sgd_step: weight_decay must be >= 0, got ", weight_decay));
  }
  for (auto& p : params.all()) {
    if (!p.value.requires_grad()) continue;
    if (!p.value.has_grad()) {
      throw ContractError(detail::msg("sgd_step: missing grad on parameter '", p.name, "'"));
    }
    auto* node = p.value.node();
    const T flr = static_cast<T>(lr);
    const T fwd = static_cast<T>(weight_decay);
    for (size_t i = 0; i < node->data.size(); ++i) {
      node->data[i] -= flr * (node->grad[i] + fwd * node->data[i]);
    }
    detail::ensure_finite<T>(node->data, "sgd_step");
    std::fill(node->grad.begin(), node->grad.end(), T{0});
  }
}

}  // namespace star
