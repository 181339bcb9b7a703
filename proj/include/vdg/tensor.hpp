#pragma once

// Dense float tensors with reverse-mode gradients. The op set is exactly what
// the encoder, heads and losses need; everything is templated on the scalar
// type so gradient checks can rerun a graph in double precision.

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vdg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateBatchError : ContractError {
  using ContractError::ContractError;
};

using Shape = std::vector<int>;

inline long numel_of(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Global toggle for the NaN/Inf scan that runs after each forward/backward op.
inline bool& finite_checks() {
  static bool on = true;
  return on;
}

namespace detail {

// NaN/Inf have an all-ones exponent; the integer form vectorizes
inline bool all_finite(const float* p, size_t n) {
  uint32_t bad = 0;
  for (size_t i = 0; i < n; ++i) {
    uint32_t b;
    std::memcpy(&b, p + i, 4);
    bad |= static_cast<uint32_t>((b & 0x7f800000u) == 0x7f800000u);
  }
  return bad == 0;
}

inline bool all_finite(const double* p, size_t n) {
  uint64_t bad = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t b;
    std::memcpy(&b, p + i, 8);
    bad |= static_cast<uint64_t>((b & 0x7ff0000000000000ull) == 0x7ff0000000000000ull);
  }
  return bad == 0;
}

}  // namespace detail

template <class T>
void check_finite(const std::vector<T>& v, const char* what) {
  if (!finite_checks()) return;
  if (!detail::all_finite(v.data(), v.size()))
    throw NumericError(std::string("non-finite value in ") + what);
}

namespace detail {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;        // lazily allocated
  bool requires_grad = false; // leaf the caller wants a gradient for
  bool needs_grad = false;    // some ancestor leaf requires a gradient
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <class T>
class TensorT {
  using Node = detail::Node<T>;

 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(numel_of(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT from(Shape shape, std::vector<T> data,
                      bool requires_grad = false) {
    if (numel_of(shape) != static_cast<long>(data.size()))
      throw ConfigError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  long numel() const { return static_cast<long>(node_->value.size()); }

  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return node_->value[0];
  }

  // Reverse pass from a scalar root. Touches only the subgraph that can reach
  // a requires_grad leaf.
  void backward() const {
    if (numel() != 1) throw ContractError("backward() requires a scalar root");
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    auto participates = [](Node* n) { return n->needs_grad || n->requires_grad; };
    if (!participates(node_.get())) return;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (participates(p) && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      if (!n->backward) continue;
      for (auto& p : n->parents) p->ensure_grad();
      n->backward(*n);
    }
    // a non-finite intermediate that matters reaches a leaf gradient; scan
    // those rather than every activation-sized buffer in the graph
    if (finite_checks())
      for (Node* n : topo)
        if (n->requires_grad) check_finite(n->grad, "backward");
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <class T>
TensorT<T> make_op(Shape shape, std::vector<T> value,
                   std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> backward, const char* opname) {
  check_finite(value, opname);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (auto& p : parents) needs = needs || p->requires_grad || p->needs_grad;
  if (needs) {
    n->needs_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return TensorT<T>(std::move(n));
}

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                        const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
          ga[i] += self.grad[i];
          gb[i] += self.grad[i];
        }
      },
      "add");
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        auto& gb = self.parents[1]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
          ga[i] += self.grad[i];
          gb[i] -= self.grad[i];
        }
      },
      "sub");
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node(), b.node()},
      [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (size_t i = 0; i < self.grad.size(); ++i) {
          pa.grad[i] += self.grad[i] * pb.value[i];
          pb.grad[i] += self.grad[i] * pa.value[i];
        }
      },
      "mul");
}

// scale * a + offset, elementwise with scalar coefficients
template <class T>
TensorT<T> affine(const TensorT<T>& a, T scale, T offset) {
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = scale * av[i] + offset;
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node()},
      [scale](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i)
          ga[i] += scale * self.grad[i];
      },
      "affine");
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node()},
      [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        // subgradient at 0 is 0
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (pa.value[i] > T(0)) pa.grad[i] += self.grad[i];
      },
      "relu");
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-av[i]));
  std::vector<T> saved = out;
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node()},
      [saved = std::move(saved)](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i)
          ga[i] += self.grad[i] * saved[i] * (T(1) - saved[i]);
      },
      "sigmoid");
}

template <class T>
TensorT<T> sqrt_elem(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(av[i]);
  std::vector<T> saved = out;
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node()},
      [saved = std::move(saved)](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i)
          ga[i] += self.grad[i] * T(0.5) / saved[i];
      },
      "sqrt");
}

// ---------------------------------------------------------------------------
// reductions and 2-d linear algebra
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
  T s = std::accumulate(a.value().begin(), a.value().end(), T(0));
  return detail::make_op<T>(
      {1}, {s}, {a.node()},
      [](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        T g = self.grad[0];
        for (auto& x : ga) x += g;
      },
      "sum");
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
  T inv = T(1) / static_cast<T>(a.numel());
  T s = std::accumulate(a.value().begin(), a.value().end(), T(0)) * inv;
  return detail::make_op<T>(
      {1}, {s}, {a.node()},
      [inv](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        T g = self.grad[0] * inv;
        for (auto& x : ga) x += g;
      },
      "mean");
}

// [n,d] -> [d], per-column totals
template <class T>
TensorT<T> column_sums(const TensorT<T>& a) {
  if (a.rank() != 2) throw ConfigError("column_sums expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  std::vector<T> out(static_cast<size_t>(d), T(0));
  const auto& av = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += av[static_cast<size_t>(i) * d + j];
  return detail::make_op<T>(
      {d}, std::move(out), {a.node()},
      [n, d](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            ga[static_cast<size_t>(i) * d + j] += self.grad[static_cast<size_t>(j)];
      },
      "column_sums");
}

// [n,d] -> [n,d], subtract the per-column mean
template <class T>
TensorT<T> center_columns(const TensorT<T>& a) {
  if (a.rank() != 2) throw ConfigError("center_columns expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  if (n < 1) throw ContractError("center_columns on empty batch");
  std::vector<T> mean_col(static_cast<size_t>(d), T(0));
  const auto& av = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean_col[static_cast<size_t>(j)] += av[static_cast<size_t>(i) * d + j];
  T inv = T(1) / static_cast<T>(n);
  for (auto& m : mean_col) m *= inv;
  std::vector<T> out(a.numel());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(i) * d + j] = av[static_cast<size_t>(i) * d + j] - mean_col[static_cast<size_t>(j)];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a.node()},
      [n, d, inv](detail::Node<T>& self) {
        // d/dA of (A - colmean(A)) applied to g: g - colmean(g)
        std::vector<T> gm(static_cast<size_t>(d), T(0));
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gm[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * d + j];
        for (auto& m : gm) m *= inv;
        auto& ga = self.parents[0]->grad;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            ga[static_cast<size_t>(i) * d + j] += self.grad[static_cast<size_t>(i) * d + j] - gm[static_cast<size_t>(j)];
      },
      "center_columns");
}

template <class T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.rank() != 2) throw ConfigError("transpose2d expects a matrix");
  int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  const auto& av = a.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  return detail::make_op<T>(
      {n, m}, std::move(out), {a.node()},
      [m, n](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            ga[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
      },
      "transpose2d");
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ConfigError("matmul: incompatible shapes " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  detail::gemm(false, false, m, n, k, T(1), a.value().data(), k,
               b.value().data(), n, T(0), out.data(), n);
  return detail::make_op<T>(
      {m, n}, std::move(out), {a.node(), b.node()},
      [m, k, n](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        // dA += g B^T ; dB += A^T g
        detail::gemm(false, true, m, k, n, T(1), self.grad.data(), n,
                     pb.value.data(), n, T(1), pa.grad.data(), k);
        detail::gemm(true, false, k, n, m, T(1), pa.value.data(), k,
                     self.grad.data(), n, T(1), pb.grad.data(), n);
      },
      "matmul");
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ConfigError("reshape: element count mismatch");
  std::vector<T> out(a.value());
  return detail::make_op<T>(
      std::move(shape), std::move(out), {a.node()},
      [](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
      },
      "reshape");
}

// y = x W^T + b with x:[n,in], W:[out,in], b:[out] (b optional)
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& b = TensorT<T>()) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ConfigError("linear: shape mismatch " + shape_str(x.shape()) +
                      " with weight " + shape_str(w.shape()));
  int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim))
    throw ConfigError("linear: bias shape mismatch");
  std::vector<T> out(static_cast<size_t>(n) * out_dim, T(0));
  detail::gemm(false, true, n, out_dim, in, T(1), x.value().data(), in,
               w.value().data(), in, T(0), out.data(), out_dim);
  if (has_bias) {
    const auto& bv = b.value();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim; ++j) out[static_cast<size_t>(i) * out_dim + j] += bv[static_cast<size_t>(j)];
  }
  std::vector<std::shared_ptr<detail::Node<T>>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return detail::make_op<T>(
      {n, out_dim}, std::move(out), std::move(parents),
      [n, in, out_dim, has_bias](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        bool x_needs = px.requires_grad || px.needs_grad;
        if (x_needs)
          detail::gemm(false, false, n, in, out_dim, T(1), self.grad.data(),
                       out_dim, pw.value.data(), in, T(1), px.grad.data(), in);
        detail::gemm(true, false, out_dim, in, n, T(1), self.grad.data(),
                     out_dim, px.value.data(), in, T(1), pw.grad.data(), in);
        if (has_bias) {
          auto& gb = self.parents[2]->grad;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j)
              gb[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * out_dim + j];
        }
      },
      "linear");
}

// ---------------------------------------------------------------------------
// gating and classification helpers
// ---------------------------------------------------------------------------

// Forward emits the binary mask 1[soft > threshold]; backward passes gradients
// through unchanged, i.e. the straight-through estimator.
template <class T>
TensorT<T> straight_through_threshold(const TensorT<T>& soft, T threshold) {
  std::vector<T> out(soft.numel());
  const auto& sv = soft.value();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = sv[i] > threshold ? T(1) : T(0);
  return detail::make_op<T>(
      soft.shape(), std::move(out), {soft.node()},
      [](detail::Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
      },
      "straight_through_threshold");
}

// mean cross entropy of softmax(logits) against integer labels
template <class T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits,
                                 const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ConfigError("softmax_cross_entropy expects [n,k] logits");
  int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ConfigError("softmax_cross_entropy: label count mismatch");
  const auto& lv = logits.value();
  std::vector<T> probs(static_cast<size_t>(n) * k);
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
      throw ConfigError("softmax_cross_entropy: label out of range");
    const T* row = lv.data() + static_cast<size_t>(i) * k;
    T mx = *std::max_element(row, row + k);
    T denom = T(0);
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    T log_denom = std::log(denom) + mx;
    for (int j = 0; j < k; ++j)
      probs[static_cast<size_t>(i) * k + j] = std::exp(row[j] - log_denom);
    loss += log_denom - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<T>(n);
  return detail::make_op<T>(
      {1}, {loss}, {logits.node()},
      [n, k, labels, probs = std::move(probs)](detail::Node<T>& self) {
        auto& gl = self.parents[0]->grad;
        T g = self.grad[0] / static_cast<T>(n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < k; ++j) {
            T p = probs[static_cast<size_t>(i) * k + j];
            T target = (j == labels[static_cast<size_t>(i)]) ? T(1) : T(0);
            gl[static_cast<size_t>(i) * k + j] += g * (p - target);
          }
      },
      "softmax_cross_entropy");
}

}  // namespace vdg
