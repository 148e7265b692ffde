#pragma once

// Dense n-d tensors with reverse-mode autodiff.
//
// A TensorT<T> is a cheap handle onto a shared node that owns the value
// buffer, the (lazily allocated) gradient buffer and, for non-leaf nodes,
// the recorded backward closure plus links to its parents. The set of
// nodes reachable from a loss tensor through parent links is the graph
// that backward() walks in reverse topological order.
//
// Every primitive validates shapes up front and checks its output for
// non-finite values; a NaN/Inf raises immediately instead of propagating.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace tpt {

template <class T>
class TensorT;

namespace detail {

template <class T>
struct NodeT {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<NodeT<T>>> parents;
  std::function<void(NodeT<T>&)> backward;

  std::size_t numel() const { return data.size(); }

  void accumulate(const T* g, std::size_t n) {
    if (grad.empty()) grad.assign(data.size(), T(0));
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
  T* grad_buf() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

// Thread-local switch so frozen-model inference can skip graph recording.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool is_grad_enabled() { return detail::grad_mode_flag(); }

/// RAII guard that disables graph recording in its scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Counter-based deterministic RNG: the stream is a pure function of
/// (seed, counter), so saving those two integers reproduces it exactly
/// on any platform, including mid-stream after a checkpoint resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Normal(0, stddev) resampled until within two standard deviations.
  double trunc_normal(double stddev) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return z * stddev;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void restore(std::uint64_t seed, std::uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

template <class T>
class TensorT {
 public:
  using Node = detail::NodeT<T>;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    std::size_t n = detail::shape_numel(shape);
    node->shape = std::move(shape);
    node->data.assign(n, value);
    node->requires_grad = requires_grad;
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape does not match data length");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

  static TensorT scalar(T value) { return from({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  T value() const {
    if (numel() != 1) throw std::runtime_error("tensor: value() on non-scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    if (node_->grad.empty())
      throw std::runtime_error("tensor: gradient not populated; run backward first");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Value-copy that is detached from the recorded graph.
  TensorT detach() const {
    TensorT t = from(node_->shape, node_->data);
    return t;
  }

  std::shared_ptr<Node> node() const { return node_; }

  friend bool same_storage(const TensorT& a, const TensorT& b) { return a.node_ == b.node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <class T>
void ensure_finite(const TensorT<T>& t, const char* op) {
  for (const T& v : t.data()) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) + ": produced a non-finite value");
  }
}

template <class T>
bool want_grad(const TensorT<T>& t) {
  return is_grad_enabled() && t.requires_grad();
}

template <class T>
TensorT<T> make_result(std::vector<int> shape, bool requires_grad) {
  return TensorT<T>::zeros(std::move(shape), requires_grad);
}

template <class T, class Fn>
void attach(TensorT<T>& out, std::vector<TensorT<T>> parents, Fn&& fn) {
  if (!out.requires_grad()) return;
  auto node = out.node();
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.node());
  node->backward = std::forward<Fn>(fn);
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <class T>
int last_dim(const TensorT<T>& t, const char* op) {
  if (t.ndim() < 1) throw std::invalid_argument(std::string(op) + ": rank-0 tensor");
  return t.dim(t.ndim() - 1);
}

}  // namespace detail

// ---- primitives ----

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: expects [m,k] x [k,n]");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = detail::make_result<T>({m, n}, detail::want_grad(a) || detail::want_grad(b));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      const T* brow = pb + kk * n;
      T* crow = pc + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  detail::ensure_finite(out, "matmul");
  detail::attach(out, {a, b}, [m, k, n](detail::NodeT<T>& o) {
    auto& pa_n = o.parents[0];
    auto& pb_n = o.parents[1];
    const T* g = o.grad.data();
    if (pa_n->requires_grad) {
      T* da = pa_n->grad_buf();
      const T* bp = pb_n->data.data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const T* grow = g + i * n;
          const T* brow = bp + kk * n;
          T acc = 0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          da[i * k + kk] += acc;
        }
    }
    if (pb_n->requires_grad) {
      T* db = pb_n->grad_buf();
      const T* ap = pa_n->data.data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const T av = ap[i * k + kk];
          const T* grow = g + i * n;
          T* drow = db + kk * n;
          for (int j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
    }
  });
  return out;
}

/// a [m,k] times b^T where b is [n,k]; avoids materializing transposes.
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: expects [m,k] x [n,k]");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto out = detail::make_result<T>({m, n}, detail::want_grad(a) || detail::want_grad(b));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const T* arow = pa + i * k;
      const T* brow = pb + j * k;
      T acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      pc[i * n + j] = acc;
    }
  detail::ensure_finite(out, "matmul_nt");
  detail::attach(out, {a, b}, [m, k, n](detail::NodeT<T>& o) {
    auto& pa_n = o.parents[0];
    auto& pb_n = o.parents[1];
    const T* g = o.grad.data();
    if (pa_n->requires_grad) {
      T* da = pa_n->grad_buf();
      const T* bp = pb_n->data.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const T gv = g[i * n + j];
          const T* brow = bp + j * k;
          T* drow = da + i * k;
          for (int kk = 0; kk < k; ++kk) drow[kk] += gv * brow[kk];
        }
    }
    if (pb_n->requires_grad) {
      T* db = pb_n->grad_buf();
      const T* ap = pa_n->data.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const T gv = g[i * n + j];
          const T* arow = ap + i * k;
          T* drow = db + j * k;
          for (int kk = 0; kk < k; ++kk) drow[kk] += gv * arow[kk];
        }
    }
  });
  return out;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_result<T>(a.shape(), detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::ensure_finite(out, "add");
  detail::attach(out, {a, b}, [](detail::NodeT<T>& o) {
    for (int p = 0; p < 2; ++p)
      if (o.parents[p]->requires_grad) o.parents[p]->accumulate(o.grad.data(), o.grad.size());
  });
  return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_result<T>(a.shape(), detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::ensure_finite(out, "sub");
  detail::attach(out, {a, b}, [](detail::NodeT<T>& o) {
    if (o.parents[0]->requires_grad) o.parents[0]->accumulate(o.grad.data(), o.grad.size());
    if (o.parents[1]->requires_grad) {
      T* g = o.parents[1]->grad_buf();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
  return out;
}

template <class T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "hadamard");
  auto out = detail::make_result<T>(a.shape(), detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::ensure_finite(out, "hadamard");
  detail::attach(out, {a, b}, [](detail::NodeT<T>& o) {
    auto& pa = o.parents[0];
    auto& pb = o.parents[1];
    const std::size_t n2 = o.grad.size();
    if (pa->requires_grad) {
      T* g = pa->grad_buf();
      for (std::size_t i = 0; i < n2; ++i) g[i] += o.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      T* g = pb->grad_buf();
      for (std::size_t i = 0; i < n2; ++i) g[i] += o.grad[i] * pa->data[i];
    }
  });
  return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  auto out = detail::make_result<T>(a.shape(), detail::want_grad(a));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  detail::ensure_finite(out, "scale");
  detail::attach(out, {a}, [c](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * c;
  });
  return out;
}

/// x [..., d] + bias [d], broadcast over leading axes.
template <class T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
  const int d = detail::last_dim(x, "add_bias");
  if (b.ndim() != 1 || b.dim(0) != d)
    throw std::invalid_argument("add_bias: bias must match last extent");
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x) || detail::want_grad(b));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j)
      out.data()[r * d + j] = x.data()[r * d + j] + b.data()[j];
  detail::ensure_finite(out, "add_bias");
  detail::attach(out, {x, b}, [d, rows](detail::NodeT<T>& o) {
    if (o.parents[0]->requires_grad) o.parents[0]->accumulate(o.grad.data(), o.grad.size());
    if (o.parents[1]->requires_grad) {
      T* g = o.parents[1]->grad_buf();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
    }
  });
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  detail::ensure_finite(out, "relu");
  detail::attach(out, {x}, [](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    const auto& xd = o.parents[0]->data;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (xd[i] > T(0)) g[i] += o.grad[i];
  });
  return out;
}

template <class T>
TensorT<T> concat_lastdim(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_lastdim: no inputs");
  std::vector<int> lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    std::vector<int> pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) throw std::invalid_argument("concat_lastdim: leading extents differ");
    total += p.dim(p.ndim() - 1);
    rg = rg || detail::want_grad(p);
  }
  std::vector<int> oshape = lead;
  oshape.push_back(total);
  auto out = detail::make_result<T>(oshape, rg);
  const std::size_t rows = out.numel() / static_cast<std::size_t>(total);
  std::vector<int> widths;
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(p.ndim() - 1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * w, w, out.data().data() + r * total + off);
    widths.push_back(w);
    off += w;
  }
  detail::attach(out, parts, [widths, total, rows](detail::NodeT<T>& o) {
    int pos = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const int w = widths[p];
      if (o.parents[p]->requires_grad) {
        T* g = o.parents[p]->grad_buf();
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < w; ++j) g[r * w + j] += o.grad[r * total + pos + j];
      }
      pos += w;
    }
  });
  return out;
}

template <class T>
TensorT<T> slice_lastdim(const TensorT<T>& x, int offset, int length) {
  const int d = detail::last_dim(x, "slice_lastdim");
  if (offset < 0 || length <= 0 || offset + length > d)
    throw std::invalid_argument("slice_lastdim: slice out of range");
  std::vector<int> oshape = x.shape();
  oshape.back() = length;
  auto out = detail::make_result<T>(oshape, detail::want_grad(x));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * d + offset, length, out.data().data() + r * length);
  detail::attach(out, {x}, [offset, length, d, rows](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < length; ++j) g[r * d + offset + j] += o.grad[r * length + j];
  });
  return out;
}

template <class T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding_lookup: table must be [vocab, d]");
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id list");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(v));
  auto out = detail::make_result<T>({static_cast<int>(ids.size()), d}, detail::want_grad(table));
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data().data() + r * d);
  detail::ensure_finite(out, "embedding_lookup");
  detail::attach(out, {table}, [ids, d](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (int j = 0; j < d; ++j)
        g[static_cast<std::size_t>(ids[r]) * d + j] += o.grad[r * d + j];
  });
  return out;
}

/// Inverted dropout: survivors are scaled by 1/(1-p) so eval needs no rescale.
/// In eval mode, or with p == 0, the input tensor is returned unchanged.
template <class T>
TensorT<T> dropout(const TensorT<T>& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x));
  const std::size_t n = out.numel();
  auto mask = std::make_shared<std::vector<T>>(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    out.data()[i] = x.data()[i] * (*mask)[i];
  }
  detail::ensure_finite(out, "dropout");
  detail::attach(out, {x}, [mask](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
  });
  return out;
}

/// Softmax over the last axis with optional exclusion mask (1 = keep,
/// 0 = exclude). Excluded entries get weight exactly zero and receive no
/// gradient; a fully excluded row is an error. Stabilized by
/// max-subtraction, so arbitrarily large finite scores are safe.
template <class T>
TensorT<T> masked_softmax_lastdim(const TensorT<T>& x, const TensorT<T>* mask) {
  const int d = detail::last_dim(x, "softmax");
  if (mask && mask->shape() != x.shape())
    throw std::invalid_argument("softmax: mask shape mismatch");
  detail::ensure_finite(x, "softmax(input)");
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  const T* mk = mask ? mask->data().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T* orow = out.data().data() + r * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < d; ++j)
      if (!mk || mk[r * d + j] != T(0)) mx = std::max(mx, xr[j]);
    if (!std::isfinite(mx)) throw std::runtime_error("softmax: fully masked row");
    T denom = 0;
    for (int j = 0; j < d; ++j) {
      if (!mk || mk[r * d + j] != T(0)) {
        orow[j] = std::exp(xr[j] - mx);
        denom += orow[j];
      } else {
        orow[j] = T(0);
      }
    }
    for (int j = 0; j < d; ++j) orow[j] /= denom;
  }
  detail::ensure_finite(out, "softmax");
  detail::attach(out, {x}, [d, rows, self = out.node()](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    const T* p = self->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* pr = p + r * d;
      const T* gr = o.grad.data() + r * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += gr[j] * pr[j];
      for (int j = 0; j < d; ++j) g[r * d + j] += pr[j] * (gr[j] - dot);
    }
  });
  return out;
}

template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
  return masked_softmax_lastdim<T>(x, nullptr);
}

/// Log-softmax over the last axis (used by decoding scores and the loss).
template <class T>
TensorT<T> log_softmax_lastdim(const TensorT<T>& x) {
  const int d = detail::last_dim(x, "log_softmax");
  detail::ensure_finite(x, "log_softmax(input)");
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T* orow = out.data().data() + r * d;
    T mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    T denom = 0;
    for (int j = 0; j < d; ++j) denom += std::exp(xr[j] - mx);
    const T lse = mx + std::log(denom);
    for (int j = 0; j < d; ++j) orow[j] = xr[j] - lse;
  }
  detail::attach(out, {x}, [d, rows, self = out.node()](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    const T* lp = self->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = o.grad.data() + r * d;
      T gsum = 0;
      for (int j = 0; j < d; ++j) gsum += gr[j];
      for (int j = 0; j < d; ++j) g[r * d + j] += gr[j] - std::exp(lp[r * d + j]) * gsum;
    }
  });
  return out;
}

/// Layer normalization over the last axis, then elementwise affine.
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias, T eps) {
  const int d = detail::last_dim(x, "layer_norm");
  if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw std::invalid_argument("layer_norm: gain/bias must match last extent");
  auto out = detail::make_result<T>(
      x.shape(), detail::want_grad(x) || detail::want_grad(gain) || detail::want_grad(bias));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    for (int j = 0; j < d; ++j) {
      const T xh = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = xh;
      out.data()[r * d + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  detail::ensure_finite(out, "layer_norm");
  detail::attach(out, {x, gain, bias}, [d, rows, xhat, inv_sigma](detail::NodeT<T>& o) {
    auto& px = o.parents[0];
    auto& pg = o.parents[1];
    auto& pb = o.parents[2];
    if (pg->requires_grad) {
      T* gg = pg->grad_buf();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gg[j] += o.grad[r * d + j] * (*xhat)[r * d + j];
    }
    if (pb->requires_grad) {
      T* gb = pb->grad_buf();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gb[j] += o.grad[r * d + j];
    }
    if (px->requires_grad) {
      T* gx = px->grad_buf();
      const T* gainv = pg->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = o.grad.data() + r * d;
        const T* xh = xhat->data() + r * d;
        T sum_d = 0, sum_dx = 0;
        for (int j = 0; j < d; ++j) {
          const T dj = gr[j] * gainv[j];
          sum_d += dj;
          sum_dx += dj * xh[j];
        }
        const T is = (*inv_sigma)[r];
        for (int j = 0; j < d; ++j) {
          const T dj = gr[j] * gainv[j];
          gx[r * d + j] += is * (dj - sum_d / d - xh[j] * sum_dx / d);
        }
      }
    }
  });
  return out;
}

/// Rows scaled to unit L2 norm; eps joins the denominator so a zero row
/// maps to zero instead of dividing by zero.
template <class T>
TensorT<T> l2_normalize_rows(const TensorT<T>& x, T eps) {
  const int d = detail::last_dim(x, "l2_normalize_rows");
  auto out = detail::make_result<T>(x.shape(), detail::want_grad(x));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  auto norms = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T s = 0;
    for (int j = 0; j < d; ++j) s += xr[j] * xr[j];
    s = std::sqrt(s);
    (*norms)[r] = s;
    const T denom = s + eps;
    for (int j = 0; j < d; ++j) out.data()[r * d + j] = xr[j] / denom;
  }
  detail::ensure_finite(out, "l2_normalize_rows");
  detail::attach(out, {x}, [d, rows, norms, eps](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    const auto& xd = o.parents[0]->data;
    for (std::size_t r = 0; r < rows; ++r) {
      const T s = (*norms)[r];
      const T denom = s + eps;
      const T* gr = o.grad.data() + r * d;
      const T* xr = xd.data() + r * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += gr[j] * xr[j];
      for (int j = 0; j < d; ++j) {
        T v = gr[j] / denom;
        if (s > T(0)) v -= dot * xr[j] / (denom * denom * s);
        g[r * d + j] += v;
      }
    }
  });
  return out;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
  auto out = detail::make_result<T>({1}, detail::want_grad(x));
  T acc = 0;
  for (const T& v : x.data()) acc += v;
  out.data()[0] = acc;
  detail::ensure_finite(out, "sum");
  detail::attach(out, {x}, [](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    for (std::size_t i = 0; i < o.parents[0]->data.size(); ++i) g[i] += o.grad[0];
  });
  return out;
}

/// Mean token-level cross entropy between rows of `logits` and `targets`,
/// with optional uniform label smoothing. The fused backward is the
/// classic softmax-minus-target times upstream over row count.
template <class T>
TensorT<T> cross_entropy_mean(const TensorT<T>& logits, const std::vector<int>& targets,
                              double label_smoothing = 0.0) {
  if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be [n, vocab]");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  if (label_smoothing < 0.0 || label_smoothing > 0.3)
    throw std::invalid_argument("cross_entropy: label smoothing outside [0, 0.3]");
  for (int t : targets)
    if (t < 0 || t >= v) throw std::out_of_range("cross_entropy: target id out of range");
  detail::ensure_finite(logits, "cross_entropy(input)");
  const T eps = static_cast<T>(label_smoothing);
  auto out = detail::make_result<T>({1}, detail::want_grad(logits));
  auto logp = std::make_shared<std::vector<T>>(logits.numel());
  T total = 0;
  for (int r = 0; r < n; ++r) {
    const T* xr = logits.data().data() + static_cast<std::size_t>(r) * v;
    T mx = xr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
    T denom = 0;
    for (int j = 0; j < v; ++j) denom += std::exp(xr[j] - mx);
    const T lse = mx + std::log(denom);
    T row_loss = 0;
    for (int j = 0; j < v; ++j) {
      const T lp = xr[j] - lse;
      (*logp)[static_cast<std::size_t>(r) * v + j] = lp;
      if (eps > T(0)) row_loss -= (eps / v) * lp;
    }
    row_loss -= (T(1) - eps) * (*logp)[static_cast<std::size_t>(r) * v + targets[r]];
    total += row_loss;
  }
  out.data()[0] = total / n;
  detail::ensure_finite(out, "cross_entropy");
  detail::attach(out, {logits}, [n, v, eps, logp, targets](detail::NodeT<T>& o) {
    if (!o.parents[0]->requires_grad) return;
    T* g = o.parents[0]->grad_buf();
    const T up = o.grad[0] / n;
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < v; ++j) {
        const T p = std::exp((*logp)[static_cast<std::size_t>(r) * v + j]);
        const T q = (j == targets[r] ? T(1) - eps : T(0)) + eps / v;
        g[static_cast<std::size_t>(r) * v + j] += up * (p - q);
      }
  });
  return out;
}

// ---- backward ----

/// Reverse-mode sweep from a scalar loss. Visits each recorded node once
/// in reverse topological order and accumulates into leaf gradients
/// (pre-existing leaf gradients are kept, enabling gradient accumulation).
/// Running backward twice through the same graph is an error.
template <class T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  auto root = loss.node();
  if (!root->requires_grad)
    throw std::runtime_error("backward: loss does not require grad (detached graph?)");
  if (root->backward_done) throw std::runtime_error("backward: already run on this graph");

  using Node = detail::NodeT<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // Postorder lists parents before children; reverse it for the sweep.
  root->grad_buf()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->backward(*node);
      node->backward_done = true;
    }
  }
  for (Node* node : order) {
    for (const T& v : node->grad)
      if (!std::isfinite(v)) throw std::runtime_error("backward: non-finite gradient");
  }
}

// ---- gradient checking ----

/// Max relative error between analytic and central-difference gradients of
/// a scalar-valued function at x. Meant to run on double tensors.
template <class T, class F>
T grad_check(F f, TensorT<T>& x, T h) {
  x.set_requires_grad(true);
  x.zero_grad();
  TensorT<T> loss = f(x);
  backward(loss);
  std::vector<T> analytic = x.grad();
  std::vector<T> numeric(analytic.size());
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const T saved = x.data()[i];
      x.data()[i] = saved + h;
      const T up = f(x).value();
      x.data()[i] = saved - h;
      const T down = f(x).value();
      x.data()[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
  }
  T worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const T denom = std::max(T(1e-8), std::fabs(analytic[i]) + std::fabs(numeric[i]));
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  x.zero_grad();
  return worst;
}

}  // namespace tpt
