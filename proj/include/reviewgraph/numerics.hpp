#pragma once

// Minimal dense fp64 tensor with tape-based reverse-mode gradients.
//
// Every op records its parents and a closure that pushes the output gradient
// back into them. Gradients accumulate additively, so a leaf used several
// times (or across several backward passes) sums all contributions until
// zero_grad() is called.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "reviewgraph/error.hpp"

namespace rvg::num {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size())
      throw Error(ErrorKind::ShapeMismatch, "shape " + shape_str(shape) + " holds " +
                                                std::to_string(numel_of(shape)) + " values, got " +
                                                std::to_string(values.size()));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from({1, n}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->value.size(); }
  /// Rank-1 tensors act as a single row; scalars as 1x1.
  std::size_t rows() const { return rank() == 2 ? impl_->shape[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? impl_->shape[1] : (rank() == 1 ? impl_->shape[0] : 1);
  }

  std::span<const double> data() const { return impl_->value; }
  /// Writable view; meant for leaves (parameter updates, finite differences).
  std::span<double> mutable_data() { return impl_->value; }
  double operator[](std::size_t i) const { return impl_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->value[r * cols() + c]; }
  double item() const {
    if (numel() != 1) throw Error(ErrorKind::ShapeMismatch, "item() on " + shape_str(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; all zeros when nothing has been accumulated.
  std::vector<double> grad() const {
    return impl_->grad.empty() ? std::vector<double>(numel(), 0.0) : impl_->grad;
  }
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Same values, no history, no gradient tracking.
  Tensor detach() const { return from(shape(), impl_->value, false); }
  Tensor clone_leaf() const { return from(shape(), impl_->value, requires_grad()); }

  /// Reverse pass from a single-element tensor.
  void backward() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

inline void Tensor::backward() const {
  if (numel() != 1)
    throw Error(ErrorKind::ShapeMismatch, "backward() needs a scalar, got " + shape_str(shape()));
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<std::shared_ptr<TensorImpl>> parents,
                          std::function<void(TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  const bool track = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (track) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward);
  }
  return Tensor(std::move(impl));
}

inline void check(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok)
    throw Error(ErrorKind::ShapeMismatch,
                op + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Listed building blocks

/// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::check(b.rows() == k, "matmul", a, b);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto ai = a.handle(), bi = b.handle();
  return detail::make_result({m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](TensorImpl& o) {
    const double* G = o.grad.data();
    if (ai->requires_grad) {
      auto& ga = ai->grad_buffer();
      const double* Bv = bi->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (bi->requires_grad) {
      auto& gb = bi->grad_buffer();
      const double* Av = ai->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Av[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check(a.shape() == b.shape(), "add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.handle(), bi = b.handle();
  return detail::make_result(a.shape(), std::move(out), {ai, bi}, [ai, bi](TensorImpl& o) {
    for (auto* p : {ai.get(), bi.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

/// Adds a bias row to every row of x.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t m = x.rows(), n = x.cols();
  detail::check(bias.numel() == n, "add_bias", x, bias);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  auto xi = x.handle(), bi = bias.handle();
  return detail::make_result(x.shape(), std::move(out), {xi, bi}, [xi, bi, m, n](TensorImpl& o) {
    if (xi->requires_grad) {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 || std::isnan(x[i]) ? x[i] : 0.0;
  auto xi = x.handle();
  return detail::make_result(x.shape(), std::move(out), {xi}, [xi](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->value[i] > 0.0) g[i] += o.grad[i];
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  auto xi = x.handle();
  return detail::make_result(x.shape(), std::move(out), {xi}, [xi, c](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
  });
}

/// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns).
inline Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw Error(ErrorKind::EmptyVector, "concat of nothing");
  if (axis != 0 && axis != 1) throw Error(ErrorKind::ShapeMismatch, "concat axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& x : xs) {
    if (axis == 0) {
      detail::check(x.cols() == xs[0].cols(), "concat", xs[0], x);
      rows += x.rows();
    } else {
      detail::check(x.rows() == xs[0].rows(), "concat", xs[0], x);
      cols += x.cols();
    }
  }
  if (axis == 0) cols = xs[0].cols();
  else rows = xs[0].rows();

  std::vector<double> out(rows * cols);
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::vector<std::size_t> offsets;  // row offset (axis 0) or column offset (axis 1)
  std::size_t off = 0;
  for (const auto& x : xs) {
    parents.push_back(x.handle());
    offsets.push_back(off);
    const std::size_t xr = x.rows(), xc = x.cols();
    for (std::size_t i = 0; i < xr; ++i)
      for (std::size_t j = 0; j < xc; ++j) {
        const std::size_t r = axis == 0 ? off + i : i;
        const std::size_t c = axis == 0 ? j : off + j;
        out[r * cols + c] = x.at(i, j);
      }
    off += axis == 0 ? xr : xc;
  }
  auto ps = parents;
  return detail::make_result({rows, cols}, std::move(out), std::move(parents),
                             [ps, offsets, axis, cols](TensorImpl& o) {
                               for (std::size_t k = 0; k < ps.size(); ++k) {
                                 TensorImpl* p = ps[k].get();
                                 if (!p->requires_grad) continue;
                                 const std::size_t pc = p->shape.size() == 2 ? p->shape[1]
                                                        : p->shape.empty() ? 1 : p->shape[0];
                                 const std::size_t pr = p->value.size() / pc;
                                 auto& g = p->grad_buffer();
                                 for (std::size_t i = 0; i < pr; ++i)
                                   for (std::size_t j = 0; j < pc; ++j) {
                                     const std::size_t r = axis == 0 ? offsets[k] + i : i;
                                     const std::size_t c = axis == 0 ? j : offsets[k] + j;
                                     g[i * pc + j] += o.grad[r * cols + c];
                                   }
                               }
                             });
}

/// Column means: [m x n] -> [1 x n].
inline Tensor mean_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw Error(ErrorKind::EmptyVector, "mean_rows of zero rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.at(i, j);
  for (auto& v : out) v /= static_cast<double>(m);
  auto xi = x.handle();
  return detail::make_result({1, n}, std::move(out), {xi}, [xi, m, n](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j] * inv;
  });
}

/// Numerically stable softmax over all entries (max subtracted first).
inline Tensor softmax(const Tensor& v) {
  if (v.numel() == 0) throw Error(ErrorKind::EmptyVector, "softmax of an empty vector");
  const double mx = *std::max_element(v.data().begin(), v.data().end());
  std::vector<double> out(v.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) sum += out[i] = std::exp(v[i] - mx);
  for (auto& y : out) y /= sum;
  auto vi = v.handle();
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::make_result(v.shape(), std::move(out), {vi}, [vi, y](TensorImpl& o) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y->size(); ++i) dot += o.grad[i] * (*y)[i];
    auto& g = vi->grad_buffer();
    for (std::size_t i = 0; i < y->size(); ++i) g[i] += (*y)[i] * (o.grad[i] - dot);
  });
}

inline constexpr double kProbFloor = 1e-12;

/// -log(probs[label]) with the probability clamped to at least 1e-12.
inline Tensor cross_entropy(const Tensor& probs, std::size_t label) {
  if (label >= probs.numel())
    throw Error(ErrorKind::BadLabel, "label " + std::to_string(label) + " for " +
                                         std::to_string(probs.numel()) + " classes");
  const double p = probs[label];
  const bool clamped = p < kProbFloor;
  const double loss = -std::log(clamped ? kProbFloor : p);
  auto pi = probs.handle();
  return detail::make_result({}, {loss}, {pi}, [pi, label, p, clamped](TensorImpl& o) {
    if (clamped) return;
    pi->grad_buffer()[label] += -o.grad[0] / p;
  });
}

// ---------------------------------------------------------------------------
// Graph plumbing ops

inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t n = x.cols();
  std::vector<double> out(idx.size() * n);
  for (std::size_t e = 0; e < idx.size(); ++e) {
    if (idx[e] >= x.rows())
      throw Error(ErrorKind::ShapeMismatch, "gather_rows index " + std::to_string(idx[e]) +
                                                " out of " + std::to_string(x.rows()));
    std::copy_n(x.data().data() + idx[e] * n, n, out.data() + e * n);
  }
  auto xi = x.handle();
  return detail::make_result({idx.size(), n}, std::move(out), {xi}, [xi, idx, n](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) g[idx[e] * n + j] += o.grad[e * n + j];
  });
}

/// out[idx[e]] += x[e]; rows are summed in increasing e.
inline Tensor index_add_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                             std::size_t n_rows) {
  const std::size_t n = x.cols();
  if (idx.size() != x.rows())
    throw Error(ErrorKind::ShapeMismatch, "index_add_rows: " + std::to_string(idx.size()) +
                                              " indices for " + shape_str(x.shape()));
  std::vector<double> out(n_rows * n, 0.0);
  for (std::size_t e = 0; e < idx.size(); ++e) {
    if (idx[e] >= n_rows) throw Error(ErrorKind::ShapeMismatch, "index_add_rows index out of range");
    for (std::size_t j = 0; j < n; ++j) out[idx[e] * n + j] += x.at(e, j);
  }
  auto xi = x.handle();
  return detail::make_result({n_rows, n}, std::move(out), {xi}, [xi, idx, n](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) g[e * n + j] += o.grad[idx[e] * n + j];
  });
}

/// Places the rows of each part at the given row positions of an
/// [n_rows x cols] result; rows not covered stay zero.
inline Tensor scatter_rows(const std::vector<Tensor>& parts,
                           const std::vector<std::vector<std::size_t>>& positions,
                           std::size_t n_rows, std::size_t cols) {
  if (parts.size() != positions.size())
    throw Error(ErrorKind::ShapeMismatch, "scatter_rows: parts/positions size mismatch");
  std::vector<double> out(n_rows * cols, 0.0);
  std::vector<std::shared_ptr<TensorImpl>> parents;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& p = parts[k];
    if (p.rows() != positions[k].size() || p.cols() != cols)
      throw Error(ErrorKind::ShapeMismatch, "scatter_rows part " + shape_str(p.shape()));
    for (std::size_t r = 0; r < positions[k].size(); ++r) {
      if (positions[k][r] >= n_rows) throw Error(ErrorKind::ShapeMismatch, "scatter_rows position");
      for (std::size_t j = 0; j < cols; ++j) out[positions[k][r] * cols + j] += p.at(r, j);
    }
    parents.push_back(p.handle());
  }
  auto ps = parents;
  return detail::make_result({n_rows, cols}, std::move(out), std::move(parents),
                             [ps, positions, cols](TensorImpl& o) {
                               for (std::size_t k = 0; k < ps.size(); ++k) {
                                 if (!ps[k]->requires_grad) continue;
                                 auto& g = ps[k]->grad_buffer();
                                 for (std::size_t r = 0; r < positions[k].size(); ++r)
                                   for (std::size_t j = 0; j < cols; ++j)
                                     g[r * cols + j] += o.grad[positions[k][r] * cols + j];
                               }
                             });
}

/// Row-wise dot products: [E x k], [E x k] -> [E x 1].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "row_dot", a, b);
  const std::size_t m = a.rows(), k = a.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += a.at(i, j) * b.at(i, j);
  auto ai = a.handle(), bi = b.handle();
  return detail::make_result({m, 1}, std::move(out), {ai, bi}, [ai, bi, m, k](TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) g[i * k + j] += o.grad[i] * bi->value[i * k + j];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) g[i * k + j] += o.grad[i] * ai->value[i * k + j];
    }
  });
}

/// x multiplied by the single entry s[index] (a learnable scalar).
inline Tensor mul_entry(const Tensor& x, const Tensor& s, std::size_t index) {
  if (index >= s.numel()) throw Error(ErrorKind::ShapeMismatch, "mul_entry index out of range");
  const double c = s[index];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  auto xi = x.handle(), si = s.handle();
  return detail::make_result(x.shape(), std::move(out), {xi, si}, [xi, si, index, c](TensorImpl& o) {
    if (xi->requires_grad) {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
    }
    if (si->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * xi->value[i];
      si->grad_buffer()[index] += acc;
    }
  });
}

/// out[e][:] = x[e][:] * w[e]
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
  const std::size_t m = x.rows(), n = x.cols();
  detail::check(w.numel() == m, "scale_rows", x, w);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.at(i, j) * w[i];
  auto xi = x.handle(), wi = w.handle();
  return detail::make_result(x.shape(), std::move(out), {xi, wi}, [xi, wi, m, n](TensorImpl& o) {
    if (xi->requires_grad) {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[i * n + j] * wi->value[i];
    }
    if (wi->requires_grad) {
      auto& g = wi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * xi->value[i * n + j];
        g[i] += acc;
      }
    }
  });
}

/// Softmax of scores within each segment (entries sharing a segment id).
inline Tensor segment_softmax(const Tensor& scores, const std::vector<std::size_t>& segment,
                              std::size_t n_segments) {
  const std::size_t m = scores.numel();
  if (segment.size() != m)
    throw Error(ErrorKind::ShapeMismatch, "segment_softmax: segment ids do not match scores");
  std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < m; ++e) {
    if (segment[e] >= n_segments) throw Error(ErrorKind::ShapeMismatch, "segment id out of range");
    mx[segment[e]] = std::max(mx[segment[e]], scores[e]);
  }
  std::vector<double> out(m), sum(n_segments, 0.0);
  for (std::size_t e = 0; e < m; ++e) sum[segment[e]] += out[e] = std::exp(scores[e] - mx[segment[e]]);
  for (std::size_t e = 0; e < m; ++e) out[e] /= sum[segment[e]];
  auto si = scores.handle();
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::make_result(scores.shape(), std::move(out), {si},
                             [si, y, segment, n_segments](TensorImpl& o) {
                               std::vector<double> dot(n_segments, 0.0);
                               for (std::size_t e = 0; e < y->size(); ++e)
                                 dot[segment[e]] += o.grad[e] * (*y)[e];
                               auto& g = si->grad_buffer();
                               for (std::size_t e = 0; e < y->size(); ++e)
                                 g[e] += (*y)[e] * (o.grad[e] - dot[segment[e]]);
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check(a.shape() == b.shape(), "mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.handle(), bi = b.handle();
  return detail::make_result(a.shape(), std::move(out), {ai, bi}, [ai, bi](TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->value[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->value[i];
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xi = x.handle();
  return detail::make_result({}, {s}, {xi}, [xi](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Parameter store

/// Named learnable tensors; iteration follows insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw Error(ErrorKind::BadConfig, "duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorKind::BadConfig, "no parameter '" + name + "'");
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Deep copy: fresh leaves with the same names, values and flags.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone_leaf());
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

using LossFn = std::function<Tensor(const ParamStore&)>;

/// Compares reverse-mode gradients with central differences for every entry
/// of every parameter. Error per entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `after_backward`, when set, runs between the reverse pass and the
/// comparison (fault injection for negative controls).
inline GradCheckResult grad_check(const LossFn& f, ParamStore& params, double eps = 1e-5,
                                  const std::function<void(ParamStore&)>& after_backward = {}) {
  auto eval = [&]() {
    const double v = f(params).item();
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteLoss, "loss evaluated to " + std::to_string(v));
    return v;
  };

  params.zero_grad();
  Tensor loss = f(params);
  if (!std::isfinite(loss.item()))
    throw Error(ErrorKind::NonFiniteLoss, "loss evaluated to " + std::to_string(loss.item()));
  loss.backward();
  if (after_backward) after_backward(params);

  GradCheckResult result;
  for (auto& [name, t] : params) {
    const std::vector<double> analytic = t.grad();
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = eval();
      values[i] = saved - eps;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_tensor.empty()) {
        result.max_rel_error = err;
        result.worst_tensor = name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rvg::num
