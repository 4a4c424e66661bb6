#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mpn/errors.hpp"

namespace mpn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Define-by-run reverse-mode autodiff over dense row-major tensors.
// A Tensor is a shared handle to a graph node; every operation records a
// fresh node whose backprop closure scatters incoming gradient to parents.
// Training runs with S = float; gradient verification with S = double.

template <class S>
struct Node {
  Shape shape;
  std::vector<S> val;
  std::vector<S> grad;  // sized lazily on first accumulation
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;
  bool requires_grad = false;

  std::size_t numel() const { return val.size(); }

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), S(0));
  }
};

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

namespace detail {
// Graph recording can be suspended (pure inference) to skip closure capture.
inline thread_local bool grad_recording = true;
}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = prev_; }

 private:
  bool prev_;
};

template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<S> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return constant(std::move(shape), S(0)); }

  static Tensor constant(Shape shape, S v) {
    auto n = std::make_shared<Node<S>>();
    n->val.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return constant({1}, v); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->val.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }

  std::vector<S>& values() { return node_->val; }
  const std::vector<S>& values() const { return node_->val; }
  S item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->val[0];
  }
  S at(std::size_t i) const { return node_->val.at(i); }

  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    return *this;
  }
  void zero_grad() { node_->grad.assign(node_->val.size(), S(0)); }

  // Copy the value into a fresh graph-free leaf.
  Tensor detach() const {
    auto n = std::make_shared<Node<S>>();
    n->shape = node_->shape;
    n->val = node_->val;
    return Tensor(std::move(n));
  }

  template <class S2>
  Tensor<S2> cast() const {
    std::vector<S2> v(node_->val.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S2>(node_->val[i]);
    return Tensor<S2>::from(node_->shape, std::move(v));
  }

  NodePtr<S> node() const { return node_; }

 private:
  NodePtr<S> node_;
};

namespace detail {

template <class S>
Tensor<S> make_op(Shape shape, std::vector<NodePtr<S>> parents,
                  std::function<void(Node<S>&)> backprop) {
  auto n = std::make_shared<Node<S>>();
  n->val.assign(shape_numel(shape), S(0));
  n->shape = std::move(shape);
  bool rec = grad_recording;
  bool req = false;
  if (rec)
    for (auto& p : parents) req = req || p->requires_grad;
  if (rec && req) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor<S>(std::move(n));
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Decompose a shape around `axis` into (outer, n, inner) extents.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& n,
                       std::size_t& inner) {
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  auto pa = a.node(), pb = b.node();
  auto out = detail::make_op<S>(a.shape(), {pa, pb}, [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) {
      pa->grad[i] += n.grad[i];
      pb->grad[i] += n.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = pa->val[i] + pb->val[i];
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  auto pa = a.node(), pb = b.node();
  auto out = detail::make_op<S>(a.shape(), {pa, pb}, [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) {
      pa->grad[i] += n.grad[i];
      pb->grad[i] -= n.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = pa->val[i] - pb->val[i];
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  auto pa = a.node(), pb = b.node();
  auto out = detail::make_op<S>(a.shape(), {pa, pb}, [pa, pb](Node<S>& n) {
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) {
      pa->grad[i] += n.grad[i] * pb->val[i];
      pb->grad[i] += n.grad[i] * pa->val[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = pa->val[i] * pb->val[i];
  return out;
}

// a[outer x n] + b[n], broadcast over rows. Used for bias terms.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& b) {
  if (b.ndim() != 1 || a.ndim() < 1 || a.shape().back() != b.shape()[0])
    throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = b.numel();
  const std::size_t rows = a.numel() / n;
  auto pa = a.node(), pb = b.node();
  auto out = detail::make_op<S>(a.shape(), {pa, pb}, [pa, pb, rows, n](Node<S>& nd) {
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        pa->grad[r * n + j] += nd.grad[r * n + j];
        pb->grad[j] += nd.grad[r * n + j];
      }
  });
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out.values()[r * n + j] = pa->val[r * n + j] + pb->val[j];
  return out;
}

// ---------------------------------------------------------------------------
// Scalar-argument ops

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa, c](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) pa->grad[i] += n.grad[i] * c;
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = pa->val[i] * c;
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) pa->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = pa->val[i] + c;
  return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

// max(x, c) elementwise; gradient flows where x > c (ties go to the constant).
template <class S>
Tensor<S> max_scalar(const Tensor<S>& a, S c) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa, c](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i)
      if (pa->val[i] > c) pa->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::max(pa->val[i], c);
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return max_scalar(a, S(0));
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i)
      pa->grad[i] += n.grad[i] * n.val[i] * (S(1) - n.val[i]);
  });
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const S x = pa->val[i];
    out.values()[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                                : std::exp(x) / (S(1) + std::exp(x));
  }
  return out;
}

template <class S>
Tensor<S> tanh_op(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i)
      pa->grad[i] += n.grad[i] * (S(1) - n.val[i] * n.val[i]);
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::tanh(pa->val[i]);
  return out;
}

template <class S>
Tensor<S> log_op(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) pa->grad[i] += n.grad[i] / pa->val[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::log(pa->val[i]);
  return out;
}

template <class S>
Tensor<S> abs_op(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i) {
      const S s = pa->val[i] > S(0) ? S(1) : (pa->val[i] < S(0) ? S(-1) : S(0));
      pa->grad[i] += n.grad[i] * s;
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::abs(pa->val[i]);
  return out;
}

// sign(0) = 0 so that soft thresholding maps 0 to exactly 0.
template <class S>
Tensor<S> sign_op(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [](Node<S>&) {});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const S x = pa->val[i];
    out.values()[i] = x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
  }
  return out;
}

// Pass-through gradient on the open interval, zero once clamped.
template <class S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa, lo, hi](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i)
      if (pa->val[i] > lo && pa->val[i] < hi) pa->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.values()[i] = std::min(hi, std::max(lo, pa->val[i]));
  return out;
}

// Soft threshold: sign(x) * max(|x| - t, 0). Subgradient 1 on |x| > t, else 0.
template <class S>
Tensor<S> soft_threshold(const Tensor<S>& a, S t) {
  if (t < S(0)) throw ValueError("soft_threshold: negative threshold");
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa, t](Node<S>& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.numel(); ++i)
      if (std::abs(pa->val[i]) > t) pa->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const S x = pa->val[i];
    const S m = std::abs(x) - t;
    out.values()[i] = m > S(0) ? (x > S(0) ? m : -m) : S(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops (2-D)

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto pa = a.node(), pb = b.node();
  auto out = detail::make_op<S>({m, n}, {pa, pb}, [pa, pb, m, k, n](Node<S>& nd) {
    pa->ensure_grad();
    pb->ensure_grad();
    // dA = G * B^T
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const S g = nd.grad[i * n + j];
        if (g == S(0)) continue;
        for (std::size_t l = 0; l < k; ++l) pa->grad[i * k + l] += g * pb->val[l * n + j];
      }
    // dB = A^T * G
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const S av = pa->val[i * k + l];
        if (av == S(0)) continue;
        for (std::size_t j = 0; j < n; ++j) pb->grad[l * n + j] += av * nd.grad[i * n + j];
      }
  });
  // i-l-j loop order keeps the inner loop contiguous in both B and the output.
  S* o = out.values().data();
  const S* av = pa->val.data();
  const S* bv = pb->val.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const S x = av[i * k + l];
      if (x == S(0)) continue;
      const S* brow = bv + l * n;
      S* orow = o + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.ndim() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto pa = a.node();
  auto out = detail::make_op<S>({n, m}, {pa}, [pa, m, n](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += nd.grad[j * m + i];
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.values()[j * m + i] = pa->val[i * n + j];
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto pa = a.node();
  auto out = detail::make_op<S>(std::move(shape), {pa}, [pa](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < nd.numel(); ++i) pa->grad[i] += nd.grad[i];
  });
  out.values() = pa->val;
  return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != out_shape.size())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i)
      if (i != axis && p.shape()[i] != out_shape[i])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(out_shape) + " on axis " + std::to_string(axis));
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  std::size_t outer, n_out, inner;
  detail::axis_split(out_shape, axis, outer, n_out, inner);

  std::vector<NodePtr<S>> nodes;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    extents.push_back(p.shape()[axis]);
  }
  auto out =
      detail::make_op<S>(out_shape, nodes, [nodes, extents, outer, n_out, inner](Node<S>& nd) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          nodes[pi]->ensure_grad();
          const std::size_t e = extents[pi];
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < e; ++j)
              for (std::size_t in = 0; in < inner; ++in)
                nodes[pi]->grad[(o * e + j) * inner + in] +=
                    nd.grad[(o * n_out + off + j) * inner + in];
          off += e;
        }
      });
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
    const std::size_t e = extents[pi];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < e; ++j)
        for (std::size_t in = 0; in < inner; ++in)
          out.values()[(o * n_out + off + j) * inner + in] =
              nodes[pi]->val[(o * e + j) * inner + in];
    off += e;
  }
  return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, std::size_t axis, std::size_t start, std::size_t len) {
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  if (start + len > n)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds axis extent " + std::to_string(n));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  auto pa = a.node();
  auto out =
      detail::make_op<S>(out_shape, {pa}, [pa, outer, n, inner, start, len](Node<S>& nd) {
        pa->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < len; ++j)
            for (std::size_t in = 0; in < inner; ++in)
              pa->grad[(o * n + start + j) * inner + in] += nd.grad[(o * len + j) * inner + in];
      });
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t in = 0; in < inner; ++in)
        out.values()[(o * len + j) * inner + in] = pa->val[(o * n + start + j) * inner + in];
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

// Max along one axis; gradient routes to the first maximal index on ties.
template <class S>
Tensor<S> max_axis(const Tensor<S>& a, std::size_t axis) {
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  auto pa = a.node();
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
  auto out = detail::make_op<S>(out_shape, {pa}, [pa, argmax](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < nd.numel(); ++i) pa->grad[(*argmax)[i]] += nd.grad[i];
  });
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = (o * n) * inner + in;
      S bv = pa->val[best];
      for (std::size_t j = 1; j < n; ++j) {
        const std::size_t idx = (o * n + j) * inner + in;
        if (pa->val[idx] > bv) {
          bv = pa->val[idx];
          best = idx;
        }
      }
      out.values()[o * inner + in] = bv;
      (*argmax)[o * inner + in] = best;
    }
  return out;
}

template <class S>
Tensor<S> mean_axis(const Tensor<S>& a, std::size_t axis) {
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  auto pa = a.node();
  const S inv = S(1) / S(n);
  auto out = detail::make_op<S>(out_shape, {pa}, [pa, outer, n, inner, inv](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t in = 0; in < inner; ++in)
          pa->grad[(o * n + j) * inner + in] += nd.grad[o * inner + in] * inv;
  });
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S acc = S(0);
      for (std::size_t j = 0; j < n; ++j) acc += pa->val[(o * n + j) * inner + in];
      out.values()[o * inner + in] = acc * inv;
    }
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  auto pa = a.node();
  auto out = detail::make_op<S>({1}, {pa}, [pa](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < pa->numel(); ++i) pa->grad[i] += nd.grad[0];
  });
  S acc = S(0);
  for (const S v : pa->val) acc += v;
  out.values()[0] = acc;
  return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / S(a.numel()));
}

// ---------------------------------------------------------------------------
// Normalization / softmax

// Temperature softmax along `axis`, computed with max subtraction.
template <class S>
Tensor<S> softmax_t(const Tensor<S>& a, S tau, std::size_t axis) {
  if (!(tau > S(0))) throw ValueError("softmax_t: tau must be positive");
  std::size_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  auto pa = a.node();
  auto out = detail::make_op<S>(a.shape(), {pa}, [pa, outer, n, inner, tau](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        S dot = S(0);
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = (o * n + j) * inner + in;
          dot += nd.grad[idx] * nd.val[idx];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = (o * n + j) * inner + in;
          pa->grad[idx] += (nd.grad[idx] - dot) * nd.val[idx] / tau;
        }
      }
  });
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S mx = pa->val[(o * n) * inner + in];
      for (std::size_t j = 1; j < n; ++j)
        mx = std::max(mx, pa->val[(o * n + j) * inner + in]);
      S denom = S(0);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = (o * n + j) * inner + in;
        const S e = std::exp((pa->val[idx] - mx) / tau);
        out.values()[idx] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < n; ++j) out.values()[(o * n + j) * inner + in] /= denom;
    }
  return out;
}

template <class S>
Tensor<S> softmax(const Tensor<S>& a, std::size_t axis) {
  return softmax_t(a, S(1), axis);
}

// Layer normalization over the last axis, then affine with gain/bias.
// eps sits inside the square root.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5)) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " vs feature dim " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  // Cache normalized values and 1/std per row for the backward pass.
  auto yhat = std::make_shared<std::vector<S>>(x.numel());
  auto rstd = std::make_shared<std::vector<S>>(rows);
  auto out = detail::make_op<S>(
      x.shape(), {px, pg, pb}, [px, pg, pb, yhat, rstd, rows, d](Node<S>& nd) {
        px->ensure_grad();
        pg->ensure_grad();
        pb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const S* y = yhat->data() + r * d;
          const S* g = nd.grad.data() + r * d;
          S sum_dy = S(0), sum_dyy = S(0);
          for (std::size_t j = 0; j < d; ++j) {
            const S dy = g[j] * pg->val[j];
            sum_dy += dy;
            sum_dyy += dy * y[j];
            pg->grad[j] += g[j] * y[j];
            pb->grad[j] += g[j];
          }
          const S inv_d = S(1) / S(d);
          for (std::size_t j = 0; j < d; ++j) {
            const S dy = g[j] * pg->val[j];
            px->grad[r * d + j] += (*rstd)[r] * (dy - inv_d * sum_dy - y[j] * inv_d * sum_dyy);
          }
        }
      });
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = px->val.data() + r * d;
    S mean = S(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= S(d);
    const S rs = S(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const S y = (xr[j] - mean) * rs;
      (*yhat)[r * d + j] = y;
      out.values()[r * d + j] = pg->val[j] * y + pb->val[j];
    }
  }
  return out;
}

// Sum-pool groups of `group` consecutive channels along the last axis:
// [rows x (k*group)] -> [rows x k]. This is multiplication by the fixed
// binary pooling matrix used by the factorized bilinear squeeze.
template <class S>
Tensor<S> group_sum(const Tensor<S>& a, std::size_t group) {
  if (a.ndim() < 1 || group == 0 || a.shape().back() % group != 0)
    throw ShapeError("group_sum: last axis of " + shape_str(a.shape()) +
                     " not divisible by group " + std::to_string(group));
  const std::size_t n = a.shape().back();
  const std::size_t k = n / group;
  const std::size_t rows = a.numel() / n;
  Shape out_shape = a.shape();
  out_shape.back() = k;
  auto pa = a.node();
  auto out = detail::make_op<S>(out_shape, {pa}, [pa, rows, n, k, group](Node<S>& nd) {
    pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t g = 0; g < group; ++g)
          pa->grad[r * n + j * group + g] += nd.grad[r * k + j];
  });
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      S acc = S(0);
      for (std::size_t g = 0; g < group; ++g) acc += pa->val[r * n + j * group + g];
      out.values()[r * k + j] = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Backward driver

template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: expected scalar loss, got " + shape_str(loss.shape()));
  // Topological order by iterative post-order DFS.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->backprop && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* nd = *it;
    if (nd->backprop) {
      nd->ensure_grad();
      nd->backprop(*nd);
    }
  }
}

}  // namespace mpn
