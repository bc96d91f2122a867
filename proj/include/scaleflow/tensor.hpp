// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor with reverse-mode automatic differentiation.
//
// Layout and broadcasting rules (normative for the whole library):
//   * Data is row-major and always contiguous; shape [d0,...,dk] stores
//     element (i0,...,ik) at i0*d1*...*dk + ... + ik.
//   * Binary elementwise ops broadcast numpy-style: shapes are aligned at the
//     trailing dimension; each pair of dimensions must be equal or one of the
//     two must be 1 (missing leading dimensions count as 1). The output takes
//     the larger extent. Gradients of a broadcast operand are summed over the
//     broadcast positions.
//   * matmul treats the last two dimensions as the matrix and broadcasts the
//     leading (batch) dimensions by the same rule.
//
// Differentiation: ops whose inputs are attached to a Tape record a backward
// closure onto it. Tape::backward walks the recorded nodes in exact reverse
// order and accumulates (never overwrites) gradients, so a tensor used twice
// receives the sum of both paths. One forward/backward pass per tape at a
// time; independent tapes are independent.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "scaleflow/common.hpp"
#include "scaleflow/random.hpp"
#include "scaleflow/threading.hpp"

namespace scaleflow {

template <typename T>
class Tape;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // allocated on first use
  bool requires_grad = false;
  Tape<T>* tape = nullptr;

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

  explicit Tensor(Shape shape) : node_(std::make_shared<TensorNode<T>>()) {
    node_->shape = std::move(shape);
    node_->v.assign(static_cast<size_t>(shape_numel(node_->shape)), T(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.vals().begin(), t.vals().end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor from(std::vector<T> data, Shape shape) {
    require(static_cast<int64_t>(data.size()) == shape_numel(shape),
            "Tensor::from: data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->v = std::move(data);
    return t;
  }

  static Tensor scalar(T value) { return from({value}, {1}); }

  static Tensor randn(Shape shape, Rng& rng, double sigma = 1.0) {
    Tensor t(std::move(shape));
    rng.fill_normal(t.vals(), 0.0, sigma);
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  int64_t dim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  int64_t size(int64_t d) const {
    if (d < 0) d += dim();
    require(d >= 0 && d < dim(), "Tensor::size: axis out of range");
    return node_->shape[static_cast<size_t>(d)];
  }

  std::vector<T>& vals() { return node_->v; }
  const std::vector<T>& vals() const { return node_->v; }
  std::vector<T>& grad() { return node_->g; }
  const std::vector<T>& grad() const { return node_->g; }

  T item() const {
    require(numel() == 1, "Tensor::item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->v[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    return node_->v[static_cast<size_t>(flat_index(idx))];
  }

  T& at_ref(std::initializer_list<int64_t> idx) { return node_->v[static_cast<size_t>(flat_index(idx))]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tape<T>* tape() const { return node_->tape; }

  // Registers this tensor as a trainable leaf on the given tape.
  Tensor& set_requires_grad(Tape<T>& tape) {
    node_->requires_grad = true;
    node_->tape = &tape;
    return *this;
  }

  void zero_grad() {
    if (!node_->g.empty()) std::fill(node_->g.begin(), node_->g.end(), T(0));
  }

  // Value copy with no tape attachment.
  Tensor detach() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->v = node_->v;
    return t;
  }

  bool all_finite() const {
    for (T x : node_->v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError("non-finite values in " + what);
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    require(static_cast<int64_t>(idx.size()) == dim(), "Tensor::at: rank mismatch");
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      require(i >= 0 && i < node_->shape[d], "Tensor::at: index out of range");
      off = off * node_->shape[d] + i;
      ++d;
    }
    return off;
  }

  std::shared_ptr<TensorNode<T>> node_;
};

// Reverse-mode tape: a flat list of backward closures in recording order.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  bool enabled() const { return enabled_; }
  void set_enabled(bool e) { enabled_ = e; }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates through every recorded node in
  // reverse. Leaf gradients accumulate across calls until zeroed.
  void backward(const Tensor<T>& loss) {
    require(loss.numel() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    require(loss.tape() == this, "backward: loss does not belong to this tape");
    loss.node()->ensure_grad();
    loss.node()->g[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
};

// Disables recording on a tape for the lifetime of the guard (inference).
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(&tape), prev_(tape.enabled()) { tape_->set_enabled(false); }
  ~NoGradGuard() { tape_->set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* tape_;
  bool prev_;
};

namespace detail {

// Tape shared by the inputs that participate in differentiation, or nullptr
// when no input tracks gradients (or recording is off).
template <typename T, typename Iterable>
Tape<T>* grad_tape_of(const Iterable& ins) {
  Tape<T>* tape = nullptr;
  bool any_grad = false;
  for (const Tensor<T>* t : ins) {
    if (t->tape() != nullptr) {
      if (tape != nullptr && tape != t->tape()) throw ShapeError("op mixes tensors from different tapes");
      tape = t->tape();
    }
    any_grad = any_grad || t->requires_grad();
  }
  if (!tape || !any_grad || !tape->enabled()) return nullptr;
  return tape;
}

template <typename T>
Tape<T>* grad_tape(std::initializer_list<const Tensor<T>*> ins) {
  return grad_tape_of<T>(ins);
}

template <typename T>
void mark_result(Tensor<T>& out, Tape<T>* tape) {
  if (tape) {
    out.node()->requires_grad = true;
    out.node()->tape = tape;
  }
}

struct BcastPlan {
  Shape out;
  int64_t out_numel = 0;
  // Per output dimension strides into each operand; 0 where broadcast.
  std::vector<int64_t> stride_a, stride_b;
  bool same_shape = false;
  bool b_suffix = false;  // a has the output shape, b is a trailing suffix of it
  int64_t b_numel = 1;
};

inline BcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  BcastPlan p;
  const size_t ra = a.size(), rb = b.size();
  const size_t r = std::max(ra, rb);
  p.out.resize(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    p.out[i] = std::max(da, db);
  }
  p.out_numel = shape_numel(p.out);
  p.same_shape = (a == b);
  if (!p.same_shape && ra >= rb) {
    bool suffix = std::equal(b.begin(), b.end(), a.end() - static_cast<ptrdiff_t>(rb)) && a == p.out;
    if (suffix) {
      p.b_suffix = true;
      p.b_numel = shape_numel(b);
    }
  }
  if (p.same_shape || p.b_suffix) return p;

  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  int64_t sa = 1, sb = 1;
  for (size_t i = r; i-- > 0;) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    p.stride_a[i] = (da == 1) ? 0 : sa;
    p.stride_b[i] = (db == 1) ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

// Odometer walk over the broadcast output; fn(out_index, a_index, b_index).
template <typename Fn>
void bcast_walk(const BcastPlan& p, Fn&& fn) {
  const size_t r = p.out.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < p.out_numel; ++i) {
    fn(i, oa, ob);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      idx[d] = 0;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <typename T, typename FwdFn, typename BwdA, typename BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, FwdFn fwd, BwdA dfa, BwdB dfb) {
  detail::BcastPlan plan = detail::broadcast_plan(a.shape(), b.shape(), name);
  Tensor<T> out(plan.out);
  const T* pa = a.vals().data();
  const T* pb = b.vals().data();
  T* po = out.vals().data();
  if (plan.same_shape) {
    const int64_t n = plan.out_numel;
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  } else if (plan.b_suffix) {
    const int64_t bn = plan.b_numel;
    const int64_t reps = plan.out_numel / bn;
    for (int64_t r = 0; r < reps; ++r) {
      const T* ar = pa + r * bn;
      T* orow = po + r * bn;
      for (int64_t i = 0; i < bn; ++i) orow[i] = fwd(ar[i], pb[i]);
    }
  } else {
    detail::bcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&a, &b})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), bn = b.node(), on = out.node(), plan, dfa, dfb] {
      if (on->g.empty()) return;
      const T* pa2 = an->v.data();
      const T* pb2 = bn->v.data();
      const T* pg = on->g.data();
      const bool ga = an->requires_grad, gb = bn->requires_grad;
      if (ga) an->ensure_grad();
      if (gb) bn->ensure_grad();
      if (plan.same_shape) {
        const int64_t n = plan.out_numel;
        for (int64_t i = 0; i < n; ++i) {
          if (ga) an->g[i] += dfa(pa2[i], pb2[i]) * pg[i];
          if (gb) bn->g[i] += dfb(pa2[i], pb2[i]) * pg[i];
        }
      } else if (plan.b_suffix) {
        const int64_t bnn = plan.b_numel;
        const int64_t reps = plan.out_numel / bnn;
        for (int64_t r = 0; r < reps; ++r) {
          const int64_t base = r * bnn;
          for (int64_t i = 0; i < bnn; ++i) {
            if (ga) an->g[base + i] += dfa(pa2[base + i], pb2[i]) * pg[base + i];
            if (gb) bn->g[i] += dfb(pa2[base + i], pb2[i]) * pg[base + i];
          }
        }
      } else {
        detail::bcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          if (ga) an->g[ia] += dfa(pa2[ia], pb2[ib]) * pg[i];
          if (gb) bn->g[ib] += dfb(pa2[ia], pb2[ib]) * pg[i];
        });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn df) {
  Tensor<T> out(a.shape());
  const T* pa = a.vals().data();
  T* po = out.vals().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node(), df] {
      if (on->g.empty()) return;
      an->ensure_grad();
      const int64_t n2 = an->numel();
      for (int64_t i = 0; i < n2; ++i) an->g[i] += df(an->v[i]) * on->g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return -x; }, [](T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary_op(a, [c](T x) { return c * x; }, [c](T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary_op(a, [c](T x) { return x + c; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return scale(a, c); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return scale(a, c); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_op(
      a,
      [](T x) {
        double xd = static_cast<double>(x);
        return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
      },
      [](T x) {
        double xd = static_cast<double>(x);
        double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(cdf + xd * pdf);
      });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  // One extent may be -1 and is inferred.
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      require(infer == -1, "reshape: at most one -1 extent");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    require(known != 0 && a.numel() % known == 0,
            "reshape: cannot infer extent for shape " + shape_str(shape) + " from " + shape_str(a.shape()));
    shape[static_cast<size_t>(infer)] = a.numel() / known;
  }
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  Tensor<T> out = Tensor<T>::from(a.vals(), std::move(shape));
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node()] {
      if (on->g.empty()) return;
      an->ensure_grad();
      const int64_t n = an->numel();
      for (int64_t i = 0; i < n; ++i) an->g[i] += on->g[i];
    });
  }
  return out;
}

namespace detail {

inline Shape permuted_shape(const Shape& s, int64_t d0, int64_t d1) {
  Shape out = s;
  std::swap(out[static_cast<size_t>(d0)], out[static_cast<size_t>(d1)]);
  return out;
}

// Copies src into dst with dims d0 and d1 of src swapped.
template <typename T>
void transpose_copy(const T* src, T* dst, const Shape& in_shape, int64_t d0, int64_t d1, bool accumulate) {
  const size_t r = in_shape.size();
  Shape out_shape = permuted_shape(in_shape, d0, d1);
  std::vector<int64_t> out_stride(r, 1);
  for (size_t i = r - 1; i-- > 0;) out_stride[i] = out_stride[i + 1] * out_shape[i + 1];
  // Stride of input dim i inside the output layout.
  std::vector<int64_t> map(r);
  for (size_t i = 0; i < r; ++i) map[i] = out_stride[i];
  std::swap(map[static_cast<size_t>(d0)], map[static_cast<size_t>(d1)]);

  std::vector<int64_t> idx(r, 0);
  const int64_t n = shape_numel(in_shape);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (accumulate) {
      dst[off] += src[i];
    } else {
      dst[off] = src[i];
    }
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      off += map[d];
      if (idx[d] < in_shape[d]) break;
      idx[d] = 0;
      off -= map[d] * in_shape[d];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int64_t d0, int64_t d1) {
  if (d0 < 0) d0 += a.dim();
  if (d1 < 0) d1 += a.dim();
  require(d0 >= 0 && d0 < a.dim() && d1 >= 0 && d1 < a.dim(), "transpose: axis out of range for " + shape_str(a.shape()));
  Tensor<T> out(detail::permuted_shape(a.shape(), d0, d1));
  detail::transpose_copy(a.vals().data(), out.vals().data(), a.shape(), d0, d1, false);
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node(), d0, d1] {
      if (on->g.empty()) return;
      an->ensure_grad();
      // Swapping the same two dims of the output grad lands back on the input.
      detail::transpose_copy(on->g.data(), an->g.data(), on->shape, d0, d1, true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t dim) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (dim < 0) dim += static_cast<int64_t>(s0.size());
  require(dim >= 0 && dim < static_cast<int64_t>(s0.size()), "concat: axis out of range");
  int64_t total = 0;
  for (const auto& p : parts) {
    require(p.dim() == static_cast<int64_t>(s0.size()), "concat: rank mismatch");
    for (int64_t d = 0; d < p.dim(); ++d) {
      if (d != dim) {
        require(p.shape()[static_cast<size_t>(d)] == s0[static_cast<size_t>(d)],
                "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
      }
    }
    total += p.size(dim);
  }
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(dim)] = total;
  Tensor<T> out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(dim) + 1; d < out_shape.size(); ++d) inner *= out_shape[d];

  int64_t at = 0;
  for (const auto& p : parts) {
    const int64_t len = p.size(dim);
    const T* src = p.vals().data();
    T* dst = out.vals().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(dst + (o * total + at) * inner, src + o * len * inner, static_cast<size_t>(len * inner) * sizeof(T));
    }
    at += len;
  }

  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  if (Tape<T>* tape = detail::grad_tape_of<T>(ptrs)) {
    detail::mark_result(out, tape);
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record([nodes, on = out.node(), outer, inner, total, dim] {
      if (on->g.empty()) return;
      int64_t at2 = 0;
      for (auto& pn : nodes) {
        const int64_t len = pn->shape[static_cast<size_t>(dim)];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* gsrc = on->g.data() + (o * total + at2) * inner;
            T* gdst = pn->g.data() + o * len * inner;
            for (int64_t i = 0; i < len * inner; ++i) gdst[i] += gsrc[i];
          }
        }
        at2 += len;
      }
    });
  }
  return out;
}

// Contiguous slice [start, start+len) along one axis.
template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int64_t dim, int64_t start, int64_t len) {
  if (dim < 0) dim += a.dim();
  require(dim >= 0 && dim < a.dim(), "narrow: axis out of range");
  const int64_t extent = a.size(dim);
  require(start >= 0 && len >= 1 && start + len <= extent,
          "narrow: window [" + std::to_string(start) + "," + std::to_string(start + len) + ") exceeds extent " +
              std::to_string(extent));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  Tensor<T> out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= a.shape()[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(dim) + 1; d < a.shape().size(); ++d) inner *= a.shape()[d];

  const T* src = a.vals().data();
  T* dst = out.vals().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(dst + o * len * inner, src + (o * extent + start) * inner, static_cast<size_t>(len * inner) * sizeof(T));
  }
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node(), outer, inner, extent, start, len] {
      if (on->g.empty()) return;
      an->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const T* gsrc = on->g.data() + o * len * inner;
        T* gdst = an->g.data() + (o * extent + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) gdst[i] += gsrc[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.vals()) s += x;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node()] {
      if (on->g.empty()) return;
      an->ensure_grad();
      const T g = on->g[0];
      for (auto& x : an->g) x += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  require(a.numel() > 0, "mean_all: empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// Mean over a single axis, keeping it with extent 1.
template <typename T>
Tensor<T> mean_dim(const Tensor<T>& a, int64_t dim) {
  if (dim < 0) dim += a.dim();
  require(dim >= 0 && dim < a.dim(), "mean_dim: axis out of range");
  const int64_t extent = a.size(dim);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(dim)] = 1;
  Tensor<T> out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < dim; ++d) outer *= a.shape()[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(dim) + 1; d < a.shape().size(); ++d) inner *= a.shape()[d];

  const T inv = T(1) / static_cast<T>(extent);
  const T* src = a.vals().data();
  T* dst = out.vals().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      T s = T(0);
      for (int64_t e = 0; e < extent; ++e) s += src[(o * extent + e) * inner + i];
      dst[o * inner + i] = s * inv;
    }
  }
  if (Tape<T>* tape = detail::grad_tape<T>({&a})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), on = out.node(), outer, inner, extent, inv] {
      if (on->g.empty()) return;
      an->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const T g = on->g[o * inner + i] * inv;
          for (int64_t e = 0; e < extent; ++e) an->g[(o * extent + e) * inner + i] += g;
        }
      }
    });
  }
  return out;
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace scaleflow
