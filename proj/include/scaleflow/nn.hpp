// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Neural-network kernels on top of the tensor core: batched matmul,
// layer normalization, masked softmax attention, 2D pooling/upsampling and
// embedding lookup, each with a hand-written backward rule.

#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "scaleflow/tensor.hpp"

namespace scaleflow {

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    if (!accumulate) std::memset(c, 0, static_cast<size_t>(n) * sizeof(T));
    const T* a = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T ap = a[p];
      const T* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
    }
  }
}

// out[c, r] = in[r, c]
template <typename T>
void transpose_2d(const T* in, T* out, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = in + r * cols;
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = src[c];
  }
}

// Row-parallel gemm; rows of C are disjoint, so results are bit-identical for
// any thread count.
template <typename T>
void gemm_parallel(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (m * k * n < (int64_t(1) << 16)) {
    gemm(A, B, C, m, k, n, accumulate);
    return;
  }
  parallel_for(m, 8, [&](int64_t lo, int64_t hi) { gemm(A + lo * k, B, C + lo * n, hi - lo, k, n, accumulate); });
}

// dA[m,k] += dC[m,n] * B^T: materializes B^T and reuses the FMA kernel.
template <typename T>
void gemm_dA(const T* dC, const T* B, T* dA, int64_t m, int64_t k, int64_t n, std::vector<T>& scratch) {
  scratch.resize(static_cast<size_t>(n * k));
  transpose_2d(B, scratch.data(), k, n);
  gemm_parallel(dC, scratch.data(), dA, m, n, k, true);
}

// dB[k,n] += A^T * dC
template <typename T>
void gemm_dB(const T* A, const T* dC, T* dB, int64_t m, int64_t k, int64_t n, std::vector<T>& scratch) {
  scratch.resize(static_cast<size_t>(m * k));
  transpose_2d(A, scratch.data(), m, k);
  gemm_parallel(scratch.data(), dC, dB, k, m, n, true);
}

struct MatmulPlan {
  Shape out;
  int64_t m = 0, k = 0, n = 0;
  int64_t batch = 0;
  std::vector<int64_t> off_a, off_b;  // per flat batch, element offsets of the matrices
};

inline MatmulPlan matmul_plan(const Shape& sa, const Shape& sb) {
  require(sa.size() >= 2 && sb.size() >= 2,
          "matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  MatmulPlan p;
  p.m = sa[sa.size() - 2];
  p.k = sa[sa.size() - 1];
  int64_t kb = sb[sb.size() - 2];
  p.n = sb[sb.size() - 1];
  require(p.k == kb, "matmul: inner dimensions disagree, " + shape_str(sa) + " x " + shape_str(sb));

  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  BcastPlan bp = broadcast_plan(ba, bb, "matmul");
  p.batch = std::max<int64_t>(bp.out_numel, 1);
  p.out = bp.out;
  p.out.push_back(p.m);
  p.out.push_back(p.n);

  p.off_a.resize(static_cast<size_t>(p.batch));
  p.off_b.resize(static_cast<size_t>(p.batch));
  if (bp.out.empty()) {
    p.off_a[0] = 0;
    p.off_b[0] = 0;
  } else if (bp.same_shape) {
    for (int64_t i = 0; i < p.batch; ++i) {
      p.off_a[static_cast<size_t>(i)] = i * p.m * p.k;
      p.off_b[static_cast<size_t>(i)] = i * p.k * p.n;
    }
  } else {
    int64_t bi = 0;
    // suffix fast path in BcastPlan skips stride tables; rebuild generically
    BcastPlan gp = bp;
    if (gp.stride_a.empty()) {
      gp.same_shape = false;
      gp.b_suffix = false;
      const size_t r = gp.out.size();
      gp.stride_a.assign(r, 0);
      gp.stride_b.assign(r, 0);
      int64_t stra = 1, strb = 1;
      const size_t ra = ba.size(), rb = bb.size();
      for (size_t i = r; i-- > 0;) {
        int64_t da = i < r - ra ? 1 : ba[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : bb[i - (r - rb)];
        gp.stride_a[i] = (da == 1) ? 0 : stra;
        gp.stride_b[i] = (db == 1) ? 0 : strb;
        stra *= da;
        strb *= db;
      }
    }
    bcast_walk(gp, [&](int64_t, int64_t ia, int64_t ib) {
      p.off_a[static_cast<size_t>(bi)] = ia * p.m * p.k;
      p.off_b[static_cast<size_t>(bi)] = ib * p.k * p.n;
      ++bi;
    });
  }
  return p;
}

}  // namespace detail

// Batched matrix product. a: [.., m, k], b: [.., k, n] with broadcastable
// batch dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::MatmulPlan plan = detail::matmul_plan(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  const T* pa = a.vals().data();
  const T* pb = b.vals().data();
  T* po = out.vals().data();

  const int64_t mn = plan.m * plan.n;
  const int64_t work = plan.batch * plan.m * plan.k * plan.n;
  const bool serial = work < (int64_t(1) << 16);
  const bool b_is_shared = b.dim() == 2 && plan.batch > 1;
  if (b_is_shared) {
    // Collapse the batch into one [batch*m, k] x [k, n] product.
    const int64_t rows = plan.batch * plan.m;
    if (serial) {
      detail::gemm(pa, pb, po, rows, plan.k, plan.n, false);
    } else {
      parallel_for(rows, 8, [&](int64_t lo, int64_t hi) {
        detail::gemm(pa + lo * plan.k, pb, po + lo * plan.n, hi - lo, plan.k, plan.n, false);
      });
    }
  } else if (serial) {
    for (int64_t i = 0; i < plan.batch; ++i) {
      detail::gemm(pa + plan.off_a[static_cast<size_t>(i)], pb + plan.off_b[static_cast<size_t>(i)], po + i * mn,
                   plan.m, plan.k, plan.n, false);
    }
  } else {
    parallel_for(plan.batch, 1, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        detail::gemm(pa + plan.off_a[static_cast<size_t>(i)], pb + plan.off_b[static_cast<size_t>(i)], po + i * mn,
                     plan.m, plan.k, plan.n, false);
      }
    });
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&a, &b})) {
    detail::mark_result(out, tape);
    tape->record([an = a.node(), bn = b.node(), on = out.node(), plan, mn] {
      if (on->g.empty()) return;
      const T* pa2 = an->v.data();
      const T* pb2 = bn->v.data();
      const T* pg = on->g.data();
      std::vector<T> scratch;
      const bool shared_b = bn->shape.size() == 2 && plan.batch > 1;
      if (shared_b) {
        // batch collapses into one [batch*m, k] x [k, n] problem
        const int64_t rows = plan.batch * plan.m;
        if (an->requires_grad) {
          an->ensure_grad();
          detail::gemm_dA(pg, pb2, an->g.data(), rows, plan.k, plan.n, scratch);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::gemm_dB(pa2, pg, bn->g.data(), rows, plan.k, plan.n, scratch);
        }
        return;
      }
      // Accumulation into broadcast operands aliases across batches, so the
      // batch loop stays serial; each inner kernel parallelizes over rows.
      if (an->requires_grad) {
        an->ensure_grad();
        T* ga = an->g.data();
        for (int64_t i = 0; i < plan.batch; ++i) {
          detail::gemm_dA(pg + i * mn, pb2 + plan.off_b[static_cast<size_t>(i)], ga + plan.off_a[static_cast<size_t>(i)],
                          plan.m, plan.k, plan.n, scratch);
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* gb = bn->g.data();
        for (int64_t i = 0; i < plan.batch; ++i) {
          detail::gemm_dB(pa2 + plan.off_a[static_cast<size_t>(i)], pg + i * mn, gb + plan.off_b[static_cast<size_t>(i)],
                          plan.m, plan.k, plan.n, scratch);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension, epsilon-stabilized, no learned
// affine. Any scale/shift is composed externally.

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, double eps = 1e-6) {
  require(x.dim() >= 1 && x.size(-1) >= 1, "layernorm: needs a non-empty last dimension");
  const int64_t d = x.size(-1);
  const int64_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<size_t>(rows));

  const T* px = x.vals().data();
  T* po = out.vals().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* yr = po + r * d;
    double mu = 0;
    for (int64_t i = 0; i < d; ++i) mu += static_cast<double>(xr[i]);
    mu /= static_cast<double>(d);
    double var = 0;
    for (int64_t i = 0; i < d; ++i) {
      double c = static_cast<double>(xr[i]) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = static_cast<T>(is);
    for (int64_t i = 0; i < d; ++i) yr[i] = static_cast<T>((static_cast<double>(xr[i]) - mu) * is);
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&x})) {
    detail::mark_result(out, tape);
    tape->record([xn = x.node(), on = out.node(), inv_std = std::move(inv_std), rows, d] {
      if (on->g.empty()) return;
      xn->ensure_grad();
      const T* y = on->v.data();
      const T* gy = on->g.data();
      T* gx = xn->g.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * d;
        const T* gr = gy + r * d;
        T* gxr = gx + r * d;
        double mg = 0, mgy = 0;
        for (int64_t i = 0; i < d; ++i) {
          mg += static_cast<double>(gr[i]);
          mgy += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
        }
        mg /= static_cast<double>(d);
        mgy /= static_cast<double>(d);
        const double is = static_cast<double>(inv_std[static_cast<size_t>(r)]);
        for (int64_t i = 0; i < d; ++i) {
          gxr[i] += static_cast<T>(is * (static_cast<double>(gr[i]) - mg - static_cast<double>(yr[i]) * mgy));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention

// Dense row-major boolean mask, true = may attend.
struct AttnMask {
  int64_t rows = 0, cols = 0;
  std::vector<uint8_t> allow;

  AttnMask() = default;
  AttnMask(int64_t r, int64_t c, bool init = true) : rows(r), cols(c), allow(static_cast<size_t>(r * c), init ? 1 : 0) {}

  bool at(int64_t q, int64_t k) const { return allow[static_cast<size_t>(q * cols + k)] != 0; }
  void set(int64_t q, int64_t k, bool v) { allow[static_cast<size_t>(q * cols + k)] = v ? 1 : 0; }

  static AttnMask identity(int64_t n) {
    AttnMask m(n, n, false);
    for (int64_t i = 0; i < n; ++i) m.set(i, i, true);
    return m;
  }
};

// Softmax over the last dimension restricted to mask-allowed entries.
// A row with no allowed entry yields all zeros (rather than NaN), which keeps
// block-masked edge cases total. mask may be null for the unmasked case.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const AttnMask* mask) {
  require(x.dim() >= 2, "masked_softmax: rank must be >= 2");
  const int64_t sk = x.size(-1);
  const int64_t sq = x.size(-2);
  if (mask) {
    require(mask->rows == sq && mask->cols == sk,
            "masked_softmax: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                " does not match scores " + shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / sk;
  Tensor<T> out(x.shape());
  const T* px = x.vals().data();
  T* po = out.vals().data();

  for (int64_t r = 0; r < rows; ++r) {
    const int64_t q = r % sq;
    const T* xr = px + r * sk;
    T* yr = po + r * sk;
    const uint8_t* mrow = mask ? mask->allow.data() + q * sk : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < sk; ++i) {
      if (!mrow || mrow[i]) mx = std::max(mx, static_cast<double>(xr[i]));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      std::memset(yr, 0, static_cast<size_t>(sk) * sizeof(T));
      continue;
    }
    double denom = 0;
    for (int64_t i = 0; i < sk; ++i) {
      if (!mrow || mrow[i]) {
        double e = std::exp(static_cast<double>(xr[i]) - mx);
        yr[i] = static_cast<T>(e);
        denom += e;
      } else {
        yr[i] = T(0);
      }
    }
    const double inv = 1.0 / denom;
    for (int64_t i = 0; i < sk; ++i) yr[i] = static_cast<T>(static_cast<double>(yr[i]) * inv);
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&x})) {
    detail::mark_result(out, tape);
    tape->record([xn = x.node(), on = out.node(), rows, sk] {
      if (on->g.empty()) return;
      xn->ensure_grad();
      const T* y = on->v.data();
      const T* gy = on->g.data();
      T* gx = xn->g.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * sk;
        const T* gr = gy + r * sk;
        T* gxr = gx + r * sk;
        double dot = 0;
        for (int64_t i = 0; i < sk; ++i) dot += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
        for (int64_t i = 0; i < sk; ++i) {
          // masked entries have y == 0, so their grad contribution vanishes
          gxr[i] += static_cast<T>(static_cast<double>(yr[i]) * (static_cast<double>(gr[i]) - dot));
        }
      }
    });
  }
  return out;
}

// Scaled dot-product attention. q, k, v: [.., seq, d_head]; the mask applies
// to the trailing [seq_q, seq_k] plane of every leading batch/head slice.
// Fully-masked query rows produce zero output.
template <typename T>
Tensor<T> softmax_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttnMask* mask) {
  require(q.dim() >= 2 && k.dim() == q.dim() && v.dim() == q.dim(),
          "softmax_attention: rank mismatch between q/k/v");
  require(q.size(-1) == k.size(-1), "softmax_attention: q/k head dims differ, " + shape_str(q.shape()) + " vs " +
                                        shape_str(k.shape()));
  require(k.size(-2) == v.size(-2), "softmax_attention: k/v sequence lengths differ");
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.size(-1))));
  Tensor<T> scores = scale(matmul(q, transpose(k, -1, -2)), inv_sqrt_d);
  Tensor<T> attn = masked_softmax(scores, mask);
  return matmul(attn, v);
}

// ---------------------------------------------------------------------------
// Spatial kernels over the last two dimensions

// Mean pooling over r x r blocks. Block sums are pairwise so that pooling a
// factor-2 nearest upsample returns the source bit-exactly.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, int64_t r) {
  require(r >= 1, "mean_pool: factor must be >= 1");
  if (r == 1) return x;
  require(x.dim() >= 2, "mean_pool: rank must be >= 2");
  const int64_t w = x.size(-1), h = x.size(-2);
  require(h % r == 0 && w % r == 0,
          "mean_pool: factor " + std::to_string(r) + " does not divide spatial extents " + shape_str(x.shape()));
  const int64_t oh = h / r, ow = w / r;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);

  const int64_t planes = x.numel() / (h * w);
  const T inv = T(1) / static_cast<T>(r * r);
  const T* px = x.vals().data();
  T* po = out.vals().data();
  std::vector<T> block(static_cast<size_t>(r * r));
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = px + p * h * w;
    T* op = po + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        for (int64_t a = 0; a < r; ++a) {
          for (int64_t b = 0; b < r; ++b) block[static_cast<size_t>(a * r + b)] = xp[(i * r + a) * w + j * r + b];
        }
        // pairwise tree sum
        int64_t cnt = r * r;
        while (cnt > 1) {
          int64_t half = cnt / 2;
          for (int64_t t = 0; t < half; ++t) block[static_cast<size_t>(t)] = block[static_cast<size_t>(2 * t)] + block[static_cast<size_t>(2 * t + 1)];
          cnt = half;
        }
        op[i * ow + j] = block[0] * inv;
      }
    }
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&x})) {
    detail::mark_result(out, tape);
    tape->record([xn = x.node(), on = out.node(), planes, h, w, oh, ow, r, inv] {
      if (on->g.empty()) return;
      xn->ensure_grad();
      const T* gy = on->g.data();
      T* gx = xn->g.data();
      for (int64_t p = 0; p < planes; ++p) {
        const T* gp = gy + p * oh * ow;
        T* gxp = gx + p * h * w;
        for (int64_t i = 0; i < oh; ++i) {
          for (int64_t j = 0; j < ow; ++j) {
            const T g = gp[i * ow + j] * inv;
            for (int64_t a = 0; a < r; ++a) {
              for (int64_t b = 0; b < r; ++b) gxp[(i * r + a) * w + j * r + b] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

// Nearest-neighbor upsampling by integer factor r.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t r) {
  require(r >= 1, "upsample_nearest: factor must be >= 1");
  if (r == 1) return x;
  require(x.dim() >= 2, "upsample_nearest: rank must be >= 2");
  const int64_t w = x.size(-1), h = x.size(-2);
  const int64_t oh = h * r, ow = w * r;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);

  const int64_t planes = x.numel() / (h * w);
  const T* px = x.vals().data();
  T* po = out.vals().data();
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = px + p * h * w;
    T* op = po + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) op[i * ow + j] = xp[(i / r) * w + j / r];
    }
  }

  if (Tape<T>* tape = detail::grad_tape<T>({&x})) {
    detail::mark_result(out, tape);
    tape->record([xn = x.node(), on = out.node(), planes, h, w, oh, ow, r] {
      if (on->g.empty()) return;
      xn->ensure_grad();
      const T* gy = on->g.data();
      T* gx = xn->g.data();
      for (int64_t p = 0; p < planes; ++p) {
        const T* gp = gy + p * oh * ow;
        T* gxp = gx + p * h * w;
        for (int64_t i = 0; i < oh; ++i) {
          for (int64_t j = 0; j < ow; ++j) gxp[(i / r) * w + j / r] += gp[i * ow + j];
        }
      }
    });
  }
  return out;
}

// Bilinear resampling (half-pixel centers). Data-path only: these feed
// pyramid construction behind a config flag and do not record gradients.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t oh, int64_t ow) {
  require(x.dim() >= 2, "bilinear_resize: rank must be >= 2");
  if (detail::grad_tape<T>({&x}) != nullptr) throw ShapeError("bilinear_resize: data-path only, no gradients");
  const int64_t w = x.size(-1), h = x.size(-2);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);

  const int64_t planes = x.numel() / (h * w);
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  const T* px = x.vals().data();
  T* po = out.vals().data();
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = px + p * h * w;
    T* op = po + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      double wy = fy - static_cast<double>(y0);
      int64_t y1 = std::min(std::max(y0 + 1, int64_t(0)), h - 1);
      y0 = std::min(std::max(y0, int64_t(0)), h - 1);
      for (int64_t j = 0; j < ow; ++j) {
        double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double wx = fx - static_cast<double>(x0);
        int64_t x1 = std::min(std::max(x0 + 1, int64_t(0)), w - 1);
        x0 = std::min(std::max(x0, int64_t(0)), w - 1);
        double v00 = xp[y0 * w + x0], v01 = xp[y0 * w + x1];
        double v10 = xp[y1 * w + x0], v11 = xp[y1 * w + x1];
        op[i * ow + j] = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup: rows of table gathered by index.

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int64_t>& ids) {
  require(table.dim() == 2, "embedding: table must be [vocab, width]");
  const int64_t vocab = table.size(0), width = table.size(1);
  for (int64_t id : ids) {
    require(id >= 0 && id < vocab,
            "embedding: id " + std::to_string(id) + " out of range [0," + std::to_string(vocab) + ")");
  }
  Tensor<T> out({static_cast<int64_t>(ids.size()), width});
  const T* pt = table.vals().data();
  T* po = out.vals().data();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(po + static_cast<int64_t>(i) * width, pt + ids[i] * width, static_cast<size_t>(width) * sizeof(T));
  }
  if (Tape<T>* tape = detail::grad_tape<T>({&table})) {
    detail::mark_result(out, tape);
    tape->record([tn = table.node(), on = out.node(), ids, width] {
      if (on->g.empty()) return;
      tn->ensure_grad();
      const T* gy = on->g.data();
      T* gt = tn->g.data();
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* src = gy + static_cast<int64_t>(i) * width;
        T* dst = gt + ids[i] * width;
        for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small layer modules

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Tape<T>& tape, Rng& rng, double w_std = 0.02, bool zero_init = false) {
    weight = zero_init ? Tensor<T>::zeros({in, out}) : Tensor<T>::randn({in, out}, rng, w_std);
    bias = Tensor<T>::zeros({out});
    weight.set_requires_grad(tape);
    bias.set_requires_grad(tape);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Plain layernorm with learned gain/shift composed around the affine-free core.
template <typename T>
struct LayerNormAffine {
  Tensor<T> gain;  // [d]
  Tensor<T> shift; // [d]

  LayerNormAffine() = default;
  LayerNormAffine(int64_t d, Tape<T>& tape) {
    gain = Tensor<T>::ones({d});
    shift = Tensor<T>::zeros({d});
    gain.set_requires_grad(tape);
    shift.set_requires_grad(tape);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return add(mul(layernorm(x), gain), shift); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".shift", shift);
  }
};

// Multi-head attention over token sequences [B, L, W]. Self-attention when
// q and kv coincide; cross-attention otherwise.
template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int64_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t width, int64_t heads_, Tape<T>& tape, Rng& rng)
      : wq(width, width, tape, rng), wk(width, width, tape, rng), wv(width, width, tape, rng),
        wo(width, width, tape, rng), heads(heads_) {
    require(width % heads_ == 0, "attention width " + std::to_string(width) + " not divisible by " +
                                     std::to_string(heads_) + " heads");
  }

  Tensor<T> forward(const Tensor<T>& q_tokens, const Tensor<T>& kv_tokens, const AttnMask* mask) const {
    const int64_t b = q_tokens.size(0), lq = q_tokens.size(1), w = q_tokens.size(2);
    const int64_t lk = kv_tokens.size(1);
    const int64_t dh = w / heads;
    Tensor<T> q = split_heads(wq.forward(q_tokens), b, lq, dh);
    Tensor<T> k = split_heads(wk.forward(kv_tokens), b, lk, dh);
    Tensor<T> v = split_heads(wv.forward(kv_tokens), b, lk, dh);
    Tensor<T> o = softmax_attention(q, k, v, mask);  // [B,H,Lq,dh]
    return wo.forward(merge_heads(o, b, lq, w));
  }

  Tensor<T> forward(const Tensor<T>& tokens, const AttnMask* mask) const { return forward(tokens, tokens, mask); }

  // Incremental form: projects the new tokens, appends their keys/values to
  // the cache, and attends over everything cached so far.
  Tensor<T> forward_cached(const Tensor<T>& new_tokens, Tensor<T>& k_cache, Tensor<T>& v_cache) const {
    const int64_t b = new_tokens.size(0), ln = new_tokens.size(1), w = new_tokens.size(2);
    const int64_t dh = w / heads;
    Tensor<T> q = split_heads(wq.forward(new_tokens), b, ln, dh);
    Tensor<T> k = split_heads(wk.forward(new_tokens), b, ln, dh);
    Tensor<T> v = split_heads(wv.forward(new_tokens), b, ln, dh);
    k_cache = k_cache.numel() == 0 ? k : concat<T>({k_cache, k}, 2);
    v_cache = v_cache.numel() == 0 ? v : concat<T>({v_cache, v}, 2);
    Tensor<T> o = softmax_attention(q, k_cache, v_cache, nullptr);
    return wo.forward(merge_heads(o, b, ln, w));
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }

 private:
  static Tensor<T> split_heads(const Tensor<T>& x, int64_t b, int64_t l, int64_t dh) {
    return transpose(reshape(x, {b, l, x.size(2) / dh, dh}), 1, 2);  // [B,H,L,dh]
  }
  static Tensor<T> merge_heads(const Tensor<T>& x, int64_t b, int64_t l, int64_t w) {
    return reshape(transpose(x, 1, 2), {b, l, w});
  }
};

// Two-layer GELU MLP.
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(int64_t width, int64_t hidden, Tape<T>& tape, Rng& rng)
      : fc1(width, hidden, tape, rng), fc2(hidden, width, tape, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Sinusoidal features of a scalar in [0, 1]; plain data, no gradient path.
template <typename T>
std::vector<T> sinusoidal_features(double t, int64_t dim) {
  std::vector<T> out(static_cast<size_t>(dim));
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[static_cast<size_t>(i)] = static_cast<T>(std::sin(t * freq * 1000.0));
    out[static_cast<size_t>(half + i)] = static_cast<T>(std::cos(t * freq * 1000.0));
  }
  if (dim % 2 == 1) out[static_cast<size_t>(dim - 1)] = static_cast<T>(t);
  return out;
}

}  // namespace scaleflow
