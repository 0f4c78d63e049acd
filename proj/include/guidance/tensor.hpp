/* Copyright 2026 The guidance authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Reverse-mode autodiff over dense double tensors. Every backward rule is
// itself expressed through the public ops, so cotangents are ordinary graph
// nodes and can be differentiated again (double backward). This is what lets
// localization losses on attribution maps (which already contain one gradient)
// be optimized with respect to model parameters.
//
// Values are computed eagerly at node construction; graphs are rebuilt per
// evaluation. Ops with a.e.-zero derivatives (sign, step, argmax) enter the
// graph as detached constants snapshotted from current values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "guidance/common.hpp"

namespace guidance::ad {

struct Node;
using Var = std::shared_ptr<Node>;
using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<Var> parents;
  // Maps this node's cotangent to cotangents of `parents` (aligned; entries
  // may be null for detached parents). Null for leaves and constants.
  std::function<std::vector<Var>(const Var&)> backward;
  const char* op = "leaf";
};

// Mutually adjoint op pairs, declared up front so each backward can call its
// partner.
inline Var transpose(const Var& a);
inline Var rowsum(const Var& a);
inline Var colsum(const Var& a);
inline Var repeat_cols(const Var& a, int n);
inline Var repeat_rows(const Var& a, int m);
inline Var vsum(const Var& a);
inline Var broadcast_full(const Var& a, Shape shape);
inline Var take(const Var& a, size_t idx);
inline Var put(const Var& a, size_t idx, Shape shape);

struct ConvGeom {
  int c = 0, h = 0, w = 0;   // input activation dims
  int k = 1, s = 1, p = 0;   // kernel, stride, zero padding
  int oh = 0, ow = 0;        // output dims
};
inline Var unfold(const Var& x, ConvGeom g);
inline Var fold(const Var& cols, ConvGeom g);
inline Var upsample_bilinear(const Var& x, int oh, int ow);
inline Var upsample_bilinear_adjoint(const Var& g, int ih, int iw);

inline Var make_node(Shape shape, std::vector<double> val, std::vector<Var> parents,
                     std::function<std::vector<Var>(const Var&)> backward, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->parents = std::move(parents);
  n->backward = std::move(backward);
  n->op = op;
  return n;
}

inline Var constant(Shape shape, std::vector<double> val) {
  check(val.size() == numel(shape), "constant: value size does not match shape");
  return make_node(std::move(shape), std::move(val), {}, nullptr, "const");
}

inline Var leaf(Shape shape, std::vector<double> val) {
  check(val.size() == numel(shape), "leaf: value size does not match shape");
  return make_node(std::move(shape), std::move(val), {}, nullptr, "leaf");
}

inline Var scalar_const(double x) { return constant({1}, {x}); }
inline Var zeros(Shape shape) {
  size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}
inline Var ones(Shape shape) {
  size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 1.0));
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  check(a->shape == b->shape, std::string(op) + ": shape mismatch");
}

// ---- detached value snapshots (zero derivative a.e.) ----

inline Var sign_const(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] > 0 ? 1.0 : (a->val[i] < 0 ? -1.0 : 0.0);
  return constant(a->shape, std::move(v));
}

inline Var step_const(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] > 0 ? 1.0 : 0.0;
  return constant(a->shape, std::move(v));
}

// Inclusive window: gradient flows where lo <= a <= hi (clamp is the identity
// there, boundaries included).
inline Var window_const(const Var& a, double lo, double hi) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = (a->val[i] >= lo && a->val[i] <= hi) ? 1.0 : 0.0;
  return constant(a->shape, std::move(v));
}

// One at the first maximum in row-major order, zero elsewhere.
inline Var argmax_mask_const(const Var& a) {
  size_t best = 0;
  for (size_t i = 1; i < a->val.size(); ++i)
    if (a->val[i] > a->val[best]) best = i;
  std::vector<double> v(a->val.size(), 0.0);
  v[best] = 1.0;
  return constant(a->shape, std::move(v));
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] + b->val[i];
  return make_node(a->shape, std::move(v), {a, b},
                   [](const Var& ct) { return std::vector<Var>{ct, ct}; }, "add");
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] * b->val[i];
  return make_node(a->shape, std::move(v), {a, b},
                   [a, b](const Var& ct) { return std::vector<Var>{mul(ct, b), mul(ct, a)}; },
                   "mul");
}

inline Var neg(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = -a->val[i];
  return make_node(a->shape, std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{neg(ct)}; }, "neg");
}

inline Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

inline Var scale(const Var& a, double c) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] * c;
  return make_node(a->shape, std::move(v), {a},
                   [c](const Var& ct) { return std::vector<Var>{scale(ct, c)}; }, "scale");
}

inline Var add_scalar(const Var& a, double c) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] + c;
  return make_node(a->shape, std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{ct}; }, "add_scalar");
}

inline Var recip(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / a->val[i];
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) {
                     return std::vector<Var>{neg(mul(ct, recip(mul(a, a))))};
                   },
                   "recip");
}

inline Var div(const Var& a, const Var& b) { return mul(a, recip(b)); }

inline Var vexp(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a->val[i]);
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) { return std::vector<Var>{mul(ct, vexp(a))}; }, "exp");
}

inline Var vlog(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(a->val[i]);
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) { return std::vector<Var>{mul(ct, recip(a))}; }, "log");
}

inline Var vsqrt(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(a->val[i]);
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) {
                     return std::vector<Var>{mul(ct, scale(recip(vsqrt(a)), 0.5))};
                   },
                   "sqrt");
}

inline Var vabs(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a->val[i]);
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) { return std::vector<Var>{mul(ct, sign_const(a))}; },
                   "abs");
}

inline Var relu(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] > 0 ? a->val[i] : 0.0;
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) { return std::vector<Var>{mul(ct, step_const(a))}; },
                   "relu");
}

inline Var clamp(const Var& a, double lo, double hi) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(std::max(a->val[i], lo), hi);
  return make_node(a->shape, std::move(v), {a},
                   [a, lo, hi](const Var& ct) {
                     return std::vector<Var>{mul(ct, window_const(a, lo, hi))};
                   },
                   "clamp");
}

inline Var sigmoid(const Var& a) {
  std::vector<double> v(a->val.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double x = a->val[i];
    v[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_node(a->shape, std::move(v), {a},
                   [a](const Var& ct) {
                     Var s = sigmoid(a);
                     return std::vector<Var>{mul(ct, mul(s, add_scalar(neg(s), 1.0)))};
                   },
                   "sigmoid");
}

// ---- shape ----

inline Var reshape(const Var& a, Shape shape) {
  check(numel(shape) == a->val.size(), "reshape: element count mismatch");
  Shape prev = a->shape;
  return make_node(std::move(shape), a->val, {a},
                   [prev](const Var& ct) { return std::vector<Var>{reshape(ct, prev)}; },
                   "reshape");
}

// ---- matrix ops (shape {m, n}) ----

inline int mrows(const Var& a) {
  check(a->shape.size() == 2, "matrix op: rank-2 tensor required");
  return a->shape[0];
}
inline int mcols(const Var& a) {
  check(a->shape.size() == 2, "matrix op: rank-2 tensor required");
  return a->shape[1];
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Var matmul(const Var& a, const Var& b) {
  int m = mrows(a), k = mcols(a), n = mcols(b);
  check(k == mrows(b), "matmul: inner dimensions differ");
  Eigen::Map<const RowMat> A(a->val.data(), m, k), B(b->val.data(), k, n);
  std::vector<double> v(static_cast<size_t>(m) * n);
  Eigen::Map<RowMat>(v.data(), m, n) = A * B;
  return make_node({m, n}, std::move(v), {a, b},
                   [a, b](const Var& ct) {
                     return std::vector<Var>{matmul(ct, transpose(b)), matmul(transpose(a), ct)};
                   },
                   "matmul");
}

inline Var transpose(const Var& a) {
  int m = mrows(a), n = mcols(a);
  std::vector<double> v(a->val.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(j) * m + i] = a->val[static_cast<size_t>(i) * n + j];
  return make_node({n, m}, std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{transpose(ct)}; }, "transpose");
}

inline Var rowsum(const Var& a) {
  int m = mrows(a), n = mcols(a);
  std::vector<double> v(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[i] += a->val[static_cast<size_t>(i) * n + j];
  return make_node({m, 1}, std::move(v), {a},
                   [n](const Var& ct) { return std::vector<Var>{repeat_cols(ct, n)}; },
                   "rowsum");
}

inline Var colsum(const Var& a) {
  int m = mrows(a), n = mcols(a);
  std::vector<double> v(n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[j] += a->val[static_cast<size_t>(i) * n + j];
  return make_node({1, n}, std::move(v), {a},
                   [m](const Var& ct) { return std::vector<Var>{repeat_rows(ct, m)}; },
                   "colsum");
}

inline Var repeat_cols(const Var& a, int n) {
  int m = mrows(a);
  check(mcols(a) == 1, "repeat_cols: column vector {m,1} required");
  std::vector<double> v(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(i) * n + j] = a->val[i];
  return make_node({m, n}, std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{rowsum(ct)}; }, "repeat_cols");
}

inline Var repeat_rows(const Var& a, int m) {
  int n = mcols(a);
  check(mrows(a) == 1, "repeat_rows: row vector {1,n} required");
  std::vector<double> v(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(i) * n + j] = a->val[j];
  return make_node({m, n}, std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{colsum(ct)}; }, "repeat_rows");
}

// ---- reductions and indexing ----

inline Var vsum(const Var& a) {
  double s = 0;
  for (double x : a->val) s += x;
  Shape prev = a->shape;
  return make_node({1}, {s}, {a},
                   [prev](const Var& ct) {
                     return std::vector<Var>{broadcast_full(ct, prev)};
                   },
                   "vsum");
}

inline Var broadcast_full(const Var& a, Shape shape) {
  check(a->val.size() == 1, "broadcast_full: scalar {1} required");
  std::vector<double> v(numel(shape), a->val[0]);
  return make_node(std::move(shape), std::move(v), {a},
                   [](const Var& ct) { return std::vector<Var>{vsum(ct)}; }, "broadcast_full");
}

inline Var mean_all(const Var& a) { return scale(vsum(a), 1.0 / static_cast<double>(a->val.size())); }

inline Var max_all(const Var& a) {
  double m = a->val[0];
  for (double x : a->val) m = std::max(m, x);
  return make_node({1}, {m}, {a},
                   [a](const Var& ct) {
                     return std::vector<Var>{mul(broadcast_full(ct, a->shape),
                                                 argmax_mask_const(a))};
                   },
                   "max_all");
}

inline Var take(const Var& a, size_t idx) {
  check(idx < a->val.size(), "take: index out of range");
  Shape prev = a->shape;
  return make_node({1}, {a->val[idx]}, {a},
                   [idx, prev](const Var& ct) {
                     return std::vector<Var>{put(ct, idx, prev)};
                   },
                   "take");
}

inline Var put(const Var& a, size_t idx, Shape shape) {
  check(a->val.size() == 1, "put: scalar {1} required");
  check(idx < numel(shape), "put: index out of range");
  std::vector<double> v(numel(shape), 0.0);
  v[idx] = a->val[0];
  return make_node(std::move(shape), std::move(v), {a},
                   [idx](const Var& ct) { return std::vector<Var>{take(ct, idx)}; }, "put");
}

// ---- convolution lowering (im2col) ----

inline ConvGeom conv_geom(int c, int h, int w, int k, int s, int p) {
  ConvGeom g{c, h, w, k, s, p, 0, 0};
  g.oh = (h + 2 * p - k) / s + 1;
  g.ow = (w + 2 * p - k) / s + 1;
  check(g.oh > 0 && g.ow > 0, "conv: kernel larger than padded input");
  return g;
}

// x {c,h,w} -> columns {c*k*k, oh*ow}; out-of-bounds taps read zero.
inline Var unfold(const Var& x, ConvGeom g) {
  check(x->shape == Shape({g.c, g.h, g.w}), "unfold: activation shape mismatch");
  const int kk = g.k * g.k, rows = g.c * kk, cols = g.oh * g.ow;
  std::vector<double> v(static_cast<size_t>(rows) * cols, 0.0);
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const int r = (c * g.k + ki) * g.k + kj;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s + ki - g.p;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s + kj - g.p;
            if (ix < 0 || ix >= g.w) continue;
            v[static_cast<size_t>(r) * cols + oy * g.ow + ox] =
                x->val[(static_cast<size_t>(c) * g.h + iy) * g.w + ix];
          }
        }
      }
  return make_node({rows, cols}, std::move(v), {x},
                   [g](const Var& ct) { return std::vector<Var>{fold(ct, g)}; }, "unfold");
}

// Exact adjoint of unfold: scatter-add columns back into {c,h,w}.
inline Var fold(const Var& cols, ConvGeom g) {
  const int kk = g.k * g.k, rows = g.c * kk, ncols = g.oh * g.ow;
  check(cols->shape == Shape({rows, ncols}), "fold: column shape mismatch");
  std::vector<double> v(static_cast<size_t>(g.c) * g.h * g.w, 0.0);
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const int r = (c * g.k + ki) * g.k + kj;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s + ki - g.p;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s + kj - g.p;
            if (ix < 0 || ix >= g.w) continue;
            v[(static_cast<size_t>(c) * g.h + iy) * g.w + ix] +=
                cols->val[static_cast<size_t>(r) * ncols + oy * g.ow + ox];
          }
        }
      }
  return make_node({g.c, g.h, g.w}, std::move(v), {cols},
                   [g](const Var& ct) { return std::vector<Var>{unfold(ct, g)}; }, "fold");
}

// ---- bilinear resize (align-corners-false, edge replicate) ----

struct LinTap {
  int i0, i1;
  double t;  // out = (1-t)*v[i0] + t*v[i1]
};

inline std::vector<LinTap> bilinear_taps(int in, int out) {
  std::vector<LinTap> taps(out);
  const double s = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    double src = (j + 0.5) * s - 0.5;
    int i0 = static_cast<int>(std::floor(src));
    double t = src - i0;
    int i0c = std::min(std::max(i0, 0), in - 1);
    int i1c = std::min(std::max(i0 + 1, 0), in - 1);
    taps[j] = {i0c, i1c, t};
  }
  return taps;
}

inline Var upsample_bilinear(const Var& x, int oh, int ow) {
  check(x->shape.size() == 3, "upsample_bilinear: {c,h,w} tensor required");
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  check(h <= oh && w <= ow, "upsample_bilinear: target smaller than source");
  auto ty = bilinear_taps(h, oh), tx = bilinear_taps(w, ow);
  std::vector<double> v(static_cast<size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    const double* in = x->val.data() + static_cast<size_t>(ch) * h * w;
    double* out = v.data() + static_cast<size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        double top = (1 - b.t) * in[a.i0 * w + b.i0] + b.t * in[a.i0 * w + b.i1];
        double bot = (1 - b.t) * in[a.i1 * w + b.i0] + b.t * in[a.i1 * w + b.i1];
        out[y * ow + xx] = (1 - a.t) * top + a.t * bot;
      }
  }
  const int ih = h, iw = w;
  return make_node({c, oh, ow}, std::move(v), {x},
                   [ih, iw](const Var& ct) {
                     return std::vector<Var>{upsample_bilinear_adjoint(ct, ih, iw)};
                   },
                   "upsample_bilinear");
}

inline Var upsample_bilinear_adjoint(const Var& g, int ih, int iw) {
  check(g->shape.size() == 3, "upsample_bilinear_adjoint: {c,h,w} tensor required");
  const int c = g->shape[0], oh = g->shape[1], ow = g->shape[2];
  auto ty = bilinear_taps(ih, oh), tx = bilinear_taps(iw, ow);
  std::vector<double> v(static_cast<size_t>(c) * ih * iw, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* in = g->val.data() + static_cast<size_t>(ch) * oh * ow;
    double* out = v.data() + static_cast<size_t>(ch) * ih * iw;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        double gv = in[y * ow + xx];
        out[a.i0 * iw + b.i0] += (1 - a.t) * (1 - b.t) * gv;
        out[a.i0 * iw + b.i1] += (1 - a.t) * b.t * gv;
        out[a.i1 * iw + b.i0] += a.t * (1 - b.t) * gv;
        out[a.i1 * iw + b.i1] += a.t * b.t * gv;
      }
  }
  const int th = oh, tw = ow;
  return make_node({c, ih, iw}, std::move(v), {g},
                   [th, tw](const Var& ct) {
                     return std::vector<Var>{upsample_bilinear(ct, th, tw)};
                   },
                   "upsample_bilinear_adjoint");
}

// ---- gradient driver ----

// Gradients of a scalar node with respect to `wrt`. The returned cotangents
// are graph nodes built from the same ops, so they can be differentiated
// again (equivalent of create_graph=true). Missing paths yield zeros.
inline std::vector<Var> grad(const Var& out, const std::vector<Var>& wrt) {
  check(out->val.size() == 1, "grad: output must be scalar");

  // Iterative post-order DFS; parents visited before children, deterministic.
  std::vector<Node*> topo;
  std::unordered_map<Node*, char> state;  // 1 = open, 2 = done
  std::vector<std::pair<Node*, size_t>> stack{{out.get(), 0}};
  state[out.get()] = 1;
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p && !state.count(p)) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      state[n] = 2;
      topo.push_back(n);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, char> target;
  for (const auto& t : wrt) target[t.get()] = 1;
  std::unordered_map<Node*, char> need;
  for (Node* n : topo) {
    char v = target.count(n) ? 1 : 0;
    if (!v)
      for (const auto& p : n->parents)
        if (p && need[p.get()]) {
          v = 1;
          break;
        }
    need[n] = v;
  }

  std::unordered_map<Node*, Var> ct;
  ct[out.get()] = ones({1});
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    auto found = ct.find(n);
    if (found == ct.end() || !need[n] || !n->backward) continue;
    std::vector<Var> parent_cts = n->backward(found->second);
    check(parent_cts.size() == n->parents.size(), "grad: backward arity mismatch");
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const Var& p = n->parents[i];
      if (!p || !parent_cts[i] || !need[p.get()]) continue;
      auto slot = ct.find(p.get());
      if (slot == ct.end())
        ct[p.get()] = parent_cts[i];
      else
        slot->second = add(slot->second, parent_cts[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto found = ct.find(t.get());
    result.push_back(found != ct.end() ? found->second : zeros(t->shape));
  }
  return result;
}

inline Var grad1(const Var& out, const Var& wrt) { return grad(out, {wrt})[0]; }

}  // namespace guidance::ad
