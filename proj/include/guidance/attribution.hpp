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

// Differentiable attribution methods over GuidedModel taps. Each *_var
// builder returns the channel-summed {h,w} map as a live graph node, so a
// localization loss on it remains differentiable w.r.t. model parameters.
// Plain wrappers snapshot the values into AttributionMap for evaluation.
//
// Channel aggregation is sum-first, clamp-later: the positive part is taken
// of the channel-summed map.

#include <string>
#include <utility>
#include <vector>

#include "guidance/common.hpp"
#include "guidance/model.hpp"
#include "guidance/tensor.hpp"

namespace guidance {

struct AttributionMap {
  Grid grid;  // signed values
  int class_id = -1;
  Depth depth = Depth::Input;
  bool upsampled = false;  // false: native tap resolution
  bool degenerate = false;
};

enum class AttrMethod { ixg, gradcam, intgrad, bcos };
enum class IntgradMode { riemann, exact };

inline std::string method_name(AttrMethod m) {
  switch (m) {
    case AttrMethod::ixg: return "ixg";
    case AttrMethod::gradcam: return "gradcam";
    case AttrMethod::intgrad: return "intgrad";
    case AttrMethod::bcos: return "bcos";
  }
  return "?";
}

inline AttrMethod method_from_name(const std::string& s) {
  if (s == "ixg") return AttrMethod::ixg;
  if (s == "gradcam") return AttrMethod::gradcam;
  if (s == "intgrad") return AttrMethod::intgrad;
  if (s == "bcos") return AttrMethod::bcos;
  throw std::invalid_argument("unknown attribution method: " + s);
}

inline IntgradMode intgrad_mode_from_name(const std::string& s) {
  if (s == "riemann") return IntgradMode::riemann;
  if (s == "exact") return IntgradMode::exact;
  throw std::invalid_argument("unknown intgrad mode: " + s);
}

struct AttributionRequest {
  AttrMethod method = AttrMethod::ixg;
  Depth depth = Depth::Input;
  int class_id = 0;
  int intgrad_steps = 16;
  IntgradMode intgrad_mode = IntgradMode::riemann;
};

inline void validate_request(const GuidedModel& m, const AttributionRequest& r) {
  check(r.class_id >= 0 && r.class_id < m.num_classes(),
        "invalid class id " + std::to_string(r.class_id));
  if (r.method == AttrMethod::gradcam && r.depth == Depth::Input)
    throw std::invalid_argument("gradcam at depth=Input is unsupported");
  if (r.method == AttrMethod::intgrad) {
    check(r.intgrad_steps >= 1, "intgrad requires steps >= 1");
    if (r.intgrad_mode == IntgradMode::exact && m.arch() != Arch::homogeneous_net)
      throw std::invalid_argument("intgrad exact mode requires homogeneous_net, got " +
                                  arch_name(m.arch()));
  }
  if (r.method == AttrMethod::bcos && m.arch() != Arch::bcos_net)
    throw std::invalid_argument("bcos attributions require bcos_net, got " +
                                arch_name(m.arch()));
}

// {c,h,w} -> {h,w} channel sum.
inline ad::Var channel_sum_var(const ad::Var& x) {
  check(x->shape.size() == 3, "channel_sum: {c,h,w} tensor required");
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  return ad::reshape(ad::colsum(ad::reshape(x, {c, h * w})), {h, w});
}

// ---- graph builders ----

inline ad::Var ixg_var(const GuidedModel& m, const Forward& f, int k, Depth depth) {
  check(k >= 0 && k < m.num_classes(), "invalid class id " + std::to_string(k));
  const ad::Var& tap = f.taps[static_cast<int>(depth)];
  ad::Var g = ad::grad1(ad::take(f.logits, static_cast<size_t>(k)), tap);
  return channel_sum_var(ad::mul(tap, g));
}

inline ad::Var gradcam_var(const GuidedModel& m, const Forward& f, int k, Depth depth) {
  check(k >= 0 && k < m.num_classes(), "invalid class id " + std::to_string(k));
  if (depth == Depth::Input)
    throw std::invalid_argument("gradcam at depth=Input is unsupported");
  const ad::Var& tap = f.taps[static_cast<int>(depth)];
  const int c = tap->shape[0], h = tap->shape[1], w = tap->shape[2];
  const int p = h * w;
  ad::Var g = ad::grad1(ad::take(f.logits, static_cast<size_t>(k)), tap);
  ad::Var alpha = ad::scale(ad::rowsum(ad::reshape(g, {c, p})), 1.0 / p);  // {c,1}
  ad::Var weighted = ad::mul(ad::reshape(tap, {c, p}), ad::repeat_cols(alpha, p));
  return ad::relu(ad::reshape(ad::colsum(weighted), {h, w}));
}

// Left-Riemann path integral from the zero baseline; `exact` collapses to a
// single backward pass, valid only for degree-1 homogeneous models where it
// coincides with input-times-gradient.
inline ad::Var intgrad_var(const GuidedModel& m, const Forward& f, int k, Depth depth, int steps,
                           IntgradMode mode) {
  check(k >= 0 && k < m.num_classes(), "invalid class id " + std::to_string(k));
  if (mode == IntgradMode::exact) {
    if (m.arch() != Arch::homogeneous_net)
      throw std::invalid_argument("intgrad exact mode requires homogeneous_net, got " +
                                  arch_name(m.arch()));
    return ixg_var(m, f, k, depth);
  }
  check(steps >= 1, "intgrad requires steps >= 1");
  const ad::Var& tap = f.taps[static_cast<int>(depth)];
  ad::Var gsum;
  for (int i = 0; i < steps; ++i) {
    const double s = static_cast<double>(i) / steps;
    ad::Var act = ad::scale(tap, s);
    ad::Var logits = m.logits_from(depth, act);
    ad::Var g = ad::grad1(ad::take(logits, static_cast<size_t>(k)), act);
    gsum = gsum ? ad::add(gsum, g) : g;
  }
  return channel_sum_var(ad::mul(tap, ad::scale(gsum, 1.0 / steps)));
}

inline ad::Var bcos_attr_var(const GuidedModel& m, const Forward& f, int k, Depth depth) {
  ad::Var weff = m.dynamic_linear_decomposition(f, k, depth);
  return channel_sum_var(ad::mul(weff, f.taps[static_cast<int>(depth)]));
}

inline ad::Var attribution_var(const GuidedModel& m, const Forward& f,
                               const AttributionRequest& r) {
  validate_request(m, r);
  switch (r.method) {
    case AttrMethod::ixg: return ixg_var(m, f, r.class_id, r.depth);
    case AttrMethod::gradcam: return gradcam_var(m, f, r.class_id, r.depth);
    case AttrMethod::intgrad:
      return intgrad_var(m, f, r.class_id, r.depth, r.intgrad_steps, r.intgrad_mode);
    case AttrMethod::bcos: return bcos_attr_var(m, f, r.class_id, r.depth);
  }
  throw std::invalid_argument("unknown attribution method");
}

// Bilinear upsampling of a {h,w} map Var to image resolution.
inline ad::Var upsample_map_var(const ad::Var& map, int H, int W) {
  check(map->shape.size() == 2, "upsample_map: {h,w} map required");
  const int h = map->shape[0], w = map->shape[1];
  check(h <= H && w <= W, "upsample_map: target smaller than source");
  return ad::reshape(ad::upsample_bilinear(ad::reshape(map, {1, h, w}), H, W), {H, W});
}

// ---- normalization (graph forms; bool flags degeneracy) ----

constexpr double kDegenerateEps = 1e-8;

inline std::pair<ad::Var, bool> normalize_pos_var(const ad::Var& a) {
  ad::Var ap = ad::relu(a);
  ad::Var m = ad::max_all(ap);
  if (m->val[0] < kDegenerateEps) return {ad::zeros(a->shape), true};
  return {ad::mul(ap, ad::recip(ad::broadcast_full(m, a->shape))), false};
}

inline std::pair<ad::Var, bool> normalize_signed_var(const ad::Var& a) {
  ad::Var m = ad::max_all(ad::vabs(a));
  if (m->val[0] < kDegenerateEps) return {ad::zeros(a->shape), true};
  return {ad::mul(a, ad::recip(ad::broadcast_full(m, a->shape))), false};
}

// ---- plain AttributionMap API ----

inline AttributionMap snapshot_map(const ad::Var& v, int k, Depth depth, bool upsampled = false) {
  check(v->shape.size() == 2, "snapshot_map: {h,w} map required");
  AttributionMap m;
  m.grid.h = v->shape[0];
  m.grid.w = v->shape[1];
  m.grid.v = v->val;
  m.class_id = k;
  m.depth = depth;
  m.upsampled = upsampled;
  return m;
}

inline AttributionMap ixg(const GuidedModel& m, const Image& img, int k, Depth depth) {
  auto f = m.forward(img);
  return snapshot_map(ixg_var(m, f, k, depth), k, depth);
}

inline AttributionMap gradcam(const GuidedModel& m, const Image& img, int k, Depth depth) {
  auto f = m.forward(img);
  return snapshot_map(gradcam_var(m, f, k, depth), k, depth);
}

inline AttributionMap intgrad(const GuidedModel& m, const Image& img, int k, Depth depth,
                              int steps, IntgradMode mode = IntgradMode::riemann) {
  auto f = m.forward(img);
  return snapshot_map(intgrad_var(m, f, k, depth, steps, mode), k, depth);
}

inline AttributionMap bcos_attr(const GuidedModel& m, const Image& img, int k, Depth depth) {
  auto f = m.forward(img);
  return snapshot_map(bcos_attr_var(m, f, k, depth), k, depth);
}

inline AttributionMap compute_attribution(const GuidedModel& m, const Image& img,
                                          const AttributionRequest& r) {
  validate_request(m, r);
  auto f = m.forward(img);
  return snapshot_map(attribution_var(m, f, r), r.class_id, r.depth);
}

inline AttributionMap positive_part(const AttributionMap& a) {
  AttributionMap out = a;
  for (auto& v : out.grid.v) v = v > 0 ? v : 0.0;
  return out;
}

inline AttributionMap normalize_signed(const AttributionMap& a) {
  AttributionMap out = a;
  double m = 0;
  for (double v : a.grid.v) m = std::max(m, std::fabs(v));
  if (m < kDegenerateEps) {
    std::fill(out.grid.v.begin(), out.grid.v.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  for (auto& v : out.grid.v) v /= m;
  return out;
}

inline AttributionMap normalize_pos(const AttributionMap& a) {
  AttributionMap out = positive_part(a);
  double m = 0;
  for (double v : out.grid.v) m = std::max(m, v);
  if (m < kDegenerateEps) {
    std::fill(out.grid.v.begin(), out.grid.v.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  for (auto& v : out.grid.v) v /= m;
  return out;
}

inline AttributionMap upsample_map(const AttributionMap& a, int H, int W) {
  auto v = ad::constant({a.grid.h, a.grid.w}, a.grid.v);
  AttributionMap out = snapshot_map(upsample_map_var(v, H, W), a.class_id, a.depth, true);
  out.degenerate = a.degenerate;
  return out;
}

}  // namespace guidance
