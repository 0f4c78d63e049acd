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

// Joint training objective: multi-label binary cross-entropy plus one of four
// localization losses applied to the attribution map of a single sampled
// ground-truth class. total = class + lambda_loc * loc.
//
// Localization losses:
//   energy  negated fraction of positive attribution mass inside the mask
//           (consumes the unnormalized positive part; the ratio is already
//           scale invariant),
//   l1      mean absolute distance between the mask and the max-normalized
//           positive map,
//   ppce    masked cross-entropy pushing normalized attributions toward 1
//           inside the mask,
//   rrr     squared signed-normalized attributions outside the mask.
//
// Degenerate attribution maps (no positive mass / all zeros) contribute a
// constant localization term so training never crashes on dead attributions.

#include <random>
#include <string>
#include <vector>

#include "guidance/annotations.hpp"
#include "guidance/attribution.hpp"
#include "guidance/common.hpp"
#include "guidance/model.hpp"
#include "guidance/tensor.hpp"

namespace guidance {

enum class LossKind { energy, l1, ppce, rrr };

inline std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::energy: return "energy";
    case LossKind::l1: return "l1";
    case LossKind::ppce: return "ppce";
    case LossKind::rrr: return "rrr";
  }
  return "?";
}

inline LossKind loss_from_name(const std::string& s) {
  if (s == "energy") return LossKind::energy;
  if (s == "l1") return LossKind::l1;
  if (s == "ppce") return LossKind::ppce;
  if (s == "rrr") return LossKind::rrr;
  throw std::invalid_argument("unknown loss kind: " + s);
}

// Default lambda_loc sweep per loss for full-annotation training.
inline std::vector<double> default_lambda_grid(LossKind k) {
  switch (k) {
    case LossKind::energy: return {5e-4, 1e-3, 5e-3};
    case LossKind::l1: return {1e-3, 5e-3, 1e-2};
    case LossKind::ppce: return {1e-4, 5e-4, 1e-3};
    case LossKind::rrr: return {5e-6, 1e-5, 5e-5};
  }
  return {};
}

struct GuidanceConfig {
  LossKind loss = LossKind::energy;
  AttrMethod method = AttrMethod::ixg;
  Depth depth = Depth::Input;
  int intgrad_steps = 16;
  IntgradMode intgrad_mode = IntgradMode::riemann;
  double lambda_loc = 1e-3;
  uint64_t sampling_seed = 0;
  double annotation_fraction = 1.0;
  double dilation_percent = 0.0;
  int epochs = 10;
  double lr = 1e-4;
  int batch = 64;
};

inline void validate_config(const GuidedModel& m, const GuidanceConfig& c) {
  check(c.lambda_loc >= 0.0, "lambda_loc must be nonnegative");
  check(c.annotation_fraction > 0.0 && c.annotation_fraction <= 1.0,
        "annotation fraction must lie in (0,1]");
  check(c.dilation_percent >= 0.0, "dilation percent must be nonnegative");
  check(c.epochs >= 0, "epochs must be nonnegative");
  check(c.lr > 0.0, "learning rate must be positive");
  check(c.batch >= 1, "batch size must be >= 1");
  AttributionRequest r{c.method, c.depth, 0, c.intgrad_steps, c.intgrad_mode};
  validate_request(m, r);
}

struct LossBreakdown {
  double class_term = 0.0;
  double loc_term = 0.0;
  int sampled_class = -1;  // -1: none
  double total = 0.0;
  bool degenerate = false;
  bool no_target = false;
  ad::Var total_var;  // live graph node for the optimizer
};

// ---- classification ----

// Mean over classes of BCE in the numerically stable logit form
// max(z,0) - z*y + log(1 + exp(-|z|)).
inline ad::Var classification_loss_var(const ad::Var& logits, const std::vector<int>& y) {
  check(logits->val.size() == y.size(),
        "classification_loss: label count " + std::to_string(y.size()) +
            " does not match " + std::to_string(logits->val.size()) + " logits");
  for (int v : y) check(v == 0 || v == 1, "labels must be 0 or 1, got " + std::to_string(v));
  std::vector<double> yv(y.begin(), y.end());
  ad::Var ycol = ad::constant(logits->shape, yv);
  ad::Var stable = ad::sub(ad::relu(logits), ad::mul(logits, ycol));
  ad::Var softplus = ad::vlog(ad::add_scalar(ad::vexp(ad::neg(ad::vabs(logits))), 1.0));
  return ad::mean_all(ad::add(stable, softplus));
}

inline double classification_loss(const ad::Var& logits, const std::vector<int>& y) {
  return classification_loss_var(logits, y)->val[0];
}

// Uniform draw over the positive classes; -1 when there are none or the
// image carries no annotations.
inline int sample_guidance_class(const std::vector<int>& y, std::mt19937_64& rng,
                                 bool annotated = true) {
  if (!annotated) return -1;
  std::vector<int> pos;
  for (size_t k = 0; k < y.size(); ++k)
    if (y[k] == 1) pos.push_back(static_cast<int>(k));
  if (pos.empty()) return -1;
  std::uniform_int_distribution<size_t> d(0, pos.size() - 1);
  return pos[d(rng)];
}

// ---- localization losses (graph forms) ----

struct LocResult {
  ad::Var loss;  // scalar {1}
  bool degenerate = false;
  bool no_target = false;
};

inline void check_loss_shapes(const ad::Var& a, const Grid& m, const char* op) {
  check(a->shape.size() == 2 && a->shape[0] == m.h && a->shape[1] == m.w,
        std::string(op) + ": map/mask shape mismatch");
}

inline ad::Var mask_const(const Grid& m) { return ad::constant({m.h, m.w}, m.v); }

inline LocResult energy_loss_var(const ad::Var& a, const Grid& mask) {
  check_loss_shapes(a, mask, "energy_loss");
  ad::Var ap = ad::relu(a);
  ad::Var total = ad::vsum(ap);
  if (total->val[0] < kDegenerateEps) return {ad::scalar_const(0.0), true, false};
  ad::Var inside = ad::vsum(ad::mul(ap, mask_const(mask)));
  return {ad::neg(ad::div(inside, total)), false, false};
}

// Distance term of the l1 loss, taking an already-normalized map.
inline ad::Var l1_distance_var(const ad::Var& ahat, const Grid& mask) {
  return ad::mean_all(ad::vabs(ad::sub(mask_const(mask), ahat)));
}

inline LocResult l1_loss_var(const ad::Var& a, const Grid& mask) {
  check_loss_shapes(a, mask, "l1_loss");
  auto [ahat, degen] = normalize_pos_var(a);
  if (degen)
    return {ad::scalar_const(mask.sum() / static_cast<double>(mask.h * mask.w)), true, false};
  return {l1_distance_var(ahat, mask), false, false};
}

constexpr double kPpceLogEps = 1e-6;

inline LocResult ppce_loss_var(const ad::Var& a, const Grid& mask) {
  check_loss_shapes(a, mask, "ppce_loss");
  const double mass = mask.sum();
  if (mass == 0.0) return {ad::scalar_const(0.0), false, true};
  auto [ahat, degen] = normalize_pos_var(a);
  ad::Var logv = ad::vlog(ad::clamp(ahat, kPpceLogEps, 1.0));
  ad::Var loss = ad::neg(ad::scale(ad::vsum(ad::mul(mask_const(mask), logv)), 1.0 / mass));
  return {loss, degen, false};
}

inline LocResult rrr_loss_var(const ad::Var& a, const Grid& mask) {
  check_loss_shapes(a, mask, "rrr_loss");
  auto [ahat, degen] = normalize_signed_var(a);
  if (degen) return {ad::scalar_const(0.0), true, false};
  std::vector<double> inv(mask.v.size());
  for (size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - mask.v[i];
  ad::Var outside = ad::constant({mask.h, mask.w}, std::move(inv));
  return {ad::vsum(ad::mul(outside, ad::mul(ahat, ahat))), false, false};
}

inline LocResult localization_loss_var(LossKind kind, const ad::Var& a, const Grid& mask) {
  switch (kind) {
    case LossKind::energy: return energy_loss_var(a, mask);
    case LossKind::l1: return l1_loss_var(a, mask);
    case LossKind::ppce: return ppce_loss_var(a, mask);
    case LossKind::rrr: return rrr_loss_var(a, mask);
  }
  throw std::invalid_argument("unknown loss kind");
}

// ---- plain forms over snapshots ----

inline ad::Var map_const(const AttributionMap& a) {
  return ad::constant({a.grid.h, a.grid.w}, a.grid.v);
}

inline double energy_loss(const AttributionMap& a, const ClassMask& m) {
  return energy_loss_var(map_const(a), m.grid).loss->val[0];
}
inline double l1_loss(const AttributionMap& a, const ClassMask& m) {
  return l1_loss_var(map_const(a), m.grid).loss->val[0];
}
inline double ppce_loss(const AttributionMap& a, const ClassMask& m) {
  return ppce_loss_var(map_const(a), m.grid).loss->val[0];
}
inline double rrr_loss(const AttributionMap& a, const ClassMask& m) {
  return rrr_loss_var(map_const(a), m.grid).loss->val[0];
}

// ---- combined objective ----

// Labels as a dense 0/1 vector from the annotation record.
inline std::vector<int> label_vector(const ImageAnnotation& ann, int num_classes) {
  std::vector<int> y(static_cast<size_t>(num_classes), 0);
  for (int k : ann.labels) {
    check(k >= 0 && k < num_classes, "label class id out of range: " + std::to_string(k));
    y[static_cast<size_t>(k)] = 1;
  }
  return y;
}

// Joint objective with caller-provided guidance class and mask. A negative
// sampled_class (or a null mask) yields a pure classification step.
inline LossBreakdown combined_loss_explicit(const GuidedModel& model, const Image& img,
                                            const std::vector<int>& y, int sampled_class,
                                            const Grid* mask, const GuidanceConfig& cfg) {
  Forward f = model.forward(img);
  ad::Var cls = classification_loss_var(f.logits, y);

  LossBreakdown out;
  out.sampled_class = sampled_class;

  ad::Var loc;
  if (sampled_class >= 0 && mask) {
    AttributionRequest req{cfg.method, cfg.depth, sampled_class, cfg.intgrad_steps,
                           cfg.intgrad_mode};
    ad::Var a = attribution_var(model, f, req);
    if (a->shape[0] != img.h || a->shape[1] != img.w)
      a = upsample_map_var(a, img.h, img.w);
    LocResult lr = localization_loss_var(cfg.loss, a, *mask);
    loc = lr.loss;
    out.degenerate = lr.degenerate;
    out.no_target = lr.no_target;
  } else {
    out.sampled_class = -1;
    loc = ad::scalar_const(0.0);
  }

  out.total_var = ad::add(cls, ad::scale(loc, cfg.lambda_loc));
  out.class_term = cls->val[0];
  out.loc_term = loc->val[0];
  out.total = out.total_var->val[0];
  return out;
}

inline LossBreakdown combined_loss(const GuidedModel& model, const Image& img,
                                   const std::vector<int>& y, const ImageAnnotation& ann,
                                   const GuidanceConfig& cfg, std::mt19937_64& rng) {
  validate_config(model, cfg);
  if (cfg.lambda_loc == 0.0)
    return combined_loss_explicit(model, img, y, -1, nullptr, cfg);
  int k = sample_guidance_class(y, rng, ann.annotated && !ann.boxes.empty());
  if (k < 0) return combined_loss_explicit(model, img, y, -1, nullptr, cfg);
  ClassMask mask = mask_for_class(ann, k, img.h, img.w, cfg.dilation_percent);
  return combined_loss_explicit(model, img, y, k, &mask.grid, cfg);
}

}  // namespace guidance
