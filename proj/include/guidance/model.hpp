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

// Three tiny differentiable classifier families exposing named layer taps for
// attribution extraction:
//   relu_net        convnet with ReLU and biases,
//   homogeneous_net the same without any bias terms (degree-1 positively
//                   homogeneous, so input-times-gradient is complete),
//   bcos_net        cosine-gated dynamic-linear stages admitting an exact
//                   decomposition logit_k = sum(W_k(x) * x) at every tap.
//
// Four conv stages (strides 1,2,2,2) + global average pooling + linear head.
// Taps: Input = raw image, Mid1..Mid3 = stage 1..3 outputs, Final = stage 4.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidance/common.hpp"
#include "guidance/tensor.hpp"

namespace guidance {

enum class Arch { relu_net, homogeneous_net, bcos_net };
enum class Depth { Input = 0, Mid1 = 1, Mid2 = 2, Mid3 = 3, Final = 4 };

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::relu_net: return "relu_net";
    case Arch::homogeneous_net: return "homogeneous_net";
    case Arch::bcos_net: return "bcos_net";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "relu_net") return Arch::relu_net;
  if (s == "homogeneous_net") return Arch::homogeneous_net;
  if (s == "bcos_net") return Arch::bcos_net;
  throw std::invalid_argument("unknown architecture kind: " + s);
}

inline std::string depth_name(Depth d) {
  static const char* names[] = {"Input", "Mid1", "Mid2", "Mid3", "Final"};
  return names[static_cast<int>(d)];
}

inline Depth depth_from_name(const std::string& s) {
  static const char* names[] = {"Input", "Mid1", "Mid2", "Mid3", "Final"};
  for (int i = 0; i < 5; ++i)
    if (s == names[i]) return static_cast<Depth>(i);
  throw std::invalid_argument("unknown depth name: " + s);
}

struct ModelConfig {
  Arch arch = Arch::relu_net;
  int in_c = 3, in_h = 32, in_w = 32;
  int num_classes = 5;
  std::vector<int> widths = {8, 16, 24, 32};  // four conv stages
};

constexpr int kNumStages = 4;
constexpr int kKernel = 3;
constexpr double kBcosEps = 1e-12;  // keeps sqrt/recip finite at zero inputs

struct Forward {
  ad::Var input;                 // {C,H,W}
  std::array<ad::Var, 5> taps;   // indexed by Depth
  ad::Var logits;                // {K,1}
  struct StageCtx {
    ad::Var ghat;  // {Cout, P} cosine gate divided by the weight-row norm
    ad::ConvGeom geom;
  };
  std::vector<StageCtx> bcos;    // one per stage, bcos_net only
};

class GuidedModel {
 public:
  GuidedModel() = default;
  GuidedModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) { init(seed); }

  const ModelConfig& config() const { return cfg_; }
  Arch arch() const { return cfg_.arch; }
  int num_classes() const { return cfg_.num_classes; }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }
  void bump_step() { ++step_; }

  // Stable parameter order: stage1 W [b], ..., stage4 W [b], head W [b].
  const std::vector<ad::Var>& params() const { return params_; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->val.size();
    return n;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& p : params_) out.insert(out.end(), p->val.begin(), p->val.end());
    return out;
  }

  void set_flat_params(const std::vector<double>& flat) {
    check(flat.size() == param_count(), "checkpoint parameter count mismatch");
    size_t off = 0;
    for (auto& p : params_) {
      std::copy(flat.begin() + off, flat.begin() + off + p->val.size(), p->val.begin());
      off += p->val.size();
    }
  }

  uint64_t param_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) h = fnv1a64(p->val.data(), p->val.size() * sizeof(double), h);
    return h;
  }

  // Spatial shape {c,h,w} of the activation at a tap.
  ad::Shape tap_shape(Depth d) const {
    int c = cfg_.in_c, h = cfg_.in_h, w = cfg_.in_w;
    for (int i = 0; i < static_cast<int>(d) && i < kNumStages; ++i) {
      auto g = stage_geom(i, h, w);
      c = cfg_.widths[i];
      h = g.oh;
      w = g.ow;
    }
    return {c, h, w};
  }

  Forward forward(const Image& img) const {
    check(img.c == cfg_.in_c && img.h == cfg_.in_h && img.w == cfg_.in_w,
          "forward: image shape mismatch, expected " + std::to_string(cfg_.in_c) + "x" +
              std::to_string(cfg_.in_h) + "x" + std::to_string(cfg_.in_w));
    Forward f;
    f.input = ad::constant({img.c, img.h, img.w}, img.v);
    f.taps[0] = f.input;
    ad::Var x = f.input;
    for (int i = 0; i < kNumStages; ++i) {
      Forward::StageCtx ctx;
      x = stage_forward(i, x, &ctx);
      if (cfg_.arch == Arch::bcos_net) f.bcos.push_back(ctx);
      f.taps[i + 1] = x;
    }
    f.logits = head_forward(x);
    return f;
  }

  // Resumes the forward pass from an activation standing in for the tap at
  // `d` (the tap's effective-input role in intermediate-layer guidance).
  ad::Var logits_from(Depth d, const ad::Var& act) const {
    check(act->shape == tap_shape(d), "logits_from: activation shape mismatch at " + depth_name(d));
    ad::Var x = act;
    for (int i = static_cast<int>(d); i < kNumStages; ++i) x = stage_forward(i, x, nullptr);
    return head_forward(x);
  }

  // Effective linear weights W_k(x) at a tap: propagates the one-hot class
  // cotangent through the exact transposed linear maps of the gated stages.
  // The gates stay graph-connected, so the result is differentiable with
  // respect to parameters (and so are its downstream losses).
  ad::Var dynamic_linear_decomposition(const Forward& f, int k, Depth depth) const {
    check_bcos("dynamic_linear_decomposition");
    check(k >= 0 && k < cfg_.num_classes, "invalid class id " + std::to_string(k));
    ad::Var v = ad::put(ad::scalar_const(1.0), static_cast<size_t>(k), {cfg_.num_classes, 1});
    ad::Var cur = head_adjoint(v);  // {C4, h4, w4}
    for (int i = kNumStages - 1; i >= static_cast<int>(depth); --i) {
      const auto& ctx = f.bcos[static_cast<size_t>(i)];
      ad::Var mat = ad::reshape(cur, {cfg_.widths[i], ctx.geom.oh * ctx.geom.ow});
      ad::Var scaled = ad::mul(mat, ctx.ghat);
      ad::Var cols = ad::matmul(ad::transpose(weight(i)), scaled);
      cur = ad::fold(cols, ctx.geom);
    }
    return cur;
  }

  // ---- checkpoints ----

  nlohmann::json to_checkpoint_json() const {
    nlohmann::json j;
    j["format"] = "guidance-checkpoint-v1";
    j["arch"] = arch_name(cfg_.arch);
    j["in_shape"] = {cfg_.in_c, cfg_.in_h, cfg_.in_w};
    j["num_classes"] = cfg_.num_classes;
    j["widths"] = cfg_.widths;
    j["step"] = step_;
    j["params"] = flat_params();
    return j;
  }

  static GuidedModel from_checkpoint_json(const nlohmann::json& j) {
    check(j.value("format", "") == "guidance-checkpoint-v1", "unrecognized checkpoint format");
    ModelConfig cfg;
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    auto shape = j.at("in_shape").get<std::vector<int>>();
    check(shape.size() == 3, "checkpoint in_shape must have 3 entries");
    cfg.in_c = shape[0];
    cfg.in_h = shape[1];
    cfg.in_w = shape[2];
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.widths = j.at("widths").get<std::vector<int>>();
    GuidedModel m(cfg, 0);
    m.set_flat_params(j.at("params").get<std::vector<double>>());
    m.set_step(j.at("step").get<int64_t>());
    return m;
  }

  void save_checkpoint(const std::string& path) const {
    std::ofstream os(path);
    check(os.good(), "cannot open checkpoint path for writing: " + path);
    os << to_checkpoint_json().dump();
    if (!os.good()) throw std::runtime_error("failed writing checkpoint: " + path);
  }

  static GuidedModel load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "cannot open checkpoint: " + path);
    nlohmann::json j;
    is >> j;
    return from_checkpoint_json(j);
  }

 private:
  bool has_bias() const { return cfg_.arch == Arch::relu_net; }

  void check_bcos(const char* what) const {
    if (cfg_.arch != Arch::bcos_net)
      throw std::invalid_argument(std::string(what) + ": requires bcos_net, got " +
                                  arch_name(cfg_.arch));
  }

  ad::ConvGeom stage_geom(int i, int h, int w) const {
    const int stride = i == 0 ? 1 : 2;
    const int cin = i == 0 ? cfg_.in_c : cfg_.widths[i - 1];
    return ad::conv_geom(cin, h, w, kKernel, stride, 1);
  }

  const ad::Var& weight(int stage) const { return params_[offsets_[stage]]; }
  const ad::Var& bias(int stage) const { return params_[offsets_[stage] + 1]; }
  const ad::Var& head_weight() const { return params_[offsets_[kNumStages]]; }
  const ad::Var& head_bias() const { return params_[offsets_[kNumStages] + 1]; }

  ad::Var stage_forward(int i, const ad::Var& x, Forward::StageCtx* ctx) const {
    check(x->shape.size() == 3, "stage_forward: {c,h,w} activation required");
    auto g = stage_geom(i, x->shape[1], x->shape[2]);
    check(x->shape[0] == g.c, "stage_forward: channel mismatch");
    const int cout = cfg_.widths[i];
    const int pcount = g.oh * g.ow;
    ad::Var cols = ad::unfold(x, g);
    ad::Var out;
    if (cfg_.arch == Arch::bcos_net) {
      ad::Var lin = ad::matmul(weight(i), cols);
      ad::Var wn = ad::vsqrt(ad::add_scalar(ad::rowsum(ad::mul(weight(i), weight(i))), kBcosEps));
      ad::Var pn = ad::vsqrt(ad::add_scalar(ad::colsum(ad::mul(cols, cols)), kBcosEps));
      ad::Var denom = ad::mul(ad::repeat_cols(wn, pcount), ad::repeat_rows(pn, cout));
      ad::Var cosv = ad::div(lin, denom);
      // B = 2 member: |cos|^{B-1} gate, weight rows scaled to unit norm; the
      // whole factor is treated as the dynamic part of W(x).
      ad::Var ghat = ad::div(ad::vabs(cosv), ad::repeat_cols(wn, pcount));
      out = ad::mul(ghat, lin);
      if (ctx) {
        ctx->ghat = ghat;
        ctx->geom = g;
      }
    } else {
      out = ad::matmul(weight(i), cols);
      if (has_bias()) out = ad::add(out, ad::repeat_cols(bias(i), pcount));
      out = ad::relu(out);
      if (ctx) ctx->geom = g;
    }
    return ad::reshape(out, {cout, g.oh, g.ow});
  }

  ad::Var head_forward(const ad::Var& final_tap) const {
    const int c = final_tap->shape[0];
    const int p = final_tap->shape[1] * final_tap->shape[2];
    ad::Var pooled = ad::scale(ad::rowsum(ad::reshape(final_tap, {c, p})), 1.0 / p);
    ad::Var logits = ad::matmul(head_weight(), pooled);
    if (has_bias()) logits = ad::add(logits, head_bias());
    return logits;  // {K,1}
  }

  // Adjoint of head + global average pooling, {K,1} -> {C4,h4,w4}.
  ad::Var head_adjoint(const ad::Var& v) const {
    auto fs = tap_shape(Depth::Final);
    const int p = fs[1] * fs[2];
    ad::Var feat = ad::matmul(ad::transpose(head_weight()), v);  // {C4,1}
    ad::Var map = ad::scale(ad::repeat_cols(feat, p), 1.0 / p);
    return ad::reshape(map, fs);
  }

  void init(uint64_t seed) {
    params_.clear();
    offsets_.clear();
    std::mt19937_64 rng(seed);
    auto uniform_tensor = [&](ad::Shape shape, int fan_in) {
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-s, s);
      std::vector<double> v(ad::numel(shape));
      for (auto& x : v) x = dist(rng);
      return ad::leaf(std::move(shape), std::move(v));
    };
    check(cfg_.widths.size() == static_cast<size_t>(kNumStages),
          "model requires exactly 4 stage widths");
    int h = cfg_.in_h, w = cfg_.in_w;
    for (int i = 0; i < kNumStages; ++i) {
      auto g = stage_geom(i, h, w);
      const int fan_in = g.c * kKernel * kKernel;
      offsets_.push_back(params_.size());
      params_.push_back(uniform_tensor({cfg_.widths[i], fan_in}, fan_in));
      if (has_bias())
        params_.push_back(ad::leaf({cfg_.widths[i], 1},
                                   std::vector<double>(static_cast<size_t>(cfg_.widths[i]), 0.0)));
      h = g.oh;
      w = g.ow;
    }
    offsets_.push_back(params_.size());
    params_.push_back(uniform_tensor({cfg_.num_classes, cfg_.widths.back()}, cfg_.widths.back()));
    if (has_bias())
      params_.push_back(ad::leaf(
          {cfg_.num_classes, 1}, std::vector<double>(static_cast<size_t>(cfg_.num_classes), 0.0)));
    step_ = 0;
  }

  ModelConfig cfg_;
  std::vector<ad::Var> params_;
  std::vector<size_t> offsets_;  // index into params_ of each stage's weight
  int64_t step_ = 0;
};

// Per-class probabilities from {K,1} logits.
inline std::vector<double> probabilities(const ad::Var& logits) {
  std::vector<double> p(logits->val.size());
  for (size_t i = 0; i < p.size(); ++i) {
    double x = logits->val[i];
    p[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return p;
}

}  // namespace guidance
