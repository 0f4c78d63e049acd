// Copyright 2026 The guidance authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "guidance/dataset.hpp"
#include "guidance/losses.hpp"
#include "guidance/metrics.hpp"

namespace guidance {

// ---- optimizer ----

// Adaptive-moment optimizer with bias correction; one slot pair per tensor.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  explicit Adam(double lr_ = 1e-4) : lr(lr_) {}

  void step(const std::vector<ad::Var>& params, const std::vector<std::vector<double>>& grads) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.emplace_back(p->val.size(), 0.0);
        v.emplace_back(p->val.size(), 0.0);
      }
    }
    check(grads.size() == params.size(), "optimizer: gradient/parameter count mismatch");
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& pv = params[i]->val;
      check(grads[i].size() == pv.size(), "optimizer: gradient shape mismatch");
      for (size_t j = 0; j < pv.size(); ++j) {
        double g = grads[i][j];
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
        pv[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
      }
    }
  }
};

// ---- run bookkeeping ----

struct RunPlan {
  GuidanceConfig config;
  std::vector<double> lambda_grid;
  int cadence = 1;  // evaluate every this many epochs
  uint64_t seed = 0;
  int repeats = 1;  // protocol repetitions with derived seeds
};

inline void validate_plan(const RunPlan& p) {
  check(p.cadence >= 1, "run plan: cadence must be >= 1");
  check(!p.lambda_grid.empty(), "run plan: lambda grid must be non-empty");
  for (double l : p.lambda_grid) check(l >= 0.0, "run plan: lambda must be nonnegative");
  check(p.repeats >= 1, "run plan: repeats must be >= 1");
}

struct StepRow {
  int64_t step = 0;
  double lambda_loc = 0.0;
  int epoch = 0;
  double class_term = 0.0;
  double loc_term = 0.0;
  int sampled_class = -1;
  double total = 0.0;
};

struct RunLog {
  std::vector<StepRow> steps;
  std::vector<EvalRecord> evals;
  std::vector<double> epoch_seconds;  // wall clock; never part of persisted run files
};

struct Checkpoint {
  std::string id;
  ModelConfig config;
  std::vector<double> flat;
  int64_t step = 0;
};

inline Checkpoint snapshot(const GuidedModel& m, std::string id) {
  return {std::move(id), m.config(), m.flat_params(), m.step()};
}

inline GuidedModel restore(const Checkpoint& c) {
  GuidedModel m(c.config, 0);
  m.set_flat_params(c.flat);
  m.set_step(c.step);
  return m;
}

// ---- targets ----

// Conventional guidance points at the annotated object; the reversed setting
// relabels images by their background class and masks everything outside the
// object boxes.
enum class GuidanceTarget { conventional, reversed };

inline std::vector<int> target_labels(const ImageAnnotation& ann, int num_classes,
                                      GuidanceTarget t) {
  if (t == GuidanceTarget::conventional) return label_vector(ann, num_classes);
  check(ann.bg_class >= 0 && ann.bg_class < num_classes,
        "reversed target needs a background class on " + ann.image_id);
  std::vector<int> y(static_cast<size_t>(num_classes), 0);
  y[static_cast<size_t>(ann.bg_class)] = 1;
  return y;
}

// ---- training loop ----

// One pass over the training split in a seeded shuffled order. Gradients are
// averaged per batch; the batch shrinks automatically on tiny datasets.
inline void train_one_epoch(GuidedModel& model, const std::vector<Sample>& train,
                            const std::vector<ImageAnnotation>* ann_override,
                            const GuidanceConfig& cfg, GuidanceTarget target,
                            Adam& opt, std::mt19937_64& rng, RunLog& log,
                            int64_t& step_counter, int epoch) {
  check(!train.empty(), "training split is empty");
  if (ann_override)
    check(ann_override->size() == train.size(),
          "annotation override must align with the training split");
  const int n = static_cast<int>(train.size());
  const int batch = std::min(cfg.batch, n);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto& params = model.params();
  std::vector<std::vector<double>> acc(params.size());
  for (size_t i = 0; i < params.size(); ++i) acc[i].assign(params[i]->val.size(), 0.0);
  int in_batch = 0;

  auto flush = [&]() {
    if (in_batch == 0) return;
    for (auto& a : acc)
      for (auto& g : a) g /= in_batch;
    opt.step(params, acc);
    model.bump_step();
    for (auto& a : acc) std::fill(a.begin(), a.end(), 0.0);
    in_batch = 0;
  };

  for (int idx : order) {
    const Sample& s = train[static_cast<size_t>(idx)];
    const ImageAnnotation& ann = ann_override ? (*ann_override)[static_cast<size_t>(idx)]
                                              : s.ann;
    std::vector<int> y = target_labels(ann, model.num_classes(), target);

    LossBreakdown b;
    if (target == GuidanceTarget::reversed) {
      if (cfg.lambda_loc > 0.0 && ann.annotated && !ann.boxes.empty()) {
        Grid mask = rasterize_union(ann.boxes, s.image.h, s.image.w);
        for (auto& v : mask.v) v = 1.0 - v;
        b = combined_loss_explicit(model, s.image, y, ann.bg_class, &mask, cfg);
      } else {
        b = combined_loss_explicit(model, s.image, y, -1, nullptr, cfg);
      }
    } else {
      b = combined_loss(model, s.image, y, ann, cfg, rng);
    }
    if (!std::isfinite(b.total))
      throw std::runtime_error("training diverged (non-finite loss) at step " +
                               std::to_string(step_counter + 1) + ", image " + ann.image_id);

    auto grads = ad::grad(b.total_var, params);
    for (size_t i = 0; i < params.size(); ++i)
      for (size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += grads[i]->val[j];
    ++in_batch;
    if (in_batch == batch) flush();

    ++step_counter;
    log.steps.push_back({step_counter, cfg.lambda_loc, epoch, b.class_term, b.loc_term,
                         b.sampled_class, b.total});
  }
  flush();
}

// ---- evaluation ----

inline std::vector<std::vector<double>> split_probabilities(
    const GuidedModel& m, const std::vector<Sample>& samples) {
  std::vector<std::vector<double>> probs;
  probs.reserve(samples.size());
  for (const auto& s : samples) probs.push_back(probabilities(m.forward(s.image).logits));
  return probs;
}

inline double split_f1(const GuidedModel& m, const std::vector<Sample>& samples,
                       GuidanceTarget target = GuidanceTarget::conventional) {
  std::vector<std::vector<int>> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples)
    labels.push_back(target_labels(s.ann, m.num_classes(), target));
  return f1_score(split_probabilities(m, samples), labels);
}

// Full metric evaluation over one split. Localization scores macro-average
// over every (image, positive class) pair; degenerate pairs score 0. The IoU
// binarization threshold is selected on this split when not supplied, so the
// caller can freeze a validation threshold and reuse it on test. Evaluation
// never mutates the model (asserted via parameter hash).
inline EvalRecord evaluate_split(const GuidedModel& m, const Dataset& ds,
                                 const std::string& split_name, const GuidanceConfig& cfg,
                                 double iou_threshold = -1.0,
                                 double* threshold_out = nullptr) {
  const uint64_t hash_before = m.param_hash();
  const auto& samples = ds.split(split_name);
  check(!samples.empty(), "cannot evaluate an empty split: " + split_name);

  EvalRecord rec;
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<int>> labels;
  std::vector<std::pair<AttributionMap, ClassMask>> pairs;  // normalized upstream of IoU
  double epg_sum = 0.0;
  double on_sum = 0.0;
  int on_count = 0;
  const bool want_seg = ds.has_segmentation();

  for (const auto& s : samples) {
    Forward f = m.forward(s.image);
    probs.push_back(probabilities(f.logits));
    labels.push_back(label_vector(s.ann, m.num_classes()));

    for (int k : s.ann.labels) {
      AttributionRequest req{cfg.method, cfg.depth, k, cfg.intgrad_steps, cfg.intgrad_mode};
      ad::Var map = attribution_var(m, f, req);
      if (map->shape[0] != s.image.h || map->shape[1] != s.image.w)
        map = upsample_map_var(map, s.image.h, s.image.w);
      AttributionMap snap = snapshot_map(map, k, cfg.depth, true);
      ClassMask mask = mask_for_class(s.ann, k, s.image.h, s.image.w);

      epg_sum += epg_score(snap, mask).value;
      pairs.push_back({normalize_pos(snap), mask});
      if (want_seg) {
        Grid seg = seg_plane(s, k, ds.image_size);
        on_sum += onobject_epg(snap.grid, mask.grid, seg).value;
        ++on_count;
      }
    }
  }
  check(!pairs.empty(), "split has no annotated (image, class) pairs: " + split_name);

  rec.f1 = f1_score(probs, labels);
  rec.map = map_score(probs, labels);
  rec.epg = epg_sum / static_cast<double>(pairs.size());

  double t = iou_threshold;
  if (t < 0.0) {
    // maps are pre-normalized, which normalize_pos leaves untouched
    t = select_iou_threshold(pairs);
  }
  if (threshold_out) *threshold_out = t;
  double iou_sum = 0.0;
  for (const auto& [a, mk] : pairs) iou_sum += iou_score(a, mk, t);
  rec.iou = iou_sum / static_cast<double>(pairs.size());
  if (on_count > 0) rec.onobject = on_sum / on_count;

  check(m.param_hash() == hash_before, "evaluation mutated model parameters");
  validate_record(rec);
  return rec;
}

// ---- baseline pretraining ----

struct BaselineResult {
  Checkpoint best;
  double best_f1 = 0.0;
  int best_epoch = 0;
  RunLog log;
};

// Classification-only training; keeps the checkpoint with the best validation
// F1 (the untrained initialization competes as epoch 0).
inline BaselineResult pretrain_baseline(const ModelConfig& mc, const Dataset& ds,
                                        int epochs, double lr, uint64_t seed,
                                        GuidanceTarget target = GuidanceTarget::conventional) {
  check(epochs >= 0, "pretrain: epochs must be nonnegative");
  GuidedModel model(mc, seed);
  GuidanceConfig cfg;
  cfg.lambda_loc = 0.0;
  cfg.lr = lr;
  cfg.epochs = epochs;

  BaselineResult out;
  out.best = snapshot(model, "baseline_e0");
  out.best_f1 = epochs > 0 ? split_f1(model, ds.val, target) : 0.0;
  out.best_epoch = 0;

  Adam opt(lr);
  auto rng = substream(seed, 1, 0, 0);
  int64_t step = 0;
  for (int e = 1; e <= epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    train_one_epoch(model, ds.train, nullptr, cfg, target, opt, rng, out.log, step, e);
    out.log.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    double f1 = split_f1(model, ds.val, target);
    if (f1 > out.best_f1) {
      out.best_f1 = f1;
      out.best_epoch = e;
      out.best = snapshot(model, "baseline_e" + std::to_string(e));
    }
  }
  out.best.id = "baseline_best";
  return out;
}

// ---- guided fine-tuning ----

struct GuidedRun {
  RunLog log;
  std::vector<Checkpoint> checkpoints;  // one per eval record, matching ids
};

// Fine-tunes the baseline once per lambda in the grid, evaluating on the
// validation split at the plan's cadence. All (lambda x epoch) records pool
// into one log for Pareto selection.
inline GuidedRun guided_finetune(const Checkpoint& baseline, const RunPlan& plan,
                                 const Dataset& ds,
                                 const std::vector<ImageAnnotation>* train_ann_override
                                 = nullptr,
                                 GuidanceTarget target = GuidanceTarget::conventional) {
  validate_plan(plan);
  GuidedRun run;
  int64_t step = 0;
  for (size_t li = 0; li < plan.lambda_grid.size(); ++li) {
    GuidedModel model = restore(baseline);
    GuidanceConfig cfg = plan.config;
    cfg.lambda_loc = plan.lambda_grid[li];
    validate_config(model, cfg);
    Adam opt(cfg.lr);
    auto rng = substream(plan.seed, 100 + li, 0, 0);
    for (int e = 1; e <= cfg.epochs; ++e) {
      auto t0 = std::chrono::steady_clock::now();
      train_one_epoch(model, ds.train, train_ann_override, cfg, target, opt, rng, run.log,
                      step, e);
      run.log.epoch_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (e % plan.cadence != 0) continue;
      std::string id = "l" + std::to_string(li) + "_e" + std::to_string(e);
      EvalRecord rec = evaluate_split(model, ds, "val", cfg);
      rec.checkpoint_id = id;
      rec.epoch = e;
      rec.lambda_loc = cfg.lambda_loc;
      run.log.evals.push_back(rec);
      run.checkpoints.push_back(snapshot(model, id));
    }
  }
  return run;
}

// ---- group accuracies ----

struct GroupReport {
  std::array<double, 4> group_acc{};  // G1..G4; groups absent from the split read 0
  double overall = 0.0;
  double worst = 0.0;  // over groups present in the split
};

inline GroupReport group_accuracy(const GuidedModel& m, const std::vector<Sample>& samples,
                                  GuidanceTarget target) {
  check(!samples.empty(), "group accuracy needs a non-empty split");
  std::array<int, 4> hit{}, cnt{};
  int total_hit = 0;
  for (const auto& s : samples) {
    check(s.ann.group >= 1 && s.ann.group <= 4,
          "sample lacks a group tag: " + s.ann.image_id);
    auto p = probabilities(m.forward(s.image).logits);
    int pred = 0;
    for (size_t k = 1; k < p.size(); ++k)
      if (p[k] > p[pred]) pred = static_cast<int>(k);
    int truth = target == GuidanceTarget::conventional ? s.ann.labels.at(0) : s.ann.bg_class;
    bool ok = pred == truth;
    ++cnt[static_cast<size_t>(s.ann.group - 1)];
    hit[static_cast<size_t>(s.ann.group - 1)] += ok;
    total_hit += ok;
  }
  GroupReport r;
  r.overall = static_cast<double>(total_hit) / static_cast<double>(samples.size());
  r.worst = 1.0;
  for (int g = 0; g < 4; ++g) {
    if (cnt[static_cast<size_t>(g)] == 0) continue;
    r.group_acc[static_cast<size_t>(g)] =
        static_cast<double>(hit[static_cast<size_t>(g)]) / cnt[static_cast<size_t>(g)];
    r.worst = std::min(r.worst, r.group_acc[static_cast<size_t>(g)]);
  }
  return r;
}

// ---- run persistence ----

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

inline std::string steps_csv(const RunLog& log) {
  std::string out = "step,lambda_loc,epoch,class_term,loc_term,sampled_class,total\n";
  for (const auto& r : log.steps) {
    out += std::to_string(r.step) + ',' + format_double(r.lambda_loc) + ',' +
           std::to_string(r.epoch) + ',' + format_double(r.class_term) + ',' +
           format_double(r.loc_term) + ',' + std::to_string(r.sampled_class) + ',' +
           format_double(r.total) + '\n';
  }
  return out;
}

inline std::string evals_csv(const std::vector<EvalRecord>& evals) {
  std::string out = eval_csv_header() + "\n";
  for (const auto& r : evals) out += eval_csv_row(r) + "\n";
  return out;
}

inline bool run_completed(const std::string& dir) {
  return std::filesystem::exists(std::filesystem::path(dir) / "report.json");
}

// Persists a run directory: config echo, per-step CSV, pooled eval CSV, all
// checkpoints, and report.json as the completion marker. Refuses to overwrite
// a completed run unless forced. Timestamps live only in the sidecar run.log.
inline void write_run_dir(const std::string& dir, const nlohmann::json& config_echo,
                          const RunLog& log, const std::vector<Checkpoint>& ckpts,
                          const nlohmann::json& report, bool force) {
  namespace fs = std::filesystem;
  if (run_completed(dir) && !force)
    throw std::invalid_argument("run directory already holds a completed run: " + dir +
                                " (use --force to overwrite)");
  fs::create_directories(fs::path(dir) / "checkpoints");
  write_text(fs::path(dir) / "config.json", config_echo.dump(2) + "\n");
  write_text(fs::path(dir) / "steps.csv", steps_csv(log));
  write_text(fs::path(dir) / "evals.csv", evals_csv(log.evals));
  for (const auto& c : ckpts) {
    GuidedModel m = restore(c);
    m.save_checkpoint((fs::path(dir) / "checkpoints" / (c.id + ".json")).string());
  }
  write_text(fs::path(dir) / "report.json", report.dump(2) + "\n");
}

inline nlohmann::json plan_to_json(const RunPlan& p, const ModelConfig& mc) {
  return nlohmann::json{{"arch", arch_name(mc.arch)},
                        {"num_classes", mc.num_classes},
                        {"widths", mc.widths},
                        {"loss", loss_name(p.config.loss)},
                        {"method", method_name(p.config.method)},
                        {"depth", depth_name(p.config.depth)},
                        {"intgrad_steps", p.config.intgrad_steps},
                        {"lambda_grid", p.lambda_grid},
                        {"dilation_percent", p.config.dilation_percent},
                        {"epochs", p.config.epochs},
                        {"lr", p.config.lr},
                        {"batch", p.config.batch},
                        {"cadence", p.cadence},
                        {"seed", p.seed},
                        {"repeats", p.repeats}};
}

// ---- protocols ----

enum class LambdaScaleMode { inverse_fraction, none };

// Limited-annotation study: fractions of annotated training images, with the
// regularization strength rescaled per arm (default lambda / fraction).
inline nlohmann::json protocol_limited(const RunPlan& plan, const ModelConfig& mc,
                                       const Dataset& ds,
                                       LambdaScaleMode scale = LambdaScaleMode::inverse_fraction,
                                       const std::vector<double>& fractions = {0.01, 0.1, 1.0}) {
  validate_plan(plan);
  nlohmann::json arms = nlohmann::json::array();
  for (int rep = 0; rep < plan.repeats; ++rep) {
    uint64_t seed = mix64(plan.seed + 0x9e3779b97f4a7c15ull * rep);
    BaselineResult base = pretrain_baseline(mc, ds, plan.config.epochs, plan.config.lr, seed);
    EvalRecord base_rec = evaluate_split(restore(base.best), ds, "val", plan.config);
    base_rec.checkpoint_id = "baseline";

    for (double frac : fractions) {
      AnnotationSet full;
      full.num_classes = ds.num_classes;
      for (const auto& s : ds.train) full.images.push_back(s.ann);
      AnnotationSet sub = subsample_annotations(full, frac, mix64(seed ^ 0x5bf03635ull));

      RunPlan arm = plan;
      arm.seed = seed;
      if (scale == LambdaScaleMode::inverse_fraction)
        for (auto& l : arm.lambda_grid) l /= frac;
      GuidedRun run = guided_finetune(base.best, arm, ds, &sub.images);

      nlohmann::json arm_json;
      arm_json["fraction"] = frac;
      arm_json["seed"] = seed;
      arm_json["lambda_grid"] = arm.lambda_grid;
      arm_json["baseline"] = record_to_json(base_rec);
      arm_json["records"] = front_to_json(run.log.evals);
      auto front = pareto_front(run.log.evals);
      arm_json["front"] = front_to_json(front);
      arm_json["representative"] =
          record_to_json(select_representative(front, base_rec.f1));
      arms.push_back(std::move(arm_json));
    }
  }
  return nlohmann::json{{"protocol", "limited"},
                        {"lambda_scale_mode",
                         scale == LambdaScaleMode::inverse_fraction ? "inverse_fraction"
                                                                    : "none"},
                        {"arms", arms}};
}

// Box-dilation robustness study over growing guidance masks.
inline nlohmann::json protocol_dilation(const RunPlan& plan, const ModelConfig& mc,
                                        const Dataset& ds,
                                        const std::vector<double>& percents = {0, 10, 25, 50}) {
  validate_plan(plan);
  nlohmann::json arms = nlohmann::json::array();
  for (int rep = 0; rep < plan.repeats; ++rep) {
    uint64_t seed = mix64(plan.seed + 0x9e3779b97f4a7c15ull * rep);
    BaselineResult base = pretrain_baseline(mc, ds, plan.config.epochs, plan.config.lr, seed);
    EvalRecord base_rec = evaluate_split(restore(base.best), ds, "val", plan.config);
    base_rec.checkpoint_id = "baseline";

    for (double p : percents) {
      RunPlan arm = plan;
      arm.seed = seed;
      arm.config.dilation_percent = p;
      GuidedRun run = guided_finetune(base.best, arm, ds);
      nlohmann::json arm_json;
      arm_json["dilation_percent"] = p;
      arm_json["seed"] = seed;
      arm_json["baseline"] = record_to_json(base_rec);
      arm_json["records"] = front_to_json(run.log.evals);
      auto front = pareto_front(run.log.evals);
      arm_json["front"] = front_to_json(front);
      arm_json["representative"] =
          record_to_json(select_representative(front, base_rec.f1));
      arms.push_back(std::move(arm_json));
    }
  }
  return nlohmann::json{{"protocol", "dilation"}, {"arms", arms}};
}

// Group-shift study: trains baseline and guided models on the conventional
// (foreground) and reversed (background) targets, reporting per-group and
// worst-group test accuracies. Guided model: first lambda of the plan's grid,
// best validation F1 checkpoint.
inline nlohmann::json protocol_groups(const RunPlan& plan, const ModelConfig& mc,
                                      const Dataset& ds) {
  validate_plan(plan);
  check(ds.kind == "groups", "groups protocol needs a group-tagged dataset");
  nlohmann::json rows = nlohmann::json::array();

  auto report_json = [](const GroupReport& g) {
    return nlohmann::json{{"g1", g.group_acc[0]}, {"g2", g.group_acc[1]},
                          {"g3", g.group_acc[2]}, {"g4", g.group_acc[3]},
                          {"overall", g.overall}, {"worst", g.worst}};
  };

  for (int rep = 0; rep < plan.repeats; ++rep) {
    uint64_t seed = mix64(plan.seed + 0x9e3779b97f4a7c15ull * rep);
    for (GuidanceTarget target : {GuidanceTarget::conventional, GuidanceTarget::reversed}) {
      const char* setting =
          target == GuidanceTarget::conventional ? "conventional" : "reversed";
      BaselineResult base =
          pretrain_baseline(mc, ds, plan.config.epochs, plan.config.lr, seed, target);
      GroupReport base_rep = group_accuracy(restore(base.best), ds.test, target);

      RunPlan arm = plan;
      arm.seed = seed;
      arm.lambda_grid = {plan.lambda_grid.front()};
      GuidedRun run = guided_finetune(base.best, arm, ds, nullptr, target);
      // pick the guided checkpoint by validation F1 on the same target;
      // ties go to the latest (most regularized) checkpoint
      size_t best = 0;
      double best_f1 = -1.0;
      for (size_t i = 0; i < run.checkpoints.size(); ++i) {
        double f1 = split_f1(restore(run.checkpoints[i]), ds.val, target);
        if (f1 >= best_f1) {
          best_f1 = f1;
          best = i;
        }
      }
      check(!run.checkpoints.empty(), "groups protocol produced no checkpoints");
      GroupReport guided_rep =
          group_accuracy(restore(run.checkpoints[best]), ds.test, target);

      rows.push_back({{"setting", setting},
                      {"seed", seed},
                      {"baseline", report_json(base_rep)},
                      {"guided", report_json(guided_rep)},
                      {"guided_checkpoint", run.checkpoints[best].id}});
    }
  }
  return nlohmann::json{{"protocol", "groups"}, {"rows", rows}};
}

inline nlohmann::json run_protocol(const std::string& name, const RunPlan& plan,
                                   const ModelConfig& mc, const Dataset& ds) {
  if (name == "limited") return protocol_limited(plan, mc, ds);
  if (name == "dilation") return protocol_dilation(plan, mc, ds);
  if (name == "groups") return protocol_groups(plan, mc, ds);
  throw std::invalid_argument("unknown protocol: " + name +
                              " (expected limited, dilation or groups)");
}

}  // namespace guidance
