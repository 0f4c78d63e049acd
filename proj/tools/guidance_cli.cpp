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

// Command-line front end. One JSON config document drives every subcommand;
// outputs are deterministic for identical (config, seed) so every command is
// rerunnable. Wall-clock timestamps go only to the sidecar run.log. Exit
// codes: 0 success, 1 runtime failure, 2 config/validation error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "guidance/plot.hpp"
#include "guidance/synthdata.hpp"
#include "guidance/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace guidance;

namespace {

constexpr int kConfigVersion = 1;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::optional<uint64_t> seed;
  bool force = false;
  int jobs = 1;
};

json read_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("version"))
    throw std::invalid_argument("config " + path + " must be an object with a version field");
  if (j.at("version").get<int>() != kConfigVersion)
    throw std::invalid_argument("config version must be " + std::to_string(kConfigVersion));
  return j;
}

// Strict key checking so typos in configs fail loudly instead of silently
// falling back to defaults.
void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(where + ": unknown field \"" + key + "\"");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::localtime(&t));
  return buf;
}

// Timestamps live only here, never in the deterministic artifacts.
void sidecar_log(const std::string& dir, const std::string& msg) {
  std::ofstream os(fs::path(dir) / "run.log", std::ios::app);
  os << "[" << timestamp() << "] " << msg << "\n";
}

json dataset_section(const json& cfg) {
  if (!cfg.contains("dataset"))
    throw std::invalid_argument("config needs a dataset section");
  return cfg.at("dataset");
}

// ---- model / plan parsing ----

ModelConfig model_from_json(const json& cfg, const Dataset& ds) {
  json m = cfg.contains("model") ? cfg.at("model") : json::object();
  check_keys(m, "model", {"arch", "widths", "num_classes"});
  ModelConfig mc;
  mc.arch = arch_from_name(get_or<std::string>(m, "arch", "bcos_net"));
  mc.widths = get_or<std::vector<int>>(m, "widths", {8, 16, 24, 32});
  mc.num_classes = get_or<int>(m, "num_classes", ds.num_classes);
  mc.in_c = 3;
  mc.in_h = mc.in_w = ds.image_size;
  if (mc.num_classes != ds.num_classes)
    throw std::invalid_argument("model.num_classes " + std::to_string(mc.num_classes) +
                                " does not match the dataset's " +
                                std::to_string(ds.num_classes));
  return mc;
}

RunPlan plan_from_json(const json& cfg, int* pretrain_epochs, double* max_f1_drop) {
  json t = cfg.contains("train") ? cfg.at("train") : json::object();
  check_keys(t, "train",
             {"loss", "method", "depth", "intgrad_steps", "intgrad_mode", "lambda_grid",
              "epochs", "pretrain_epochs", "lr", "batch", "cadence", "seed",
              "dilation_percent", "annotation_fraction", "max_f1_drop", "repeats"});
  RunPlan p;
  p.config.loss = loss_from_name(get_or<std::string>(t, "loss", "energy"));
  p.config.method = method_from_name(get_or<std::string>(t, "method", "bcos"));
  p.config.depth = depth_from_name(get_or<std::string>(t, "depth", "Input"));
  p.config.intgrad_steps = get_or<int>(t, "intgrad_steps", 16);
  p.config.intgrad_mode =
      intgrad_mode_from_name(get_or<std::string>(t, "intgrad_mode", "riemann"));
  p.lambda_grid = get_or<std::vector<double>>(t, "lambda_grid", {1.0});
  p.config.lambda_loc = p.lambda_grid.empty() ? 0.0 : p.lambda_grid.front();
  p.config.epochs = get_or<int>(t, "epochs", 10);
  p.config.lr = get_or<double>(t, "lr", 1e-4);
  p.config.batch = get_or<int>(t, "batch", 64);
  p.config.dilation_percent = get_or<double>(t, "dilation_percent", 0.0);
  p.config.annotation_fraction = get_or<double>(t, "annotation_fraction", 1.0);
  p.cadence = get_or<int>(t, "cadence", 1);
  p.seed = get_or<uint64_t>(t, "seed", 0);
  p.repeats = get_or<int>(t, "repeats", 1);
  if (pretrain_epochs) *pretrain_epochs = get_or<int>(t, "pretrain_epochs", p.config.epochs);
  if (max_f1_drop) *max_f1_drop = get_or<double>(t, "max_f1_drop", 0.05);
  validate_plan(p);
  return p;
}

GuidanceConfig eval_config_from_json(const json& cfg, std::string* split,
                                     double* iou_threshold) {
  json e = cfg.contains("eval") ? cfg.at("eval") : json::object();
  check_keys(e, "eval",
             {"split", "method", "depth", "intgrad_steps", "intgrad_mode", "iou_threshold"});
  GuidanceConfig g;
  g.method = method_from_name(get_or<std::string>(e, "method", "bcos"));
  g.depth = depth_from_name(get_or<std::string>(e, "depth", "Input"));
  g.intgrad_steps = get_or<int>(e, "intgrad_steps", 16);
  g.intgrad_mode = intgrad_mode_from_name(get_or<std::string>(e, "intgrad_mode", "riemann"));
  *split = get_or<std::string>(e, "split", "val");
  *iou_threshold = get_or<double>(e, "iou_threshold", -1.0);
  return g;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

// ---- subcommands ----

int cmd_gen_data(const CommonArgs& a) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "dataset"});
  json d = dataset_section(cfg);
  std::string kind = get_or<std::string>(d, "kind", "");
  std::string hash;
  if (kind == "shapes") {
    check_keys(d, "dataset",
               {"kind", "n_train", "n_val", "n_test", "num_classes", "image_size",
                "min_shapes", "max_shapes", "noise", "seed", "spurious"});
    ShapesDatasetConfig c;
    c.n_train = get_or<int>(d, "n_train", c.n_train);
    c.n_val = get_or<int>(d, "n_val", c.n_val);
    c.n_test = get_or<int>(d, "n_test", c.n_test);
    c.num_classes = get_or<int>(d, "num_classes", c.num_classes);
    c.image_size = get_or<int>(d, "image_size", c.image_size);
    c.min_shapes = get_or<int>(d, "min_shapes", c.min_shapes);
    c.max_shapes = get_or<int>(d, "max_shapes", c.max_shapes);
    c.noise = get_or<double>(d, "noise", c.noise);
    c.seed = get_or<uint64_t>(d, "seed", c.seed);
    if (d.contains("spurious")) {
      json s = d.at("spurious");
      check_keys(s, "dataset.spurious", {"class_a", "marker_size", "train_rate", "test_rate"});
      c.spurious.class_a = get_or<int>(s, "class_a", c.spurious.class_a);
      c.spurious.marker_size = get_or<int>(s, "marker_size", c.spurious.marker_size);
      c.spurious.train_rate = get_or<double>(s, "train_rate", c.spurious.train_rate);
      c.spurious.test_rate = get_or<double>(s, "test_rate", c.spurious.test_rate);
    }
    if (a.seed) c.seed = *a.seed;
    hash = gen_shapes(c, a.out);
  } else if (kind == "groups") {
    check_keys(d, "dataset",
               {"kind", "n_train", "n_val", "n_test", "image_size", "noise",
                "bg_separation", "bg_separation_min", "seed"});
    GroupDatasetConfig c;
    c.n_train = get_or<int>(d, "n_train", c.n_train);
    c.n_val = get_or<int>(d, "n_val", c.n_val);
    c.n_test = get_or<int>(d, "n_test", c.n_test);
    c.image_size = get_or<int>(d, "image_size", c.image_size);
    c.noise = get_or<double>(d, "noise", c.noise);
    c.bg_separation = get_or<double>(d, "bg_separation", c.bg_separation);
    c.bg_separation_min = get_or<double>(d, "bg_separation_min", c.bg_separation_min);
    c.seed = get_or<uint64_t>(d, "seed", c.seed);
    if (a.seed) c.seed = *a.seed;
    hash = gen_groups(c, a.out);
  } else {
    throw std::invalid_argument("dataset.kind must be \"shapes\" or \"groups\", got \"" +
                                kind + "\"");
  }
  sidecar_log(a.out, "gen-data wrote " + a.out);
  std::printf("%s\n", hash.c_str());
  return 0;
}

json representative_json(const std::vector<EvalRecord>& front, double baseline_f1,
                         double max_drop) {
  return record_to_json(select_representative(front, baseline_f1, max_drop));
}

int cmd_train(const CommonArgs& a) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "dataset_dir", "model", "train"});
  if (!cfg.contains("dataset_dir"))
    throw std::invalid_argument("train config needs dataset_dir");
  Dataset ds = load_dataset(cfg.at("dataset_dir").get<std::string>());
  ModelConfig mc = model_from_json(cfg, ds);
  int pretrain_epochs = 0;
  double max_drop = 0.05;
  RunPlan plan = plan_from_json(cfg, &pretrain_epochs, &max_drop);
  if (a.seed) plan.seed = *a.seed;
  if (run_completed(a.out) && !a.force)
    throw std::invalid_argument("run directory already holds a completed run: " + a.out +
                                " (use --force to overwrite)");

  BaselineResult base =
      pretrain_baseline(mc, ds, pretrain_epochs, plan.config.lr, plan.seed);
  EvalRecord base_rec = evaluate_split(restore(base.best), ds, "val", plan.config);
  base_rec.checkpoint_id = "baseline";
  base_rec.epoch = base.best_epoch;

  GuidedRun run = guided_finetune(base.best, plan, ds);
  auto front = pareto_front(run.log.evals);
  json report{{"command", "train"},
              {"baseline", record_to_json(base_rec)},
              {"front", front_to_json(front)},
              {"representative", representative_json(front, base_rec.f1, max_drop)}};

  std::vector<Checkpoint> ckpts = run.checkpoints;
  ckpts.push_back(base.best);
  write_run_dir(a.out, plan_to_json(plan, mc), run.log, ckpts, report, a.force);
  sidecar_log(a.out, "train completed: " + std::to_string(run.log.evals.size()) +
                         " evaluated checkpoints");
  std::printf("%s\n", report.at("representative").dump().c_str());
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "dataset_dir", "checkpoint", "eval"});
  for (const char* key : {"dataset_dir", "checkpoint"})
    if (!cfg.contains(key))
      throw std::invalid_argument(std::string("eval config needs ") + key);
  Dataset ds = load_dataset(cfg.at("dataset_dir").get<std::string>());
  std::string ckpt_path = cfg.at("checkpoint").get<std::string>();
  if (!fs::exists(ckpt_path)) throw std::runtime_error("missing checkpoint: " + ckpt_path);
  GuidedModel model = GuidedModel::load_checkpoint(ckpt_path);

  std::string split;
  double iou_threshold = -1.0;
  GuidanceConfig gc = eval_config_from_json(cfg, &split, &iou_threshold);
  double used_threshold = -1.0;
  EvalRecord rec = evaluate_split(model, ds, split, gc, iou_threshold, &used_threshold);
  rec.checkpoint_id = fs::path(ckpt_path).stem().string();

  json out = record_to_json(rec);
  out["split"] = split;
  out["iou_threshold"] = used_threshold;
  write_text_file(a.out, out.dump(2) + "\n");
  std::printf("%s\n", eval_csv_row(rec).c_str());
  return 0;
}

int cmd_pareto(const CommonArgs& a) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "evals_csv", "baseline_f1", "max_f1_drop"});
  if (!cfg.contains("evals_csv"))
    throw std::invalid_argument("pareto config needs evals_csv");
  std::string csv_path = cfg.at("evals_csv").get<std::string>();
  auto records = parse_eval_csv(read_text_file(csv_path));
  auto front = pareto_front(records);
  json out{{"command", "pareto"}, {"front", front_to_json(front)}};
  if (cfg.contains("baseline_f1"))
    out["representative"] = representative_json(front, cfg.at("baseline_f1").get<double>(),
                                                get_or<double>(cfg, "max_f1_drop", 0.05));
  write_text_file(a.out, out.dump(2) + "\n");
  std::printf("front size %zu of %zu records\n", front.size(), records.size());
  return 0;
}

int cmd_protocol(const CommonArgs& a, const std::string& name) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "dataset_dir", "model", "train", "protocol"});
  if (!cfg.contains("dataset_dir"))
    throw std::invalid_argument("protocol config needs dataset_dir");
  Dataset ds = load_dataset(cfg.at("dataset_dir").get<std::string>());
  ModelConfig mc = model_from_json(cfg, ds);
  RunPlan plan = plan_from_json(cfg, nullptr, nullptr);
  if (a.seed) plan.seed = *a.seed;

  json p = cfg.contains("protocol") ? cfg.at("protocol") : json::object();
  check_keys(p, "protocol", {"repeats", "fractions", "dilation_percents", "lambda_scale_mode"});
  plan.repeats = get_or<int>(p, "repeats", plan.repeats);
  validate_plan(plan);

  if (run_completed(a.out) && !a.force)
    throw std::invalid_argument("run directory already holds a completed run: " + a.out +
                                " (use --force to overwrite)");

  json report;
  if (name == "limited") {
    auto mode = get_or<std::string>(p, "lambda_scale_mode", "inverse_fraction");
    if (mode != "inverse_fraction" && mode != "none")
      throw std::invalid_argument("lambda_scale_mode must be inverse_fraction or none");
    report = protocol_limited(
        plan, mc, ds,
        mode == "none" ? LambdaScaleMode::none : LambdaScaleMode::inverse_fraction,
        get_or<std::vector<double>>(p, "fractions", {0.01, 0.1, 1.0}));
  } else if (name == "dilation") {
    report = protocol_dilation(plan, mc, ds,
                               get_or<std::vector<double>>(p, "dilation_percents",
                                                           {0, 10, 25, 50}));
  } else {
    report = protocol_groups(plan, mc, ds);
  }

  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "config.json").string(),
                  json{{"version", kConfigVersion},
                       {"protocol", name},
                       {"plan", plan_to_json(plan, mc)},
                       {"options", p}}
                          .dump(2) +
                      "\n");
  write_text_file((fs::path(a.out) / "report.json").string(), report.dump(2) + "\n");
  sidecar_log(a.out, "protocol " + name + " completed");
  std::printf("protocol %s report written to %s\n", name.c_str(), a.out.c_str());
  return 0;
}

int cmd_plot(const CommonArgs& a) {
  json cfg = read_config(a.config_path);
  check_keys(cfg, "config", {"version", "evals_csv", "metric", "baseline_json", "title"});
  if (!cfg.contains("evals_csv"))
    throw std::invalid_argument("plot config needs evals_csv");
  auto records = parse_eval_csv(read_text_file(cfg.at("evals_csv").get<std::string>()));
  if (records.empty()) throw std::invalid_argument("cannot plot an empty front");
  auto front = pareto_front(records);

  PlotOptions opt;
  opt.metric = get_or<std::string>(cfg, "metric", "epg");
  opt.title = get_or<std::string>(cfg, "title", "");
  EvalRecord baseline;
  bool have_baseline = false;
  if (cfg.contains("baseline_json")) {
    json b = json::parse(read_text_file(cfg.at("baseline_json").get<std::string>()));
    baseline = record_from_json(b);
    have_baseline = true;
  }
  std::string svg =
      render_scatter_svg(records, front, have_baseline ? &baseline : nullptr, opt);
  write_text_file(a.out, svg);
  std::printf("plot written to %s\n", a.out.c_str());
  return 0;
}

void add_common(CLI::App* sub, CommonArgs& a, bool needs_out) {
  sub->add_option("--config", a.config_path, "JSON config file")->required();
  auto* out = sub->add_option("--out", a.out, "output file or directory");
  if (needs_out) out->required();
  sub->add_option("--seed", a.seed, "override the config's seed");
  sub->add_flag("--force", a.force, "overwrite an existing completed run");
  sub->add_option("--jobs", a.jobs, "parallel protocol arms (upper bound)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model-guidance toolkit: train classifiers whose attribution maps "
               "are jointly optimized toward bounding-box annotations"};
  app.require_subcommand(1);
  CommonArgs a;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, a, true);
  auto* train = app.add_subcommand("train", "pretrain a baseline and run a guided sweep");
  add_common(train, a, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval, a, true);
  auto* pareto = app.add_subcommand("pareto", "extract the Pareto front from evals.csv");
  add_common(pareto, a, true);
  auto* protocol =
      app.add_subcommand("protocol", "run a comparative protocol (limited|dilation|groups)");
  std::string protocol_name;
  protocol->add_option("name", protocol_name, "one of limited, dilation, groups")
      ->required()
      ->check(CLI::IsMember({"limited", "dilation", "groups"}));
  add_common(protocol, a, true);
  auto* plot = app.add_subcommand("plot", "render a localization-vs-F1 SVG scatter");
  add_common(plot, a, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(a);
    if (train->parsed()) return cmd_train(a);
    if (eval->parsed()) return cmd_eval(a);
    if (pareto->parsed()) return cmd_pareto(a);
    if (protocol->parsed()) return cmd_protocol(a, protocol_name);
    if (plot->parsed()) return cmd_plot(a);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
