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

// End-to-end tests spawning the installed CLI binary. The binary path comes in
// through the GUIDANCE_CLI_PATH compile definition.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#ifndef GUIDANCE_CLI_PATH
#error "GUIDANCE_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE_MESSAGE(bool(is), "missing file: " << path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

struct CliResult {
  int exit_code = -1;
  std::string out;  // stdout + stderr combined
};

CliResult run_cli(const std::string& args, const TempDir& scratch) {
  const std::string capture = scratch.sub("cli_capture.txt");
  std::string cmd = std::string(GUIDANCE_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
  int status = std::system(cmd.c_str());
  CliResult r;
  REQUIRE(status != -1);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(capture);
  return r;
}

std::string shapes_gen_config(int n_train, uint64_t seed) {
  json cfg{{"version", 1},
           {"dataset",
            {{"kind", "shapes"}, {"n_train", n_train}, {"n_val", 6}, {"n_test", 6},
             {"image_size", 24}, {"seed", seed}}}};
  return cfg.dump();
}

std::string tiny_train_config(const std::string& dataset_dir, uint64_t seed) {
  json cfg{{"version", 1},
           {"dataset_dir", dataset_dir},
           {"model", {{"arch", "relu_net"}, {"widths", {4, 6, 8, 10}}}},
           {"train",
            {{"loss", "energy"}, {"method", "ixg"}, {"depth", "Input"},
             {"lambda_grid", {1e-3, 1e-2}}, {"epochs", 1}, {"pretrain_epochs", 1},
             {"lr", 1e-3}, {"batch", 4}, {"cadence", 1}, {"seed", seed}}}};
  return cfg.dump();
}

}  // namespace

TEST_CASE("cli: help succeeds and a missing subcommand is a usage error") {
  TempDir tmp("cli_help");
  CHECK(run_cli("--help", tmp).exit_code == 0);
  CHECK(run_cli("", tmp).exit_code == 2);
  CHECK(run_cli("frobnicate --config x --out y", tmp).exit_code == 2);
}

TEST_CASE("cli: gen-data writes a dataset and reruns reproduce the manifest hash") {
  TempDir tmp("cli_gen");
  spit(tmp.sub("gen.json"), shapes_gen_config(10, 7));

  auto first = run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " + tmp.sub("ds"),
                       tmp);
  CHECK(first.exit_code == 0);
  CHECK(fs::exists(tmp.sub("ds") + "/manifest.json"));
  CHECK(fs::exists(tmp.sub("ds") + "/annotations.jsonl"));
  CHECK(fs::is_directory(tmp.sub("ds") + "/images"));

  auto again = run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " + tmp.sub("ds2"),
                       tmp);
  CHECK(again.exit_code == 0);
  CHECK(first.out == again.out);  // printed manifest hash is reproducible
  CHECK(first.out.find_first_not_of("0123456789abcdef\n") == std::string::npos);

  // --seed overrides the config seed, changing the data and so the hash
  auto reseeded = run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " +
                              tmp.sub("ds3") + " --seed 99",
                          tmp);
  CHECK(reseeded.exit_code == 0);
  CHECK(reseeded.out != first.out);
}

TEST_CASE("cli: config validation failures exit with code 2 and name the problem") {
  TempDir tmp("cli_badcfg");

  spit(tmp.sub("neg.json"),
       R"({"version":1,"dataset":{"kind":"shapes","n_train":-5}})");
  auto neg = run_cli("gen-data --config " + tmp.sub("neg.json") + " --out " + tmp.sub("x"),
                     tmp);
  CHECK(neg.exit_code == 2);
  CHECK(neg.out.find("positive") != std::string::npos);

  spit(tmp.sub("typo.json"),
       R"({"version":1,"dataset":{"kind":"shapes","n_trian":10}})");
  auto typo = run_cli("gen-data --config " + tmp.sub("typo.json") + " --out " + tmp.sub("x"),
                      tmp);
  CHECK(typo.exit_code == 2);
  CHECK(typo.out.find("n_trian") != std::string::npos);

  spit(tmp.sub("nover.json"), R"({"dataset":{"kind":"shapes"}})");
  CHECK(run_cli("gen-data --config " + tmp.sub("nover.json") + " --out " + tmp.sub("x"), tmp)
            .exit_code == 2);

  spit(tmp.sub("notjson.json"), "{nope");
  CHECK(run_cli("gen-data --config " + tmp.sub("notjson.json") + " --out " + tmp.sub("x"),
                tmp)
            .exit_code == 2);

  // a missing config file is a runtime failure, not a validation failure
  CHECK(run_cli("gen-data --config " + tmp.sub("ghost.json") + " --out " + tmp.sub("x"), tmp)
            .exit_code == 1);
}

TEST_CASE("cli: train produces the run layout, refuses reruns, honors --force and --seed") {
  TempDir tmp("cli_train");
  spit(tmp.sub("gen.json"), shapes_gen_config(10, 7));
  REQUIRE(run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " + tmp.sub("ds"), tmp)
              .exit_code == 0);
  spit(tmp.sub("train.json"), tiny_train_config(tmp.sub("ds"), 3));

  auto first = run_cli("train --config " + tmp.sub("train.json") + " --out " + tmp.sub("run"),
                       tmp);
  CHECK(first.exit_code == 0);
  for (const char* f : {"config.json", "steps.csv", "evals.csv", "report.json"})
    CHECK_MESSAGE(fs::exists(tmp.sub("run") + "/" + f), f);
  CHECK(fs::is_directory(tmp.sub("run") + "/checkpoints"));
  // stdout carries the representative record as JSON
  json rep = json::parse(first.out);
  CHECK(rep.contains("checkpoint"));
  CHECK(rep.contains("f1"));

  // timestamps only in the sidecar log, never in the deterministic artifacts
  CHECK(fs::exists(tmp.sub("run") + "/run.log"));
  const std::string steps = slurp(tmp.sub("run") + "/steps.csv");
  CHECK(steps.find("20") != 0);  // no leading date
  json report = json::parse(slurp(tmp.sub("run") + "/report.json"));
  CHECK(!report.contains("timestamp"));

  auto refused =
      run_cli("train --config " + tmp.sub("train.json") + " --out " + tmp.sub("run"), tmp);
  CHECK(refused.exit_code == 2);
  CHECK(refused.out.find("--force") != std::string::npos);

  auto forced = run_cli(
      "train --config " + tmp.sub("train.json") + " --out " + tmp.sub("run") + " --force",
      tmp);
  CHECK(forced.exit_code == 0);
  CHECK(slurp(tmp.sub("run") + "/steps.csv") == steps);  // rerun is bit-identical

  auto reseeded = run_cli("train --config " + tmp.sub("train.json") + " --out " +
                              tmp.sub("run_seed") + " --seed 12",
                          tmp);
  CHECK(reseeded.exit_code == 0);
  CHECK(slurp(tmp.sub("run_seed") + "/steps.csv") != steps);
}

TEST_CASE("cli: eval reads a checkpoint and writes the record with its threshold") {
  TempDir tmp("cli_eval");
  spit(tmp.sub("gen.json"), shapes_gen_config(10, 7));
  REQUIRE(run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " + tmp.sub("ds"), tmp)
              .exit_code == 0);
  spit(tmp.sub("train.json"), tiny_train_config(tmp.sub("ds"), 3));
  REQUIRE(run_cli("train --config " + tmp.sub("train.json") + " --out " + tmp.sub("run"), tmp)
              .exit_code == 0);

  json cfg{{"version", 1},
           {"dataset_dir", tmp.sub("ds")},
           {"checkpoint", tmp.sub("run") + "/checkpoints/baseline_best.json"},
           {"eval", {{"split", "test"}, {"method", "ixg"}, {"depth", "Input"}}}};
  spit(tmp.sub("eval.json"), cfg.dump());
  auto r = run_cli("eval --config " + tmp.sub("eval.json") + " --out " + tmp.sub("rec.json"),
                   tmp);
  CHECK(r.exit_code == 0);
  json rec = json::parse(slurp(tmp.sub("rec.json")));
  CHECK(rec.at("split") == "test");
  CHECK(rec.at("f1").get<double>() >= 0.0);
  CHECK(rec.at("iou_threshold").get<double>() > 0.0);

  json missing = cfg;
  missing["checkpoint"] = tmp.sub("run") + "/checkpoints/ghost.json";
  spit(tmp.sub("eval2.json"), missing.dump());
  CHECK(run_cli("eval --config " + tmp.sub("eval2.json") + " --out " + tmp.sub("rec2.json"),
                tmp)
            .exit_code == 1);
}

TEST_CASE("cli: pareto keeps only non-dominated records") {
  TempDir tmp("cli_pareto");
  spit(tmp.sub("evals.csv"),
       "checkpoint,epoch,lambda_loc,f1,map,epg,iou,onobject\n"
       "a,1,0.1,0.9,0.9,0.5,0.4,\n"
       "b,2,0.2,0.8,0.8,0.4,0.3,\n");  // b dominated by a on (f1, epg)
  json cfg{{"version", 1}, {"evals_csv", tmp.sub("evals.csv")}, {"baseline_f1", 0.9}};
  spit(tmp.sub("pareto.json"), cfg.dump());
  auto r = run_cli(
      "pareto --config " + tmp.sub("pareto.json") + " --out " + tmp.sub("front.json"), tmp);
  CHECK(r.exit_code == 0);
  json out = json::parse(slurp(tmp.sub("front.json")));
  REQUIRE(out.at("front").size() == 1);
  CHECK(out.at("front")[0].at("checkpoint") == "a");
  CHECK(out.at("representative").at("checkpoint") == "a");

  spit(tmp.sub("garbled.csv"), "not,a,header\n");
  json bad{{"version", 1}, {"evals_csv", tmp.sub("garbled.csv")}};
  spit(tmp.sub("bad.json"), bad.dump());
  CHECK(run_cli("pareto --config " + tmp.sub("bad.json") + " --out " + tmp.sub("f.json"), tmp)
            .exit_code == 2);
}

TEST_CASE("cli: plot renders an SVG scatter and rejects empty inputs") {
  TempDir tmp("cli_plot");
  spit(tmp.sub("evals.csv"),
       "checkpoint,epoch,lambda_loc,f1,map,epg,iou,onobject\n"
       "a,1,0.1,0.9,0.9,0.5,0.4,\n"
       "b,2,0.2,0.7,0.7,0.7,0.6,\n");
  spit(tmp.sub("baseline.json"),
       R"({"checkpoint":"baseline","epoch":0,"lambda_loc":0.0,"f1":0.85,"map":0.8,"epg":0.3,"iou":0.2})");
  json cfg{{"version", 1},
           {"evals_csv", tmp.sub("evals.csv")},
           {"metric", "epg"},
           {"baseline_json", tmp.sub("baseline.json")},
           {"title", "demo"}};
  spit(tmp.sub("plot.json"), cfg.dump());
  auto r = run_cli("plot --config " + tmp.sub("plot.json") + " --out " + tmp.sub("out.svg"),
                   tmp);
  CHECK(r.exit_code == 0);
  const std::string svg = slurp(tmp.sub("out.svg"));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("class=\"front\"") != std::string::npos);
  CHECK(svg.find("class=\"baseline-marker\"") != std::string::npos);
  CHECK(svg.find("demo") != std::string::npos);

  spit(tmp.sub("empty.csv"), "checkpoint,epoch,lambda_loc,f1,map,epg,iou,onobject\n");
  json empty{{"version", 1}, {"evals_csv", tmp.sub("empty.csv")}, {"metric", "epg"}};
  spit(tmp.sub("empty.json"), empty.dump());
  auto bad = run_cli(
      "plot --config " + tmp.sub("empty.json") + " --out " + tmp.sub("bad.svg"), tmp);
  CHECK(bad.exit_code == 2);
  CHECK(bad.out.find("empty front") != std::string::npos);
}

TEST_CASE("cli: protocol validates its name and runs the groups study end to end") {
  TempDir tmp("cli_protocol");
  json gen{{"version", 1},
           {"dataset",
            {{"kind", "groups"}, {"n_train", 8}, {"n_val", 4}, {"n_test", 8},
             {"image_size", 24}, {"seed", 9}}}};
  spit(tmp.sub("gen.json"), gen.dump());
  REQUIRE(run_cli("gen-data --config " + tmp.sub("gen.json") + " --out " + tmp.sub("ds"), tmp)
              .exit_code == 0);

  json cfg{{"version", 1},
           {"dataset_dir", tmp.sub("ds")},
           {"model", {{"arch", "relu_net"}, {"widths", {4, 6, 8, 10}}}},
           {"train",
            {{"loss", "energy"}, {"method", "ixg"}, {"lambda_grid", {1e-3}},
             {"epochs", 1}, {"lr", 1e-3}, {"batch", 4}, {"seed", 3}}},
           {"protocol", {{"repeats", 1}}}};
  spit(tmp.sub("proto.json"), cfg.dump());

  CHECK(run_cli("protocol sideways --config " + tmp.sub("proto.json") + " --out " +
                    tmp.sub("p"),
                tmp)
            .exit_code == 2);

  auto r = run_cli(
      "protocol groups --config " + tmp.sub("proto.json") + " --out " + tmp.sub("p"), tmp);
  CHECK(r.exit_code == 0);
  json report = json::parse(slurp(tmp.sub("p") + "/report.json"));
  CHECK(report.at("protocol") == "groups");
  REQUIRE(report.at("rows").size() == 2);
  for (const auto& row : report.at("rows")) {
    CHECK((row.at("setting") == "conventional" || row.at("setting") == "reversed"));
    CHECK(row.at("guided").at("worst").get<double>() >= 0.0);
  }
}
