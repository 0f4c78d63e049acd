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
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "guidance/annotations.hpp"
#include "guidance/attribution.hpp"

namespace guidance {

// One evaluated checkpoint: classification quality (f1, map) plus
// localization quality (epg, iou, optional on-object epg when segmentation
// masks exist). All scores live in [0,1]; onobject < 0 means "not measured".
struct EvalRecord {
  std::string checkpoint_id;
  int epoch = 0;
  double lambda_loc = 0.0;
  double f1 = 0.0;
  double map = 0.0;
  double epg = 0.0;
  double iou = 0.0;
  double onobject = -1.0;

  bool has_onobject() const { return onobject >= 0.0; }
};

inline void validate_record(const EvalRecord& r) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  check(in01(r.f1) && in01(r.map) && in01(r.epg) && in01(r.iou),
        "eval record scores must lie in [0,1]: " + r.checkpoint_id);
  check(r.onobject < 0.0 || in01(r.onobject),
        "on-object score must lie in [0,1]: " + r.checkpoint_id);
}

struct ScoreResult {
  double value = 0.0;
  bool degenerate = false;
};

// Fraction of positive attribution mass inside the mask.
inline ScoreResult epg_score(const Grid& a, const Grid& mask) {
  check(a.h == mask.h && a.w == mask.w, "epg_score: map/mask shape mismatch");
  double inside = 0.0, total = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    double p = a.v[i] > 0.0 ? a.v[i] : 0.0;
    total += p;
    inside += p * mask.v[i];
  }
  if (total < kDegenerateEps) return {0.0, true};
  return {inside / total, false};
}

inline ScoreResult epg_score(const AttributionMap& a, const ClassMask& m) {
  return epg_score(a.grid, m.grid);
}

// IoU of the binarized map (value >= t) against the mask. Expects a map
// already normalized via normalize_pos, so values lie in [0,1].
inline double iou_score(const Grid& ahat, const Grid& mask, double t) {
  check(t >= 0.0 && t <= 1.0, "iou threshold must lie in [0,1]");
  check(ahat.h == mask.h && ahat.w == mask.w, "iou_score: map/mask shape mismatch");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < ahat.v.size(); ++i) {
    bool b = ahat.v[i] >= t;
    bool m = mask.v[i] > 0.0;
    inter += (b && m);
    uni += (b || m);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double iou_score(const AttributionMap& ahat, const ClassMask& m, double t) {
  return iou_score(ahat.grid, m.grid, t);
}

constexpr int kIouThresholdCount = 19;

inline std::vector<double> iou_threshold_grid() {
  std::vector<double> g(kIouThresholdCount);
  for (int i = 0; i < kIouThresholdCount; ++i) g[i] = 0.05 * (i + 1);
  return g;
}

// Grid search for the binarization threshold on a held-out set of
// (raw map, mask) pairs. Maps are normalized here; ties break toward the
// smallest threshold, so the result is deterministic.
inline double select_iou_threshold(
    const std::vector<std::pair<AttributionMap, ClassMask>>& heldout) {
  check(!heldout.empty(), "threshold selection needs a non-empty heldout set");
  std::vector<Grid> norm;
  norm.reserve(heldout.size());
  for (const auto& [a, m] : heldout) {
    check(a.grid.h == m.grid.h && a.grid.w == m.grid.w,
          "threshold selection: map/mask shape mismatch");
    norm.push_back(normalize_pos(a).grid);
  }
  double best_t = 0.0, best_mean = -1.0;
  for (double t : iou_threshold_grid()) {
    double s = 0.0;
    for (size_t i = 0; i < norm.size(); ++i)
      s += iou_score(norm[i], heldout[i].second.grid, t);
    double mean = s / static_cast<double>(norm.size());
    if (mean > best_mean) {
      best_mean = mean;
      best_t = t;
    }
  }
  return best_t;
}

// Share of in-box positive attribution that falls on the actual object.
// Requires the segmentation to be contained in the box mask.
inline ScoreResult onobject_epg(const Grid& a, const Grid& box, const Grid& seg) {
  check(a.h == box.h && a.w == box.w && a.h == seg.h && a.w == seg.w,
        "onobject_epg: shape mismatch");
  for (size_t i = 0; i < seg.v.size(); ++i)
    check(!(seg.v[i] > 0.0 && box.v[i] <= 0.0),
          "onobject_epg: segmentation leaves the box mask");
  double on_seg = 0.0, in_box = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    double p = a.v[i] > 0.0 ? a.v[i] : 0.0;
    in_box += p * box.v[i];
    on_seg += p * seg.v[i];
  }
  if (in_box < kDegenerateEps) return {0.0, true};
  return {on_seg / in_box, false};
}

inline ScoreResult onobject_epg(const AttributionMap& a, const ClassMask& box,
                                const SegmentationMask& seg) {
  return onobject_epg(a.grid, box.grid, seg.grid);
}

namespace detail {

inline void check_prediction_shapes(const std::vector<std::vector<double>>& probs,
                                    const std::vector<std::vector<int>>& labels) {
  check(!probs.empty() && probs.size() == labels.size(),
        "predictions and labels must be non-empty and aligned");
  const size_t k = probs[0].size();
  check(k > 0, "need at least one class");
  for (size_t i = 0; i < probs.size(); ++i)
    check(probs[i].size() == k && labels[i].size() == k,
          "ragged prediction/label rows");
  bool any_pos = false;
  for (const auto& row : labels)
    for (int v : row) {
      check(v == 0 || v == 1, "labels must be 0/1");
      any_pos |= (v == 1);
    }
  check(any_pos, "no positive labels anywhere in the split");
}

}  // namespace detail

// Macro F1 over classes at decision threshold 0.5. Classes with no positive
// labels in the split are skipped.
inline double f1_score(const std::vector<std::vector<double>>& probs,
                       const std::vector<std::vector<int>>& labels) {
  detail::check_prediction_shapes(probs, labels);
  const size_t kc = probs[0].size();
  double sum = 0.0;
  int used = 0;
  for (size_t k = 0; k < kc; ++k) {
    long long tp = 0, fp = 0, fn = 0, pos = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      bool pred = probs[i][k] >= 0.5;
      bool truth = labels[i][k] == 1;
      pos += truth;
      tp += (pred && truth);
      fp += (pred && !truth);
      fn += (!pred && truth);
    }
    if (pos == 0) continue;
    double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = static_cast<double>(tp) / (tp + fn);
    sum += (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    ++used;
  }
  return sum / used;
}

// All-point-interpolated average precision for one class.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& truth) {
  const size_t n = scores.size();
  long long pos = std::accumulate(truth.begin(), truth.end(), 0LL);
  check(pos > 0, "average_precision needs at least one positive");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  // sweep from the bottom of the ranking keeping the running precision max
  std::vector<double> prec(n);
  long long tp = 0;
  for (size_t r = 0; r < n; ++r) {
    tp += truth[order[r]];
    prec[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  double maxp = 0.0, sum = 0.0;
  for (size_t r = n; r-- > 0;) {
    maxp = std::max(maxp, prec[r]);
    if (truth[order[r]] == 1) sum += maxp;
  }
  return sum / static_cast<double>(pos);
}

// Macro mean average precision; same class-skipping rule as f1_score.
inline double map_score(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::vector<int>>& labels) {
  detail::check_prediction_shapes(probs, labels);
  const size_t kc = probs[0].size();
  double sum = 0.0;
  int used = 0;
  for (size_t k = 0; k < kc; ++k) {
    std::vector<double> s(probs.size());
    std::vector<int> t(probs.size());
    long long pos = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i][k];
      t[i] = labels[i][k];
      pos += t[i];
    }
    if (pos == 0) continue;
    sum += average_precision(s, t);
    ++used;
  }
  return sum / used;
}

// a dominates b when a is >= on every axis and > on at least one.
inline bool dominates(const EvalRecord& a, const EvalRecord& b) {
  if (a.f1 < b.f1 || a.epg < b.epg || a.iou < b.iou) return false;
  return a.f1 > b.f1 || a.epg > b.epg || a.iou > b.iou;
}

// Non-dominated subset under (F1, EPG, IoU), input order preserved.
// Sweep over f1-descending blocks with a 2D frontier: every frontier point
// has strictly larger f1 than the block under test, so covering (epg, iou)
// alone implies domination.
inline std::vector<EvalRecord> pareto_front(const std::vector<EvalRecord>& records) {
  check(!records.empty(), "pareto_front needs at least one record");
  const size_t n = records.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return records[a].f1 > records[b].f1;
  });

  struct Point {
    double epg, iou;
  };
  std::vector<Point> frontier;  // 2D maxima of all strictly-better-f1 records
  auto covered = [&](const EvalRecord& r) {
    for (const auto& p : frontier)
      if (p.epg >= r.epg && p.iou >= r.iou) return true;
    return false;
  };
  auto insert_point = [&](Point q) {
    for (const auto& p : frontier)
      if (p.epg >= q.epg && p.iou >= q.iou) return;
    frontier.erase(std::remove_if(frontier.begin(), frontier.end(),
                                  [&](const Point& p) {
                                    return q.epg >= p.epg && q.iou >= p.iou;
                                  }),
                   frontier.end());
    frontier.push_back(q);
  };

  std::vector<bool> keep(n, true);
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && records[order[j]].f1 == records[order[i]].f1) ++j;
    for (size_t a = i; a < j; ++a) {
      const auto& ra = records[order[a]];
      if (covered(ra)) {
        keep[order[a]] = false;
        continue;
      }
      for (size_t b = i; b < j; ++b)
        if (b != a && dominates(records[order[b]], ra)) {
          keep[order[a]] = false;
          break;
        }
    }
    for (size_t a = i; a < j; ++a)
      insert_point({records[order[a]].epg, records[order[a]].iou});
    i = j;
  }

  std::vector<EvalRecord> out;
  for (size_t r = 0; r < n; ++r)
    if (keep[r]) out.push_back(records[r]);
  return out;
}

// Highest-EPG member whose F1 stays within max_drop of the baseline;
// falls back to the best-F1 member when nothing qualifies.
inline EvalRecord select_representative(const std::vector<EvalRecord>& front,
                                        double baseline_f1, double max_drop = 0.05) {
  check(!front.empty(), "representative selection needs a non-empty front");
  const EvalRecord* best = nullptr;
  for (const auto& r : front)
    if (r.f1 >= baseline_f1 - max_drop && (!best || r.epg > best->epg)) best = &r;
  if (!best)
    for (const auto& r : front)
      if (!best || r.f1 > best->f1) best = &r;
  return *best;
}

// ---- CSV / JSON export ----

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string eval_csv_header() {
  return "checkpoint,epoch,lambda_loc,f1,map,epg,iou,onobject";
}

inline std::string eval_csv_row(const EvalRecord& r) {
  std::ostringstream os;
  os << r.checkpoint_id << ',' << r.epoch << ',' << format_double(r.lambda_loc)
     << ',' << format_double(r.f1) << ',' << format_double(r.map) << ','
     << format_double(r.epg) << ',' << format_double(r.iou) << ','
     << (r.has_onobject() ? format_double(r.onobject) : std::string());
  return os.str();
}

// Parses the evals.csv format written above. The header row is mandatory; an
// empty trailing field means the on-object column was not recorded.
inline std::vector<EvalRecord> parse_eval_csv(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != eval_csv_header())
    throw std::invalid_argument("evals csv: missing or unexpected header row");
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    size_t start = 0;
    while (true) {
      size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 8)
      throw std::invalid_argument("evals csv: line " + std::to_string(lineno) +
                                  " has " + std::to_string(f.size()) +
                                  " fields, expected 8");
    EvalRecord r;
    try {
      r.checkpoint_id = f[0];
      r.epoch = std::stoi(f[1]);
      r.lambda_loc = std::stod(f[2]);
      r.f1 = std::stod(f[3]);
      r.map = std::stod(f[4]);
      r.epg = std::stod(f[5]);
      r.iou = std::stod(f[6]);
      r.onobject = f[7].empty() ? -1.0 : std::stod(f[7]);
    } catch (const std::exception&) {
      throw std::invalid_argument("evals csv: line " + std::to_string(lineno) +
                                  " holds a malformed number");
    }
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json record_to_json(const EvalRecord& r) {
  nlohmann::json j{{"checkpoint", r.checkpoint_id}, {"epoch", r.epoch},
                   {"lambda_loc", r.lambda_loc},    {"f1", r.f1},
                   {"map", r.map},                  {"epg", r.epg},
                   {"iou", r.iou}};
  if (r.has_onobject()) j["onobject"] = r.onobject;
  return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.checkpoint_id = j.at("checkpoint").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  r.lambda_loc = j.at("lambda_loc").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.map = j.at("map").get<double>();
  r.epg = j.at("epg").get<double>();
  r.iou = j.at("iou").get<double>();
  if (j.contains("onobject")) r.onobject = j.at("onobject").get<double>();
  return r;
}

inline nlohmann::json front_to_json(const std::vector<EvalRecord>& front) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : front) arr.push_back(record_to_json(r));
  return arr;
}

}  // namespace guidance
