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
#include <cstdio>
#include <string>
#include <vector>

#include "guidance/metrics.hpp"

namespace guidance {

struct PlotOptions {
  std::string metric = "epg";  // y axis: "epg" or "iou"; x axis is always F1
  int width = 640;
  int height = 480;
  std::string title;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline double metric_of(const EvalRecord& r, const std::string& metric) {
  if (metric == "epg") return r.epg;
  if (metric == "iou") return r.iou;
  throw std::invalid_argument("plot metric must be epg or iou, got " + metric);
}

}  // namespace detail

// Renders a localization-vs-F1 scatter: every pooled record as a dot, the
// Pareto front as a highlighted polyline, and (optionally) the baseline as a
// cross marker with the regions it strictly dominates / is dominated by
// shaded. Both axes span [0,1]; output is deterministic.
inline std::string render_scatter_svg(const std::vector<EvalRecord>& records,
                                      const std::vector<EvalRecord>& front,
                                      const EvalRecord* baseline,
                                      const PlotOptions& opt = {}) {
  using detail::fmt2;
  if (front.empty()) throw std::invalid_argument("cannot plot an empty front");
  if (records.empty()) throw std::invalid_argument("cannot plot without records");
  detail::metric_of(front.front(), opt.metric);  // validates the metric name
  const double ml = 56, mr = 18, mt = 30, mb = 46;
  const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
  auto X = [&](double f1) { return ml + f1 * pw; };
  auto Y = [&](double m) { return mt + (1.0 - m) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) +
       "\" height=\"" + std::to_string(opt.height) + "\" viewBox=\"0 0 " +
       std::to_string(opt.width) + " " + std::to_string(opt.height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  if (baseline) {
    double bx = X(baseline->f1), by = Y(detail::metric_of(*baseline, opt.metric));
    // up-right of the baseline strictly dominates it; down-left is dominated
    s += "<rect class=\"dominating-region\" x=\"" + fmt2(bx) + "\" y=\"" + fmt2(mt) +
         "\" width=\"" + fmt2(ml + pw - bx) + "\" height=\"" + fmt2(by - mt) +
         "\" fill=\"#d9f2d9\"/>\n";
    s += "<rect class=\"dominated-region\" x=\"" + fmt2(ml) + "\" y=\"" + fmt2(by) +
         "\" width=\"" + fmt2(bx - ml) + "\" height=\"" + fmt2(mt + ph - by) +
         "\" fill=\"#f6dede\"/>\n";
  }

  // axes and a 0.25-spaced grid with labels
  for (int i = 0; i <= 4; ++i) {
    double t = 0.25 * i;
    s += "<line x1=\"" + fmt2(X(t)) + "\" y1=\"" + fmt2(mt) + "\" x2=\"" + fmt2(X(t)) +
         "\" y2=\"" + fmt2(mt + ph) + "\" stroke=\"#dddddd\"/>\n";
    s += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(Y(t)) + "\" x2=\"" + fmt2(ml + pw) +
         "\" y2=\"" + fmt2(Y(t)) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + fmt2(X(t)) + "\" y=\"" + fmt2(mt + ph + 18) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + fmt2(t) + "</text>\n";
    s += "<text x=\"" + fmt2(ml - 8) + "\" y=\"" + fmt2(Y(t) + 4) +
         "\" font-size=\"11\" text-anchor=\"end\">" + fmt2(t) + "</text>\n";
  }
  s += "<rect x=\"" + fmt2(ml) + "\" y=\"" + fmt2(mt) + "\" width=\"" + fmt2(pw) +
       "\" height=\"" + fmt2(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + fmt2(ml + pw / 2) + "\" y=\"" + fmt2(mt + ph + 36) +
       "\" font-size=\"13\" text-anchor=\"middle\">F1</text>\n";
  s += "<text x=\"16\" y=\"" + fmt2(mt + ph / 2) +
       "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt2(mt + ph / 2) + ")\">" + opt.metric + "</text>\n";
  if (!opt.title.empty())
    s += "<text x=\"" + fmt2(ml + pw / 2) +
         "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">" + opt.title + "</text>\n";

  for (const auto& r : records)
    s += "<circle class=\"record\" cx=\"" + fmt2(X(r.f1)) + "\" cy=\"" +
         fmt2(Y(detail::metric_of(r, opt.metric))) + "\" r=\"3\" fill=\"#9aa7b1\"/>\n";

  std::vector<EvalRecord> poly = front;
  std::sort(poly.begin(), poly.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.f1 < b.f1; });
  std::string pts;
  for (const auto& r : poly) {
    if (!pts.empty()) pts += ' ';
    pts += fmt2(X(r.f1)) + "," + fmt2(Y(detail::metric_of(r, opt.metric)));
  }
  s += "<polyline class=\"front\" points=\"" + pts +
       "\" fill=\"none\" stroke=\"#1f6fd0\" stroke-width=\"2\"/>\n";
  for (const auto& r : poly)
    s += "<circle class=\"front-point\" cx=\"" + fmt2(X(r.f1)) + "\" cy=\"" +
         fmt2(Y(detail::metric_of(r, opt.metric))) + "\" r=\"4\" fill=\"#1f6fd0\"/>\n";

  if (baseline) {
    double bx = X(baseline->f1), by = Y(detail::metric_of(*baseline, opt.metric));
    s += "<path class=\"baseline-marker\" d=\"M " + fmt2(bx - 6) + " " + fmt2(by - 6) +
         " L " + fmt2(bx + 6) + " " + fmt2(by + 6) + " M " + fmt2(bx - 6) + " " +
         fmt2(by + 6) + " L " + fmt2(bx + 6) + " " + fmt2(by - 6) +
         "\" stroke=\"#c0392b\" stroke-width=\"2.5\" fill=\"none\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace guidance
