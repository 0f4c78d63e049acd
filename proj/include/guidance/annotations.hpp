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

// Bounding-box and mask data model: rasterization of per-class box unions,
// box dilation, annotation subsampling, and JSONL serialization.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidance/common.hpp"

namespace guidance {

// Half-open pixel box: (x, y) is inside iff xmin <= x < xmax, ymin <= y < ymax.
struct BoundingBox {
  int class_id = 0;
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

inline std::string box_str(const BoundingBox& b) {
  std::ostringstream os;
  os << "box(class " << b.class_id << ", [" << b.xmin << "," << b.ymin << ","
     << b.xmax << "," << b.ymax << "))";
  return os.str();
}

struct ClassMask {
  int class_id = -1;
  Grid grid;  // entries in {0,1}
};

struct SegmentationMask {
  int class_id = -1;
  Grid grid;  // entries in {0,1}; subset of the class box union
};

struct ImageAnnotation {
  std::string image_id;
  std::string split;               // "train" / "val" / "test"
  std::vector<int> labels;         // class ids with y_k = 1
  std::vector<BoundingBox> boxes;  // empty when unannotated
  std::vector<SegmentationMask> segs;
  std::string seg_mask_path;       // relative PNG path, planes stacked by class
  bool annotated = true;
  // Group-dataset extras; -1 / 0 when not applicable.
  int group = 0;
  int bg_class = -1;
};

struct AnnotationSet {
  int num_classes = 0;
  std::vector<ImageAnnotation> images;
};

inline void validate_box(const BoundingBox& b, int height, int width) {
  check(b.xmin < b.xmax && b.ymin < b.ymax, "degenerate " + box_str(b));
  check(b.xmin >= 0 && b.ymin >= 0 && b.xmax <= width && b.ymax <= height,
        "out-of-bounds " + box_str(b) + " for " + std::to_string(width) + "x" +
            std::to_string(height));
}

// Union of boxes of one class as a binary grid. Empty list yields all zeros.
inline ClassMask rasterize_mask(const std::vector<BoundingBox>& boxes, int height, int width) {
  check(height > 0 && width > 0, "rasterize_mask: empty grid");
  ClassMask m;
  m.grid = Grid(height, width, 0.0);
  if (boxes.empty()) return m;
  m.class_id = boxes.front().class_id;
  for (const auto& b : boxes) {
    check(b.class_id == m.class_id, "rasterize_mask: mixed classes, offending " + box_str(b));
    validate_box(b, height, width);
    for (int y = b.ymin; y < b.ymax; ++y)
      for (int x = b.xmin; x < b.xmax; ++x) m.grid.at(y, x) = 1.0;
  }
  return m;
}

// Scales each box's width and height by (1 + p/100) about its center, rounds
// outward, clips to the image. p = 0 is the identity on coordinates.
inline std::vector<BoundingBox> dilate_boxes(const std::vector<BoundingBox>& boxes, double p,
                                             int height, int width) {
  check(p >= 0.0, "dilate_boxes: negative percentage " + std::to_string(p));
  std::vector<BoundingBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    validate_box(b, height, width);
    if (p == 0.0) {
      out.push_back(b);
      continue;
    }
    const double f = 1.0 + p / 100.0;
    const double cx = 0.5 * (b.xmin + b.xmax), cy = 0.5 * (b.ymin + b.ymax);
    const double hw = 0.5 * f * (b.xmax - b.xmin), hh = 0.5 * f * (b.ymax - b.ymin);
    BoundingBox d = b;
    d.xmin = std::max(0, static_cast<int>(std::floor(cx - hw)));
    d.ymin = std::max(0, static_cast<int>(std::floor(cy - hh)));
    d.xmax = std::min(width, static_cast<int>(std::ceil(cx + hw)));
    d.ymax = std::min(height, static_cast<int>(std::ceil(cy + hh)));
    out.push_back(d);
  }
  return out;
}

// Boxes of class k, dilated by p percent (dilation applied per box, before
// the rasterized union).
inline ClassMask mask_for_class(const ImageAnnotation& ann, int k, int height, int width,
                                double dilation_percent = 0.0) {
  std::vector<BoundingBox> sel;
  for (const auto& b : ann.boxes)
    if (b.class_id == k) sel.push_back(b);
  ClassMask m = rasterize_mask(dilate_boxes(sel, dilation_percent, height, width), height, width);
  m.class_id = k;
  return m;
}

// Union of all boxes regardless of class, as a 0/1 grid.
inline Grid rasterize_union(const std::vector<BoundingBox>& boxes, int height, int width) {
  Grid g(height, width, 0.0);
  for (const auto& b : boxes) {
    validate_box(b, height, width);
    for (int y = b.ymin; y < b.ymax; ++y)
      for (int x = b.xmin; x < b.xmax; ++x) g.at(y, x) = 1.0;
  }
  return g;
}

// Keeps boxes on exactly ceil(fraction * N) images chosen uniformly at random;
// the rest are marked unannotated. Deterministic per seed.
inline AnnotationSet subsample_annotations(const AnnotationSet& anns, double fraction,
                                           uint64_t seed) {
  check(fraction > 0.0 && fraction <= 1.0,
        "subsample_annotations: fraction must lie in (0,1], got " + std::to_string(fraction));
  check(!anns.images.empty(), "subsample_annotations: empty annotation set");
  const size_t n = anns.images.size();
  // Guard against fp noise pushing an exact product like 0.01*2500 past its
  // integer value.
  const auto m = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> keep(n, 0);
  for (size_t i = 0; i < m && i < n; ++i) keep[idx[i]] = 1;
  AnnotationSet out = anns;
  for (size_t i = 0; i < n; ++i) {
    if (keep[i]) continue;
    out.images[i].boxes.clear();
    out.images[i].segs.clear();
    out.images[i].annotated = false;
  }
  return out;
}

// ---- JSONL serialization ----

inline nlohmann::json annotation_to_json(const ImageAnnotation& a) {
  nlohmann::json j;
  j["image_id"] = a.image_id;
  j["split"] = a.split;
  j["labels"] = a.labels;
  auto boxes = nlohmann::json::array();
  for (const auto& b : a.boxes)
    boxes.push_back({b.class_id, b.xmin, b.ymin, b.xmax, b.ymax});
  j["boxes"] = boxes;
  j["annotated"] = a.annotated;
  if (!a.seg_mask_path.empty()) j["seg_mask_path"] = a.seg_mask_path;
  if (a.group != 0) j["group"] = a.group;
  if (a.bg_class >= 0) j["bg_class"] = a.bg_class;
  return j;
}

inline ImageAnnotation annotation_from_json(const nlohmann::json& j) {
  ImageAnnotation a;
  a.image_id = j.at("image_id").get<std::string>();
  a.split = j.value("split", std::string("train"));
  a.labels = j.at("labels").get<std::vector<int>>();
  for (const auto& row : j.at("boxes")) {
    check(row.size() == 5, "annotation boxes must be [class_id,xmin,ymin,xmax,ymax]");
    BoundingBox b;
    b.class_id = row[0].get<int>();
    b.xmin = row[1].get<int>();
    b.ymin = row[2].get<int>();
    b.xmax = row[3].get<int>();
    b.ymax = row[4].get<int>();
    a.boxes.push_back(b);
  }
  a.annotated = j.value("annotated", true);
  a.seg_mask_path = j.value("seg_mask_path", std::string());
  a.group = j.value("group", 0);
  a.bg_class = j.value("bg_class", -1);
  return a;
}

inline std::string annotations_to_jsonl(const AnnotationSet& anns) {
  std::string out;
  for (const auto& a : anns.images) {
    out += annotation_to_json(a).dump();
    out += '\n';
  }
  return out;
}

inline AnnotationSet annotations_from_jsonl(const std::string& text, int num_classes) {
  AnnotationSet set;
  set.num_classes = num_classes;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    set.images.push_back(annotation_from_json(nlohmann::json::parse(line)));
  }
  return set;
}

}  // namespace guidance
