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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "guidance/annotations.hpp"
#include "guidance/image_io.hpp"

namespace guidance {

struct Sample {
  Image image;
  ImageAnnotation ann;
  std::vector<uint8_t> seg_planes;  // K stacked H*W planes; empty when absent
};

struct Dataset {
  std::string root;
  std::string kind;
  int num_classes = 0;
  int image_size = 0;
  nlohmann::json manifest;
  std::vector<Sample> train, val, test;

  const std::vector<Sample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split: " + name);
  }
  std::vector<Sample>& split(const std::string& name) {
    return const_cast<std::vector<Sample>&>(std::as_const(*this).split(name));
  }

  bool has_segmentation() const {
    for (const auto* sp : {&train, &val, &test})
      for (const auto& s : *sp)
        if (s.seg_planes.empty()) return false;
    return true;
  }
};

// Segmentation plane of class k as a 0/1 grid.
inline Grid seg_plane(const Sample& s, int k, int image_size) {
  check(!s.seg_planes.empty(), "sample has no segmentation planes: " + s.ann.image_id);
  Grid g(image_size, image_size, 0.0);
  const size_t off = static_cast<size_t>(k) * image_size * image_size;
  check(off + g.v.size() <= s.seg_planes.size(),
        "segmentation plane out of range for " + s.ann.image_id);
  for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = s.seg_planes[off + i] > 127 ? 1.0 : 0.0;
  return g;
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw std::runtime_error("no manifest.json under " + dir);
  if (!fs::exists(root / "annotations.jsonl"))
    throw std::runtime_error("no annotations.jsonl under " + dir);

  Dataset ds;
  ds.root = dir;
  {
    std::ifstream mf(root / "manifest.json");
    mf >> ds.manifest;
  }
  check(ds.manifest.value("format", "") == "guidance-dataset-v1",
        "unsupported dataset format in " + dir);
  ds.kind = ds.manifest.at("kind").get<std::string>();
  ds.num_classes = ds.manifest.at("num_classes").get<int>();
  ds.image_size = ds.manifest.at("image_size").get<int>();

  std::ostringstream buf;
  buf << std::ifstream(root / "annotations.jsonl").rdbuf();
  AnnotationSet anns = annotations_from_jsonl(buf.str(), ds.num_classes);

  for (auto& ann : anns.images) {
    Sample s;
    s.image = read_png_rgb((root / "images" / (ann.image_id + ".png")).string());
    check(s.image.h == ds.image_size && s.image.w == ds.image_size,
          "image size mismatch for " + ann.image_id);
    if (!ann.seg_mask_path.empty()) {
      int h = 0, w = 0;
      s.seg_planes = read_png_gray((root / ann.seg_mask_path).string(), h, w);
      check(h == ds.num_classes * ds.image_size && w == ds.image_size,
            "segmentation stack shape mismatch for " + ann.image_id);
    }
    s.ann = ann;
    ds.split(ann.split).push_back(std::move(s));
  }
  check(!ds.train.empty() && !ds.val.empty() && !ds.test.empty(),
        "dataset must provide train, val and test splits: " + dir);
  return ds;
}

}  // namespace guidance
