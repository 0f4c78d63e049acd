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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "guidance/annotations.hpp"
#include "guidance/image_io.hpp"

namespace guidance {

// ---- configs ----

// Engineered co-occurrence: a corner marker patch stamped on images of one
// class at a per-split rate, giving the guidance losses a shortcut to kill.
struct SpuriousSpec {
  int class_a = 0;
  int marker_size = 5;
  double train_rate = 0.0;
  double test_rate = 0.0;
};

struct ShapesDatasetConfig {
  int n_train = 2500;
  int n_val = 500;
  int n_test = 500;
  int num_classes = 5;  // square, disc, cross, triangle, ring
  int image_size = 32;
  int min_shapes = 1;
  int max_shapes = 3;
  double noise = 0.08;
  SpuriousSpec spurious;
  uint64_t seed = 0;
};

struct GroupDatasetConfig {
  int n_train = 2000;
  int n_val = 400;
  int n_test = 800;
  int image_size = 32;
  double noise = 0.08;
  // Per-image land/water color contrast is drawn uniformly from
  // [bg_separation_min, bg_separation]; 1 keeps the background trivially
  // separable everywhere, while a wide low range yields images whose
  // background cue is weak, so classifiers under either labeling are pushed
  // to rely partly on the competing cue.
  double bg_separation = 1.0;
  double bg_separation_min = 1.0;
  uint64_t seed = 0;
};

constexpr int kMaxShapeClasses = 5;

inline void validate_config(const ShapesDatasetConfig& c) {
  check(c.n_train > 0 && c.n_val > 0 && c.n_test > 0,
        "shapes config: split sizes must be positive");
  check(c.num_classes >= 2 && c.num_classes <= kMaxShapeClasses,
        "shapes config: num_classes must lie in [2," + std::to_string(kMaxShapeClasses) + "]");
  check(c.image_size >= 24, "shapes config: image_size must be >= 24");
  check(c.min_shapes >= 1 && c.min_shapes <= c.max_shapes && c.max_shapes <= c.num_classes,
        "shapes config: need 1 <= min_shapes <= max_shapes <= num_classes");
  check(c.noise >= 0.0 && c.noise <= 0.15, "shapes config: noise must lie in [0,0.15]");
  check(c.spurious.train_rate >= 0.0 && c.spurious.train_rate <= 1.0 &&
            c.spurious.test_rate >= 0.0 && c.spurious.test_rate <= 1.0,
        "shapes config: spurious rates must lie in [0,1]");
  check(c.spurious.class_a >= 0 && c.spurious.class_a < c.num_classes,
        "shapes config: spurious class out of range");
  check(c.spurious.marker_size >= 2 && c.spurious.marker_size <= c.image_size / 4,
        "shapes config: marker_size out of range");
}

inline void validate_config(const GroupDatasetConfig& c) {
  check(c.n_train > 0 && c.n_val > 0 && c.n_test > 0,
        "groups config: split sizes must be positive");
  check(c.n_train % 2 == 0 && c.n_val % 2 == 0,
        "groups config: train/val sizes must be even (G1/G4 halves)");
  check(c.n_test % 4 == 0, "groups config: test size must be divisible by 4");
  check(c.image_size >= 24, "groups config: image_size must be >= 24");
  // the background textures stay channel-separable up to this noise level
  check(c.noise >= 0.0 && c.noise <= 0.1, "groups config: noise must lie in [0,0.1]");
  check(c.bg_separation > 0.0 && c.bg_separation <= 1.0,
        "groups config: bg_separation must lie in (0,1]");
  check(c.bg_separation_min > 0.0 && c.bg_separation_min <= c.bg_separation,
        "groups config: need 0 < bg_separation_min <= bg_separation");
}

// ---- drawing primitives ----

namespace detail {

struct Pixel {
  int y, x;
};

// Filled rasters on a pixel grid; each returns the exact covered pixel set.
inline std::vector<Pixel> raster_square(int top, int left, int size) {
  std::vector<Pixel> px;
  for (int y = top; y < top + size; ++y)
    for (int x = left; x < left + size; ++x) px.push_back({y, x});
  return px;
}

inline std::vector<Pixel> raster_disc(int top, int left, int size) {
  std::vector<Pixel> px;
  double c = (size - 1) / 2.0, r2 = (size / 2.0) * (size / 2.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if ((y - c) * (y - c) + (x - c) * (x - c) <= r2) px.push_back({top + y, left + x});
  return px;
}

inline std::vector<Pixel> raster_cross(int top, int left, int size) {
  std::vector<Pixel> px;
  int bar = std::max(2, size / 3);
  int lo = (size - bar) / 2, hi = lo + bar;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if ((y >= lo && y < hi) || (x >= lo && x < hi)) px.push_back({top + y, left + x});
  return px;
}

inline std::vector<Pixel> raster_triangle(int top, int left, int size) {
  std::vector<Pixel> px;
  double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y) {
    double half = (y + 1) * c / size;
    for (int x = 0; x < size; ++x)
      if (std::fabs(x - c) <= half) px.push_back({top + y, left + x});
  }
  return px;
}

inline std::vector<Pixel> raster_ring(int top, int left, int size) {
  std::vector<Pixel> px;
  double c = (size - 1) / 2.0;
  double r2 = (size / 2.0) * (size / 2.0), inner2 = r2 * 0.30;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      if (d2 <= r2 && d2 >= inner2) px.push_back({top + y, left + x});
    }
  return px;
}

inline std::vector<Pixel> raster_shape(int cls, int top, int left, int size) {
  switch (cls) {
    case 0: return raster_square(top, left, size);
    case 1: return raster_disc(top, left, size);
    case 2: return raster_cross(top, left, size);
    case 3: return raster_triangle(top, left, size);
    case 4: return raster_ring(top, left, size);
  }
  throw std::invalid_argument("unknown shape class");
}

// Saturated base color per shape class, jittered per image.
inline std::array<double, 3> shape_color(int cls) {
  switch (cls) {
    case 0: return {0.90, 0.15, 0.15};  // square: red
    case 1: return {0.15, 0.80, 0.20};  // disc: green
    case 2: return {0.20, 0.35, 0.95};  // cross: blue
    case 3: return {0.95, 0.85, 0.10};  // triangle: yellow
    case 4: return {0.85, 0.20, 0.85};  // ring: magenta
  }
  throw std::invalid_argument("unknown shape class");
}

inline BoundingBox tight_box(int cls, const std::vector<Pixel>& px) {
  int ymin = 1 << 30, xmin = 1 << 30, ymax = -1, xmax = -1;
  for (const auto& p : px) {
    ymin = std::min(ymin, p.y);
    xmin = std::min(xmin, p.x);
    ymax = std::max(ymax, p.y);
    xmax = std::max(xmax, p.x);
  }
  return {cls, xmin, ymin, xmax + 1, ymax + 1};
}

inline bool boxes_intersect(const BoundingBox& a, const BoundingBox& b, int pad) {
  return a.xmin < b.xmax + pad && b.xmin < a.xmax + pad && a.ymin < b.ymax + pad &&
         b.ymin < a.ymax + pad;
}

// Low-frequency sinusoid plus per-pixel noise over a flat base color.
inline void paint_background(Image& img, const std::array<double, 3>& base,
                             double texture_amp, const std::array<bool, 3>& textured,
                             double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
  std::uniform_int_distribution<int> ufreq(1, 3);
  double fy = ufreq(rng) * 2.0 * M_PI / img.h;
  double fx = ufreq(rng) * 2.0 * M_PI / img.w;
  double phase = uphase(rng);
  std::uniform_real_distribution<double> un(-noise, noise);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double t = texture_amp * std::sin(fy * y + fx * x + phase);
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = base[ch] + (textured[ch] ? t : 0.0) + un(rng);
    }
}

inline void draw_pixels(Image& img, const std::vector<Pixel>& px,
                        const std::array<double, 3>& color, double shade_amp,
                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> us(-shade_amp, shade_amp);
  for (const auto& p : px) {
    double s = us(rng);
    for (int ch = 0; ch < 3; ++ch) img.at(ch, p.y, p.x) = color[ch] + s;
  }
}

struct HashAccumulator {
  uint64_t state = 1469598103934665603ull;
  void add(const void* data, size_t n) { state = fnv1a64(data, n, state); }
  void add(const std::string& s) { add(s.data(), s.size()); }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state));
    return buf;
  }
};

struct DatasetWriter {
  std::filesystem::path root;
  int num_classes;
  int image_size;
  std::vector<ImageAnnotation> anns;
  HashAccumulator hash;

  DatasetWriter(const std::string& dir, int k, int sz) : root(dir), num_classes(k), image_size(sz) {
    std::filesystem::create_directories(root / "images");
    std::filesystem::create_directories(root / "masks");
  }

  // One grayscale PNG per image holding the per-class segmentation planes
  // stacked vertically: plane k covers rows [k*H, (k+1)*H).
  void add(const std::string& id, const Image& img, ImageAnnotation ann,
           const std::vector<std::vector<uint8_t>>& seg_planes) {
    write_png_rgb((root / "images" / (id + ".png")).string(), img);
    std::vector<uint8_t> stacked(static_cast<size_t>(num_classes) * image_size * image_size, 0);
    for (int k = 0; k < num_classes; ++k)
      if (!seg_planes[k].empty())
        std::copy(seg_planes[k].begin(), seg_planes[k].end(),
                  stacked.begin() + static_cast<size_t>(k) * image_size * image_size);
    write_png_gray((root / "masks" / (id + ".png")).string(), num_classes * image_size,
                   image_size, stacked);
    ann.image_id = id;
    ann.seg_mask_path = "masks/" + id + ".png";
    anns.push_back(std::move(ann));

    hash.add(id);
    std::vector<uint8_t> rgb;
    rgb.reserve(img.v.size());
    for (double v : img.v) rgb.push_back(to_byte(v));
    hash.add(rgb.data(), rgb.size());
    hash.add(stacked.data(), stacked.size());
  }

  std::string finish(nlohmann::json manifest) {
    std::string jsonl = annotations_to_jsonl({num_classes, anns});
    hash.add(jsonl);
    std::ofstream(root / "annotations.jsonl") << jsonl;
    manifest["format"] = "guidance-dataset-v1";
    manifest["num_classes"] = num_classes;
    manifest["image_size"] = image_size;
    manifest["content_hash"] = hash.hex();
    std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";
    return hash.hex();
  }
};

}  // namespace detail

// ---- shapes dataset ----

// Multi-label shapes over textured noise: 1..max distinct-class shapes per
// image, tight boxes, exact interior segmentation masks, optional spurious
// corner marker on class-a images. Pure function of (config, seed); each
// image draws from its own substream.
inline std::string gen_shapes(const ShapesDatasetConfig& cfg, const std::string& out_dir) {
  validate_config(cfg);
  detail::DatasetWriter writer(out_dir, cfg.num_classes, cfg.image_size);
  std::vector<std::string> marker_images;

  const int n_splits[3] = {cfg.n_train, cfg.n_val, cfg.n_test};
  const char* split_names[3] = {"train", "val", "test"};
  const int sz = cfg.image_size;
  const int marker_extent = cfg.spurious.marker_size + 2;  // marker zone + gap

  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < n_splits[s]; ++i) {
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%05d", split_names[s], i);
      std::string id = idbuf;
      auto rng = substream(cfg.seed, static_cast<uint64_t>(s), static_cast<uint64_t>(i), 0);

      Image img(3, sz, sz);
      detail::paint_background(img, {0.36, 0.36, 0.38}, 0.05, {true, true, true}, cfg.noise,
                               rng);
      // muted distractor blobs carrying no annotation
      std::uniform_int_distribution<int> nblob(2, 4);
      std::uniform_int_distribution<int> bpos(0, sz - 5), bsz(3, 5);
      std::uniform_real_distribution<double> bcol(0.30, 0.50);
      int blobs = nblob(rng);
      for (int b = 0; b < blobs; ++b) {
        std::array<double, 3> col = {bcol(rng), bcol(rng), bcol(rng)};
        detail::draw_pixels(img, detail::raster_square(bpos(rng), bpos(rng), bsz(rng)), col,
                            0.02, rng);
      }

      // distinct shape classes for this image
      std::uniform_int_distribution<int> ucount(cfg.min_shapes, cfg.max_shapes);
      int count = ucount(rng);
      std::vector<int> classes(cfg.num_classes);
      std::iota(classes.begin(), classes.end(), 0);
      std::shuffle(classes.begin(), classes.end(), rng);
      classes.resize(count);
      std::sort(classes.begin(), classes.end());

      ImageAnnotation ann;
      ann.split = split_names[s];
      ann.labels = classes;
      std::vector<std::vector<uint8_t>> segs(cfg.num_classes);
      std::vector<BoundingBox> placed;
      // size range scales with the canvas so several shapes stay placeable
      const int size_lo = std::max(5, sz / 4 - 2);
      const int size_hi = std::min(13, sz / 2 - 2);
      std::uniform_int_distribution<int> usize(size_lo, size_hi);
      for (int cls : classes) {
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
          // resample the size too: late shapes shrink to fit crowded images
          int size = attempt < 100 ? usize(rng) : size_lo;
          std::uniform_int_distribution<int> upos(1, sz - size - 1);
          int top = upos(rng), left = upos(rng);
          auto px = detail::raster_shape(cls, top, left, size);
          BoundingBox box = detail::tight_box(cls, px);
          if (box.xmin < marker_extent && box.ymin < marker_extent) continue;
          bool clash = false;
          for (const auto& other : placed)
            if (detail::boxes_intersect(box, other, 1)) clash = true;
          if (clash) continue;
          auto color = detail::shape_color(cls);
          std::uniform_real_distribution<double> jitter(-0.06, 0.06);
          double j = jitter(rng);
          for (auto& ch : color) ch = std::clamp(ch + j, 0.0, 1.0);
          detail::draw_pixels(img, px, color, 0.03, rng);
          segs[cls].assign(static_cast<size_t>(sz) * sz, 0);
          for (const auto& p : px) segs[cls][static_cast<size_t>(p.y) * sz + p.x] = 255;
          placed.push_back(box);
          ann.boxes.push_back(box);
          ok = true;
        }
        if (!ok)
          throw std::runtime_error("could not place a shape after 200 retries in image " + id);
      }

      // spurious corner marker, co-occurring with class a at the split rate
      bool has_a = std::find(classes.begin(), classes.end(), cfg.spurious.class_a) !=
                   classes.end();
      double rate = s == 0 ? cfg.spurious.train_rate : cfg.spurious.test_rate;
      if (has_a && rate > 0.0 && std::bernoulli_distribution(rate)(rng)) {
        const int m = cfg.spurious.marker_size;
        for (int y = 0; y < m; ++y)
          for (int x = 0; x < m; ++x) {
            bool border = y == 0 || x == 0 || y == m - 1 || x == m - 1;
            for (int ch = 0; ch < 3; ++ch) img.at(ch, 1 + y, 1 + x) = border ? 0.02 : 0.98;
          }
        marker_images.push_back(id);
      }

      for (auto& v : img.v) v = std::clamp(v, 0.0, 1.0);
      writer.add(id, img, std::move(ann), segs);
    }
  }

  nlohmann::json manifest;
  manifest["kind"] = "shapes";
  manifest["config"] = {{"n_train", cfg.n_train},
                        {"n_val", cfg.n_val},
                        {"n_test", cfg.n_test},
                        {"num_classes", cfg.num_classes},
                        {"image_size", cfg.image_size},
                        {"min_shapes", cfg.min_shapes},
                        {"max_shapes", cfg.max_shapes},
                        {"noise", cfg.noise},
                        {"seed", cfg.seed},
                        {"spurious",
                         {{"class_a", cfg.spurious.class_a},
                          {"marker_size", cfg.spurious.marker_size},
                          {"train_rate", cfg.spurious.train_rate},
                          {"test_rate", cfg.spurious.test_rate}}}};
  manifest["marker_images"] = marker_images;
  return writer.finish(std::move(manifest));
}

// ---- two-factor group dataset ----

// At the default full separation the backgrounds are channel-separable by
// construction: green > blue at every land pixel, blue > green at every water
// pixel, up to the configured noise and texture caps. A single background
// pixel therefore identifies the background, which the protocol tests exploit
// as an oracle shortcut classifier. Narrower separation ranges weaken this
// guarantee deliberately.
inline std::string gen_groups(const GroupDatasetConfig& cfg, const std::string& out_dir) {
  validate_config(cfg);
  const int kFg = 2;  // class 0: disc (A), class 1: triangle (B)
  detail::DatasetWriter writer(out_dir, kFg, cfg.image_size);
  const int sz = cfg.image_size;
  std::vector<int> group_counts[3];

  const int n_splits[3] = {cfg.n_train, cfg.n_val, cfg.n_test};
  const char* split_names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    group_counts[s].assign(4, 0);
    for (int i = 0; i < n_splits[s]; ++i) {
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%05d", split_names[s], i);
      std::string id = idbuf;
      auto rng = substream(cfg.seed, 16 + static_cast<uint64_t>(s), static_cast<uint64_t>(i), 0);

      // train/val alternate G1 (disc on land) and G4 (triangle on water);
      // test cycles through all four groups so the split is exactly balanced
      int group;  // 1..4
      if (s < 2)
        group = (i % 2 == 0) ? 1 : 4;
      else
        group = 1 + i % 4;
      int fg = (group == 1 || group == 2) ? 0 : 1;   // A=0 disc, B=1 triangle
      int bg = (group == 1 || group == 3) ? 0 : 1;   // L=0 land, W=1 water

      Image img(3, sz, sz);
      std::array<double, 3> land{0.50, 0.52, 0.16}, water{0.18, 0.30, 0.68};
      std::uniform_real_distribution<double> usep(cfg.bg_separation_min, cfg.bg_separation);
      double sep = usep(rng);
      if (sep != 1.0) {
        for (int ch = 0; ch < 3; ++ch) {
          double mid = 0.5 * (land[ch] + water[ch]);
          land[ch] = mid + sep * (land[ch] - mid);
          water[ch] = mid + sep * (water[ch] - mid);
        }
      }
      // texture every channel of both classes identically so the sinusoids
      // carry no class signal; only the base tint separates the backgrounds
      detail::paint_background(img, bg == 0 ? land : water, 0.04, {true, true, true},
                               cfg.noise, rng);

      std::uniform_int_distribution<int> usize(9, 13);
      int size = usize(rng);
      // margin keeps the probe pixel row/column clear of the foreground
      std::uniform_int_distribution<int> upos(4, sz - size - 4);
      int top = upos(rng), left = upos(rng);
      auto px = detail::raster_shape(fg == 0 ? 1 : 3, top, left, size);
      // class-specific foreground colors give the object a localized cue of
      // comparable strength to the background tint, so neither labeling
      // collapses onto a single trivially dominant feature
      std::array<double, 3> fg_color = fg == 0 ? std::array<double, 3>{0.93, 0.89, 0.45}
                                               : std::array<double, 3>{0.50, 0.22, 0.62};
      detail::draw_pixels(img, px, fg_color, 0.03, rng);

      ImageAnnotation ann;
      ann.split = split_names[s];
      ann.labels = {fg};
      ann.boxes.push_back(detail::tight_box(fg, px));
      ann.group = group;
      ann.bg_class = bg;
      std::vector<std::vector<uint8_t>> segs(kFg);
      segs[fg].assign(static_cast<size_t>(sz) * sz, 0);
      for (const auto& p : px) segs[fg][static_cast<size_t>(p.y) * sz + p.x] = 255;

      for (auto& v : img.v) v = std::clamp(v, 0.0, 1.0);
      writer.add(id, img, std::move(ann), segs);
      ++group_counts[s][group - 1];
    }
  }

  nlohmann::json manifest;
  manifest["kind"] = "groups";
  manifest["config"] = {{"n_train", cfg.n_train},
                        {"n_val", cfg.n_val},
                        {"n_test", cfg.n_test},
                        {"image_size", cfg.image_size},
                        {"noise", cfg.noise},
                        {"bg_separation", cfg.bg_separation},
                        {"bg_separation_min", cfg.bg_separation_min},
                        {"seed", cfg.seed}};
  manifest["group_counts"] = {{"train", group_counts[0]},
                              {"val", group_counts[1]},
                              {"test", group_counts[2]}};
  return writer.finish(std::move(manifest));
}

}  // namespace guidance
