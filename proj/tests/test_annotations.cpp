#include <doctest.h>

#include <random>
#include <set>

#include "guidance/annotations.hpp"

using namespace guidance;

namespace {

// Independent brute-force membership oracle.
Grid rasterize_oracle(const std::vector<BoundingBox>& boxes, int h, int w) {
  Grid g(h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& b : boxes)
        if (x >= b.xmin && x < b.xmax && y >= b.ymin && y < b.ymax) g.at(y, x) = 1.0;
  return g;
}

}  // namespace

TEST_CASE("rasterize full cover, empty, and overlapping boxes") {
  BoundingBox full{0, 0, 0, 4, 4};
  auto m = rasterize_mask({full}, 4, 4);
  CHECK(m.grid.sum() == doctest::Approx(16.0));

  auto empty = rasterize_mask({}, 4, 4);
  CHECK(empty.grid.sum() == doctest::Approx(0.0));
  CHECK(empty.class_id == -1);

  BoundingBox a{1, 0, 0, 2, 2}, b{1, 1, 1, 3, 3};
  auto m2 = rasterize_mask({a, b}, 4, 4);
  CHECK(m2.grid.sum() == doctest::Approx(7.0));
  auto oracle = rasterize_oracle({a, b}, 4, 4);
  CHECK(m2.grid.v == oracle.v);
}

TEST_CASE("rasterize validation names the offending box") {
  BoundingBox degen{2, 3, 1, 3, 4};  // xmin == xmax
  try {
    rasterize_mask({degen}, 8, 8);
    FAIL("expected validation error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
    CHECK(std::string(e.what()).find("[3,1,3,4)") != std::string::npos);
  }
  BoundingBox oob{0, 5, 5, 10, 9};
  CHECK_THROWS_AS(rasterize_mask({oob}, 8, 8), std::invalid_argument);
  BoundingBox other_class{1, 0, 0, 2, 2};
  BoundingBox mixed{3, 0, 0, 2, 2};
  CHECK_THROWS_AS(rasterize_mask({other_class, mixed}, 8, 8), std::invalid_argument);
}

TEST_CASE("rasterization equals brute force on random boxes") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 120; ++trial) {
    int h = 1 + static_cast<int>(rng() % 64), w = 1 + static_cast<int>(rng() % 64);
    std::vector<BoundingBox> boxes;
    int nb = static_cast<int>(rng() % 4);
    for (int i = 0; i < nb; ++i) {
      int x0 = static_cast<int>(rng() % w), y0 = static_cast<int>(rng() % h);
      int x1 = x0 + 1 + static_cast<int>(rng() % (w - x0));
      int y1 = y0 + 1 + static_cast<int>(rng() % (h - y0));
      boxes.push_back({7, x0, y0, x1, y1});
    }
    auto m = rasterize_mask(boxes, h, w);
    CHECK(m.grid.v == rasterize_oracle(boxes, h, w).v);
  }
}

TEST_CASE("dilation hand cases") {
  BoundingBox b{0, 10, 10, 20, 20};
  auto d = dilate_boxes({b}, 50.0, 64, 64);
  CHECK(d[0].xmin == 7);
  CHECK(d[0].ymin == 7);
  CHECK(d[0].xmax == 23);
  CHECK(d[0].ymax == 23);
  CHECK(d[0].class_id == 0);

  BoundingBox corner{1, 0, 0, 10, 10};
  auto c = dilate_boxes({corner}, 50.0, 16, 16);
  CHECK(c[0].xmin == 0);
  CHECK(c[0].ymin == 0);
  CHECK(c[0].xmax == 13);
  CHECK(c[0].ymax == 13);

  auto same = dilate_boxes({b, corner}, 0.0, 64, 64);
  CHECK(same[0].xmin == b.xmin);
  CHECK(same[1].xmax == corner.xmax);

  CHECK_THROWS_AS(dilate_boxes({b}, -1.0, 64, 64), std::invalid_argument);
}

TEST_CASE("dilation is monotone and p=0 is the identity") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    int h = 16 + static_cast<int>(rng() % 48), w = 16 + static_cast<int>(rng() % 48);
    std::vector<BoundingBox> boxes;
    int nb = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < nb; ++i) {
      int x0 = static_cast<int>(rng() % (w - 2)), y0 = static_cast<int>(rng() % (h - 2));
      int x1 = x0 + 1 + static_cast<int>(rng() % (w - x0 - 1));
      int y1 = y0 + 1 + static_cast<int>(rng() % (h - y0 - 1));
      boxes.push_back({3, x0, y0, x1, y1});
    }
    double p = static_cast<double>(rng() % 80);
    auto base = rasterize_mask(boxes, h, w);
    auto dil = rasterize_mask(dilate_boxes(boxes, p, h, w), h, w);
    for (size_t i = 0; i < base.grid.v.size(); ++i) CHECK(dil.grid.v[i] >= base.grid.v[i]);

    auto ident = dilate_boxes(boxes, 0.0, h, w);
    for (size_t i = 0; i < boxes.size(); ++i) {
      CHECK(ident[i].xmin == boxes[i].xmin);
      CHECK(ident[i].ymin == boxes[i].ymin);
      CHECK(ident[i].xmax == boxes[i].xmax);
      CHECK(ident[i].ymax == boxes[i].ymax);
    }
  }
}

namespace {

AnnotationSet make_set(size_t n) {
  AnnotationSet s;
  s.num_classes = 3;
  for (size_t i = 0; i < n; ++i) {
    ImageAnnotation a;
    a.image_id = "img_" + std::to_string(i);
    a.labels = {static_cast<int>(i % 3)};
    a.boxes = {{static_cast<int>(i % 3), 1, 1, 5, 5}};
    s.images.push_back(a);
  }
  return s;
}

size_t annotated_count(const AnnotationSet& s) {
  size_t c = 0;
  for (const auto& a : s.images) c += a.annotated ? 1 : 0;
  return c;
}

std::set<std::string> annotated_ids(const AnnotationSet& s) {
  std::set<std::string> ids;
  for (const auto& a : s.images)
    if (a.annotated) ids.insert(a.image_id);
  return ids;
}

}  // namespace

TEST_CASE("subsampling: identity, exact count, determinism, seed sensitivity") {
  auto s = make_set(2500);
  auto full = subsample_annotations(s, 1.0, 7);
  CHECK(annotated_count(full) == 2500);
  for (size_t i = 0; i < s.images.size(); ++i)
    CHECK(full.images[i].boxes.size() == s.images[i].boxes.size());

  auto one_pct = subsample_annotations(s, 0.01, 7);
  CHECK(annotated_count(one_pct) == 25);
  auto again = subsample_annotations(s, 0.01, 7);
  CHECK(annotated_ids(one_pct) == annotated_ids(again));
  for (const auto& a : one_pct.images)
    if (!a.annotated) CHECK(a.boxes.empty());

  auto s100 = make_set(100);
  auto h1 = subsample_annotations(s100, 0.5, 1);
  auto h2 = subsample_annotations(s100, 0.5, 2);
  CHECK(annotated_ids(h1) != annotated_ids(h2));

  CHECK_THROWS_AS(subsample_annotations(s, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(subsample_annotations(s, 1.5, 1), std::invalid_argument);
}

TEST_CASE("jsonl round trip preserves records") {
  AnnotationSet s;
  s.num_classes = 4;
  ImageAnnotation a;
  a.image_id = "img_00007";
  a.split = "val";
  a.labels = {0, 2};
  a.boxes = {{0, 1, 2, 5, 6}, {2, 0, 0, 3, 3}};
  a.seg_mask_path = "masks/img_00007.png";
  ImageAnnotation b;
  b.image_id = "img_00008";
  b.split = "train";
  b.labels = {1};
  b.annotated = false;
  b.group = 4;
  b.bg_class = 1;
  s.images = {a, b};

  auto text = annotations_to_jsonl(s);
  auto back = annotations_from_jsonl(text, 4);
  REQUIRE(back.images.size() == 2);
  CHECK(back.images[0].image_id == "img_00007");
  CHECK(back.images[0].split == "val");
  CHECK(back.images[0].labels == std::vector<int>{0, 2});
  REQUIRE(back.images[0].boxes.size() == 2);
  CHECK(back.images[0].boxes[1].class_id == 2);
  CHECK(back.images[0].boxes[1].xmax == 3);
  CHECK(back.images[0].seg_mask_path == "masks/img_00007.png");
  CHECK(back.images[1].annotated == false);
  CHECK(back.images[1].group == 4);
  CHECK(back.images[1].bg_class == 1);
}

TEST_CASE("mask_for_class dilates per box before the union") {
  ImageAnnotation a;
  a.boxes = {{1, 2, 2, 4, 4}, {1, 8, 8, 10, 10}, {0, 0, 0, 16, 16}};
  auto m = mask_for_class(a, 1, 16, 16, 0.0);
  CHECK(m.grid.sum() == doctest::Approx(8.0));
  auto md = mask_for_class(a, 1, 16, 16, 50.0);
  // each 2x2 box scaled by 1.5 about its center -> 4x4 after outward rounding
  CHECK(md.grid.sum() == doctest::Approx(32.0));
  auto none = mask_for_class(a, 2, 16, 16, 0.0);
  CHECK(none.grid.sum() == doctest::Approx(0.0));
}
