#include <doctest.h>

#include <cstdio>
#include <random>

#include "guidance/model.hpp"
#include "test_util.hpp"

using namespace guidance;
using testutil::close_rel;
using testutil::random_vec;

namespace {

ModelConfig tiny_cfg(Arch a) {
  ModelConfig c;
  c.arch = a;
  c.in_c = 3;
  c.in_h = 16;
  c.in_w = 16;
  c.num_classes = 4;
  c.widths = {4, 6, 8, 10};
  return c;
}

Image random_image(int c, int h, int w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Image img(c, h, w);
  for (auto& v : img.v) v = d(rng);
  return img;
}

}  // namespace

TEST_CASE("forward is deterministic and shape-checked") {
  GuidedModel m(tiny_cfg(Arch::relu_net), 5);
  auto img = random_image(3, 16, 16, 1);
  auto f1 = m.forward(img);
  auto f2 = m.forward(img);
  CHECK(f1.logits->val == f2.logits->val);
  CHECK(f1.logits->shape == ad::Shape{4, 1});

  CHECK_THROWS_AS(m.forward(random_image(3, 8, 8, 1)), std::invalid_argument);

  auto probs = probabilities(f1.logits);
  for (double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("tap registry: raw input tap, non-increasing spatial dims") {
  for (Arch a : {Arch::relu_net, Arch::homogeneous_net, Arch::bcos_net}) {
    GuidedModel m(tiny_cfg(a), 11);
    auto img = random_image(3, 16, 16, 2);
    auto f = m.forward(img);
    CHECK(f.taps[0]->val == img.v);
    int prev_h = 1 << 20;
    for (int d = 0; d < 5; ++d) {
      auto shape = m.tap_shape(static_cast<Depth>(d));
      CHECK(f.taps[d]->shape == shape);
      CHECK(shape[1] <= prev_h);
      prev_h = shape[1];
    }
    CHECK(m.tap_shape(Depth::Final) == ad::Shape{10, 2, 2});
  }
}

TEST_CASE("homogeneous_net: zero image maps to exactly zero logits") {
  GuidedModel m(tiny_cfg(Arch::homogeneous_net), 3);
  Image zero(3, 16, 16, 0.0);
  auto f = m.forward(zero);
  for (double v : f.logits->val) CHECK(v == 0.0);
}

TEST_CASE("homogeneous_net: degree-1 positive homogeneity") {
  GuidedModel m(tiny_cfg(Arch::homogeneous_net), 7);
  auto img = random_image(3, 16, 16, 3);
  auto base = m.forward(img).logits->val;
  for (double c : {0.5, 2.0, 10.0}) {
    Image scaled = img;
    for (auto& v : scaled.v) v *= c;
    auto got = m.forward(scaled).logits->val;
    for (size_t k = 0; k < base.size(); ++k)
      CHECK(close_rel(got[k], c * base[k], 1e-6, 1e-10));
  }
}

TEST_CASE("relu_net is not bias-free but homogeneous_net and bcos_net are") {
  GuidedModel relu(tiny_cfg(Arch::relu_net), 1);
  GuidedModel homo(tiny_cfg(Arch::homogeneous_net), 1);
  GuidedModel bcos(tiny_cfg(Arch::bcos_net), 1);
  // bias tensors double the per-stage parameter tensor count
  CHECK(relu.params().size() == 10);
  CHECK(homo.params().size() == 5);
  CHECK(bcos.params().size() == 5);
  CHECK(relu.param_count() <= 100000);
}

TEST_CASE("logits_from at each tap reproduces the forward logits") {
  for (Arch a : {Arch::relu_net, Arch::homogeneous_net, Arch::bcos_net}) {
    GuidedModel m(tiny_cfg(a), 13);
    auto img = random_image(3, 16, 16, 5);
    auto f = m.forward(img);
    for (int d = 0; d < 5; ++d) {
      auto logits = m.logits_from(static_cast<Depth>(d),
                                  ad::constant(f.taps[d]->shape, f.taps[d]->val));
      for (size_t k = 0; k < logits->val.size(); ++k)
        CHECK(logits->val[k] == doctest::Approx(f.logits->val[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("bcos dynamic-linear reconstruction at every tap depth") {
  GuidedModel m(tiny_cfg(Arch::bcos_net), 17);
  auto img = random_image(3, 16, 16, 7);
  auto f = m.forward(img);
  for (int d = 0; d < 5; ++d) {
    for (int k = 0; k < m.num_classes(); ++k) {
      auto weff = m.dynamic_linear_decomposition(f, k, static_cast<Depth>(d));
      CHECK(weff->shape == f.taps[d]->shape);
      double recon = ad::vsum(ad::mul(weff, f.taps[d]))->val[0];
      CHECK(std::fabs(recon - f.logits->val[k]) < 1e-5);
    }
  }
}

TEST_CASE("dynamic_linear_decomposition rejects non-bcos models") {
  GuidedModel m(tiny_cfg(Arch::relu_net), 19);
  auto f = m.forward(random_image(3, 16, 16, 9));
  CHECK_THROWS_AS(m.dynamic_linear_decomposition(f, 0, Depth::Input), std::invalid_argument);
}

TEST_CASE("parameter gradients of a logit functional match finite differences") {
  for (Arch a : {Arch::relu_net, Arch::homogeneous_net, Arch::bcos_net}) {
    GuidedModel m(tiny_cfg(a), 23);
    auto img = random_image(3, 16, 16, 11);
    auto build = [&]() {
      auto f = m.forward(img);
      return ad::vsum(ad::sigmoid(f.logits));
    };
    auto st = testutil::check_grads(build, m.params(), 1e-3, 6);
    CHECK(st.mismatched == 0);
    CHECK(st.smooth * 5 >= st.probed * 4);
  }
}

TEST_CASE("second-order path: d/dtheta of a gradient functional") {
  // scalar = mean of squared input gradients; its parameter derivative runs
  // through the double-backward machinery used by guidance training.
  for (Arch a : {Arch::relu_net, Arch::bcos_net}) {
    GuidedModel m(tiny_cfg(a), 29);
    auto img = random_image(3, 16, 16, 13);
    auto build = [&]() {
      auto f = m.forward(img);
      auto gin = ad::grad1(ad::take(f.logits, 1), f.input);
      return ad::mean_all(ad::mul(gin, gin));
    };
    auto st = testutil::check_grads(build, m.params(), 1e-2, 4);
    CHECK(st.mismatched == 0);
    CHECK(st.smooth * 5 >= st.probed * 4);
  }
}

TEST_CASE("bcos decomposition parameter gradient matches finite differences") {
  GuidedModel m(tiny_cfg(Arch::bcos_net), 31);
  auto img = random_image(3, 16, 16, 17);
  auto build = [&]() {
    auto f = m.forward(img);
    auto weff = m.dynamic_linear_decomposition(f, 2, Depth::Input);
    return ad::vsum(ad::mul(weff, f.input));
  };
  auto st = testutil::check_grads(build, m.params(), 1e-3, 5);
  CHECK(st.mismatched == 0);
  CHECK(st.smooth * 5 >= st.probed * 4);
}

TEST_CASE("checkpoint round trip preserves parameters, step, and behavior") {
  GuidedModel m(tiny_cfg(Arch::bcos_net), 37);
  m.set_step(123);
  auto img = random_image(3, 16, 16, 19);
  auto before = m.forward(img).logits->val;

  std::string path = "/tmp/guidance_test_ckpt.json";
  m.save_checkpoint(path);
  auto loaded = GuidedModel::load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.step() == 123);
  CHECK(loaded.arch() == Arch::bcos_net);
  CHECK(loaded.flat_params() == m.flat_params());
  CHECK(loaded.forward(img).logits->val == before);
}

TEST_CASE("seeded init is reproducible and seed-sensitive") {
  GuidedModel a(tiny_cfg(Arch::relu_net), 41);
  GuidedModel b(tiny_cfg(Arch::relu_net), 41);
  GuidedModel c(tiny_cfg(Arch::relu_net), 42);
  CHECK(a.flat_params() == b.flat_params());
  CHECK(a.flat_params() != c.flat_params());
  CHECK(a.param_hash() == b.param_hash());
  CHECK(a.param_hash() != c.param_hash());
}
