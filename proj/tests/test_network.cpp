#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "lgsan/model/network.hpp"
#include "support/testutil.hpp"

using namespace lgsan;
using testutil::random_tensor;

static ModelConfig desk_cfg() {
  ModelConfig cfg;
  cfg.backbone_channels = {8, 12, 16, 24};
  cfg.grounding_width = 6;
  cfg.attn_dim = 8;
  cfg.text_dim = 16;
  cfg.feem_channels = 8;
  cfg.saam_dim = 6;
  cfg.decoder_channels = 10;
  return cfg;
}

static std::vector<std::string> owl_prompts(Index b) {
  return std::vector<std::string>(static_cast<size_t>(b), "a photo of the camouflaged owl");
}

TEST_CASE("full forward: six maps at input resolution, sigmoid range") {
  Lgsan<float> model(desk_cfg(), AblationFlags{true, true, true}, 7);
  Rng data(1);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  auto preds = model.forward(Var<float>(img), owl_prompts(1), false);
  auto maps = preds.probability_maps();
  REQUIRE(maps.size() == 6);
  for (auto& [name, t] : maps) {
    CHECK(t.shape() == Shape{1, 1, 64, 64});
    CHECK(t.flat().minCoeff() >= 0.0f);
    CHECK(t.flat().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("flags=B: prompt-invariant, exactly four outputs") {
  Lgsan<float> model(desk_cfg(), AblationFlags::baseline(), 7);
  Rng data(3);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  auto a = model.forward(Var<float>(img), owl_prompts(1), false);
  auto b = model.forward(Var<float>(img), {"a photo of the camouflaged moth"}, false);
  CHECK_FALSE(a.m1.has_value());
  CHECK_FALSE(a.oe.has_value());
  for (Index i = 0; i < a.o1.numel(); ++i) CHECK(a.o1.value()[i] == b.o1.value()[i]);  // bitwise
  CHECK(a.probability_maps().size() == 4);
}

TEST_CASE("deterministic forward: identical seed/params/input are bitwise equal") {
  Lgsan<float> m1(desk_cfg(), AblationFlags{true, true, true}, 42);
  Lgsan<float> m2(desk_cfg(), AblationFlags{true, true, true}, 42);
  Rng data(5);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  auto a = m1.forward(Var<float>(img), owl_prompts(1), false);
  auto b = m2.forward(Var<float>(img), owl_prompts(1), false);
  for (Index i = 0; i < a.o1.numel(); ++i) CHECK(a.o1.value()[i] == b.o1.value()[i]);
  for (Index i = 0; i < a.oe->numel(); ++i) CHECK(a.oe->value()[i] == b.oe->value()[i]);
}

TEST_CASE("ablation wiring: every Table-2 row instantiates, parameter counts strictly increase") {
  std::vector<AblationFlags> rows = {{false, false, false},
                                     {true, false, false},
                                     {true, true, false},
                                     {true, true, true}};
  Index prev = 0;
  Rng data(7);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  for (auto& flags : rows) {
    Lgsan<float> model(desk_cfg(), flags, 11);
    nn::ParamMap<float> pm;
    model.collect(pm);
    Index n = pm.param_count();
    CHECK(n > prev);
    prev = n;
    NoGradGuard ng;
    auto preds = model.forward(Var<float>(img), owl_prompts(1), false);
    CHECK(preds.o1.value().all_finite());
  }
}

TEST_CASE("SC without E records a warning and still runs (zero edge map)") {
  Lgsan<float> model(desk_cfg(), AblationFlags{true, false, true}, 13);
  REQUIRE_FALSE(model.warnings.empty());
  CHECK(model.warnings[0].find("zero edge map") != std::string::npos);
  Rng data(9);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  ForwardTrace trace;
  auto preds = model.forward(Var<float>(img), owl_prompts(1), false, &trace);
  CHECK(preds.o1.value().all_finite());
  CHECK_FALSE(trace.warnings.empty());
  CHECK_FALSE(preds.oe.has_value());
}

TEST_CASE("gradient flows to every trainable parameter under flags=d") {
  ModelConfig cfg = desk_cfg();
  Lgsan<double> model(cfg, AblationFlags{true, true, true}, 17);
  Rng data(11);
  auto img = random_tensor({2, 3, 64, 64}, data, 0, 1);
  Tensor<double> gt(Shape{2, 1, 64, 64}), ge(Shape{2, 1, 64, 64});
  for (Index i = 0; i < gt.numel(); ++i) gt[i] = data.uniform() < 0.3 ? 1.0 : 0.0;
  for (Index i = 0; i < ge.numel(); ++i) ge[i] = data.uniform() < 0.1 ? 1.0 : 0.0;

  auto preds = model.forward(Var<double>(img), owl_prompts(2), true);
  auto lb = total_loss(preds, gt, ge, 5.0);
  backward(lb.total);

  nn::ParamMap<double> pm;
  model.collect(pm);
  for (auto& [name, p] : pm.params) {
    const auto& g = p.node()->grad;
    REQUIRE_MESSAGE(!g.empty(), name.c_str());
    double mx = 0;
    for (Index i = 0; i < g.numel(); ++i) mx = std::max(mx, std::abs(g[i]));
    CHECK_MESSAGE(mx > 0.0, name.c_str());
  }
}

TEST_CASE("pad_to_multiple handles 96x80-odd inputs by pad-and-crop") {
  ModelConfig cfg = desk_cfg();
  cfg.pad_to_multiple = true;
  Lgsan<float> model(cfg, AblationFlags{true, true, true}, 19);
  Rng data(13);
  auto img = random_tensor({1, 3, 70, 90}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  auto preds = model.forward(Var<float>(img), owl_prompts(1), false);
  CHECK(preds.o1.shape() == Shape{1, 1, 70, 90});
  CHECK(preds.oe->shape() == Shape{1, 1, 70, 90});

  // without the flag the same input is rejected
  ModelConfig cfg2 = desk_cfg();
  Lgsan<float> strict(cfg2, AblationFlags{true, true, true}, 19);
  CHECK_THROWS_AS(strict.forward(Var<float>(img), owl_prompts(1), false), ShapeError);
}

TEST_CASE("concurrent read-only inference matches sequential results") {
  Lgsan<float> model(desk_cfg(), AblationFlags{true, true, true}, 23);
  Rng data(15);
  auto img1 = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  auto img2 = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  auto seq1 = model.forward(Var<float>(img1), owl_prompts(1), false);
  auto seq2 = model.forward(Var<float>(img2), owl_prompts(1), false);

  Tensor<float> par1, par2;
  std::thread t1([&] {
    NoGradGuard g;
    par1 = model.forward(Var<float>(img1), owl_prompts(1), false).o1.value();
  });
  std::thread t2([&] {
    NoGradGuard g;
    par2 = model.forward(Var<float>(img2), owl_prompts(1), false).o1.value();
  });
  t1.join();
  t2.join();
  for (Index i = 0; i < par1.numel(); ++i) CHECK(par1[i] == seq1.o1.value()[i]);
  for (Index i = 0; i < par2.numel(); ++i) CHECK(par2[i] == seq2.o1.value()[i]);
}

TEST_CASE("forward trace records per-stage statistics") {
  Lgsan<float> model(desk_cfg(), AblationFlags{true, true, true}, 29);
  Rng data(17);
  auto img = random_tensor({1, 3, 64, 64}, data, 0, 1).cast<float>();
  NoGradGuard ng;
  ForwardTrace trace;
  model.forward(Var<float>(img), owl_prompts(1), false, &trace);
  REQUIRE(trace.stages.size() >= 6);
  bool has_cam1 = false;
  for (auto& st : trace.stages) {
    CHECK(std::isfinite(st.mean));
    if (st.name == "cam1") has_cam1 = true;
  }
  CHECK(has_cam1);
}
