#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lgsan/core/ops.hpp"
#include "lgsan/core/ops_conv.hpp"
#include "lgsan/core/ops_fft.hpp"
#include "lgsan/core/ops_spatial.hpp"
#include "lgsan/core/ops_tokens.hpp"
#include "lgsan/nn/layers.hpp"
#include "support/testutil.hpp"

using namespace lgsan;
using testutil::GradCheck;
using testutil::random_tensor;

namespace {
constexpr double kGradTol = 1e-6;
}

TEST_CASE("elementwise arithmetic and activations: gradients") {
  Rng rng(7);
  auto a = random_tensor({2, 2, 3, 3}, rng, 0.2, 1.5);
  auto b = random_tensor({2, 2, 3, 3}, rng, 0.3, 1.7);

  CHECK(GradCheck::max_rel_err(
            [](auto& v) { return sum_all(v[0] * v[1] + v[0] - v[1]); }, {a, b}) < kGradTol);
  CHECK(GradCheck::max_rel_err([](auto& v) { return sum_all(v[0] / v[1]); }, {a, b}) < kGradTol);
  CHECK(GradCheck::max_rel_err([](auto& v) { return sum_all(sigmoid(v[0]) * 2.0); }, {a}) <
        kGradTol);
  CHECK(GradCheck::max_rel_err([](auto& v) { return sum_all(gelu(v[0] + (-0.9))); }, {a}) <
        kGradTol);
  // relu/abs probed away from their kinks
  CHECK(GradCheck::max_rel_err([](auto& v) { return sum_all(relu(v[0] + (-0.1))); }, {a}) <
        kGradTol);
  CHECK(GradCheck::max_rel_err([](auto& v) { return sum_all(abs_v(v[0] + (-0.1))); }, {a}) <
        kGradTol);
}

TEST_CASE("bce_with_logits matches naive formula and gradient") {
  Rng rng(11);
  auto z = random_tensor({1, 1, 2, 4}, rng, -3, 3);
  auto t = random_tensor({1, 1, 2, 4}, rng, 0, 1);
  Var<double> vz(z), vt(t);
  auto out = bce_with_logits(vz, vt);
  for (Index i = 0; i < z.numel(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-z[i]));
    double want = -(t[i] * std::log(p) + (1 - t[i]) * std::log(1 - p));
    CHECK(out.value()[i] == doctest::Approx(want).epsilon(1e-10));
  }
  CHECK(GradCheck::max_rel_err(
            [&](auto& v) { return sum_all(bce_with_logits(v[0], Var<double>(t))); }, {z}) <
        kGradTol);
}

TEST_CASE("broadcast mul/add over channel and spatial guidance shapes") {
  Rng rng(3);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  for (Shape ms : {Shape{2, 3, 1, 1}, Shape{1, 3, 1, 1}, Shape{2, 1, 4, 4}, Shape{1, 1, 4, 4}}) {
    auto m = random_tensor(ms, rng, 0.5, 1.5);
    // value check vs scalar loop
    Var<double> vx(x), vm(m);
    auto y = broadcast_mul(vx, vm);
    Shape p = detail::pad4(ms);
    for (Index bb = 0; bb < 2; ++bb)
      for (Index c = 0; c < 3; ++c)
        for (Index h = 0; h < 4; ++h)
          for (Index w = 0; w < 4; ++w) {
            Index mi = ((bb % p[0]) * p[1] + c % p[1]) * p[2] * p[3] + (h % p[2]) * p[3] + w % p[3];
            CHECK(y.value().at(bb, c, h, w) ==
                  doctest::Approx(x.at(bb, c, h, w) * m[mi]).epsilon(1e-12));
          }
    CHECK(GradCheck::max_rel_err(
              [](auto& v) { return sum_all(broadcast_mul(v[0], v[1]) * broadcast_add(v[0], v[1])); },
              {x, m}) < kGradTol);
  }
}

TEST_CASE("reductions and concat") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 2, 2}, rng);
  auto y = random_tensor({2, 2, 2, 2}, rng);
  Var<double> vx(x);
  CHECK(sum_hw(vx).value().at(1, 2, 0, 0) ==
        doctest::Approx(x.at(1, 2, 0, 0) + x.at(1, 2, 0, 1) + x.at(1, 2, 1, 0) + x.at(1, 2, 1, 1)));
  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              auto c = concat_channels<double>({v[0], v[1]});
              return sum_all(c * c) + sum_all(sum_hw(v[0]) * sum_hw(v[0])) +
                     sum_all(sum_chw(v[1]));
            },
            {x, y}) < kGradTol);
}

TEST_CASE("conv2d value vs naive loop, gradient, shape errors") {
  Rng rng(13);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
  auto b = random_tensor({4}, rng, -0.2, 0.2);
  for (int stride : {1, 2}) {
    Var<double> vx(x), vw(w), vb(b);
    auto y = conv2d(vx, vw, vb, stride, 1);
    Index oh = (5 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, oh});
    // naive check
    for (Index n = 0; n < 2; ++n)
      for (Index co = 0; co < 4; ++co)
        for (Index i = 0; i < oh; ++i)
          for (Index j = 0; j < oh; ++j) {
            double acc = b[co];
            for (Index ci = 0; ci < 3; ++ci)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  Index h = i * stride + ki - 1, ww = j * stride + kj - 1;
                  if (h < 0 || h >= 5 || ww < 0 || ww >= 5) continue;
                  acc += x.at(n, ci, h, ww) * w.at(co, ci, ki, kj);
                }
            CHECK(y.value().at(n, co, i, j) == doctest::Approx(acc).epsilon(1e-10));
          }
    CHECK(GradCheck::max_rel_err(
              [stride](auto& v) {
                auto out = conv2d(v[0], v[1], v[2], stride, 1);
                return sum_all(out * out);
              },
              {x, w, b}) < kGradTol);
  }
  Var<double> vx(x);
  auto wbad = Var<double>(random_tensor({4, 2, 3, 3}, rng));
  CHECK_THROWS_AS(conv2d(vx, wbad, Var<double>(), 1, 1), ShapeError);
}

TEST_CASE("avg_pool_same zero and reflect") {
  Rng rng(17);
  auto x = random_tensor({1, 2, 4, 5}, rng);
  for (auto mode : {PadMode::Zero, PadMode::Reflect}) {
    Var<double> vx(x);
    auto y = avg_pool_same(vx, 3, mode);
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 5; ++j) {
          double acc = 0;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              Index h = i + di, w = j + dj;
              if (mode == PadMode::Reflect) {
                h = detail::reflect_index(h, 4);
                w = detail::reflect_index(w, 5);
                acc += x.at(0, c, h, w);
              } else if (h >= 0 && h < 4 && w >= 0 && w < 5) {
                acc += x.at(0, c, h, w);
              }
            }
          CHECK(y.value().at(0, c, i, j) == doctest::Approx(acc / 9.0).epsilon(1e-12));
        }
    CHECK(GradCheck::max_rel_err(
              [mode](auto& v) {
                auto out = avg_pool_same(v[0], 3, mode);
                return sum_all(out * out);
              },
              {x}) < kGradTol);
  }
  // constant input with reflect padding: pooled value equals the constant
  Var<double> c1(Tensor<double>::full({1, 1, 4, 4}, 2.5));
  auto pooled = avg_pool_same(c1, 3, PadMode::Reflect);
  for (Index i = 0; i < pooled.numel(); ++i)
    CHECK(pooled.value()[i] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("global and channel pools") {
  Rng rng(19);
  auto x = random_tensor({2, 3, 3, 3}, rng);
  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              return sum_all(global_max_pool(v[0])) + sum_all(global_avg_pool(v[0])) +
                     sum_all(channel_mean(v[0]) * channel_max(v[0]));
            },
            {x}) < kGradTol);
  Var<double> vx(x);
  auto cm = channel_max(vx);
  for (Index h = 0; h < 3; ++h)
    for (Index w = 0; w < 3; ++w)
      CHECK(cm.value().at(0, 0, h, w) ==
            std::max({x.at(0, 0, h, w), x.at(0, 1, h, w), x.at(0, 2, h, w)}));
}

TEST_CASE("resize_bilinear identity, known 2x case, gradient") {
  Rng rng(23);
  auto x = random_tensor({1, 2, 3, 4}, rng);
  Var<double> vx(x);
  auto same = resize_bilinear(vx, 3, 4);
  CHECK(testutil::max_abs_diff(same.value(), x) == 0.0);

  // 1-D doubling of [a,b]: half-pixel centers give [a, 0.75a+0.25b, 0.25a+0.75b, b]
  Tensor<double> line({1, 1, 1, 2});
  line[0] = 1.0;
  line[1] = 3.0;
  auto up = resize_bilinear(Var<double>(line), 1, 4);
  CHECK(up.value()[0] == doctest::Approx(1.0));
  CHECK(up.value()[1] == doctest::Approx(1.5));
  CHECK(up.value()[2] == doctest::Approx(2.5));
  CHECK(up.value()[3] == doctest::Approx(3.0));

  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              auto out = resize_bilinear(v[0], 6, 8) + resize_bilinear(v[0], 6, 8);
              auto down = resize_bilinear(out, 2, 2);
              return sum_all(down * down);
            },
            {x}) < kGradTol);
}

TEST_CASE("pad/crop/place roundtrip and gradient") {
  Rng rng(29);
  auto x = random_tensor({1, 2, 3, 3}, rng);
  Var<double> vx(x);
  auto padded = pad_spatial(vx, 1, 2, 0, 1);
  REQUIRE(padded.shape() == Shape{1, 2, 6, 4});
  auto back = crop_spatial(padded, 1, 0, 3, 3);
  CHECK(testutil::max_abs_diff(back.value(), x) == 0.0);
  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              auto p = place_spatial(v[0], 1, 1, 5, 5);
              auto c = crop_spatial(p, 0, 0, 4, 4);
              return sum_all(c * c);
            },
            {x}) < kGradTol);
}

TEST_CASE("token ops: roundtrips, bmm, softmax, l2norm, layer norm, linear") {
  Rng rng(31);
  auto x = random_tensor({2, 3, 2, 2}, rng);
  Var<double> vx(x);
  auto tok = to_tokens(vx);
  REQUIRE(tok.shape() == Shape{2, 4, 3});
  CHECK(tok.value().at3(1, 2, 1) == x.at(1, 1, 1, 0));
  auto round = from_tokens(tok, 2, 2);
  CHECK(testutil::max_abs_diff(round.value(), x) == 0.0);

  auto a = random_tensor({2, 3, 4}, rng);
  auto b = random_tensor({2, 4, 2}, rng);
  Var<double> va(a), vb(b);
  auto prod = bmm(va, vb);
  double acc = 0;
  for (Index k = 0; k < 4; ++k) acc += a.at3(1, 2, k) * b.at3(1, k, 1);
  CHECK(prod.value().at3(1, 2, 1) == doctest::Approx(acc).epsilon(1e-12));

  auto soft = softmax_lastdim(va);
  for (Index n = 0; n < 3; ++n) {
    double s = 0;
    for (Index c = 0; c < 4; ++c) s += soft.value().at3(0, n, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto normd = l2_normalize_lastdim(va);
  for (Index n = 0; n < 3; ++n) {
    double s = 0;
    for (Index c = 0; c < 4; ++c) s += normd.value().at3(0, n, c) * normd.value().at3(0, n, c);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-10));
  }

  auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  auto beta = random_tensor({4}, rng, -0.5, 0.5);
  auto w = random_tensor({5, 4}, rng);
  auto bias = random_tensor({5}, rng);
  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              auto t = bmm(v[0], v[1]);                      // [2,3,2]
              auto s = softmax_lastdim(transpose12(t));      // [2,2,3]
              auto n = l2_normalize_lastdim(v[0]);           // [2,3,4]
              auto ln = layer_norm_lastdim(n, v[2], v[3]);   // affine over 4
              auto lin = linear(ln, v[4], v[5]);             // -> [2,3,5]
              return sum_all(lin * lin) + sum_all(s) + sum_all(t * t);
            },
            {a, b, gamma, beta, w, bias}) < kGradTol);
}

TEST_CASE("batch norm: train-mode statistics, eval-mode affine, gradients") {
  Rng rng(37);
  auto x = random_tensor({3, 2, 2, 2}, rng);
  nn::BatchNorm2d<double> bn(2);
  Var<double> vx(x, true);
  auto y = bn(vx, true);
  // per-channel output mean ~ beta(0), variance ~ gamma^2(1)
  for (Index c = 0; c < 2; ++c) {
    double m = 0;
    for (Index b = 0; b < 3; ++b)
      for (Index i = 0; i < 4; ++i) m += y.value()[b * 8 + c * 4 + i];
    CHECK(m / 12.0 == doctest::Approx(0.0).epsilon(1e-10));
  }
  // gradient through batch statistics
  nn::BatchNorm2d<double> bn2(2);
  bn2.gamma.value()[0] = 1.3;
  bn2.gamma.value()[1] = 0.7;
  bn2.beta.value()[0] = 0.2;
  CHECK(GradCheck::max_rel_err(
            [&](auto& v) {
              nn::BatchNorm2d<double> local(2);
              local.gamma = v[1];
              local.beta = v[2];
              auto out = local(v[0], true);
              return sum_all(out * out * out);  // asymmetric so mean/var grads matter
            },
            {x, bn2.gamma.value(), bn2.beta.value()}) < 1e-5);
  // eval mode uses running stats
  bn.running_mean[0] = 0.3;
  bn.running_var[0] = 2.0;
  Var<double> vx2(x);
  auto ye = bn(vx2, false);
  double want = (x.at(0, 0, 0, 0) - 0.3) / std::sqrt(2.0 + 1e-5) * bn.gamma.value()[0] +
                bn.beta.value()[0];
  CHECK(ye.value().at(0, 0, 0, 0) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("fft_highpass: DC removal, self-adjointness, gradient") {
  Rng rng(41);
  auto x = random_tensor({1, 2, 8, 6}, rng);
  Var<double> vx(x);
  auto hp = fft_highpass_linear(vx, 0.25);
  // per-channel zero mean (DC removed)
  for (Index c = 0; c < 2; ++c) {
    double m = 0;
    for (Index i = 0; i < 48; ++i) m += hp.value()[c * 48 + i];
    CHECK(std::abs(m / 48) < 1e-12);
  }
  // constant input -> zero output
  Var<double> vc(Tensor<double>::full({1, 1, 8, 8}, 3.0));
  auto hpc = fft_highpass_linear(vc, 0.25);
  for (Index i = 0; i < 64; ++i) CHECK(std::abs(hpc.value()[i]) < 1e-12);
  // self-adjoint: <HPx, y> == <x, HPy>
  auto yv = random_tensor({1, 2, 8, 6}, rng);
  Var<double> vy(yv);
  auto hpy = fft_highpass_linear(vy, 0.25);
  double lhs = (hp.value().flat() * yv.flat()).sum();
  double rhs = (x.flat() * hpy.value().flat()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  CHECK(GradCheck::max_rel_err(
            [](auto& v) {
              auto out = fft_highpass_linear(v[0], 0.3);
              return sum_all(out * out);
            },
            {x}) < kGradTol);
  CHECK_THROWS_AS(fft_highpass_linear(vx, 1.5), ConfigError);
}

TEST_CASE("no-grad mode builds no graph") {
  Rng rng(43);
  auto x = random_tensor({1, 1, 2, 2}, rng);
  NoGradGuard ng;
  Var<double> vx(x, true);
  auto y = relu(vx * vx);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}
