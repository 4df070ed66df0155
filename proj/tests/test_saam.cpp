#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lgsan/model/saam.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace lgsan;
using testutil::random_tensor;

TEST_CASE("guided_qkv reduces to normalized conv outputs when guidance is the identity") {
  Rng rng(1);
  Saam<double> saam(3, 2, 2, 4, rng);
  // force both guidance projections to emit exactly 1
  saam.proj_m.weight.value().set_zero();
  saam.proj_m.bias.value().fill(1.0);
  saam.proj_e.weight.value().set_zero();
  saam.proj_e.bias.value().fill(1.0);

  Rng data(3);
  auto x = random_tensor({1, 3, 3, 3}, data);
  auto m = random_tensor({1, 2, 3, 3}, data);
  auto e = random_tensor({1, 2, 3, 3}, data);
  NoGradGuard ng;
  auto qkv = saam.guided_qkv(Var<double>(x), Var<double>(m), Var<double>(e));

  auto qc = oracle::conv2d(x, saam.to_q.weight.value(), saam.to_q.bias.value(), 1, 0);
  auto want_q = oracle::l2norm_tokens(oracle::tokens_of(qc));
  for (Index i = 0; i < want_q.numel(); ++i)
    CHECK(qkv.q.value()[i] == doctest::Approx(want_q[i]).epsilon(1e-10));

  // every token has unit norm
  for (Index n = 0; n < 9; ++n) {
    double s = 0;
    for (Index c = 0; c < 4; ++c) s += qkv.q.value().at3(0, n, c) * qkv.q.value().at3(0, n, c);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-10));
    s = 0;
    for (Index c = 0; c < 4; ++c) s += qkv.k.value().at3(0, n, c) * qkv.k.value().at3(0, n, c);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("guided_qkv on 1x2x2x2 matches the scalar-loop oracle") {
  Rng rng(5);
  Saam<double> saam(2, 1, 1, 2, rng);
  Rng data(7);
  auto x = random_tensor({1, 2, 2, 2}, data);
  auto m = random_tensor({1, 1, 2, 2}, data, 0, 1);
  auto e = random_tensor({1, 1, 2, 2}, data, 0, 1);
  NoGradGuard ng;
  auto qkv = saam.guided_qkv(Var<double>(x), Var<double>(m), Var<double>(e));

  auto mg = oracle::conv2d(m, saam.proj_m.weight.value(), saam.proj_m.bias.value(), 1, 0);
  auto eg = oracle::conv2d(e, saam.proj_e.weight.value(), saam.proj_e.bias.value(), 1, 0);
  auto qc = oracle::conv2d(x, saam.to_q.weight.value(), saam.to_q.bias.value(), 1, 0);
  auto kc = oracle::conv2d(x, saam.to_k.weight.value(), saam.to_k.bias.value(), 1, 0);
  auto vc = oracle::conv2d(x, saam.to_v.weight.value(), saam.to_v.bias.value(), 1, 0);
  for (Index i = 0; i < qc.numel(); ++i) {
    qc[i] *= mg[i];
    kc[i] *= eg[i];
  }
  auto want_q = oracle::l2norm_tokens(oracle::tokens_of(qc));
  auto want_k = oracle::l2norm_tokens(oracle::tokens_of(kc));
  auto want_v = oracle::tokens_of(vc);
  for (Index i = 0; i < want_q.numel(); ++i) {
    CHECK(qkv.q.value()[i] == doctest::Approx(want_q[i]).epsilon(1e-10));
    CHECK(qkv.k.value()[i] == doctest::Approx(want_k[i]).epsilon(1e-10));
    CHECK(qkv.v.value()[i] == doctest::Approx(want_v[i]).epsilon(1e-10));
  }
}

TEST_CASE("linear_attention: single-token case, annihilation, associativity") {
  // single token, C'=2: softmax over one element is 1, so out = row sums of V weighted by Q
  Tensor<double> q(Shape{1, 1, 2}), k(Shape{1, 1, 2}), v(Shape{1, 1, 2});
  q.at3(0, 0, 0) = 1;
  q.at3(0, 0, 1) = 0;
  k.at3(0, 0, 0) = 3;
  k.at3(0, 0, 1) = 5;
  v.at3(0, 0, 0) = 2;
  v.at3(0, 0, 1) = 4;
  NoGradGuard ng;
  auto out = linear_attention(Var<double>(q), Var<double>(k), Var<double>(v));
  auto want = oracle::linear_attention(q, k, v);
  CHECK(out.value().at3(0, 0, 0) == doctest::Approx(want.at3(0, 0, 0)).epsilon(1e-12));
  CHECK(out.value().at3(0, 0, 1) == doctest::Approx(want.at3(0, 0, 1)).epsilon(1e-12));
  // frozen expected value, computed with the oracle: out = [2, 4]
  CHECK(out.value().at3(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.value().at3(0, 0, 1) == doctest::Approx(4.0).epsilon(1e-12));

  Rng rng(9);
  auto qr = random_tensor({2, 5, 3}, rng);
  auto kr = random_tensor({2, 5, 3}, rng);
  auto zero = Tensor<double>(Shape{2, 5, 3});
  auto out0 = linear_attention(Var<double>(qr), Var<double>(kr), Var<double>(zero));
  for (Index i = 0; i < out0.numel(); ++i) CHECK(out0.value()[i] == 0.0);

  // associativity: Q (A V) == (Q A) V numerically
  auto vr = random_tensor({2, 5, 3}, rng);
  Var<double> vq(qr), vk(kr), vv(vr);
  auto a = softmax_lastdim(transpose12(vk));
  auto left = bmm(vq, bmm(a, vv));
  auto right = bmm(bmm(vq, a), vv);
  for (Index i = 0; i < left.numel(); ++i)
    CHECK(left.value()[i] == doctest::Approx(right.value()[i]).epsilon(1e-6));
}

TEST_CASE("softmax over the token axis normalizes each channel row of A to 1") {
  Rng rng(11);
  auto k = random_tensor({1, 6, 4}, rng);
  NoGradGuard ng;
  auto a = softmax_lastdim(transpose12(Var<double>(k)));  // [1, C=4, N=6]
  for (Index c = 0; c < 4; ++c) {
    double s = 0;
    for (Index n = 0; n < 6; ++n) s += a.value().at3(0, c, n);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("linear attention never materializes an HW x HW intermediate") {
  Rng rng(13);
  Index N = 64, C = 4;
  auto q = random_tensor({1, N, C}, rng);
  auto k = random_tensor({1, N, C}, rng);
  auto v = random_tensor({1, N, C}, rng);
  AttentionStats stats;
  NoGradGuard ng;
  linear_attention(Var<double>(q), Var<double>(k), Var<double>(v), &stats);
  REQUIRE(!stats.intermediate_numels.empty());
  for (Index sz : stats.intermediate_numels) {
    CHECK(sz <= C * C + N * C);
    CHECK(sz < N * N);
  }
}

TEST_CASE("saam_forward: residual identity with zeroed value path, shape preservation") {
  Rng rng(15);
  Saam<double> saam(3, 2, 2, 4, rng);
  saam.zero_attention_branch();
  Rng data(17);
  for (Shape s : {Shape{1, 3, 2, 2}, Shape{2, 3, 5, 7}}) {
    auto x = random_tensor(s, data);
    auto m = random_tensor({s[0], 2, 4, 4}, data);
    auto e = random_tensor({s[0], 2, 8, 8}, data);
    NoGradGuard ng;
    auto y = saam.forward(Var<double>(x), Var<double>(m), Var<double>(e));
    REQUIRE(y.shape() == s);
    for (Index i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x[i]);  // exact
  }
}

TEST_CASE("saam_forward on 1x2x2x2 matches the compositional oracle") {
  Rng rng(19);
  Saam<double> saam(2, 1, 1, 2, rng);
  Rng data(21);
  auto x = random_tensor({1, 2, 2, 2}, data);
  auto m = random_tensor({1, 1, 2, 2}, data, 0, 1);
  auto e = random_tensor({1, 1, 2, 2}, data, 0, 1);
  NoGradGuard ng;
  auto y = saam.forward(Var<double>(x), Var<double>(m), Var<double>(e));

  auto mg = oracle::conv2d(m, saam.proj_m.weight.value(), saam.proj_m.bias.value(), 1, 0);
  auto eg = oracle::conv2d(e, saam.proj_e.weight.value(), saam.proj_e.bias.value(), 1, 0);
  auto qc = oracle::conv2d(x, saam.to_q.weight.value(), saam.to_q.bias.value(), 1, 0);
  auto kc = oracle::conv2d(x, saam.to_k.weight.value(), saam.to_k.bias.value(), 1, 0);
  auto vc = oracle::conv2d(x, saam.to_v.weight.value(), saam.to_v.bias.value(), 1, 0);
  for (Index i = 0; i < qc.numel(); ++i) {
    qc[i] *= mg[i];
    kc[i] *= eg[i];
  }
  auto att = oracle::linear_attention(oracle::l2norm_tokens(oracle::tokens_of(qc)),
                                      oracle::l2norm_tokens(oracle::tokens_of(kc)),
                                      oracle::tokens_of(vc));
  auto att_map = oracle::map_of(att, 2, 2);
  auto proj = oracle::conv2d(att_map, saam.out_proj.weight.value(), Tensor<double>(), 1, 0);
  for (Index i = 0; i < x.numel(); ++i)
    CHECK(y.value()[i] == doctest::Approx(x[i] + proj[i]).epsilon(1e-9));
}

TEST_CASE("saam_forward gradient check vs finite differences") {
  Rng rng(23);
  Saam<double> saam(2, 2, 2, 3, rng);
  Rng data(25);
  auto x = random_tensor({1, 2, 4, 4}, data);
  auto m = random_tensor({1, 2, 4, 4}, data);
  auto e = random_tensor({1, 2, 4, 4}, data);
  double err = testutil::GradCheck::max_rel_err(
      [&](auto& v) {
        auto out = saam.forward(v[0], v[1], v[2]);
        return sum_all(out * out);
      },
      {x, m, e});
  CHECK(err < 1e-4);
}
