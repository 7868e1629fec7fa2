#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "saic/autograd.hpp"
#include "saic/nn.hpp"
#include "saic/optim.hpp"

using namespace saic;
using saic::testing::finite_difference_check;
using saic::testing::random_tensor;

TEST_CASE("mse_loss closed forms") {
  Tensor a({2, 3}), b({2, 3});
  a.fill(0.0f);
  b.fill(0.1f);
  Var va(a), vb(b);
  CHECK(mse_loss(va, vb).value()[0] == Catch::Approx(0.01).epsilon(1e-5));
  CHECK(mse_loss(va, va).value()[0] == 0.0f);
  CHECK(mse_loss(vb, va).value()[0] == mse_loss(va, vb).value()[0]);
}

TEST_CASE("mse_loss gradient matches finite differences") {
  Rng rng(7);
  Var a(random_tensor({2, 4}, rng));
  Var b(random_tensor({2, 4}, rng));
  auto res = finite_difference_check(
      {a, b}, [](std::vector<Var>& v) { return mse_loss(v[0], v[1]); }, rng, 8);
  CHECK(res.max_rel_err < 2.5e-3);
}

TEST_CASE("conv2d forward matches the direct-loop reference") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({2, 3, 9, 8}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Var y = conv2d(Var(x), Var(w), Var(b), stride, 1);
    Tensor ref = saic::testing::reference_conv2d(x, w, b, stride, 1);
    REQUIRE(y.value().dims() == ref.dims());
    for (std::size_t i = 0; i < ref.numel(); ++i)
      REQUIRE(y.value()[i] == Catch::Approx(ref[i]).margin(1e-4));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(13);
  for (int stride : {1, 2}) {
    Var x(random_tensor({2, 3, 6, 6}, rng));
    Var w(random_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f));
    Var b(random_tensor({4}, rng));
    Tensor target = random_tensor({2, 4, stride == 1 ? 6 : 3, stride == 1 ? 6 : 3}, rng);
    auto res = finite_difference_check(
        {x, w, b},
        [&](std::vector<Var>& v) {
          return mse_loss(conv2d(v[0], v[1], v[2], stride, 1), Var(target));
        },
        rng, 20);
    INFO("stride " << stride << " max rel err " << res.max_rel_err);
    CHECK(res.max_rel_err < 2.5e-3);
  }
}

TEST_CASE("linear, pooling, upsample, activations: finite differences") {
  Rng rng(17);
  SECTION("linear") {
    Var x(random_tensor({3, 5}, rng));
    Var w(random_tensor({4, 5}, rng));
    Var b(random_tensor({4}, rng));
    Tensor target = random_tensor({3, 4}, rng);
    auto res = finite_difference_check(
        {x, w, b},
        [&](std::vector<Var>& v) {
          return mse_loss(linear(v[0], v[1], v[2]), Var(target));
        },
        rng);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("global_avg_pool") {
    Var x(random_tensor({2, 3, 4, 4}, rng));
    Tensor target = random_tensor({2, 3}, rng);
    auto res = finite_difference_check(
        {x},
        [&](std::vector<Var>& v) {
          return mse_loss(global_avg_pool(v[0]), Var(target));
        },
        rng);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("upsample2x") {
    Var x(random_tensor({2, 3, 3, 3}, rng));
    Tensor target = random_tensor({2, 3, 6, 6}, rng);
    auto res = finite_difference_check(
        {x},
        [&](std::vector<Var>& v) { return mse_loss(upsample2x(v[0]), Var(target)); },
        rng);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("sigmoid and leaky_relu") {
    // Inputs kept away from the rectifier kink so central differences are valid.
    Tensor xt = random_tensor({2, 8}, rng);
    for (std::size_t i = 0; i < xt.numel(); ++i)
      xt[i] = (xt[i] < 0 ? -1.0f : 1.0f) * (0.25f + std::abs(xt[i]));
    Var x(xt);
    Tensor target = random_tensor({2, 8}, rng);
    auto res = finite_difference_check(
        {x},
        [&](std::vector<Var>& v) {
          return mse_loss(sigmoid(leaky_relu(v[0], 0.1f)), Var(target));
        },
        rng);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("softmax + class_score_sum") {
    Var x(random_tensor({3, 5}, rng));
    auto res = finite_difference_check(
        {x},
        [&](std::vector<Var>& v) { return class_score_sum(softmax_rows(v[0]), 2); },
        rng, 15);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("cross_entropy_logits") {
    Var x(random_tensor({4, 6}, rng));
    std::vector<int> labels = {1, 0, 5, 3};
    auto res = finite_difference_check(
        {x},
        [&](std::vector<Var>& v) { return cross_entropy_logits(v[0], labels); },
        rng, 24);
    CHECK(res.max_rel_err < 2.5e-3);
  }
  SECTION("gaussian_nll") {
    Var mu(random_tensor({5, 2}, rng));
    Var logvar(random_tensor({5, 2}, rng, -1.0f, 1.0f));
    Tensor target = random_tensor({5, 2}, rng);
    auto res = finite_difference_check(
        {mu, logvar},
        [&](std::vector<Var>& v) { return gaussian_nll(v[0], v[1], target); },
        rng, 10);
    CHECK(res.max_rel_err < 2.5e-3);
  }
}

TEST_CASE("straight-through binarize: gradient is the identity") {
  Rng rng(19);
  Tensor e = random_tensor({2, 4, 3, 3}, rng, 0.0f, 1.0f);
  Tensor target = random_tensor({2, 4, 3, 3}, rng);

  // d(loss)/d(e) must equal d(loss)/d(q) elementwise.
  Var ve(e, true);
  Var q = ste_binarize(ve);
  Var loss = mse_loss(q, Var(target));
  backward(loss);

  Var vq(q.value(), true);
  Var loss2 = mse_loss(vq, Var(target));
  backward(loss2);

  REQUIRE(ve.has_grad());
  for (std::size_t i = 0; i < e.numel(); ++i)
    CHECK(ve.grad()[i] == Catch::Approx(vq.grad()[i]).margin(1e-9));

  for (std::size_t i = 0; i < q.value().numel(); ++i) {
    const float v = q.value()[i];
    CHECK((v == 0.0f || v == 1.0f));
    CHECK(v == (e[i] > 0.5f ? 1.0f : 0.0f));
  }
}

TEST_CASE("no-grad mode records nothing") {
  Rng rng(23);
  Var x(random_tensor({2, 3}, rng), true);
  NoGradGuard ng;
  Var y = sigmoid(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("gradient accumulation over reused inputs") {
  // y = x + x; dy/dx = 2.
  Tensor t({3});
  t.fill(1.5f);
  Var x(t, true);
  Var s = add(x, x);
  Var loss = mse_loss(s, Var(Tensor({3})));
  backward(loss);
  // d/dx mean((2x)^2) = 8x/ n-normalised: 2*(2x)*2/3
  for (int i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == Catch::Approx(8.0f * 1.5f / 3.0f));
}

TEST_CASE("adam takes a descent step on a quadratic") {
  ParamStore params;
  Tensor t({4});
  for (int i = 0; i < 4; ++i) t[i] = 1.0f + i;
  Var p = params.add("p", t);
  Adam opt({.lr = 0.05f});
  float prev = 1e9f;
  for (int step = 0; step < 200; ++step) {
    params.zero_grad();
    Var loss = mse_loss(p, Var(Tensor({4})));
    backward(loss);
    opt.step(params);
    prev = loss.value()[0];
  }
  CHECK(prev < 0.05f);
}

TEST_CASE("parameter checksum is order- and value-sensitive") {
  ParamStore a, b;
  Rng rng(29);
  a.add("w", random_tensor({3, 3}, rng));
  Rng rng2(29);
  b.add("w", random_tensor({3, 3}, rng2));
  CHECK(a.checksum() == b.checksum());
  b.entries()[0].var.value()[0] += 1e-6f;
  CHECK(a.checksum() != b.checksum());
}
