#include <cmath>

#include "doctest.h"
#include "dfd/layers.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace dfd;
using dfd::test::kink_free;
using dfd::test::random64;
using dfd::test::weighted_check;

namespace {

constexpr double kGradTol = 1e-6;

Conv2dParams<double> random_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                                 Padding pad, bool bias, bool depthwise) {
  Conv2dParams<double> p;
  p.kernels = depthwise ? random64({in, 1, k, k}, rng) : random64({out, in, k, k}, rng);
  if (bias) p.bias = random64({depthwise ? in : out}, rng);
  p.stride = stride;
  p.padding = pad;
  p.depthwise = depthwise;
  return p;
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop reference") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const bool depthwise = trial % 4 == 3;
    const std::size_t c = 1 + rng.below(4), o = depthwise ? c : 1 + rng.below(4);
    const bool same = rng.below(2) == 1;
    const std::size_t k = same ? 1 + 2 * rng.below(2) : 1 + rng.below(3);
    const std::size_t h = k + rng.below(9 - k), w = k + rng.below(9 - k);
    const std::size_t stride = 1 + rng.below(2);
    auto p = random_conv(rng, c, o, k, stride, same ? Padding::same : Padding::valid, rng.below(2) == 1, depthwise);
    auto x = random64({1 + rng.below(2), c, h, w}, rng);
    const auto expect = dfd::test::naive_conv2d(x, p);
    const auto got = conv2d(x, p);
    REQUIRE(got.shape() == expect.shape);
    for (std::size_t i = 0; i < expect.values.size(); ++i)
      REQUIRE(got.data()[i] == doctest::Approx(expect.values[i]).epsilon(1e-9));
  }
}

TEST_CASE("conv2d rejects bad configurations") {
  Rng rng(1);
  auto p = random_conv(rng, 2, 3, 2, 1, Padding::same, false, false);
  CHECK_THROWS(conv2d(random64({1, 2, 5, 5}, rng), p));  // even kernel with same padding
  auto q = random_conv(rng, 2, 3, 3, 1, Padding::valid, false, false);
  CHECK_THROWS_AS(conv2d(random64({1, 4, 5, 5}, rng), q), ShapeError);
  CHECK_THROWS_AS(conv2d(random64({1, 2, 2, 2}, rng), q), ShapeError);
}

TEST_CASE("maxpool2d matches the nested-loop reference") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t window = 1 + rng.below(3), stride = 1 + rng.below(2);
    const std::size_t pad = window > 1 ? rng.below(window / 2 + 1) : 0;
    const std::size_t h = window + rng.below(9 - window), w = window + rng.below(9 - window);
    auto x = random64({1 + rng.below(2), 1 + rng.below(4), h, w}, rng);
    const auto expect = dfd::test::naive_maxpool(x, window, stride, pad);
    const auto got = maxpool2d(x, window, stride, pad);
    REQUIRE(got.shape() == expect.shape);
    for (std::size_t i = 0; i < expect.values.size(); ++i) REQUIRE(got.data()[i] == expect.values[i]);
  }
}

TEST_CASE("maxpool2d routes a tied gradient to the first maximum") {
  auto x = Tensor64::from_values({1, 1, 2, 2}, {5, 5, 1, 5});
  x.set_requires_grad(true);
  sum(maxpool2d(x, 2, 2)).backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("activation values") {
  auto z = Tensor64::from_values({5}, {-3, -1, 0, 1, 3});
  auto g = activation<double>({ActivationKind::gelu}, z);
  CHECK(g.data()[3] == doctest::Approx(0.8413447460685429));
  CHECK(g.data()[1] == doctest::Approx(-0.15865525393145707));
  auto hs = activation<double>({ActivationKind::hard_swish}, z);
  CHECK(hs.data()[0] == 0.0);
  CHECK(hs.data()[3] == doctest::Approx(4.0 / 6.0));
  CHECK(hs.data()[4] == 3.0);
  auto lr = activation<double>({ActivationKind::leaky_relu, 0.2}, z);
  CHECK(lr.data()[1] == doctest::Approx(-0.2));
  auto s = sigmoid(Tensor64::from_values({3}, {-1000, 0, 1000}));
  CHECK(s.data()[0] >= 0.0);
  CHECK(s.data()[1] == 0.5);
  CHECK(s.data()[2] == 1.0);
  auto p = probability(Tensor64::from_values({2}, {-1000, 1000}));
  CHECK(p.data()[0] > 0.0);
  CHECK(p.data()[1] < 1.0);
}

TEST_CASE("layer gradients agree with central differences") {
  Rng rng(31);
  SUBCASE("conv2d input, kernels and bias") {
    for (bool depthwise : {false, true}) {
      auto p = random_conv(rng, 2, depthwise ? 2 : 3, 3, 2, Padding::same, true, depthwise);
      auto x = random64({2, 2, 5, 4}, rng);
      CHECK(weighted_check([&](const Tensor64& in) { return conv2d(in, p); }, x, 1).max_relative_error < kGradTol);
      CHECK(weighted_check(
                [&](const Tensor64& k) {
                  auto q = p;
                  q.kernels = k;
                  return conv2d(x, q);
                },
                p.kernels, 2)
                .max_relative_error < kGradTol);
      CHECK(weighted_check(
                [&](const Tensor64& b) {
                  auto q = p;
                  q.bias = b;
                  return conv2d(x, q);
                },
                *p.bias, 3)
                .max_relative_error < kGradTol);
    }
  }
  SUBCASE("dense") {
    auto d = make_dense<double>(4, 3, rng);
    d.bias = random64({3}, rng);
    auto x = random64({2, 5, 4}, rng);
    CHECK(weighted_check([&](const Tensor64& in) { return dense(in, d); }, x, 4).max_relative_error < kGradTol);
    CHECK(weighted_check(
              [&](const Tensor64& w) {
                auto q = d;
                q.weight = w;
                return dense(x, q);
              },
              d.weight, 5)
              .max_relative_error < kGradTol);
  }
  SUBCASE("layer_norm") {
    auto n = make_layer_norm<double>(6);
    n.gain = random64({6}, rng);
    n.offset = random64({6}, rng);
    CHECK(weighted_check([&](const Tensor64& in) { return layer_norm(in, n); }, random64({3, 6}, rng), 6)
              .max_relative_error < kGradTol);
    auto x = random64({3, 6}, rng);
    CHECK(weighted_check(
              [&](const Tensor64& g) {
                auto q = n;
                q.gain = g;
                return layer_norm(x, q);
              },
              n.gain, 7)
              .max_relative_error < kGradTol);
  }
  SUBCASE("batch_norm in training mode") {
    auto bn = make_batch_norm<double>(3);
    bn.gamma = random64({3}, rng);
    CHECK(weighted_check(
              [&](const Tensor64& in) {
                auto q = make_batch_norm<double>(3);
                q.gamma = bn.gamma;
                return batch_norm(in, q, true);
              },
              random64({2, 3, 2, 2}, rng), 8)
              .max_relative_error < kGradTol);
  }
  SUBCASE("attention and feed-forward") {
    auto a = make_attention<double>(8, 2, rng);
    auto f = make_ffn<double>(8, 2, rng);
    CHECK(weighted_check([&](const Tensor64& in) { return msa(in, a); }, random64({2, 3, 8}, rng), 9)
              .max_relative_error < kGradTol);
    CHECK(weighted_check([&](const Tensor64& in) { return ffn(in, f); }, random64({2, 3, 8}, rng), 10)
              .max_relative_error < kGradTol);
  }
  SUBCASE("activations away from kinks") {
    for (auto kind : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::sigmoid, ActivationKind::tanh,
                      ActivationKind::gelu, ActivationKind::hard_swish}) {
      auto x = kink_free({12}, rng, {0.0, -3.0, 3.0}, -4.0, 4.0);
      CHECK(weighted_check([&](const Tensor64& in) { return activation<double>({kind}, in); }, x, 11)
                .max_relative_error < kGradTol);
    }
    CHECK(weighted_check([](const Tensor64& in) { return probability(in); }, random64({6}, rng, -4, 4), 12)
              .max_relative_error < kGradTol);
  }
  SUBCASE("shape plumbing") {
    CHECK(weighted_check([](const Tensor64& in) { return global_avg_pool(in); }, random64({2, 3, 3, 2}, rng), 13)
              .max_relative_error < kGradTol);
    CHECK(weighted_check([](const Tensor64& in) { return patchify(in, 2); }, random64({1, 3, 4, 4}, rng), 14)
              .max_relative_error < kGradTol);
    auto tokens = random64({2, 3, 4}, rng);
    CHECK(weighted_check([&](const Tensor64& t) { return prepend_token(t, tokens); }, random64({1, 4}, rng), 15)
              .max_relative_error < kGradTol);
    CHECK(weighted_check([](const Tensor64& t) { return select_token(t, 1); }, random64({2, 3, 4}, rng), 16)
              .max_relative_error < kGradTol);
    auto gate = random64({2, 3}, rng);
    CHECK(weighted_check([&](const Tensor64& x) { return scale_channels(x, gate); }, random64({2, 3, 2, 2}, rng), 17)
              .max_relative_error < kGradTol);
    auto img = random64({2, 3, 2, 2}, rng);
    CHECK(weighted_check([&](const Tensor64& g) { return scale_channels(img, g); }, gate, 18).max_relative_error <
          kGradTol);
    CHECK(weighted_check([](const Tensor64& x) { return maxpool2d(x, 2, 2); }, random64({1, 2, 4, 4}, rng), 19)
              .max_relative_error < kGradTol);
    CHECK(weighted_check([](const Tensor64& x) { return dropout(x, 0.5, true, 77); }, random64({3, 4}, rng), 20)
              .max_relative_error < kGradTol);
  }
}

TEST_CASE("multi-head attention matches the per-head reference") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t heads = 1 + rng.below(3), c = heads * (1 + rng.below(3)), n = 1 + rng.below(5);
    auto a = make_attention<double>(c, heads, rng);
    a.query.bias = random64({c}, rng);
    a.output.bias = random64({c}, rng);
    auto x = random64({2, n, c}, rng);
    const auto got = msa_with_weights(x, a);
    const auto expect = dfd::test::naive_attention(x, a);
    for (std::size_t i = 0; i < expect.output.size(); ++i)
      REQUIRE(got.output.data()[i] == doctest::Approx(expect.output[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < expect.weights.size(); ++i)
      REQUIRE(got.weights.data()[i] == doctest::Approx(expect.weights[i]).epsilon(1e-9));
  }
  CHECK_THROWS(make_attention<double>(6, 4, rng));
}

TEST_CASE("attention rows and layer-norm slices are normalized") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = make_attention<float>(8, 2, rng);
    const std::size_t n = 1 + rng.below(8);
    auto x = Tensor::uniform({2, n, 8}, rng, -3.0f, 3.0f);
    const auto w = msa_with_weights(x, a).weights;
    for (std::size_t r = 0; r < 2 * 2 * n; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) total += w.data()[r * n + j];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    auto y = layer_norm(x, make_layer_norm<float>(8));
    for (std::size_t r = 0; r < 2 * n; ++r) {
      double mu = 0, var = 0;
      for (std::size_t j = 0; j < 8; ++j) mu += y.data()[r * 8 + j];
      mu /= 8;
      for (std::size_t j = 0; j < 8; ++j) var += (y.data()[r * 8 + j] - mu) * (y.data()[r * 8 + j] - mu);
      var /= 8;
      CHECK(std::abs(mu) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("batch_norm updates running statistics") {
  auto bn = make_batch_norm<double>(1);
  auto x = Tensor64::from_values({2, 1, 1, 2}, {1, 2, 3, 6});
  batch_norm(x, bn, true);
  // batch mean 3, biased variance (4 + 1 + 0 + 9) / 4 = 3.5
  CHECK(bn.running_mean.data()[0] == doctest::Approx(0.3));
  CHECK(bn.running_var.data()[0] == doctest::Approx(0.9 + 0.35));
  const auto before = bn.running_mean.values();
  batch_norm(x, bn, false);
  CHECK(bn.running_mean.values() == before);
}

TEST_CASE("dropout is inverted and an identity at inference") {
  Rng rng(3);
  auto x = Tensor::uniform({1000}, rng, 1.0f, 2.0f);
  CHECK(dropout(x, 0.5, false, 1).same_storage(x));
  CHECK(dropout(x, 0.0, true, 1).same_storage(x));
  auto y = dropout(x, 0.25, true, 1);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y.data()[i] != 0.0f) {
      ++kept;
      CHECK(y.data()[i] == doctest::Approx(x.data()[i] / 0.75f));
    }
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  CHECK(dropout(x, 0.25, true, 1).values() == y.values());
  CHECK_THROWS_AS(dropout(x, 1.0, true, 1), DomainError);
}

TEST_CASE("patchify layout") {
  // 1 image, 1 channel would not match 3-channel models, so use C = 3 and
  // check one patch element by coordinates.
  Rng rng(5);
  auto x = Tensor::uniform({2, 3, 4, 6}, rng, -1.0f, 1.0f);
  auto p = patchify(x, 2);
  REQUIRE(p.shape() == Shape{2, 6, 12});
  // batch 1, patch (row 1, col 2) = index 5, element (c=2, r=1, s=0) = 2*4 + 1*2 + 0 = 10
  CHECK(p.at({1, 5, 10}) == x.at({1, 2, 3, 4}));
  CHECK_THROWS_AS(patchify(x, 4), ShapeError);
}

TEST_CASE("token helpers and channel scaling") {
  auto tok = Tensor::from_values({1, 2}, {9, 8});
  auto seq = Tensor::from_values({1, 1, 2}, {1, 2});
  auto out = prepend_token(tok, seq);
  CHECK(out.values() == std::vector<float>{9, 8, 1, 2});
  CHECK(select_token(out, 1).values() == std::vector<float>{1, 2});
  auto x = Tensor::ones({1, 2, 1, 2});
  auto gate = Tensor::from_values({1, 2}, {0.5f, 2.0f});
  CHECK(scale_channels(x, gate).values() == std::vector<float>{0.5f, 0.5f, 2.0f, 2.0f});
}
