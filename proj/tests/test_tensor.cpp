#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "enas/network.hpp"
#include "enas/optim.hpp"
#include "gradcheck.hpp"

using namespace enas;
using enas::testing::max_gradient_error;
using enas::testing::probe_loss;
using enas::testing::random64;

namespace {

Tensor random32(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// direct nested-loop convolution
Tensor naive_conv(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  const int cpg = C / groups, opg = O / groups;
  const int OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  Tensor y({std::size_t(N), std::size_t(O), std::size_t(OH), std::size_t(OW)});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < OH; ++i)
        for (int j = 0; j < OW; ++j) {
          double acc = 0;
          const int g = o / opg;
          for (int c = 0; c < cpg; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int r = i * stride - pad + a, s = j * stride - pad + b;
                if (r < 0 || s < 0 || r >= H || s >= W) continue;
                acc += double(x.at4(n, g * cpg + c, r, s)) * w.at4(o, c, a, b);
              }
          y.at4(n, o, i, j) = float(acc);
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d: all-ones window sums to nine") {
  auto x = Var<float>::constant(Tensor({1, 1, 3, 3}, 1.0f));
  auto w = Var<float>::constant(Tensor({1, 1, 3, 3}, 1.0f));
  auto y = conv2d(x, w, 1, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value().at4(0, 0, 1, 1) == 9.0f);
  CHECK(y.value().at4(0, 0, 0, 0) == 4.0f);
}

TEST_CASE("conv2d: identity 1x1 kernel") {
  std::mt19937_64 rng(1);
  auto x = Var<float>::constant(random32({2, 1, 5, 5}, rng));
  auto y = conv2d(x, Var<float>::constant(Tensor({1, 1, 1, 1}, 1.0f)), 1, 0, 1);
  CHECK(y.value() == x.value());
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(2);
  struct Case { Shape x, w; int stride, pad, groups; };
  for (const auto& c : {Case{{2, 4, 8, 8}, {6, 4, 3, 3}, 1, 1, 1}, Case{{2, 4, 8, 8}, {6, 4, 3, 3}, 2, 1, 1},
                        Case{{1, 6, 7, 7}, {6, 1, 5, 5}, 1, 2, 6}, Case{{1, 4, 6, 6}, {4, 2, 3, 3}, 2, 1, 2}}) {
    const Tensor x = random32(c.x, rng), w = random32(c.w, rng);
    const Tensor y = conv2d(Var<float>::constant(x), Var<float>::constant(w), c.stride, c.pad, c.groups).value();
    const Tensor ref = naive_conv(x, w, c.stride, c.pad, c.groups);
    REQUIRE(y.shape() == ref.shape());
    double worst = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) worst = std::max(worst, double(std::abs(y[i] - ref[i])));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("conv2d rejects mismatched channels and even kernels") {
  auto x = Var<float>::constant(Tensor({1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, Var<float>::constant(Tensor({2, 2, 3, 3})), 1, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Var<float>::constant(Tensor({2, 3, 2, 2})), 1, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Var<float>::constant(Tensor({2, 1, 3, 3})), 1, 1, 2), DimensionError);
}

TEST_CASE("normalize_batch") {
  std::mt19937_64 rng(3);
  const std::size_t C = 3;
  auto scale = Var<float>::constant(Tensor({C}, 1.0f));
  auto shift = Var<float>::constant(Tensor({C}, 0.0f));

  SUBCASE("constant channel collapses to shift") {
    Tensor x = random32({4, C, 3, 3}, rng);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w) x.at4(n, 1, h, w) = 2.5f;
    auto sh = Var<float>::constant(Tensor({C}, std::vector<float>{0.f, 0.75f, 0.f}));
    auto y = normalize_batch(Var<float>::constant(x), scale, sh, NormMode::train).value();
    for (std::size_t n = 0; n < 4; ++n) CHECK(y.at4(n, 1, 2, 2) == doctest::Approx(0.75f));
  }
  SUBCASE("train mode output has zero batch mean") {
    auto y = normalize_batch(Var<float>::constant(random32({5, C, 4, 4}, rng)), scale, shift, NormMode::train).value();
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0;
      for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t i = 0; i < 16; ++i) m += y.at4(n, c, i / 4, i % 4);
      CHECK(std::abs(m / 80) < 1e-6);
    }
  }
  SUBCASE("eval with the batch's own statistics equals train mode") {
    auto x = Var<float>::constant(random32({6, C, 5, 5}, rng));
    auto sc = Var<float>::constant(random32({C}, rng));
    auto sf = Var<float>::constant(random32({C}, rng));
    NormStats<float> stats;
    auto train = normalize_batch(x, sc, sf, NormMode::train, static_cast<const NormStats<float>*>(nullptr), &stats).value();
    auto eval = normalize_batch(x, sc, sf, NormMode::eval, &stats).value();
    for (std::size_t i = 0; i < train.numel(); ++i) CHECK(std::abs(train[i] - eval[i]) < 1e-5);
  }
  SUBCASE("eval without statistics fails") {
    CHECK_THROWS_AS(normalize_batch(Var<float>::constant(Tensor({1, C, 2, 2})), scale, shift, NormMode::eval),
                    MissingCalibrationError);
  }
}

TEST_CASE("cross entropy") {
  std::vector<int> t{3, 0};
  SUBCASE("uniform logits give ln K") {
    auto l = cross_entropy_from_logits(Var<float>::constant(Tensor({2, 10})), t);
    CHECK(l.value()[0] == doctest::Approx(2.302585).epsilon(1e-6));
  }
  SUBCASE("saturated correct prediction gives zero") {
    Tensor z({2, 10});
    z[3] = 1e6f;
    z[10] = 1e6f;
    CHECK(cross_entropy_from_logits(Var<float>::constant(z), t).value()[0] == doctest::Approx(0.0));
  }
  SUBCASE("random logits match softmax-then-log") {
    std::mt19937_64 rng(4);
    Tensor64 z = random64({4, 5}, rng, -3, 3);
    std::vector<int> tt{0, 4, 2, 2};
    auto l = cross_entropy_from_logits(Var<double>::constant(z), tt, Reduction::none).value();
    for (int n = 0; n < 4; ++n) {
      double den = 0;
      for (int k = 0; k < 5; ++k) den += std::exp(z[n * 5 + k]);
      CHECK(std::abs(l[n] - -std::log(std::exp(z[n * 5 + tt[n]]) / den)) < 1e-6);
    }
  }
  SUBCASE("target out of range") {
    std::vector<int> bad{0, 10};
    CHECK_THROWS_AS(cross_entropy_from_logits(Var<float>::constant(Tensor({2, 10})), bad), IndexError);
  }
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(5);
  Tensor z = random32({7, 10}, rng);
  for (auto& v : z.storage()) v *= 20;
  auto p = softmax_rows(z);
  for (int n = 0; n < 7; ++n) {
    double s = 0;
    for (int k = 0; k < 10; ++k) s += p[n * 10 + k];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    auto w = Var<float>::parameter(Tensor({2, 3}, 0.5f));
    backward(sum(w));
    for (float g : w.grad().storage()) CHECK(g == 1.0f);
  }
  SUBCASE("sum of squares") {
    auto w = Var<float>::parameter(Tensor({3}, std::vector<float>{1, 2, 3}));
    backward(sum(mul(w, w)));
    CHECK(w.grad() == Tensor({3}, std::vector<float>{2, 4, 6}));
  }
  SUBCASE("gradients accumulate across calls") {
    std::mt19937_64 rng(6);
    auto w = Var<double>::parameter(random64({4}, rng));
    auto loss = sum(mul(w, w));
    backward(loss);
    const Tensor64 once = w.grad();
    backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == 2 * once[i]);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto w = Var<float>::parameter(Tensor({3}, 1.0f));
    CHECK_THROWS_AS(backward(w), RankError);
  }
}

TEST_CASE("finite-difference gradients of every op") {
  std::mt19937_64 rng(7);
  auto P = [&](Shape s, double lo = -1, double hi = 1) { return Var<double>::parameter(random64(std::move(s), rng, lo, hi)); };

  SUBCASE("conv2d dense, strided, grouped and depthwise") {
    struct Case { Shape x, w; int stride, pad, groups; };
    for (const auto& c : {Case{{2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1, 1}, Case{{1, 2, 6, 6}, {3, 2, 3, 3}, 2, 1, 1},
                          Case{{1, 4, 5, 5}, {4, 2, 1, 1}, 1, 0, 2}, Case{{2, 3, 5, 5}, {3, 1, 5, 5}, 1, 2, 3}}) {
      std::vector<Var<double>> in{P(c.x), P(c.w)};
      CHECK(max_gradient_error(in, [&] { return probe_loss(conv2d(in[0], in[1], c.stride, c.pad, c.groups)); }) < 1e-5);
    }
  }
  SUBCASE("normalize_batch train and eval") {
    std::vector<Var<double>> in{P({3, 2, 3, 3}), P({2}), P({2})};
    CHECK(max_gradient_error(in, [&] { return probe_loss(normalize_batch(in[0], in[1], in[2], NormMode::train)); }) < 1e-5);
    NormStats<double> st{{0.1, -0.2}, {0.5, 1.5}};
    CHECK(max_gradient_error(in, [&] { return probe_loss(normalize_batch(in[0], in[1], in[2], NormMode::eval, &st)); }) <
          1e-5);
  }
  SUBCASE("activations") {
    std::vector<Var<double>> in{P({40}, -5, 5)};
    CHECK(max_gradient_error(in, [&] { return probe_loss(hswish(in[0])); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(relu(in[0])); }) < 1e-5);
  }
  SUBCASE("elementwise and reductions") {
    std::vector<Var<double>> in{P({2, 3, 2, 2}), P({2, 3, 2, 2})};
    CHECK(max_gradient_error(in, [&] { return probe_loss(add(in[0], in[1])); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(mul(in[0], in[1])); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(scale(in[0], 1.7)); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(global_avg_pool(in[0])); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return sum(in[0]); }) < 1e-5);
  }
  SUBCASE("linear with and without bias") {
    std::vector<Var<double>> in{P({3, 4}), P({5, 4}), P({5})};
    CHECK(max_gradient_error(in, [&] { return probe_loss(linear(in[0], in[1], &in[2])); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(linear(in[0], in[1], static_cast<const Var<double>*>(nullptr))); }) <
          1e-5);
  }
  SUBCASE("crop, reshape, narrow_rows") {
    std::vector<Var<double>> in{P({4, 3, 5, 5})};
    const std::size_t off[] = {0, 1, 1, 1}, size[] = {4, 2, 3, 3};
    CHECK(max_gradient_error(in, [&] { return probe_loss(crop(in[0], off, size)); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(reshape(in[0], {12, 25})); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(narrow_rows(in[0], 1, 2)); }) < 1e-5);
  }
  SUBCASE("losses") {
    std::vector<Var<double>> in{P({6, 4}, -3, 3)};
    std::vector<int> t{0, 1, 2, 3, 1, 0};
    std::vector<double> wts{1, 0, 1, 1, 0, 1};
    CHECK(max_gradient_error(in, [&] { return cross_entropy_from_logits(in[0], t); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return probe_loss(cross_entropy_from_logits(in[0], t, Reduction::none)); }) < 1e-5);
    CHECK(max_gradient_error(in, [&] { return weighted_cross_entropy(in[0], t, std::span<const double>(wts), 6.0); }) <
          1e-5);
  }
  SUBCASE("full inverted residual block") {
    BlockGeometry g{4, 8, 4, 3, 1, true, true};
    BlockWeights<double> w;
    std::vector<Var<double>> in{P({2, 4, 5, 5}), P({8, 4, 1, 1}), P({8}, 0.5, 1.5), P({8}), P({8, 1, 3, 3}),
                                P({8}, 0.5, 1.5),  P({8}),         P({4, 8, 1, 1}),  P({4}, 0.5, 1.5), P({4})};
    auto run = [&] {
      w = {in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
      NormContext<double> ctx;
      return probe_loss(inverted_residual(in[0], g, w, Activation::hswish, ctx, "b"));
    };
    CHECK(max_gradient_error(in, run) < 1e-5);
  }
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    ParamStore ps;
    auto& p = ps.add("p", Tensor({3}, std::vector<float>{0.25f, -1.0f, 2.0f}));
    AdamW opt(ps, {.lr0 = 0.1, .weight_decay = 0.0, .horizon = 10});
    backward(sum(scale(p, 0.0f)));
    const Tensor before = p.value();
    opt.step(ps);
    CHECK(p.value() == before);
  }
  SUBCASE("schedule reaches zero at the horizon") {
    ParamStore ps;
    auto& p = ps.add("p", Tensor({2}, 1.0f));
    AdamW opt(ps, {.lr0 = 0.1, .weight_decay = 0.0, .horizon = 3});
    CHECK(opt.learning_rate(0) == doctest::Approx(0.1));
    CHECK(opt.learning_rate(3) == doctest::Approx(0.0));
    for (int i = 0; i < 3; ++i) {
      ps.zero_grad();
      backward(sum(p));
      opt.step(ps);
    }
    const Tensor before = p.value();
    ps.zero_grad();
    backward(sum(p));
    opt.step(ps);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(p.value()[i] - before[i]) < 1e-12);
  }
  SUBCASE("scalar trajectory follows the Adam recurrence") {
    ParamStore ps;
    auto& p = ps.add("p", Tensor({1}, 0.0f));
    const double lr0 = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const std::int64_t T = 100;
    AdamW opt(ps, {.lr0 = lr0, .weight_decay = 0.0, .horizon = T});
    double m = 0, v = 0, x = 0;
    for (int t = 1; t <= 3; ++t) {
      ps.zero_grad();
      backward(sum(p));  // grad = 1
      opt.step(ps);
      m = b1 * m + (1 - b1);
      v = b2 * v + (1 - b2);
      const double lr = lr0 * 0.5 * (1 + std::cos(std::numbers::pi * (t - 1) / T));
      x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
      CHECK(std::abs(p.value()[0] - x) < 1e-8);
    }
  }
  SUBCASE("decoupled weight decay") {
    ParamStore ps;
    auto& p = ps.add("p", Tensor({1}, 2.0f));
    AdamW opt(ps, {.lr0 = 0.1, .weight_decay = 0.5, .horizon = 1000});
    backward(sum(scale(p, 0.0f)));
    opt.step(ps);
    CHECK(p.value()[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.5)));
  }
  SUBCASE("stepping without gradients fails") {
    ParamStore ps;
    ps.add("p", Tensor({1}, 1.0f));
    AdamW opt(ps, {});
    CHECK_THROWS_AS(opt.step(ps), NoGradientError);
  }
  SUBCASE("untouched elements are left alone") {
    ParamStore ps;
    auto& p = ps.add("p", Tensor({2, 4}, 1.0f));
    AdamW opt(ps, {.lr0 = 0.1, .weight_decay = 0.1, .horizon = 10});
    const std::size_t off[] = {0, 1}, size[] = {1, 2};
    backward(sum(crop(p, off, size)));
    opt.step(ps);
    for (std::size_t i = 0; i < 8; ++i) {
      if (i == 1 || i == 2) CHECK(p.value()[i] != 1.0f);
      else CHECK(p.value()[i] == 1.0f);
    }
  }
}

TEST_CASE("ParamStore") {
  ParamStore ps(7);
  ps.add("a/w", Tensor({2, 2}, 1.0f));
  CHECK_THROWS(ps.add("a/w", Tensor({1})));
  CHECK_THROWS(ps.at("missing"));
  auto copy = ps.clone();
  copy.at("a/w").mutable_value()[0] = 5.0f;
  CHECK(ps.at("a/w").value()[0] == 1.0f);
  CHECK(ps.element_count() == 4);
}
