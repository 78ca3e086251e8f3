#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "enas/ssl.hpp"

using namespace enas;

namespace {

Tensor random_logits(std::size_t m, std::size_t k, std::mt19937_64& rng, float spread = 4.0f) {
  std::normal_distribution<float> g(0.0f, spread);
  Tensor t({m, k});
  for (auto& v : t.storage()) v = g(rng);
  return t;
}

Tensor random_images(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> q(0, 255);
  Tensor t({n, 3, 8, 8});
  for (auto& v : t.storage()) v = q(rng) / 255.0f;
  return t;
}

// softmax-then-max in double, row by row
std::pair<int, double> top(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  const float* z = logits.data() + row * k;
  double mx = *std::max_element(z, z + k), den = 0;
  for (std::size_t j = 0; j < k; ++j) den += std::exp(z[j] - mx);
  const int arg = int(std::max_element(z, z + k) - z);
  return {arg, 1.0 / den};
}

double masked_ce_oracle(const Tensor& student, const Tensor& teacher, double tau) {
  const std::size_t m = student.dim(0), k = student.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto [label, p] = top(teacher, i);
    if (p < tau) continue;
    const float* z = student.data() + i * k;
    double mx = *std::max_element(z, z + k), den = 0;
    for (std::size_t j = 0; j < k; ++j) den += std::exp(z[j] - mx);
    total += -(z[label] - mx - std::log(den));
  }
  return total / m;
}

Var<float> C(const Tensor& t) { return Var<float>::constant(t); }

}  // namespace

TEST_CASE("weak augmentation") {
  std::mt19937_64 g(1);
  const Tensor x = random_images(6, g);
  SUBCASE("identity draw") {
    Rng rng(2);
    CHECK(augment_weak(x, rng, {.flip_prob = 0.0, .max_shift = 0}) == x);
  }
  SUBCASE("flip only mirrors columns") {
    Rng rng(3);
    const Tensor y = augment_weak(x, rng, {.flip_prob = 1.0, .max_shift = 0});
    CHECK(y.at4(2, 1, 3, 0) == x.at4(2, 1, 3, 7));
    CHECK(y.at4(0, 0, 5, 6) == x.at4(0, 0, 5, 1));
  }
  SUBCASE("output values come from the same image") {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor y = augment_weak(x, rng);
      CHECK(y.shape() == x.shape());
      for (std::size_t n = 0; n < 6; ++n) {
        std::set<float> values(x.data() + n * 192, x.data() + (n + 1) * 192);
        for (std::size_t i = 0; i < 192; ++i) REQUIRE(values.count(y[n * 192 + i]));
      }
    }
  }
  SUBCASE("deterministic per rng state") {
    Rng a(5), b(5);
    CHECK(augment_weak(x, a) == augment_weak(x, b));
    CHECK(augment_strong(x, a) == augment_strong(x, b));
  }
}

TEST_CASE("strong augmentation") {
  SUBCASE("constant image is a fixed point when intensity is held at one") {
    Tensor x({3, 3, 8, 8}, 0.4f);
    Rng rng(6);
    CHECK(augment_strong(x, rng, {.intensity_lo = 1.0, .intensity_hi = 1.0}) == x);
  }
  SUBCASE("values stay in the unit interval and the erased area is bounded") {
    std::mt19937_64 g(7);
    const Tensor x = random_images(20, g);
    Rng rng(8);
    const Tensor y = augment_strong(x, rng, {.flip_prob = 0.0, .max_shift = 0, .intensity_lo = 1.0, .intensity_hi = 1.0});
    for (float v : y.storage()) CHECK((v >= 0.0f && v <= 1.0f));
    for (std::size_t n = 0; n < 20; ++n) {
      std::size_t changed = 0;
      for (std::size_t i = 0; i < 64; ++i) changed += y[n * 192 + i] != x[n * 192 + i];
      CHECK(changed <= 16);  // 25% of 8x8
    }
  }
}

TEST_CASE("pseudo labels") {
  std::mt19937_64 g(9);
  SUBCASE("tau zero passes everything") {
    const auto r = pseudo_label(random_logits(64, 10, g), 0.0);
    for (auto m : r.mask) CHECK(m == 1);
    CHECK(r.pass_fraction == 1.0);
  }
  SUBCASE("uniform logits fail a high threshold") {
    const auto r = pseudo_label(Tensor({16, 10}), 0.95);
    CHECK_FALSE(r.any());
    CHECK(r.pass_fraction == 0.0);
  }
  SUBCASE("matches the softmax-max oracle") {
    const Tensor z = random_logits(64, 10, g);
    const auto r = pseudo_label(z, 0.95);
    std::size_t passed = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      const auto [label, p] = top(z, i);
      CHECK(r.labels[i] == label);
      CHECK(bool(r.mask[i]) == (p >= 0.95));
      passed += p >= 0.95;
    }
    CHECK(r.pass_fraction == doctest::Approx(passed / 64.0));
  }
  SUBCASE("mask shrinks as tau grows") {
    for (int batch = 0; batch < 200; ++batch) {
      const Tensor z = random_logits(32, 10, g, 1.0f + batch % 5);
      PseudoLabelResult prev = pseudo_label(z, 0.0);
      for (double tau : {0.2, 0.5, 0.8, 0.95, 1.0}) {
        const auto cur = pseudo_label(z, tau);
        for (std::size_t i = 0; i < 32; ++i) REQUIRE((!cur.mask[i] || prev.mask[i]));
        CHECK(cur.pass_fraction <= prev.pass_fraction);
        prev = cur;
      }
    }
  }
}

TEST_CASE("unlabelled losses") {
  std::mt19937_64 g(10);
  SUBCASE("empty mask gives zero") {
    const Tensor z = random_logits(8, 10, g, 0.3f);
    CHECK(unlabelled_loss_self(C(random_logits(8, 10, g)), z, 1.0).value()[0] == 0.0f);
    PseudoLabelResult none{std::vector<int>(8, 0), std::vector<std::uint8_t>(8, 0), 0.0};
    CHECK(unlabelled_loss_distilled(C(random_logits(8, 10, g)), none).value()[0] == 0.0f);
  }
  SUBCASE("saturated self-consistent logits give zero") {
    Tensor z({4, 10});
    for (std::size_t i = 0; i < 4; ++i) z[i * 10 + i] = 1e4f;
    CHECK(unlabelled_loss_self(C(z), z, 0.0).value()[0] == doctest::Approx(0.0));
  }
  SUBCASE("self form matches the row oracle") {
    const Tensor s = random_logits(32, 10, g), t = random_logits(32, 10, g);
    CHECK(unlabelled_loss_self(C(s), t, 0.7).value()[0] == doctest::Approx(masked_ce_oracle(s, t, 0.7)).epsilon(1e-5));
  }
  SUBCASE("distilled form matches the row oracle") {
    const Tensor s = random_logits(32, 10, g), t = random_logits(32, 10, g);
    const auto pl = pseudo_label(t, 0.95);
    CHECK(unlabelled_loss_distilled(C(s), pl).value()[0] == doctest::Approx(masked_ce_oracle(s, t, 0.95)).epsilon(1e-5));
  }
  SUBCASE("self-distillation degenerate case") {
    const Tensor z = random_logits(16, 10, g);
    CHECK(unlabelled_loss_distilled(C(z), pseudo_label(z, 0.0)).value()[0] ==
          unlabelled_loss_self(C(z), z, 0.0).value()[0]);
  }
  SUBCASE("invariant to permuting unlabelled rows") {
    const Tensor s = random_logits(12, 10, g), t = random_logits(12, 10, g);
    std::vector<std::size_t> perm(12);
    for (std::size_t i = 0; i < 12; ++i) perm[i] = (i * 5) % 12;
    const Tensor sp = gather_rows(s, std::span<const std::size_t>(perm)), tp = gather_rows(t, std::span<const std::size_t>(perm));
    CHECK(unlabelled_loss_self(C(sp), tp, 0.5).value()[0] ==
          doctest::Approx(unlabelled_loss_self(C(s), t, 0.5).value()[0]).epsilon(1e-6));
  }
  SUBCASE("row mismatch") {
    CHECK_THROWS_AS(unlabelled_loss_self(C(random_logits(4, 10, g)), random_logits(5, 10, g), 0.5), std::invalid_argument);
  }
  SUBCASE("no gradient reaches the label-producing logits") {
    auto teacher = Var<float>::parameter(random_logits(8, 10, g));
    auto student = Var<float>::parameter(random_logits(8, 10, g));
    backward(unlabelled_loss_self(student, teacher.value(), 0.0));
    CHECK(student.has_grad());
    CHECK_FALSE(teacher.has_grad());
  }
  SUBCASE("labelled loss is mean cross-entropy") {
    std::vector<int> y{0, 1, 2};
    CHECK(labelled_loss(C(Tensor({3, 10})), y).value()[0] == doctest::Approx(std::log(10.0)));
    std::vector<int> bad{0, 1, 12};
    CHECK_THROWS_AS(labelled_loss(C(Tensor({3, 10})), bad), IndexError);
  }
}

TEST_CASE("step loss assembly") {
  std::mt19937_64 g(11);
  auto scalar = [&](float v) { return Var<float>::constant(Tensor({1}, v)); };
  std::vector<int> y{1, 4, 7, 2};

  SUBCASE("matchnas n=4 is the hand sum of all terms") {
    SubnetTerms teacher{scalar(1.5f), scalar(0.25f)};
    std::vector<SubnetTerms> students{{scalar(2.0f), scalar(0.5f)}, {scalar(3.0f), scalar(0.125f)},
                                      {scalar(4.0f), scalar(0.0f)}};
    const auto out = assemble_step_loss(LossMode::matchnas, &teacher, students);
    CHECK(out.total.value()[0] == doctest::Approx(1.5 + 0.25 + 2 + 0.5 + 3 + 0.125 + 4 + 0));
    CHECK(out.per_network.size() == 4);
    std::vector<std::string> names;
    for (const auto& [n, _] : out.terms) names.push_back(n);
    CHECK(names == std::vector<std::string>{"loss_l_A", "loss_u_A", "loss_l_sub_1", "loss_u_sub_1", "loss_l_sub_2",
                                            "loss_u_sub_2", "loss_l_sub_3", "loss_u_sub_3"});
  }
  SUBCASE("matchnas with the teacher alone equals fixmatch-single") {
    const Tensor zl = random_logits(4, 10, g), zs = random_logits(16, 10, g), zw = random_logits(16, 10, g);
    SubnetTerms t{labelled_loss(C(zl), y), unlabelled_loss_self(C(zs), zw, 0.6)};
    const auto a = assemble_step_loss(LossMode::matchnas, &t, {});
    const auto b = assemble_step_loss(LossMode::fixmatch_single, &t, {});
    CHECK(a.total.value()[0] == b.total.value()[0]);
    CHECK(a.terms == b.terms);
  }
  SUBCASE("supervised-nas has no unlabelled terms") {
    std::vector<SubnetTerms> s{{scalar(1.0f), std::nullopt}, {scalar(2.0f), std::nullopt}};
    const auto out = assemble_step_loss(LossMode::supervised_nas, nullptr, s);
    CHECK(out.total.value()[0] == 3.0f);
    for (const auto& [n, _] : out.terms) CHECK(n.rfind("loss_l_", 0) == 0);
  }
  SUBCASE("term weights") {
    SubnetTerms t{scalar(2.0f), scalar(1.0f)};
    const auto out = assemble_step_loss(LossMode::fixmatch_single, &t, {}, {.labelled = 0.5, .unlabelled = 3.0});
    CHECK(out.total.value()[0] == doctest::Approx(4.0));
  }
  SUBCASE("inconsistent terms are rejected") {
    SubnetTerms with_u{scalar(1.0f), scalar(1.0f)}, without_u{scalar(1.0f), std::nullopt};
    std::vector<SubnetTerms> one_u{with_u}, one_plain{without_u};
    CHECK_THROWS_AS(assemble_step_loss(LossMode::supervised_nas, nullptr, one_u), AssemblyError);
    CHECK_THROWS_AS(assemble_step_loss(LossMode::supervised_nas, &without_u, one_plain), AssemblyError);
    CHECK_THROWS_AS(assemble_step_loss(LossMode::matchnas, nullptr, one_u), AssemblyError);
    CHECK_THROWS_AS(assemble_step_loss(LossMode::matchnas, &without_u, one_u), AssemblyError);
    CHECK_THROWS_AS(assemble_step_loss(LossMode::fixmatch_single, &with_u, one_u), AssemblyError);
    CHECK_THROWS_AS(assemble_step_loss(LossMode::naive_ssl_nas, nullptr, {}), AssemblyError);
  }
}

TEST_CASE("mode names") {
  for (auto m : {LossMode::matchnas, LossMode::naive_ssl_nas, LossMode::supervised_nas, LossMode::fixmatch_single,
                 LossMode::supervised_single})
    CHECK(parse_loss_mode(to_string(m)) == m);
  CHECK_THROWS(parse_loss_mode("nope"));
  CHECK(parse_distill_view("strong") == DistillView::strong);
  CHECK_THROWS(parse_distill_view("medium"));
}
