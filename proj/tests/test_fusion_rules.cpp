#include <doctest.h>

#include <cmath>

#include "semfuse/error.hpp"
#include "semfuse/fusion_rules.hpp"
#include "support.hpp"

using namespace semfuse;

namespace {

FeatureMap map_of(Tensor t, const char* layer = "conv1_1") { return {std::move(t), LayerTap::named(layer), {}}; }

FeatureMap row(std::initializer_list<float> v) {
  Tensor t(1, 1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), t.data());
  return map_of(std::move(t));
}

// Nine-sample vote with clamped coordinates, counted directly.
std::vector<std::uint8_t> vote_oracle(const Tensor& a, const Tensor& b) {
  std::vector<std::uint8_t> out(a.size());
  const int H = a.height(), W = a.width();
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::min(std::max(y + dy, 0), H - 1);
            const int xx = std::min(std::max(x + dx, 0), W - 1);
            count += std::fabs(a.at(c, yy, xx)) > std::fabs(b.at(c, yy, xx)) ? 1 : 0;
          }
        }
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = count > 4;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("choose-max picks the larger magnitude") {
  const FusedTarget t = choose_max(row({2, -5}), row({-3, 4}));
  CHECK(t.values.values()[0] == -3.0f);
  CHECK(t.values.values()[1] == -5.0f);
  CHECK(t.selection_mask == std::vector<std::uint8_t>{0, 1});
  CHECK(t.rule == FusionRule::ChooseMax);
  CHECK(t.layer.name == "conv1_1");
}

TEST_CASE("ties go to the first input") {
  const FusedTarget t = choose_max(row({1, -2, 0}), row({1, -2, 0}));
  CHECK(t.selection_mask == std::vector<std::uint8_t>{1, 1, 1});
  const FusedTarget s = choose_max(row({3}), row({-3}));
  CHECK(s.values.values()[0] == 3.0f);
}

TEST_CASE("choose-max matches an elementwise oracle and is selective") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f0 = map_of(test::random_tensor(64, 8, 8, rng));
    const auto f1 = map_of(test::random_tensor(64, 8, 8, rng));
    const FusedTarget t = choose_max(f0, f1);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const float a = f0.values.values()[i], b = f1.values.values()[i];
      CHECK(t.values.values()[i] == (std::fabs(a) >= std::fabs(b) ? a : b));
      CHECK(static_cast<bool>(t.selection_mask[i]) == (std::fabs(a) >= std::fabs(b)));
    }
    // Swapping the inputs changes nothing where magnitudes differ.
    const FusedTarget s = choose_max(f1, f0);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (std::fabs(f0.values.values()[i]) != std::fabs(f1.values.values()[i])) {
        CHECK(s.values.values()[i] == t.values.values()[i]);
      }
    }
  }
}

TEST_CASE("majority filter: unanimous channel and isolated speck") {
  Tensor a(2, 5, 5, 1.0f);
  Tensor b(2, 5, 5, 0.5f);
  // Channel 1: only the centre of a is larger.
  for (float& v : a.plane(1)) v = 0.0f;
  a.at(1, 2, 2) = 9.0f;
  const FusedTarget t = majority_filter(map_of(a), map_of(b));
  for (int i = 0; i < 25; ++i) {
    CHECK(t.values.plane(0)[i] == 1.0f);
    CHECK(t.values.plane(1)[i] == 0.5f);
  }
  CHECK(t.rule == FusionRule::Majority);
}

TEST_CASE("majority filter matches a brute-force vote count") {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f0 = map_of(test::random_tensor(8, 16, 16, rng));
    const auto f1 = map_of(test::random_tensor(8, 16, 16, rng));
    const FusedTarget t = majority_filter(f0, f1);
    const auto expected = vote_oracle(f0.values, f1.values);
    CHECK(t.selection_mask == expected);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      CHECK(t.values.values()[i] == (expected[i] ? f0.values.values()[i] : f1.values.values()[i]));
    }
  }
}

TEST_CASE("both rules are idempotent") {
  std::mt19937_64 rng(303);
  const auto f = map_of(test::random_tensor(4, 9, 7, rng));
  CHECK(choose_max(f, f).values == f.values);
  CHECK(majority_filter(f, f).values == f.values);
  CHECK(apply_rule(FusionRule::Majority, f, f).values == f.values);
}

TEST_CASE("rule names and contract errors") {
  CHECK(to_string(FusionRule::ChooseMax) == "psi0");
  CHECK(parse_fusion_rule("psi1") == FusionRule::Majority);
  CHECK_THROWS_AS(parse_fusion_rule("max"), ContractError);
  std::mt19937_64 rng(4);
  const auto a = map_of(test::random_tensor(2, 4, 4, rng));
  const auto b = map_of(test::random_tensor(2, 4, 5, rng));
  const auto c = map_of(test::random_tensor(2, 4, 4, rng), "conv1_2");
  CHECK_THROWS_AS(choose_max(a, b), ContractError);
  CHECK_THROWS_AS(majority_filter(a, b), ContractError);
  CHECK_THROWS_AS(choose_max(a, c), ContractError);
}
