#include <doctest.h>

#include <random>
#include <set>

#include "mpcl/augment.hpp"

using namespace mpcl;

namespace {

VolumeSample labeled(Shape3 s, float value, std::mt19937_64& rng, int classes = 3) {
  VolumeSample v;
  v.image = Grid<float>(s, value);
  v.label = LabelGrid(s);
  std::uniform_int_distribution<int> u(0, classes - 1);
  for (auto& x : v.label->values()) x = static_cast<std::uint8_t>(u(rng));
  std::normal_distribution<float> n(0, 1);
  for (auto& x : v.image.values()) x = value + n(rng);
  v.id = value > 0 ? "a" : "b";
  return v;
}

}  // namespace

TEST_CASE("cutmix with full and empty masks") {
  std::mt19937_64 rng(1);
  auto a = labeled({4, 4, 4}, 1.0f, rng);
  auto b = labeled({4, 4, 4}, -1.0f, rng);
  auto ma = mix_with_mask(a, b, MixMask::filled({4, 4, 4}, true));
  CHECK(ma.image == a.image);
  CHECK(*ma.label == *a.label);
  auto mb = mix_with_mask(a, b, MixMask::filled({4, 4, 4}, false));
  CHECK(mb.image == b.image);
  CHECK(*mb.label == *b.label);
}

TEST_CASE("cutmix cuboid fraction bounded by the side law") {
  std::mt19937_64 rng(2);
  auto a = labeled({32, 32, 32}, 1.0f, rng);
  auto b = labeled({32, 32, 32}, -1.0f, rng);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = cutmix_pair(a, b, rng);
    CHECK(p.mask.fraction >= 1.0 / 64 - 1e-12);
    CHECK(p.mask.fraction <= 1.0 / 8 + 1e-12);
    std::size_t ones = 0;
    for (auto x : p.mask.mask.values()) ones += x;
    CHECK(std::abs(p.mask.fraction - static_cast<double>(ones) / 32768.0) < 1e-9);
  }
}

TEST_CASE("cutmix mask is a single axis-aligned cuboid") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_cuboid_mask({12, 10, 8}, {}, rng);
    int lo[3] = {99, 99, 99}, hi[3] = {-1, -1, -1};
    std::size_t ones = 0;
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 10; ++j)
        for (int k = 0; k < 8; ++k)
          if (m.mask(i, j, k)) {
            ++ones;
            const int c[3] = {i, j, k};
            for (int d = 0; d < 3; ++d) lo[d] = std::min(lo[d], c[d]), hi[d] = std::max(hi[d], c[d]);
          }
    const std::size_t box = static_cast<std::size_t>((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1));
    CHECK(ones == box);
  }
}

TEST_CASE("mixed label depends only on mask and source labels (all kinds)") {
  std::mt19937_64 rng(4);
  auto a = labeled({4, 4, 4}, 1.0f, rng);
  auto b = labeled({4, 4, 4}, -1.0f, rng);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto p : {cutmix_pair(a, b, rng), fmix_pair(a, b, rng)}) {
      for (std::size_t v = 0; v < 64; ++v) {
        const auto expect = p.mask.mask[v] ? (*a.label)[v] : (*b.label)[v];
        CHECK((*p.mixed.label)[v] == expect);
        CHECK(p.mixed.image[v] == (p.mask.mask[v] ? a.image[v] : b.image[v]));
      }
      std::set<int> alphabet;
      for (auto x : a.label->values()) alphabet.insert(x);
      for (auto x : b.label->values()) alphabet.insert(x);
      for (auto x : p.mixed.label->values()) CHECK(alphabet.count(x) == 1);
    }
  }
}

TEST_CASE("mixup endpoints, midpoint and soft-label normalization") {
  std::mt19937_64 rng(5);
  auto a = labeled({3, 3, 3}, 1.0f, rng);
  auto b = labeled({3, 3, 3}, -1.0f, rng);
  auto one = mixup_with_lambda(a, b, 1.0, 3);
  CHECK(one.mixed.image == a.image);
  for (std::size_t v = 0; v < 27; ++v) CHECK(one.soft_label.at((*a.label)[v], v) == 1.0f);

  VolumeSample z = a, t = b;
  z.image = Grid<float>({3, 3, 3}, 0.0f);
  t.image = Grid<float>({3, 3, 3}, 2.0f);
  auto mid = mixup_with_lambda(z, t, 0.5, 3);
  for (float x : mid.mixed.image.values()) CHECK(x == doctest::Approx(1.0f));

  for (int i = 0; i < 50; ++i) {
    auto m = mixup_pair(a, b, 0.4, 3, rng);
    CHECK(m.lambda >= 0.0);
    CHECK(m.lambda <= 1.0);
    CHECK(is_probability_volume(m.soft_label, 1e-6));
  }
  CHECK_THROWS_AS(mixup_pair(a, b, 0.0, 3, rng), Error);
}

TEST_CASE("cutout zeroes one cuboid and leaves the label") {
  std::mt19937_64 rng(6);
  auto a = labeled({16, 16, 16}, 3.0f, rng);
  auto all = cutout_with_mask(a, MixMask::filled(a.shape(), true));
  for (float x : all.image.values()) CHECK(x == 0.0f);
  CHECK(cutout_with_mask(a, MixMask::filled(a.shape(), false)).image == a.image);
  for (int i = 0; i < 20; ++i) {
    auto c = cutout(a, rng);
    CHECK(*c.label == *a.label);
    std::size_t zeros = 0;
    for (float x : c.image.values()) zeros += x == 0.0f;
    const double f = static_cast<double>(zeros) / 4096.0;
    CHECK(f >= 1.0 / 64 - 1e-12);
    CHECK(f <= 1.0 / 8 + 1e-12);
  }
}

TEST_CASE("fmix mask is half-filled, deterministic, and handles constant fields") {
  std::mt19937_64 r1(7), r2(7);
  auto m1 = fmix_mask({9, 7, 5}, r1);
  auto m2 = fmix_mask({9, 7, 5}, r2);
  CHECK(m1.mask == m2.mask);
  const double v = 9 * 7 * 5;
  CHECK(std::abs(m1.fraction - 0.5) <= 1.0 / v + 1e-12);
  auto c = median_threshold_mask(Grid<float>({3, 3, 3}, 1.0f));
  CHECK(std::abs(c.fraction - 0.5) <= 1.0 / 27 + 1e-12);
  CHECK(c.mask[0] == 1);  // ties resolved by voxel order
  CHECK(c.mask[26] == 0);
}

TEST_CASE("mixing rejects shape mismatch") {
  std::mt19937_64 rng(8);
  auto a = labeled({4, 4, 4}, 1.0f, rng);
  auto b = labeled({4, 4, 2}, 1.0f, rng);
  try {
    cutmix_pair(a, b, rng);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}
