#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "mpcl/error.hpp"
#include "mpcl/metrics.hpp"
#include "oracles.hpp"

using namespace mpcl;

namespace {

Mask line_mask(int length, std::initializer_list<int> on) {
  Mask m({length, 1, 1});
  for (int i : on) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

}  // namespace

TEST_CASE("dice and jaccard examples") {
  auto a = line_mask(8, {0, 1, 2, 3});
  auto b = line_mask(8, {2, 3, 4, 5});
  auto o = dice_jaccard(a, b);
  CHECK(o.dice == doctest::Approx(0.5));
  CHECK(o.jaccard == doctest::Approx(1.0 / 3));
  CHECK(dice_jaccard(a, a).dice == 1.0);
  CHECK(dice_jaccard(a, a).jaccard == 1.0);
  auto c = line_mask(8, {6, 7});
  CHECK(dice_jaccard(a, c).dice == 0.0);
  Mask empty({8, 1, 1});
  CHECK(dice_jaccard(empty, empty).dice == 1.0);
  CHECK(dice_jaccard(empty, empty).jaccard == 1.0);
  CHECK(dice_jaccard(a, empty).dice == 0.0);
  CHECK(dice_jaccard(empty, a).jaccard == 0.0);
}

TEST_CASE("surface distance examples") {
  Mask a({3, 3, 3}), b({3, 3, 3});
  a(1, 1, 1) = 1;
  b(1, 1, 2) = 1;
  auto d = surface_distances(a, b);
  CHECK(d.hd95 == 1.0);
  CHECK(d.asd == 1.0);
  CHECK(surface_distances(a, a).hd95 == 0.0);
  CHECK(surface_distances(a, a).asd == 0.0);

  // A 1-voxel-thick grid puts every mask voxel on the border, so the surface is the whole mask.
  Mask ref({30, 1, 1}), pred({30, 1, 1});
  for (int i = 0; i < 19; ++i) ref[static_cast<std::size_t>(i)] = pred[static_cast<std::size_t>(i)] = 1;
  pred[28] = 1;
  auto forward = directed_surface_distances(pred, ref);
  REQUIRE(forward.size() == 20);
  CHECK(forward.back() == 10.0);
  auto s = surface_distances(pred, ref);
  // rank 0.95 * 19 = 18.05 sits 5% of the way from 0 to 10
  CHECK(s.hd95 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.hd95 == doctest::Approx(oracle::surface_brute(pred, ref).hd95).epsilon(1e-12));
  CHECK(s.asd == doctest::Approx(10.0 / 39));

  Mask empty({3, 3, 3});
  try {
    surface_distances(a, empty);
    FAIL("expected EmptyMask");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyMask);
  }
}

TEST_CASE("surface voxels include the volume border") {
  Mask full({3, 3, 3}, std::uint8_t{1});
  CHECK(surface_voxels(full).size() == 26);
  Mask cube({5, 5, 5});
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j)
      for (int k = 1; k < 4; ++k) cube(i, j, k) = 1;
  CHECK(surface_voxels(cube).size() == 26);
}

TEST_CASE("percentile interpolation") {
  CHECK(percentile({3.0}, 0.95) == 3.0);
  CHECK(percentile({0.0, 10.0}, 0.5) == 5.0);
  CHECK(percentile({4.0, 1.0, 2.0, 3.0}, 1.0) == 4.0);
  CHECK(percentile({4.0, 1.0, 2.0, 3.0}, 0.0) == 1.0);
}

TEST_CASE("metrics match the all-pairs brute force on random masks") {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 60; ++n) {
    std::uniform_int_distribution<int> side(1, 10);
    Shape3 s{side(rng), side(rng), side(rng)};
    auto a = oracle::random_blob_mask(s, rng, 0.1 + 0.05 * (n % 8));
    auto b = oracle::random_blob_mask(s, rng, 0.1 + 0.05 * (n % 5));
    if (std::count(a.values().begin(), a.values().end(), 1) == 0 || std::count(b.values().begin(), b.values().end(), 1) == 0)
      continue;
    auto ref = oracle::directed_all_pairs(a, b);
    auto lib = directed_surface_distances(a, b);
    REQUIRE(lib.size() == ref.size());
    for (std::size_t i = 0; i < lib.size(); ++i) CHECK(lib[i] == ref[i]);
    auto d = surface_distances(a, b);
    auto br = oracle::surface_brute(a, b);
    CHECK(std::abs(d.hd95 - br.hd95) < 1e-9);
    CHECK(std::abs(d.asd - br.asd) < 1e-9);
    auto swapped = surface_distances(b, a);
    CHECK(std::abs(swapped.hd95 - d.hd95) < 1e-12);
    CHECK(std::abs(swapped.asd - d.asd) < 1e-12);
    auto o = dice_jaccard(a, b);
    CHECK(std::abs(o.jaccard - o.dice / (2 - o.dice)) < 1e-9);
    CHECK(o.jaccard <= o.dice);
  }
}

TEST_CASE("per-class reports, aggregation and CSV round trip") {
  LabelGrid ref({6, 6, 6}), pred({6, 6, 6});
  for (int i = 0; i < 3; ++i) {
    ref(i, i, i) = 1;
    pred(i, i, i) = 1;
  }
  ref(5, 5, 5) = 2;  // class 2 never predicted
  auto r = evaluate_labels(pred, ref, 3, "vol0");
  REQUIRE(r.classes == std::vector<int>{1, 2});
  CHECK(r.per_class[0].dice == 1.0);
  CHECK(r.per_class[0].hd95 == 0.0);
  CHECK(r.per_class[1].dice == 0.0);
  CHECK(!r.per_class[1].hd95.has_value());
  CHECK(r.mean.dice == doctest::Approx(0.5));
  CHECK(*r.mean.hd95 == 0.0);

  auto r2 = evaluate_labels(ref, ref, 3, "vol1");
  auto agg = aggregate_reports({r, r2});
  CHECK(agg.mean.dice == doctest::Approx(0.75));

  std::stringstream ss;
  write_metrics_csv(ss, {r, r2});
  CHECK(ss.str().rfind(kMetricsCsvVersion, 0) == 0);
  auto back = read_metrics_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "vol0");
  CHECK(back[0].per_class[1].dice == 0.0);
  CHECK(!back[0].per_class[1].asd.has_value());
  CHECK(back[1].mean.dice == 1.0);
  auto json = nlohmann::json::parse(metrics_json({r, r2}));
  CHECK(json["volumes"].size() == 2);
  CHECK(json["aggregate"].contains("mean"));
}
