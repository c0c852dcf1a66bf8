#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mpcl/synthdata.hpp"
#include "mpcl/volume_io.hpp"

using namespace mpcl;

namespace {

PhantomSpec small_spec(PhantomTask task, double noise, std::uint64_t seed) {
  PhantomSpec s;
  s.task = task;
  s.volume_shape = {16, 16, 16};
  s.count = 8;
  s.noise_std = noise;
  s.seed = seed;
  s.val_count = 2;
  s.labeled_fraction = 0.5;
  return s;
}

double fg_fraction(const LabelGrid& l) {
  std::size_t n = 0;
  for (auto x : l.values()) n += x != 0;
  return static_cast<double>(n) / static_cast<double>(l.size());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("noiseless ellipsoids are two-valued and threshold-separable") {
  auto ds = generate(small_spec(PhantomTask::ellipsoid, 0.0, 4));
  for (const auto& s : ds.samples) {
    REQUIRE(s.label);
    std::set<float> values(s.image.values().begin(), s.image.values().end());
    CHECK(values.size() == 2);
    for (std::size_t v = 0; v < s.image.size(); ++v) CHECK(((s.image[v] > 0.5f) ? 1 : 0) == (*s.label)[v]);
  }
}

TEST_CASE("noiseless tubes are separable by intensity") {
  auto ds = generate(small_spec(PhantomTask::nested_tubes, 0.0, 4));
  for (const auto& s : ds.samples)
    for (std::size_t v = 0; v < s.image.size(); ++v)
      CHECK(s.image[v] == phantom_base_intensity(PhantomTask::nested_tubes, (*s.label)[v]));
}

TEST_CASE("foreground fraction stays within 2% .. 40% over a seed set") {
  for (auto task : {PhantomTask::ellipsoid, PhantomTask::nested_tubes})
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      auto spec = small_spec(task, 0.5, seed);
      spec.volume_shape = {32, 32, 32};
      for (const auto& s : generate(spec).samples) {
        const double f = fg_fraction(*s.label);
        CHECK(f >= 0.02);
        CHECK(f <= 0.40);
      }
    }
}

TEST_CASE("tube classes are disjoint and both present") {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& s : generate(small_spec(PhantomTask::nested_tubes, 0.3, seed)).samples) {
      std::size_t tl = 0, fl = 0;
      for (auto x : s.label->values()) {
        tl += x == 1;
        fl += x == 2;
      }
      CHECK(tl > 0);
      CHECK(fl > 0);
    }
}

TEST_CASE("generation is bit-identical on disk for the same spec") {
  const auto root = std::filesystem::temp_directory_path() / "mpcl_test_synth";
  std::filesystem::remove_all(root);
  const auto spec = small_spec(PhantomTask::ellipsoid, 0.5, 9);
  for (int run = 0; run < 2; ++run) {
    auto ds = generate(spec);
    for (const auto& s : ds.samples) write_volume(root / std::to_string(run), s, 2);
  }
  for (const auto& entry : std::filesystem::directory_iterator(root / "0"))
    CHECK(slurp(entry.path()) == slurp(root / "1" / entry.path().filename()));
  std::filesystem::remove_all(root);
}

TEST_CASE("make_split sizes, determinism and EmptySplit") {
  PhantomSpec spec = small_spec(PhantomTask::ellipsoid, 0.5, 1);
  spec.count = 50;
  spec.volume_shape = {8, 8, 8};
  auto ds = generate(spec);
  auto split = make_split(ds.samples, 0.2, 10, 123);
  CHECK(split.labeled.size() == 8);
  CHECK(split.unlabeled.size() == 32);
  CHECK(split.validation.size() == 10);
  CHECK_NOTHROW(split.validate());
  auto again = make_split(ds.samples, 0.2, 10, 123);
  CHECK(again.labeled == split.labeled);
  CHECK(again.validation == split.validation);
  try {
    make_split(ds.samples, 0.01, 10, 123);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySplit);
  }
}

TEST_CASE("PhantomSpec validation") {
  PhantomSpec s;
  s.volume_shape = {4, 32, 32};
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.noise_std = -1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.count = 0;
  CHECK_THROWS_AS(s.validate(), Error);
}
