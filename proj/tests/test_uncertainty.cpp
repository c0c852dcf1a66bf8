#include <doctest.h>

#include "mpcl/uncertainty.hpp"
#include "oracles.hpp"

using namespace mpcl;

namespace {

Field<double> voxels2(std::initializer_list<std::pair<double, double>> ps) {
  Field<double> f(2, {static_cast<int>(ps.size()), 1, 1});
  std::size_t v = 0;
  for (auto [a, b] : ps) {
    f.at(0, v) = a;
    f.at(1, v) = b;
    ++v;
  }
  return f;
}

}  // namespace

TEST_CASE("voxel entropy examples") {
  auto u = voxel_entropy(voxels2({{0.5, 0.5}, {1.0, 0.0}, {0.9, 0.1}}));
  CHECK(u[0] == doctest::Approx(std::log(2.0)));
  CHECK(u[1] == 0.0);
  CHECK(u[2] == doctest::Approx(0.3250829734).epsilon(1e-9));
}

TEST_CASE("reliability weight examples") {
  Grid<double> two({2, 1, 1});
  two[0] = 0;
  two[1] = std::log(2.0);
  auto w = reliability_weight(two, ReliabilityMode::normalized);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(0.0));

  Grid<double> equal({5, 1, 1}, 0.3);
  const auto wn = reliability_weight(equal, ReliabilityMode::normalized);
  const auto wl = reliability_weight(equal, ReliabilityMode::literal);
  for (double x : wn.values()) CHECK(x == doctest::Approx(0.8));
  for (double x : wl.values()) CHECK(x == doctest::Approx(0.8 / 5));

  Grid<double> zero({3, 1, 1}, 0.0);
  const auto wz = reliability_weight(zero, ReliabilityMode::normalized);
  for (double x : wz.values()) CHECK(x == 1.0);
}

TEST_CASE("reliable pseudo-labels") {
  auto probs = voxels2({{1.0, 0.0}, {0.5, 0.5}});
  auto pl = reliable_pseudo_label(probs, ReliabilityMode::normalized);
  CHECK(pl.soft.at(0, 1) == doctest::Approx(0.0));
  CHECK(pl.soft.at(1, 1) == doctest::Approx(0.0));
  CHECK(pl.soft.at(0, 0) == doctest::Approx(1.0));
  CHECK(pl.hard[0] == 0);

  auto certain = voxels2({{1.0, 0.0}, {0.0, 1.0}});
  auto pc = reliable_pseudo_label(certain, ReliabilityMode::normalized);
  CHECK(pc.soft == certain);
}

TEST_CASE("random volumes: entropy bounds, argmax invariance, weight sum") {
  std::mt19937_64 rng(17);
  for (int n = 0; n < 100; ++n) {
    const int C = 2 + n % 3;
    auto p = oracle::random_probs(C, {3, 4, 2}, rng, 0.5 + n % 4);
    auto pl = reliable_pseudo_label(p, ReliabilityMode::normalized);
    double deficit = 0;
    for (std::size_t v = 0; v < p.voxels(); ++v) {
      CHECK(pl.reliability.entropy[v] >= 0.0);
      CHECK(pl.reliability.entropy[v] <= std::log(C) + 1e-9);
      CHECK(pl.reliability.weight[v] >= 0.0);
      CHECK(pl.reliability.weight[v] <= 1.0);
      deficit += 1.0 - pl.reliability.weight[v];
    }
    CHECK(std::abs(deficit - 1.0) < 1e-9);
    CHECK(argmax_labels(pl.soft) == argmax_labels(p));
    CHECK(pl.hard == argmax_labels(p));
  }
}

TEST_CASE("reliability mode parsing") {
  CHECK(parse_reliability_mode("literal") == ReliabilityMode::literal);
  CHECK(parse_reliability_mode("normalized") == ReliabilityMode::normalized);
  CHECK_THROWS_AS(parse_reliability_mode("other"), Error);
}
