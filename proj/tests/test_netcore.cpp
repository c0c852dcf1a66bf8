#include <doctest.h>

#include <random>

#include "mpcl/segnet.hpp"
#include "mpcl/upsample.hpp"
#include "oracles.hpp"

using namespace mpcl;

namespace {

SegNetConfig tiny(int classes = 2, int k = 1) {
  SegNetConfig c;
  c.depth = 3;
  c.base_channels = 2;
  c.classes = classes;
  c.feature_tap_k = k;
  return c;
}

Grid<double> random_image(Shape3 s, std::mt19937_64& rng) {
  Grid<double> g(s);
  std::normal_distribution<double> n(0, 1);
  for (auto& x : g.values()) x = n(rng);
  return g;
}

}  // namespace

TEST_CASE("forward: heads are distributions and the mean is their average") {
  std::mt19937_64 rng(1);
  SegNet<double> net(tiny(3));
  auto p = net.init(rng);
  auto out = net.forward(p, random_image({8, 8, 4}, rng));
  REQUIRE(out.head_probs.size() == 4);
  for (const auto& h : out.head_probs) CHECK(is_probability_volume(h, 1e-9));
  for (std::size_t i = 0; i < out.mean_probs.size(); ++i) {
    double m = 0;
    for (const auto& h : out.head_probs) m += h.values()[i];
    CHECK(std::abs(out.mean_probs.values()[i] - m / 4) < 1e-12);
  }
  CHECK(out.tap_features_upsampled.shape() == Shape3{8, 8, 4});
  for (double x : out.tap_features.values()) CHECK(std::isfinite(x));
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(2);
  SegNet<float> net(tiny());
  auto p = net.init(rng);
  Grid<float> img({8, 8, 8});
  std::normal_distribution<float> n(0, 1);
  for (auto& x : img.values()) x = n(rng);
  auto a = net.forward(p, img);
  auto b = net.forward(p, img);
  CHECK(a.mean_probs == b.mean_probs);
  CHECK(a.tap_features == b.tap_features);
}

TEST_CASE("zero heads give uniform probabilities") {
  std::mt19937_64 rng(3);
  SegNet<double> net(tiny(3));
  auto p = net.init(rng);
  net.zero_heads(p);
  auto out = net.forward(p, random_image({4, 4, 4}, rng));
  for (const auto& h : out.head_probs)
    for (double x : h.values()) CHECK(x == doctest::Approx(1.0 / 3));
}

TEST_CASE("indivisible input shape is rejected") {
  SegNet<double> net(tiny());
  try {
    net.check_input({8, 6, 8});
    FAIL("expected ShapeNotDivisible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeNotDivisible);
  }
}

TEST_CASE("tap k selects decoder resolution") {
  std::mt19937_64 rng(4);
  for (int k = 1; k <= 3; ++k) {
    SegNet<double> net(tiny(2, k));
    auto p = net.init(rng);
    auto out = net.forward(p, random_image({8, 8, 8}, rng));
    const int side = 8 >> (k - 1);
    CHECK(out.tap_features.shape() == Shape3{side, side, side});
    CHECK(out.tap_features.channels() == net.config().tap_channels());
    CHECK(out.tap_features_upsampled.shape() == Shape3{8, 8, 8});
  }
}

TEST_CASE("backward matches finite differences of a random output functional") {
  std::mt19937_64 rng(5);
  for (int k : {1, 2}) {
    SegNet<double> net(tiny(2, k));
    auto p = net.init(rng);
    const auto img = random_image({4, 4, 4}, rng);
    auto probe = net.forward(p, img);
    // L = sum_h <A_h, head_h> + <B, mean> + <C, tap_up>
    std::vector<Field<double>> A;
    for (const auto& h : probe.head_probs) A.push_back(oracle::random_field(h.channels(), h.shape(), rng));
    auto B = oracle::random_field(probe.mean_probs.channels(), probe.mean_probs.shape(), rng);
    auto C = oracle::random_field(probe.tap_features_upsampled.channels(), probe.tap_features_upsampled.shape(), rng);
    auto dot = [](const Field<double>& x, const Field<double>& y) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x.values()[i] * y.values()[i];
      return s;
    };
    auto loss = [&]() {
      auto o = net.forward(p, img);
      double s = dot(o.mean_probs, B) + dot(o.tap_features_upsampled, C);
      for (int h = 0; h < 4; ++h) s += dot(o.head_probs[static_cast<std::size_t>(h)], A[static_cast<std::size_t>(h)]);
      return s;
    };
    ForwardTrace<double> tr;
    auto out = net.forward(p, img, &tr);
    OutputGradients<double> g{A, B, C};
    auto grad = net.zeros();
    net.backward(p, tr, out, g, grad);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    int bad = 0;
    for (int n = 0; n < 60; ++n) {
      const auto i = pick(rng);
      const double num = oracle::central_difference(loss, p.values[i], 1e-6);
      if (oracle::relative_error(grad.values[i], num, 1e-7) > 1e-4) ++bad;
    }
    CHECK(bad <= 3);  // ReLU kinks can land inside the difference stencil
  }
}

TEST_CASE("ema_update closed forms") {
  Parameters<double> t{{0.0, 2.0}}, s{{1.0, 1.0}};
  auto t1 = t;
  ema_update(t1, s, 1.0);
  CHECK(t1 == t);
  auto t0 = t;
  ema_update(t0, s, 0.0);
  CHECK(t0 == s);
  auto t99 = t;
  ema_update(t99, s, 0.99);
  CHECK(t99.values[0] == doctest::Approx(0.01).epsilon(1e-12));

  Parameters<double> tt{{0.5, -2.0, 3.0}}, ss{{1.0, 4.0, -1.0}};
  const auto init = tt;
  for (int n = 1; n <= 25; ++n) {
    ema_update(tt, ss, 0.9);
    for (std::size_t i = 0; i < 3; ++i) {
      const double expect = std::pow(0.9, n) * init.values[i] + (1 - std::pow(0.9, n)) * ss.values[i];
      CHECK(std::abs(tt.values[i] - expect) < 1e-6);
    }
  }
  Parameters<double> wrong{{1.0}};
  CHECK_THROWS_AS(ema_update(tt, wrong, 0.5), Error);
  CHECK_THROWS_AS(ema_update(tt, ss, 1.5), Error);
}

TEST_CASE("trilinear upsample conventions") {
  Field<double> f(1, {1, 1, 2});
  f.at(0, 0) = 0;
  f.at(0, 1) = 1;
  auto u = trilinear_upsample(f, {1, 1, 3});
  CHECK(u.at(0, 0) == doctest::Approx(0.0));
  CHECK(u.at(0, 1) == doctest::Approx(0.5));
  CHECK(u.at(0, 2) == doctest::Approx(1.0));

  std::mt19937_64 rng(6);
  auto g = oracle::random_field(2, {3, 2, 4}, rng);
  CHECK(trilinear_upsample(g, {3, 2, 4}) == g);
  Field<double> c(2, {2, 3, 2}, 1.75);
  const auto cu = trilinear_upsample(c, {5, 7, 4});
  for (double x : cu.values()) CHECK(x == doctest::Approx(1.75));

  auto a = oracle::random_field(2, {2, 3, 2}, rng);
  auto b = oracle::random_field(2, {2, 3, 2}, rng);
  Field<double> mix(2, {2, 3, 2});
  for (std::size_t i = 0; i < mix.size(); ++i) mix.values()[i] = 0.3 * a.values()[i] - 1.7 * b.values()[i];
  auto ua = trilinear_upsample(a, {4, 5, 6});
  auto ub = trilinear_upsample(b, {4, 5, 6});
  auto um = trilinear_upsample(mix, {4, 5, 6});
  for (std::size_t i = 0; i < um.size(); ++i)
    CHECK(std::abs(um.values()[i] - (0.3 * ua.values()[i] - 1.7 * ub.values()[i])) < 1e-5);

  // adjoint identity <U x, y> = <x, U^T y>
  auto y = oracle::random_field(2, {4, 5, 6}, rng);
  auto ut = trilinear_upsample_backward(y, {2, 3, 2});
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ua.size(); ++i) lhs += ua.values()[i] * y.values()[i];
  for (std::size_t i = 0; i < a.size(); ++i) rhs += a.values()[i] * ut.values()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  CHECK_THROWS_AS(trilinear_upsample(a, {1, 3, 2}), Error);
}

TEST_CASE("optimizers move against the gradient") {
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    OptimizerSettings s;
    s.kind = kind;
    s.learning_rate = 0.1;
    Parameters<double> p{{1.0, -1.0}};
    OptimizerState<double> st;
    for (int i = 0; i < 200; ++i) {
      Parameters<double> g{{2 * p.values[0], 2 * p.values[1]}};  // grad of x^2 + y^2
      optimizer_step(s, p, g, st);
    }
    CHECK(std::abs(p.values[0]) < 0.05);
    CHECK(std::abs(p.values[1]) < 0.05);
    CHECK(st.steps == 200);
  }
  CHECK(parse_optimizer_kind("sgd") == OptimizerKind::sgd);
  CHECK_THROWS_AS(parse_optimizer_kind("rmsprop"), Error);
}
