#include <doctest.h>

#include "mpcl/losses.hpp"
#include "oracles.hpp"

using namespace mpcl;

namespace {

Field<double> probs2(std::initializer_list<std::pair<double, double>> ps) {
  Field<double> f(2, {static_cast<int>(ps.size()), 1, 1});
  std::size_t v = 0;
  for (auto [a, b] : ps) {
    f.at(0, v) = a;
    f.at(1, v) = b;
    ++v;
  }
  return f;
}

using LossFn = std::function<LossValue<double>(std::span<const Field<double>>, std::span<const Field<double>>)>;

/// Fraction of coordinates within 1e-4 and the worst relative error.
std::pair<double, double> fd_check(const LossFn& fn, std::vector<Field<double>> p, const std::vector<Field<double>>& t) {
  const auto analytic = fn(p, t);
  int good = 0, total = 0;
  double worst = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a)
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      auto f = [&] { return fn(p, t).value; };
      const double num = oracle::central_difference(f, p[a].values()[i], 1e-6);
      const double err = oracle::relative_error(analytic.grad[a].values()[i], num);
      worst = std::max(worst, err);
      good += err < 1e-4;
      ++total;
    }
  return {static_cast<double>(good) / total, worst};
}

}  // namespace

TEST_CASE("supervised loss examples") {
  SUBCASE("uniform prediction") {
    std::vector<Field<double>> p{probs2({{0.5, 0.5}, {0.5, 0.5}})};
    std::vector<Field<double>> t{probs2({{1, 0}, {0, 1}})};
    CHECK(cross_entropy_loss<double>(p, t).value == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("single voxel focal") {
    std::vector<Field<double>> p{probs2({{0.75, 0.25}})};
    std::vector<Field<double>> t{probs2({{1, 0}})};
    CHECK(focal_loss<double>(p, t, 2.0).value == doctest::Approx(-0.0625 * std::log(0.75)));
    CHECK(focal_loss<double>(p, t, 2.0).value == doctest::Approx(0.01798).epsilon(1e-3));
    CHECK(focal_loss<double>(p, t, 0.0).value == doctest::Approx(cross_entropy_loss<double>(p, t).value));
  }
  SUBCASE("perfect prediction through supervised_loss") {
    std::mt19937_64 rng(1);
    auto y = oracle::random_labels({3, 3, 2}, 3, rng);
    std::vector<LabelGrid> ys{y};
    auto onehot = one_hot_batch<double>(ys, 3);
    NetworkOutputs<double> out;
    out.head_probs.assign(4, onehot[0]);
    out.mean_probs = onehot[0];
    std::vector<NetworkOutputs<double>> outs{out};
    auto r = supervised_loss<double>(outs, onehot);
    CHECK(r.terms.ce < 1e-6);
    CHECK(r.terms.dice < 1e-4);
    CHECK(r.terms.focal < 1e-6);
    CHECK(r.terms.iou < 1e-4);
    CHECK(r.terms.fused < 1e-6);
    CHECK(r.terms.seg == doctest::Approx((r.terms.ce + r.terms.dice + r.terms.focal + r.terms.iou) / 4 + r.terms.fused));
  }
  SUBCASE("invalid label") {
    LabelGrid y({2, 1, 1}, std::uint8_t{3});
    std::vector<LabelGrid> ys{y};
    CHECK_THROWS_AS(one_hot_batch<double>(ys, 2), Error);
  }
}

TEST_CASE("consistency loss examples") {
  std::vector<Field<double>> onehot{probs2({{1, 0}, {0, 1}})};
  for (auto k : {ConsistencyKind::ce, ConsistencyKind::kl, ConsistencyKind::mse, ConsistencyKind::mae})
    CHECK(consistency_loss<double>(onehot, onehot, k).value == doctest::Approx(0.0).epsilon(1e-6));
  std::vector<Field<double>> uniform{probs2({{0.5, 0.5}, {0.5, 0.5}})};
  CHECK(consistency_loss<double>(uniform, onehot, ConsistencyKind::ce).value == doctest::Approx(std::log(2.0)));
  std::vector<Field<double>> sim{probs2({{0.8, 0.2}})};
  std::vector<Field<double>> soft{probs2({{0.6, 0.4}})};
  CHECK(consistency_loss<double>(sim, soft, ConsistencyKind::mse).value == doctest::Approx(0.04));
  CHECK(consistency_loss<double>(sim, soft, ConsistencyKind::mae).value == doctest::Approx(0.2));
  CHECK(consistency_loss<double>(sim, soft, ConsistencyKind::kl).value ==
        doctest::Approx(0.6 * std::log(0.6 / 0.8) + 0.4 * std::log(0.4 / 0.2)));
  CHECK(parse_consistency_kind("kl") == ConsistencyKind::kl);
  CHECK_THROWS_AS(parse_consistency_kind("hinge"), Error);
}

TEST_CASE("total loss examples") {
  SupervisedTerms seg{1.0, 1.0, 1.0, 1.0, 0.0, 1.0};
  auto b = total_loss(seg, 0.0, 0.5, 2.0, 0.25);
  CHECK(b.total == doctest::Approx(2.0));
  CHECK(b.consistent());
  auto endpoint = total_loss(seg, 0.3, 0.5, 2.0, 0.0);
  CHECK(endpoint.total == doctest::Approx(1.3 + 0.5));
  auto zero = total_loss(SupervisedTerms{}, 0, 0, 0, 0.7);
  CHECK(zero.total == 0.0);
  CHECK_THROWS_AS(total_loss(seg, 0, 0, 0, 1.5), Error);
  CHECK(LossBundle::column_names().size() == b.columns().size());
  LossBundle nan = b;
  nan.l_uc = std::nan("");
  CHECK(!nan.all_finite());
}

TEST_CASE("losses are nonnegative and finite on random inputs, including zero probabilities") {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 50; ++n) {
    const int C = 2 + n % 3;
    std::vector<Field<double>> p{oracle::random_probs(C, {2, 3, 2}, rng, 6.0), oracle::random_probs(C, {2, 3, 2}, rng)};
    std::vector<Field<double>> t{oracle::random_probs(C, {2, 3, 2}, rng), oracle::random_probs(C, {2, 3, 2}, rng)};
    p[0].at(0, 0) = 0.0;
    t[1].at(1, 2) = 0.0;
    for (double v : {cross_entropy_loss<double>(p, t).value, focal_loss<double>(p, t, 2.0).value,
                     dice_loss<double>(p, t, 1e-5).value, iou_loss<double>(p, t, 1e-5).value,
                     consistency_loss<double>(p, t, ConsistencyKind::kl).value,
                     consistency_loss<double>(p, t, ConsistencyKind::mse).value}) {
      CHECK(std::isfinite(v));
      CHECK(v >= -1e-12);
    }
  }
}

TEST_CASE("loss gradients match finite differences on 2x2x2 volumes") {
  std::mt19937_64 rng(3);
  std::vector<std::pair<const char*, LossFn>> fns{
      {"ce", [](auto p, auto t) { return cross_entropy_loss<double>(p, t); }},
      {"focal", [](auto p, auto t) { return focal_loss<double>(p, t, 2.0); }},
      {"dice", [](auto p, auto t) { return dice_loss<double>(p, t, 1e-5); }},
      {"iou", [](auto p, auto t) { return iou_loss<double>(p, t, 1e-5); }},
      {"kl", [](auto p, auto t) { return consistency_loss<double>(p, t, ConsistencyKind::kl); }},
      {"mse", [](auto p, auto t) { return consistency_loss<double>(p, t, ConsistencyKind::mse); }},
      {"mae", [](auto p, auto t) { return consistency_loss<double>(p, t, ConsistencyKind::mae); }},
      {"cons-ce", [](auto p, auto t) { return consistency_loss<double>(p, t, ConsistencyKind::ce); }},
  };
  for (const auto& [name, fn] : fns)
    for (int C : {2, 3}) {
      CAPTURE(name);
      CAPTURE(C);
      std::vector<Field<double>> p{oracle::random_probs(C, {2, 2, 2}, rng, 1.0), oracle::random_probs(C, {2, 2, 2}, rng, 1.0)};
      std::vector<LabelGrid> y{oracle::random_labels({2, 2, 2}, C, rng), oracle::random_labels({2, 2, 2}, C, rng)};
      auto hard = one_hot_batch<double>(y, C);
      std::vector<Field<double>> soft{oracle::random_probs(C, {2, 2, 2}, rng), oracle::random_probs(C, {2, 2, 2}, rng)};
      for (const auto* t : {&hard, &soft}) {
        auto [frac, worst] = fd_check(fn, p, *t);
        CHECK(frac >= 0.95);
        CHECK(worst < 1e-3);
      }
    }
}

TEST_CASE("supervised loss gradient routes each head and the fused term") {
  std::mt19937_64 rng(4);
  std::vector<NetworkOutputs<double>> outs(2);
  std::vector<LabelGrid> y{oracle::random_labels({2, 2, 2}, 3, rng), oracle::random_labels({2, 2, 2}, 3, rng)};
  auto t = one_hot_batch<double>(y, 3);
  for (auto& o : outs) {
    for (int h = 0; h < 4; ++h) o.head_probs.push_back(oracle::random_probs(3, {2, 2, 2}, rng, 1.0));
    o.mean_probs = oracle::random_probs(3, {2, 2, 2}, rng, 1.0);
  }
  auto r = supervised_loss<double>(outs, t);
  auto seg = [&] { return supervised_loss<double>(outs, t).terms.seg; };
  for (std::size_t a = 0; a < 2; ++a) {
    for (int h = 0; h < 4; ++h)
      for (std::size_t i = 0; i < outs[a].head_probs[static_cast<std::size_t>(h)].size(); i += 3) {
        const double num = oracle::central_difference(seg, outs[a].head_probs[static_cast<std::size_t>(h)].values()[i], 1e-6);
        CHECK(oracle::relative_error(r.grads[a].head_probs[static_cast<std::size_t>(h)].values()[i], num) < 1e-4);
      }
    for (std::size_t i = 0; i < outs[a].mean_probs.size(); ++i) {
      const double num = oracle::central_difference(seg, outs[a].mean_probs.values()[i], 1e-6);
      CHECK(oracle::relative_error(r.grads[a].mean_probs.values()[i], num) < 1e-4);
    }
  }
}
