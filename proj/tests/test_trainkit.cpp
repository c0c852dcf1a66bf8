#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "mpcl/error.hpp"
#include "mpcl/trainer.hpp"
#include "oracles.hpp"

using namespace mpcl;

namespace {

/// Small enough to run dozens of steps per second.
RunConfig tiny_config() {
  RunConfig cfg;
  cfg.phantom.volume_shape = {8, 8, 8};
  cfg.phantom.count = 12;
  cfg.phantom.val_count = 2;
  cfg.phantom.labeled_fraction = 0.4;
  cfg.phantom.noise_std = 0.3;
  cfg.model.depth = 2;
  cfg.model.base_channels = 2;
  cfg.iterations = 60;
  cfg.eval_every = 0;
  cfg.seed = 5;
  return cfg;
}

Trainer make_trainer(RunConfig cfg) {
  auto data = load_data(cfg);
  return Trainer(cfg, data.samples, data.split);
}

StepBatch<double> to_double(const StepBatch<float>& b) {
  StepBatch<double> d;
  for (const auto& g : b.labeled_images) d.labeled_images.push_back(grid_cast<double>(g));
  for (const auto& g : b.unlabeled_images) d.unlabeled_images.push_back(grid_cast<double>(g));
  for (const auto& g : b.mixed_images) d.mixed_images.push_back(grid_cast<double>(g));
  for (const auto& f : b.mixed_targets) d.mixed_targets.push_back(field_cast<double>(f));
  d.labeled_labels = b.labeled_labels;
  d.mixed_labels = b.mixed_labels;
  return d;
}

Parameters<double> to_double(const Parameters<float>& p) {
  return Parameters<double>{std::vector<double>(p.values.begin(), p.values.end())};
}

}  // namespace

TEST_CASE("lambda_con schedule") {
  CHECK(lambda_con(100, 100) == 1.0);
  CHECK(lambda_con(0, 100) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  CHECK(lambda_con(50, 100) == doctest::Approx(std::exp(-1.25)).epsilon(1e-12));
  CHECK(lambda_con(250, 100) == 1.0);
  CHECK(lambda_con(3, 0) == 1.0);
  double prev = 0.0;
  for (int t = 0; t <= 300; ++t) {
    const double v = lambda_con(t, 200);
    CHECK(v >= prev);
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
}

TEST_CASE("config text round trip, overrides and validation") {
  RunConfig cfg;
  CHECK(cfg.effective_ramp_len() == 800);
  auto parsed = parse_config(cfg.to_text());
  CHECK(parsed.to_text() == cfg.to_text());
  CHECK(parsed.hash() == cfg.hash());

  auto edited = parse_config("# comment\nproto.fusion_variant = M-L\ntrain.iterations = 10  # trailing\ndata.shape = 16x16x8\n");
  CHECK(edited.fusion_variant == FusionVariant::no_labeled_mixed);
  CHECK(edited.iterations == 10);
  CHECK(edited.phantom.volume_shape == Shape3{16, 16, 8});
  CHECK(edited.hash() != cfg.hash());

  apply_overrides(edited, {"optim.lr=0.002", "loss.consistency_kind=mse"});
  CHECK(edited.optim.learning_rate == 0.002);
  CHECK(edited.consistency_kind == ConsistencyKind::mse);

  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidParam;
  };
  CHECK(code_of([] { parse_config("no.such.key = 1\n"); }) == ErrorCode::Config);
  CHECK(code_of([] { parse_config("train.iterations = ten\n"); }) == ErrorCode::Config);
  CHECK(code_of([] {
          auto c = parse_config("batch.mixed = 3\n");
          c.validate();
        }) == ErrorCode::Config);
  CHECK(config_reference().size() > 40);
}

TEST_CASE("compute_step gradients match finite differences in double precision") {
  for (bool detach : {true, false}) {
    CAPTURE(detach);
    auto cfg = tiny_config();
    cfg.detach_mixed = detach;
    auto trainer = make_trainer(cfg);
    for (int i = 0; i < 3; ++i) trainer.train_step();
    const auto batch = to_double(trainer.sample_batch());
    SegNet<double> net(trainer.config().model);
    auto student = to_double(trainer.state().student);
    auto teacher = to_double(trainer.state().teacher);
    auto aux = to_double(trainer.state().aux);
    auto opts = StepOptions::from_config(trainer.config(), 0.6);
    const auto r = compute_step(net, student, teacher, aux, batch, opts);
    REQUIRE(!r.degenerate_prototypes);

    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> pick(0, student.values.size() - 1);
    int bad = 0;
    for (int n = 0; n < 10; ++n) {
      const std::size_t i = pick(rng);
      auto f = [&] { return compute_step(net, student, teacher, aux, batch, opts).bundle.total; };
      const double num = oracle::central_difference(f, student.values[i], 1e-5);
      bad += oracle::relative_error(r.grad_student.values[i], num, 1e-4) > 1e-3;
    }
    for (int n = 0; n < 10; ++n) {
      const std::size_t i = pick(rng);
      auto f = [&] {
        const auto b = compute_step(net, student, teacher, aux, batch, opts).bundle;
        return detach ? b.l_seg_m : b.total;
      };
      const double num = oracle::central_difference(f, aux.values[i], 1e-5);
      bad += oracle::relative_error(r.grad_aux.values[i], num, 1e-4) > 1e-3;
    }
    // ReLU kinks and argmax pseudo-labels can be crossed by a single perturbation
    CHECK(bad <= 1);
  }
}

TEST_CASE("fusion variants and the lambda endpoints inside a step") {
  auto cfg = tiny_config();
  auto trainer = make_trainer(cfg);
  const auto batch = to_double(trainer.sample_batch());
  SegNet<double> net(trainer.config().model);
  const auto s = to_double(trainer.state().student);
  const auto t = to_double(trainer.state().teacher);
  const auto a = to_double(trainer.state().aux);
  auto opts = StepOptions::from_config(trainer.config(), 0.4);
  const auto full = compute_step(net, s, t, a, batch, opts);

  opts.fusion_variant = FusionVariant::none;
  const auto nn = compute_step(net, s, t, a, batch, opts);
  CHECK(nn.bundle.l_seg == full.bundle.l_seg);
  CHECK(nn.bundle.l_lc != full.bundle.l_lc);
  REQUIRE(nn.prototypes.has_value());
  // the unfused prototypes are reproducible from the labeled branch alone
  const auto forward = [&](const Grid<double>& img) { return net.forward(s, img); };
  std::vector<Field<double>> taps;
  for (const auto& img : batch.labeled_images) taps.push_back(forward(img).tap_features_upsampled);
  const auto pl = masked_prototype<double>(taps, batch.labeled_labels, trainer.config().model.classes);
  for (int c = 0; c < pl.classes(); ++c) {
    REQUIRE(nn.prototypes->labeled_fused.present(c) == pl.present(c));
    if (pl.present(c))
      for (std::size_t e = 0; e < pl.at(c).size(); ++e)
        CHECK(nn.prototypes->labeled_fused.at(c)[e] == doctest::Approx(pl.at(c)[e]).epsilon(1e-12));
  }

  opts.fusion_variant = FusionVariant::full;
  opts.lambda_con = 0.0;
  const auto zero = compute_step(net, s, t, a, batch, opts);
  CHECK(zero.bundle.total == doctest::Approx(zero.bundle.l_seg + zero.bundle.l_lc).epsilon(1e-12));
  const auto& g = zero.prototypes->global;
  const auto& lm = zero.prototypes->labeled_fused;
  for (int c = 0; c < g.classes(); ++c)
    if (g.present(c))
      for (std::size_t e = 0; e < g.at(c).size(); ++e) CHECK(g.at(c)[e] == doctest::Approx(lm.at(c)[e]).epsilon(1e-12));
  CHECK(zero.bundle.consistent());
}

TEST_CASE("supervised baseline ignores the auxiliary branch") {
  auto cfg = tiny_config();
  cfg.method = TrainMethod::supervised;
  auto trainer = make_trainer(cfg);
  const auto b = trainer.train_step();
  CHECK(b.l_lc == 0.0);
  CHECK(b.l_uc == 0.0);
  CHECK(b.l_seg_m == 0.0);
  CHECK(b.total == doctest::Approx(b.l_seg_l));
}

TEST_CASE("seeded runs are bitwise identical and checkpoints continue the same log") {
  auto cfg = tiny_config();
  cfg.iterations = 50;
  auto a = make_trainer(cfg);
  auto b = make_trainer(cfg);
  std::vector<LossBundle> la, lb;
  for (int i = 0; i < 50; ++i) {
    la.push_back(a.train_step());
    lb.push_back(b.train_step());
  }
  CHECK(la == lb);

  const auto dir = std::filesystem::temp_directory_path() / "mpcl_ckpt_test";
  std::filesystem::create_directories(dir);
  auto c = make_trainer(cfg);
  for (int i = 0; i < 20; ++i) c.train_step();
  c.save_checkpoint(dir / "ckpt.bin");
  auto d = make_trainer(cfg);
  d.load_checkpoint(dir / "ckpt.bin");
  CHECK(d.state().step == 20);
  for (int i = 20; i < 50; ++i) CHECK(d.train_step() == la[static_cast<std::size_t>(i)]);

  auto other = cfg;
  other.optim.learning_rate = 0.5;
  auto e = make_trainer(other);
  try {
    e.load_checkpoint(dir / "ckpt.bin");
    FAIL("expected a config mismatch");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::Config);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("teacher equals the EMA closed form of the recorded student trajectory") {
  auto cfg = tiny_config();
  auto trainer = make_trainer(cfg);
  const auto t0 = trainer.state().teacher.values;
  std::vector<std::vector<float>> students;
  for (int i = 0; i < 10; ++i) {
    trainer.train_step();
    students.push_back(trainer.state().student.values);
  }
  const double d = cfg.ema_decay;
  double worst = 0.0;
  for (std::size_t i = 0; i < t0.size(); ++i) {
    double expect = std::pow(d, 10) * t0[i];
    for (int k = 0; k < 10; ++k) expect += (1 - d) * std::pow(d, 9 - k) * students[static_cast<std::size_t>(k)][i];
    worst = std::max(worst, std::abs(expect - trainer.state().teacher.values[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("overfitting one labeled volume reaches high dice on it") {
  auto cfg = tiny_config();
  cfg.phantom.volume_shape = {16, 16, 16};
  cfg.phantom.count = 3;
  cfg.phantom.val_count = 1;
  cfg.phantom.labeled_fraction = 0.5;
  cfg.method = TrainMethod::supervised;
  cfg.labeled_per_step = 1;
  cfg.unlabeled_per_step = 0;
  cfg.mixed_per_step = 0;
  cfg.model.depth = 3;
  cfg.model.base_channels = 4;
  auto trainer = make_trainer(cfg);
  REQUIRE(trainer.split().labeled.size() == 1);
  for (int i = 0; i < 150; ++i) trainer.train_step();
  const auto reports = trainer.evaluate(trainer.split().labeled);
  CHECK(reports[0].mean.dice > 0.95);
  // evaluation is a pure function of the parameters
  CHECK(trainer.evaluate(trainer.split().labeled)[0].mean.dice == reports[0].mean.dice);
}

TEST_CASE("a perfect prediction scores dice 1 and zero distance") {
  std::mt19937_64 rng(3);
  auto ref = oracle::random_labels({6, 6, 6}, 3, rng);
  auto r = evaluate_labels(ref, ref, 3, "stub");
  CHECK(r.mean.dice == 1.0);
  CHECK(*r.mean.hd95 == 0.0);
  CHECK(*r.mean.asd == 0.0);
}

TEST_CASE("loss log round trip") {
  auto cfg = tiny_config();
  auto trainer = make_trainer(cfg);
  std::stringstream ss;
  write_loss_header(ss);
  std::vector<LossBundle> rows;
  for (int i = 0; i < 3; ++i) {
    rows.push_back(trainer.train_step());
    write_loss_row(ss, i, rows.back());
  }
  const auto back = read_loss_log(ss);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].first == static_cast<std::int64_t>(i));
    CHECK(back[i].second == rows[i]);
  }
}
