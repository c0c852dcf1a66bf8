#include "mpcl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpcl/volume_io.hpp"

namespace mpcl {

double lambda_con(double t, double ramp_len) {
  if (ramp_len <= 0.0) return 1.0;
  const double x = 1.0 - std::min(std::max(t, 0.0), ramp_len) / ramp_len;
  return std::exp(-5.0 * x * x);
}

StepOptions StepOptions::from_config(const RunConfig& cfg, double lambda) {
  StepOptions o;
  o.method = cfg.method;
  o.fusion = cfg.fusion;
  o.temperature = cfg.temperature;
  o.fusion_variant = cfg.fusion_variant;
  o.detach_mixed = cfg.detach_mixed;
  o.consistency_kind = cfg.consistency_kind;
  o.supervised = cfg.supervised;
  o.uc_target = cfg.uc_target;
  o.reliability_mode = cfg.reliability_mode;
  o.lambda_con = lambda;
  return o;
}

namespace {

template <class T>
void add_into(Field<T>& dst, const Field<T>& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
    return;
  }
  auto d = dst.values();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class T>
std::vector<Field<T>> taps(const std::vector<NetworkOutputs<T>>& outs) {
  std::vector<Field<T>> f;
  f.reserve(outs.size());
  for (const auto& o : outs) f.push_back(o.tap_features_upsampled);
  return f;
}

template <class T>
void scale(std::vector<Field<T>>& fs, double s) {
  for (auto& f : fs)
    for (auto& x : f.values()) x = static_cast<T>(x * s);
}

}  // namespace

template <class T>
StepResult<T> compute_step(const SegNet<T>& net, const Parameters<T>& student, const Parameters<T>& teacher,
                           const Parameters<T>& aux, const StepBatch<T>& batch, const StepOptions& opt) {
  const int classes = net.config().classes;
  const std::size_t nl = batch.labeled_images.size();
  if (nl == 0 || batch.labeled_labels.size() != nl) throw Error(ErrorCode::InvalidParam, "labeled batch is empty or unpaired");

  StepResult<T> out;
  out.grad_student = net.zeros();

  std::vector<ForwardTrace<T>> tr_l(nl);
  std::vector<NetworkOutputs<T>> out_l;
  for (std::size_t a = 0; a < nl; ++a) out_l.push_back(net.forward(student, batch.labeled_images[a], &tr_l[a]));
  const auto targets_l = one_hot_batch<T>(batch.labeled_labels, classes);
  auto sup_l = supervised_loss<T>(out_l, targets_l, opt.supervised);

  if (opt.method == TrainMethod::supervised) {
    out.bundle = total_loss(sup_l.terms, 0.0, 0.0, 0.0, 0.0);
    for (std::size_t a = 0; a < nl; ++a) net.backward(student, tr_l[a], out_l[a], sup_l.grads[a], out.grad_student);
    return out;
  }

  const std::size_t nu = batch.unlabeled_images.size();
  const std::size_t nm = batch.mixed_images.size();
  if (nu == 0 || nm == 0 || batch.mixed_labels.size() != nm || batch.mixed_targets.size() != nm)
    throw Error(ErrorCode::InvalidParam, "mpcl step needs unlabeled and mixed samples");
  out.grad_aux = net.zeros();

  std::vector<ForwardTrace<T>> tr_u(nu), tr_m(nm);
  std::vector<NetworkOutputs<T>> out_u, out_t, out_m;
  for (std::size_t a = 0; a < nu; ++a) {
    out_u.push_back(net.forward(student, batch.unlabeled_images[a], &tr_u[a]));
    out_t.push_back(net.forward(teacher, batch.unlabeled_images[a]));
  }
  for (std::size_t b = 0; b < nm; ++b) out_m.push_back(net.forward(aux, batch.mixed_images[b], &tr_m[b]));

  std::vector<ReliablePseudoLabel<T>> pseudo;
  std::vector<LabelGrid> pseudo_hard;
  std::vector<Grid<T>> pseudo_entropy;
  for (const auto& o : out_t) {
    pseudo.push_back(reliable_pseudo_label(o.mean_probs, opt.reliability_mode));
    pseudo_hard.push_back(pseudo.back().hard);
    pseudo_entropy.push_back(pseudo.back().reliability.entropy);
  }

  const auto f_l = taps(out_l);
  const auto f_u = taps(out_u);
  const auto f_t = taps(out_t);
  const auto f_m = taps(out_m);
  const auto p_l = masked_prototype<T>(f_l, batch.labeled_labels, classes);
  auto p_u = masked_prototype_weighted<T>(f_t, pseudo_hard, pseudo_entropy, classes, opt.reliability_mode);
  auto p_m = masked_prototype<T>(f_m, batch.mixed_labels, classes);
  p_m.source = PrototypeSource::mixed;
  const auto fused = fuse_all(p_l, p_u, p_m, opt.fusion, opt.lambda_con, opt.fusion_variant);

  auto sup_m = supervised_loss<T>(out_m, batch.mixed_targets, opt.supervised);

  std::vector<OutputGradients<T>> g_l = std::move(sup_l.grads);
  std::vector<OutputGradients<T>> g_u(nu);
  std::vector<OutputGradients<T>> g_m = std::move(sup_m.grads);

  double l_lc = 0.0, l_uc = 0.0;
  if (fused.global.present_count() < 2) {
    out.degenerate_prototypes = true;
  } else {
    const int dim = f_l[0].channels();
    std::vector<SimilarityMap<T>> sim_l, sim_u;
    std::vector<Field<T>> s_l, s_u;
    for (const auto& f : f_l) {
      sim_l.push_back(similarity_map(f, fused.global, opt.temperature));
      s_l.push_back(sim_l.back().probs);
    }
    for (const auto& f : f_u) {
      sim_u.push_back(similarity_map(f, fused.global, opt.temperature));
      s_u.push_back(sim_u.back().probs);
    }
    auto lc = cross_entropy_loss<T>(s_l, targets_l);
    std::vector<Field<T>> uc_targets;
    for (const auto& pl : pseudo)
      uc_targets.push_back(opt.uc_target == UcTarget::soft ? pl.soft : one_hot<T>(pl.hard, classes));
    auto uc = consistency_loss<T>(s_u, uc_targets, opt.consistency_kind);
    l_lc = lc.value;
    l_uc = uc.value;
    scale(uc.grad, opt.lambda_con);

    auto g_global = zero_prototype_grad<T>(classes, dim);
    for (std::size_t a = 0; a < nl; ++a) {
      Field<T> gf;
      similarity_map_backward(f_l[a], fused.global, sim_l[a], lc.grad[a], gf, g_global);
      add_into(g_l[a].tap_features_upsampled, gf);
    }
    for (std::size_t a = 0; a < nu; ++a) {
      Field<T> gf;
      similarity_map_backward(f_u[a], fused.global, sim_u[a], uc.grad[a], gf, g_global);
      add_into(g_u[a].tap_features_upsampled, gf);
    }
    const auto fg = fuse_all_backward(p_l, p_u, p_m, fused, opt.fusion, opt.lambda_con, opt.fusion_variant, g_global);
    const auto gl = masked_prototype_backward<T>(f_l, batch.labeled_labels, {}, fg.labeled);
    for (std::size_t a = 0; a < nl; ++a) add_into(g_l[a].tap_features_upsampled, gl[a]);
    if (!opt.detach_mixed) {
      const auto gm = masked_prototype_backward<T>(f_m, batch.mixed_labels, {}, fg.mixed);
      for (std::size_t b = 0; b < nm; ++b) add_into(g_m[b].tap_features_upsampled, gm[b]);
    }
  }

  out.bundle = total_loss(sup_l.terms, sup_m.terms.seg, l_lc, l_uc, opt.lambda_con);
  for (std::size_t a = 0; a < nl; ++a) net.backward(student, tr_l[a], out_l[a], g_l[a], out.grad_student);
  if (!out.degenerate_prototypes)
    for (std::size_t a = 0; a < nu; ++a) net.backward(student, tr_u[a], out_u[a], g_u[a], out.grad_student);
  for (std::size_t b = 0; b < nm; ++b) net.backward(aux, tr_m[b], out_m[b], g_m[b], out.grad_aux);
  out.prototypes = fused;
  return out;
}

template StepResult<float> compute_step<float>(const SegNet<float>&, const Parameters<float>&, const Parameters<float>&,
                                               const Parameters<float>&, const StepBatch<float>&, const StepOptions&);
template StepResult<double> compute_step<double>(const SegNet<double>&, const Parameters<double>&,
                                                 const Parameters<double>&, const Parameters<double>&,
                                                 const StepBatch<double>&, const StepOptions&);

LoadedData load_data(RunConfig& cfg) {
  LoadedData d;
  if (cfg.data_root.empty()) {
    auto ds = generate(cfg.phantom);
    d.samples = std::move(ds.samples);
    d.split = std::move(ds.split);
    cfg.model.classes = task_classes(cfg.phantom.task);
  } else {
    const auto m = read_manifest(cfg.data_root);
    d.samples = read_all_volumes(cfg.data_root, m);
    d.split = m.split;
    cfg.model.classes = m.classes;
  }
  return d;
}

namespace {

std::vector<std::size_t> index_ids(const std::vector<VolumeSample>& samples, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& s) { return s.id == id; });
    if (it == samples.end()) throw Error(ErrorCode::InvalidParam, "split names unknown volume '" + id + "'");
    out.push_back(static_cast<std::size_t>(it - samples.begin()));
  }
  return out;
}

// `count` draws from `pool`, distinct while the pool is large enough.
std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::size_t> out;
  for (int n = 0; n < count; ++n) {
    const std::size_t used = static_cast<std::size_t>(n) % idx.size();
    std::uniform_int_distribution<std::size_t> pick(used, idx.size() - 1);
    std::swap(idx[used], idx[pick(rng)]);
    out.push_back(pool[idx[used]]);
  }
  return out;
}

}  // namespace

Trainer::Trainer(RunConfig cfg, const std::vector<VolumeSample>& samples, DatasetSplit split)
    : cfg_(std::move(cfg)), net_(cfg_.model), split_(std::move(split)) {
  cfg_.validate();
  split_.validate();
  samples_.reserve(samples.size());
  for (const auto& s : samples) {
    validate_sample(s, cfg_.model.classes);
    samples_.push_back(normalize_intensity(s));
  }
  labeled_ = index_ids(samples_, split_.labeled);
  unlabeled_ = index_ids(samples_, split_.unlabeled);
  index_ids(samples_, split_.validation);
  if (labeled_.empty()) throw Error(ErrorCode::EmptySplit, "no labeled volumes");
  for (auto i : labeled_)
    if (!samples_[i].has_label()) throw Error(ErrorCode::InvalidLabel, "labeled volume '" + samples_[i].id + "' has no label");
  if (cfg_.method == TrainMethod::mpcl && unlabeled_.empty())
    throw Error(ErrorCode::EmptySplit, "mpcl needs unlabeled volumes");
  const Shape3 input = cfg_.patch.voxels() ? cfg_.patch : samples_[labeled_[0]].shape();
  net_.check_input(input);

  state_.rng.seed(cfg_.seed);
  state_.student = net_.init(state_.rng);
  state_.teacher = state_.student;
  if (cfg_.method == TrainMethod::mpcl) state_.aux = net_.init(state_.rng);
}

const VolumeSample& Trainer::sample(const std::string& id) const {
  for (const auto& s : samples_)
    if (s.id == id) return s;
  throw Error(ErrorCode::InvalidParam, "unknown volume '" + id + "'");
}

int Trainer::steps_per_epoch() const noexcept {
  const int per_step = cfg_.labeled_per_step + (cfg_.method == TrainMethod::mpcl ? cfg_.unlabeled_per_step : 0);
  const auto train = labeled_.size() + (cfg_.method == TrainMethod::mpcl ? unlabeled_.size() : 0);
  return std::max(1, static_cast<int>((train + static_cast<std::size_t>(per_step) - 1) / static_cast<std::size_t>(per_step)));
}

StepBatch<float> Trainer::sample_batch() {
  auto& rng = state_.rng;
  const bool crop = cfg_.patch.voxels() > 0;
  auto prepare = [&](std::size_t i) { return crop ? random_crop(samples_[i], cfg_.patch, rng) : samples_[i]; };

  StepBatch<float> b;
  std::vector<VolumeSample> lab;
  for (auto i : draw(labeled_, cfg_.labeled_per_step, rng)) lab.push_back(prepare(i));
  for (const auto& s : lab) {
    b.labeled_images.push_back(s.image);
    b.labeled_labels.push_back(*s.label);
  }
  if (cfg_.method == TrainMethod::supervised) return b;
  for (auto i : draw(unlabeled_, cfg_.unlabeled_per_step, rng)) b.unlabeled_images.push_back(prepare(i).image);

  const int classes = cfg_.model.classes;
  for (int m = 0; m < cfg_.mixed_per_step; ++m) {
    const auto& x = lab[static_cast<std::size_t>(2 * m)];
    const auto& y = lab[static_cast<std::size_t>(2 * m + 1)];
    switch (cfg_.augment_kind) {
      case AugmentKind::cutmix: {
        auto p = cutmix_pair(x, y, rng, cfg_.cuboid);
        b.mixed_images.push_back(p.mixed.image);
        b.mixed_targets.push_back(one_hot<float>(*p.mixed.label, classes));
        b.mixed_labels.push_back(std::move(*p.mixed.label));
        break;
      }
      case AugmentKind::fmix: {
        auto p = fmix_pair(x, y, rng);
        b.mixed_images.push_back(p.mixed.image);
        b.mixed_targets.push_back(one_hot<float>(*p.mixed.label, classes));
        b.mixed_labels.push_back(std::move(*p.mixed.label));
        break;
      }
      case AugmentKind::cutout: {
        auto c = cutout(x, rng, cfg_.cuboid);
        b.mixed_images.push_back(c.image);
        b.mixed_targets.push_back(one_hot<float>(*c.label, classes));
        b.mixed_labels.push_back(std::move(*c.label));
        break;
      }
      case AugmentKind::mixup: {
        auto p = mixup_pair(x, y, cfg_.mixup_alpha, classes, rng);
        b.mixed_images.push_back(p.mixed.image);
        b.mixed_targets.push_back(std::move(p.soft_label));
        b.mixed_labels.push_back(std::move(*p.mixed.label));
        break;
      }
    }
  }
  return b;
}

LossBundle Trainer::train_step() {
  auto batch = sample_batch();
  const double lam = cfg_.method == TrainMethod::mpcl
                         ? lambda_con(static_cast<double>(state_.step), cfg_.effective_ramp_len())
                         : 0.0;
  auto r = compute_step(net_, state_.student, state_.teacher, state_.aux, batch, StepOptions::from_config(cfg_, lam));
  if (!r.bundle.all_finite())
    throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(state_.step) + ": " + r.bundle.str());
  optimizer_step(cfg_.optim, state_.student, r.grad_student, state_.student_opt);
  if (cfg_.method == TrainMethod::mpcl) optimizer_step(cfg_.optim, state_.aux, r.grad_aux, state_.aux_opt);
  ema_update(state_.teacher, state_.student, cfg_.ema_decay);
  ++state_.step;
  return r.bundle;
}

ProbabilityVolume<float> Trainer::predict(const Grid<float>& image) const {
  const Shape3 window = cfg_.eval_window.voxels() ? cfg_.eval_window : image.shape();
  const auto& params = state_.student;
  return sliding_window_predict(image, window, cfg_.eval_stride, [&](const Grid<float>& patch) {
    return net_.forward(params, patch, nullptr, false).mean_probs;
  });
}

std::vector<MetricReport> Trainer::evaluate(const std::vector<std::string>& ids) const {
  std::vector<MetricReport> out;
  for (const auto& id : ids) {
    const auto& s = sample(id);
    if (!s.has_label()) throw Error(ErrorCode::InvalidLabel, "evaluation volume '" + id + "' has no label");
    const auto pred = argmax_labels(predict(s.image));
    out.push_back(evaluate_labels(pred, *s.label, cfg_.model.classes, id));
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'P', 'C', 'L', 'C', 'K', 'P', '1'};

template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error(ErrorCode::Io, "truncated checkpoint");
  return v;
}
void put_floats(std::ostream& os, const std::vector<float>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}
std::vector<float> get_floats(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 34)) throw Error(ErrorCode::Io, "corrupt checkpoint vector length");
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw Error(ErrorCode::Io, "truncated checkpoint");
  return v;
}
void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 24)) throw Error(ErrorCode::Io, "corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error(ErrorCode::Io, "truncated checkpoint");
  return s;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write checkpoint " + tmp);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint64_t>(os, cfg_.hash());
    put<std::int64_t>(os, state_.step);
    std::ostringstream rng;
    rng << state_.rng;
    put_string(os, rng.str());
    put_string(os, cfg_.to_text());
    for (const auto* p : {&state_.student, &state_.teacher, &state_.aux}) put_floats(os, p->values);
    for (const auto* o : {&state_.student_opt, &state_.aux_opt}) {
      put_floats(os, o->first);
      put_floats(os, o->second);
      put<std::int64_t>(os, o->steps);
    }
    if (!os) throw Error(ErrorCode::Io, "failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path, bool check_config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(ErrorCode::Io, path.string() + " is not a checkpoint");
  const auto hash = get<std::uint64_t>(is);
  if (check_config && hash != cfg_.hash())
    throw Error(ErrorCode::Config, "checkpoint was written under a different configuration");
  TrainState s;
  s.step = get<std::int64_t>(is);
  std::istringstream rng(get_string(is));
  rng >> s.rng;
  get_string(is);  // config text, informational
  for (auto* p : {&s.student, &s.teacher, &s.aux}) p->values = get_floats(is);
  for (auto* o : {&s.student_opt, &s.aux_opt}) {
    o->first = get_floats(is);
    o->second = get_floats(is);
    o->steps = get<std::int64_t>(is);
  }
  if (s.student.size() != net_.parameter_count() || s.teacher.size() != net_.parameter_count())
    throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter count does not match the model");
  state_ = std::move(s);
}

RunConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(ErrorCode::Io, path.string() + " is not a checkpoint");
  get<std::uint64_t>(is);
  get<std::int64_t>(is);
  get_string(is);
  return parse_config(get_string(is));
}

void write_loss_header(std::ostream& os) {
  os << kLossCsvVersion << "\nstep";
  for (const auto& n : LossBundle::column_names()) os << ',' << n;
  os << '\n';
}

void write_loss_row(std::ostream& os, std::int64_t step, const LossBundle& b) {
  char buf[64];
  os << step;
  for (double x : b.columns()) {
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    os << ',' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf));
  }
  os << '\n';
}

std::vector<std::pair<std::int64_t, LossBundle>> read_loss_log(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kLossCsvVersion)
    throw Error(ErrorCode::Io, "loss log lacks the '" + std::string(kLossCsvVersion) + "' header");
  std::getline(is, line);
  std::vector<std::pair<std::int64_t, LossBundle>> out;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    std::getline(ss, cell, ',');
    const auto step = std::stoll(cell);
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 12) throw Error(ErrorCode::Io, "malformed loss log row: " + line);
    LossBundle b{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
    out.emplace_back(step, b);
  }
  return out;
}

namespace {

void write_eval_row(std::ostream& os, std::int64_t step, const MetricReport& r) {
  auto opt = [](const std::optional<double>& x) {
    if (!x) return std::string();
    std::ostringstream s;
    s.precision(10);
    s << *x;
    return s.str();
  };
  os.precision(10);
  os << step << ',' << r.mean.dice << ',' << r.mean.jaccard << ',' << opt(r.mean.hd95) << ',' << opt(r.mean.asd)
     << '\n';
}

}  // namespace

RunSummary run_training(Trainer& trainer, const RunOptions& options) {
  const auto& cfg = trainer.config();
  RunSummary summary;
  std::ofstream loss_log, eval_log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto lp = *options.out_dir / "losses.csv";
    const auto ep = *options.out_dir / "eval.csv";
    const bool append = options.append_logs && std::filesystem::exists(lp);
    loss_log.open(lp, append ? std::ios::app : std::ios::trunc);
    eval_log.open(ep, append ? std::ios::app : std::ios::trunc);
    if (!loss_log || !eval_log) throw Error(ErrorCode::Io, "cannot open logs in " + options.out_dir->string());
    if (!append) {
      write_loss_header(loss_log);
      eval_log << kEvalCsvVersion << "\nstep,dice,jaccard,hd95,asd\n";
    }
    summary.artifacts = {lp, ep};
  }
  auto evaluate_now = [&](std::int64_t step) {
    auto reports = trainer.evaluate_validation();
    auto agg = aggregate_reports(reports);
    summary.evals.emplace_back(step, agg);
    if (eval_log.is_open()) {
      write_eval_row(eval_log, step, agg);
      eval_log.flush();
    }
    if (options.progress) {
      std::ostringstream m;
      m << "step " << step << " validation dice " << agg.mean.dice;
      options.progress(m.str());
    }
    return reports;
  };

  const auto start = std::chrono::steady_clock::now();
  double eval_seconds = 0.0;
  const std::int64_t first = trainer.state().step;
  while (trainer.state().step < cfg.iterations) {
    const auto step = trainer.state().step;
    const auto b = trainer.train_step();
    summary.losses.push_back(b);
    if (loss_log.is_open()) write_loss_row(loss_log, step, b);
    const auto done = trainer.state().step;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.iterations) {
      const auto t0 = std::chrono::steady_clock::now();
      evaluate_now(done);
      eval_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    if (options.out_dir && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
      trainer.save_checkpoint(*options.out_dir / "checkpoint.bin");
      loss_log.flush();
    }
  }
  summary.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() - eval_seconds;
  const auto steps = trainer.state().step - first;
  if (steps > 0) summary.seconds_per_epoch = summary.train_seconds / static_cast<double>(steps) * trainer.steps_per_epoch();

  summary.final_reports = evaluate_now(trainer.state().step);
  summary.final_aggregate = aggregate_reports(summary.final_reports);
  if (options.out_dir) {
    const auto ck = *options.out_dir / "checkpoint.bin";
    trainer.save_checkpoint(ck);
    const auto mp = *options.out_dir / "metrics.csv";
    std::ofstream m(mp);
    write_metrics_csv(m, summary.final_reports);
    summary.artifacts.push_back(ck);
    summary.artifacts.push_back(mp);
  }
  return summary;
}

}  // namespace mpcl
