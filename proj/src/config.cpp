#include "mpcl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mpcl {

const char* to_string(TrainMethod m) noexcept { return m == TrainMethod::mpcl ? "mpcl" : "supervised"; }

TrainMethod parse_train_method(const std::string& s) {
  if (s == "mpcl") return TrainMethod::mpcl;
  if (s == "supervised") return TrainMethod::supervised;
  throw Error(ErrorCode::Config, "unknown train method '" + s + "' (mpcl, supervised)");
}

const char* to_string(AugmentKind k) noexcept {
  switch (k) {
    case AugmentKind::cutmix: return "cutmix";
    case AugmentKind::mixup: return "mixup";
    case AugmentKind::cutout: return "cutout";
    case AugmentKind::fmix: return "fmix";
  }
  return "cutmix";
}

AugmentKind parse_augment_kind(const std::string& s) {
  if (s == "cutmix") return AugmentKind::cutmix;
  if (s == "mixup") return AugmentKind::mixup;
  if (s == "cutout") return AugmentKind::cutout;
  if (s == "fmix") return AugmentKind::fmix;
  throw Error(ErrorCode::Config, "unknown augment kind '" + s + "' (cutmix, mixup, cutout, fmix)");
}

const char* to_string(UcTarget t) noexcept { return t == UcTarget::soft ? "soft" : "hard"; }

UcTarget parse_uc_target(const std::string& s) {
  if (s == "soft") return UcTarget::soft;
  if (s == "hard") return UcTarget::hard;
  throw Error(ErrorCode::Config, "unknown consistency target '" + s + "' (soft, hard)");
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& what) {
  throw Error(ErrorCode::Config, "key '" + key + "': cannot parse '" + value + "' as " + what);
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

Shape3 to_shape(const std::string& key, const std::string& v) {
  std::string s = v;
  for (char& c : s)
    if (c == 'x' || c == ',') c = ' ';
  std::istringstream is(s);
  Shape3 out;
  if (!(is >> out.h >> out.w >> out.d)) bad_value(key, v, "a shape HxWxD");
  std::string rest;
  if (is >> rest) bad_value(key, v, "a shape HxWxD");
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}
std::string fmt(long long x) { return std::to_string(x); }
std::string fmt(bool b) { return b ? "true" : "false"; }
std::string fmt(Shape3 s) { return s.str(); }

struct Key {
  const char* name;
  const char* description;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

#define MPCL_INT_KEY(NAME, FIELD, DESC)                                                          \
  Key{NAME, DESC, [](const RunConfig& c) { return fmt(static_cast<long long>(c.FIELD)); },       \
      [](RunConfig& c, const std::string& k, const std::string& v) {                             \
        c.FIELD = static_cast<decltype(c.FIELD)>(to_int(k, v));                                  \
      }}
#define MPCL_DOUBLE_KEY(NAME, FIELD, DESC)                                                       \
  Key{NAME, DESC, [](const RunConfig& c) { return fmt(static_cast<double>(c.FIELD)); },          \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); }}
#define MPCL_SHAPE_KEY(NAME, FIELD, DESC)                                                        \
  Key{NAME, DESC, [](const RunConfig& c) { return fmt(c.FIELD); },                              \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_shape(k, v); }}
#define MPCL_ENUM_KEY(NAME, FIELD, PARSE, DESC)                                                  \
  Key{NAME, DESC, [](const RunConfig& c) { return std::string(to_string(c.FIELD)); },            \
      [](RunConfig& c, const std::string& k, const std::string& v) {                             \
        try {                                                                                    \
          c.FIELD = PARSE(v);                                                                    \
        } catch (const Error& e) {                                                               \
          throw Error(ErrorCode::Config, "key '" + k + "': " + e.what());                        \
        }                                                                                        \
      }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      MPCL_INT_KEY("model.depth", model.depth, "encoder/decoder levels"),
      MPCL_INT_KEY("model.base_channels", model.base_channels, "channels at full resolution, doubled per level"),
      MPCL_INT_KEY("model.classes", model.classes, "number of classes incl. background (set from the dataset)"),
      Key{"data.root", "generated dataset directory; empty generates the phantom set in memory",
          [](const RunConfig& c) { return c.data_root; },
          [](RunConfig& c, const std::string&, const std::string& v) { c.data_root = v; }},
      MPCL_ENUM_KEY("data.task", phantom.task, parse_phantom_task, "phantom task: ellipsoid | nested_tubes"),
      MPCL_SHAPE_KEY("data.shape", phantom.volume_shape, "phantom volume shape HxWxD"),
      MPCL_INT_KEY("data.count", phantom.count, "phantom volumes generated (train + validation)"),
      MPCL_DOUBLE_KEY("data.noise_std", phantom.noise_std, "Gaussian noise standard deviation"),
      Key{"data.seed", "phantom generator seed", [](const RunConfig& c) { return std::to_string(c.phantom.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.phantom.seed = to_u64(k, v); }},
      MPCL_DOUBLE_KEY("data.labeled_fraction", phantom.labeled_fraction, "fraction of training volumes labeled"),
      MPCL_INT_KEY("data.val_count", phantom.val_count, "validation volumes"),
      MPCL_SHAPE_KEY("data.patch", patch, "training crop HxWxD; 0x0x0 uses whole volumes"),
      MPCL_INT_KEY("batch.labeled", labeled_per_step, "labeled volumes per step"),
      MPCL_INT_KEY("batch.unlabeled", unlabeled_per_step, "unlabeled volumes per step"),
      MPCL_INT_KEY("batch.mixed", mixed_per_step, "mixed volumes per step (must be batch.labeled / 2)"),
      MPCL_ENUM_KEY("optim.kind", optim.kind, parse_optimizer_kind, "adam | sgd"),
      MPCL_DOUBLE_KEY("optim.lr", optim.learning_rate, "learning rate"),
      MPCL_DOUBLE_KEY("optim.beta1", optim.beta1, "Adam first-moment decay"),
      MPCL_DOUBLE_KEY("optim.beta2", optim.beta2, "Adam second-moment decay"),
      MPCL_DOUBLE_KEY("optim.eps", optim.epsilon, "Adam epsilon"),
      MPCL_DOUBLE_KEY("optim.momentum", optim.momentum, "SGD momentum"),
      MPCL_DOUBLE_KEY("optim.weight_decay", optim.weight_decay, "L2 weight decay added to gradients"),
      MPCL_INT_KEY("train.iterations", iterations, "training steps"),
      MPCL_ENUM_KEY("train.method", method, parse_train_method, "mpcl | supervised (labeled-only baseline)"),
      MPCL_INT_KEY("train.eval_every", eval_every, "validation interval in steps; 0 evaluates only at the end"),
      MPCL_INT_KEY("train.checkpoint_every", checkpoint_every, "checkpoint interval in steps; 0 disables"),
      MPCL_DOUBLE_KEY("train.ema_decay", ema_decay, "teacher EMA decay"),
      MPCL_INT_KEY("train.ramp_len", ramp_len, "steps for lambda_con to reach 1; negative = 40% of iterations"),
      Key{"train.seed", "training seed (initialization, batches, augmentation)",
          [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      MPCL_DOUBLE_KEY("proto.lambda1", fusion.lambda1, "labeled weight in the labeled+mixed fusion"),
      MPCL_DOUBLE_KEY("proto.lambda2", fusion.lambda2, "mixed weight in the labeled+mixed fusion"),
      MPCL_DOUBLE_KEY("proto.lambda3", fusion.lambda3, "unlabeled weight in the unlabeled+mixed fusion"),
      MPCL_DOUBLE_KEY("proto.lambda4", fusion.lambda4, "mixed weight in the unlabeled+mixed fusion"),
      MPCL_DOUBLE_KEY("proto.temperature", temperature, "cosine similarity scale before the softmax"),
      MPCL_INT_KEY("proto.k", model.feature_tap_k, "decoder layer feeding prototypes; 1 = full resolution"),
      MPCL_ENUM_KEY("proto.fusion_variant", fusion_variant, parse_fusion_variant, "full | N-N | M-L | M-UL | L-UL"),
      Key{"proto.detach_mixed", "stop consistency gradients from reaching the auxiliary network",
          [](const RunConfig& c) { return fmt(c.detach_mixed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.detach_mixed = to_bool(k, v); }},
      MPCL_ENUM_KEY("loss.consistency_kind", consistency_kind, parse_consistency_kind, "ce | kl | mse | mae"),
      MPCL_DOUBLE_KEY("loss.focal_gamma", supervised.focal_gamma, "focal loss exponent"),
      MPCL_DOUBLE_KEY("loss.epsilon", supervised.epsilon, "Dice / IoU smoothing"),
      MPCL_ENUM_KEY("loss.uc_target", uc_target, parse_uc_target,
                    "unlabeled consistency target: soft (reliability-weighted) | hard (argmax)"),
      MPCL_ENUM_KEY("uncertainty.mode", reliability_mode, parse_reliability_mode, "normalized | literal"),
      MPCL_ENUM_KEY("augment.kind", augment_kind, parse_augment_kind, "cutmix | mixup | cutout | fmix"),
      MPCL_DOUBLE_KEY("augment.cut_min", cuboid.cut_min, "smallest cuboid side as a fraction of the axis"),
      MPCL_DOUBLE_KEY("augment.cut_max", cuboid.cut_max, "largest cuboid side as a fraction of the axis"),
      MPCL_DOUBLE_KEY("mixup.alpha", mixup_alpha, "Beta(alpha, alpha) parameter for mixup"),
      MPCL_SHAPE_KEY("eval.window", eval_window, "sliding window HxWxD; 0x0x0 uses the whole volume"),
      MPCL_SHAPE_KEY("eval.stride", eval_stride, "sliding window stride HxWxD"),
  };
  return table;
}

}  // namespace

int RunConfig::effective_ramp_len() const noexcept {
  if (ramp_len >= 0) return ramp_len;
  return static_cast<int>(0.4 * iterations);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
  try {
    model.validate();
    phantom.validate();
    fusion.validate();
    cuboid.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    fail(e.what());
  }
  if (labeled_per_step < 1 || unlabeled_per_step < 0) fail("batch sizes must be positive");
  if (method == TrainMethod::mpcl) {
    if (labeled_per_step < 2 || labeled_per_step % 2) fail("batch.labeled must be even and >= 2 to build mixed pairs");
    if (mixed_per_step * 2 != labeled_per_step) fail("batch.mixed must equal batch.labeled / 2");
    if (unlabeled_per_step < 1) fail("batch.unlabeled must be >= 1 for mpcl");
  }
  if (iterations < 0) fail("train.iterations must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("train.ema_decay must be in [0,1]");
  if (!(optim.learning_rate > 0.0)) fail("optim.lr must be > 0");
  if (!(temperature > 0.0)) fail("proto.temperature must be > 0");
  if (!(mixup_alpha > 0.0)) fail("mixup.alpha must be > 0");
  if (eval_every < 0 || checkpoint_every < 0) fail("intervals must be >= 0");
  if (eval_stride.h < 1 || eval_stride.w < 1 || eval_stride.d < 1) fail("eval.stride components must be >= 1");
}

namespace {

// Write-only keys: they set the fusion weights from a ratio and are not part of to_text().
struct DerivedKey {
  const char* name;
  const char* description;
  void (*set)(RunConfig&, double);
};

const std::vector<DerivedKey>& derived_keys() {
  static const std::vector<DerivedKey> k{
      {"proto.gamma1", "sets lambda1 / lambda2 to the given ratio with lambda1 + lambda2 = 1",
       [](RunConfig& c, double g) {
         const auto r = FusionCoefficients::from_ratios(g, 1.0);
         c.fusion.lambda1 = r.lambda1;
         c.fusion.lambda2 = r.lambda2;
       }},
      {"proto.gamma2", "sets lambda3 / lambda4 to the given ratio with lambda3 + lambda4 = 1",
       [](RunConfig& c, double g) {
         const auto r = FusionCoefficients::from_ratios(1.0, g);
         c.fusion.lambda3 = r.lambda3;
         c.fusion.lambda4 = r.lambda4;
       }},
  };
  return k;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& d : derived_keys())
    if (key == d.name) {
      const double g = to_double(key, value);
      if (!(g > 0)) bad_value(key, value, "a positive ratio");
      d.set(*this, g);
      return;
    }
  for (const auto& k : keys())
    if (key == k.name) {
      k.set(*this, key, value);
      return;
    }
  throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  const auto text = to_text();
  return fnv1a64(text.data(), text.size());
}

std::vector<ConfigKeyDoc> config_reference() {
  const RunConfig defaults;
  std::vector<ConfigKeyDoc> out;
  for (const auto& k : keys()) out.push_back({k.name, k.get(defaults), k.description});
  for (const auto& d : derived_keys()) out.push_back({d.name, "1", d.description});
  return out;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::Config, "line " + std::to_string(lineno) + ": expected 'key = value'");
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "override '" + o + "' is not key=value");
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

}  // namespace mpcl
