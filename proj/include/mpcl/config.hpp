#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpcl/augment.hpp"
#include "mpcl/losses.hpp"
#include "mpcl/prototypes.hpp"
#include "mpcl/segnet.hpp"
#include "mpcl/synthdata.hpp"
#include "mpcl/uncertainty.hpp"

namespace mpcl {

enum class TrainMethod {
  mpcl,        ///< full method: mean teacher + auxiliary network + prototype consistency
  supervised,  ///< labeled-only baseline: student trained on the labeled supervised loss
};

const char* to_string(TrainMethod m) noexcept;
TrainMethod parse_train_method(const std::string& s);

/// Mixing scheme used to build the auxiliary network's input.
enum class AugmentKind { cutmix, mixup, cutout, fmix };

const char* to_string(AugmentKind k) noexcept;
AugmentKind parse_augment_kind(const std::string& s);

/// Target that the unlabeled consistency loss pulls the similarity map towards.
enum class UcTarget { soft, hard };

const char* to_string(UcTarget t) noexcept;
UcTarget parse_uc_target(const std::string& s);

struct RunConfig {
  SegNetConfig model;

  // data.*: `root` names a generated dataset directory; when empty the phantom spec is generated in memory.
  std::string data_root;
  PhantomSpec phantom{PhantomTask::ellipsoid, {32, 32, 32}, 50, 0.5, 0, 0.2, 10};
  Shape3 patch{0, 0, 0};  ///< training crop; zero means the whole volume

  int labeled_per_step = 2;
  int unlabeled_per_step = 2;
  int mixed_per_step = 1;

  OptimizerSettings optim;

  int iterations = 2000;
  TrainMethod method = TrainMethod::mpcl;
  int eval_every = 200;
  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  double ema_decay = 0.99;
  int ramp_len = -1;  ///< negative means 40% of iterations
  std::uint64_t seed = 0;

  FusionCoefficients fusion;
  double temperature = 20.0;
  FusionVariant fusion_variant = FusionVariant::full;
  bool detach_mixed = true;

  ConsistencyKind consistency_kind = ConsistencyKind::ce;
  SupervisedSettings supervised;
  UcTarget uc_target = UcTarget::soft;

  ReliabilityMode reliability_mode = ReliabilityMode::normalized;

  AugmentKind augment_kind = AugmentKind::cutmix;
  CuboidLaw cuboid;
  double mixup_alpha = 1.0;

  Shape3 eval_window{0, 0, 0};  ///< zero means the whole volume
  Shape3 eval_stride{16, 16, 16};

  int effective_ramp_len() const noexcept;
  void validate() const;

  /// Sets one dotted key from its textual value; throws Config for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Canonical `key = value` listing of every key, in a fixed order.
  std::string to_text() const;
  /// FNV-1a 64-bit hash of to_text().
  std::uint64_t hash() const;
};

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every recognised key with its default value and a one-line description.
std::vector<ConfigKeyDoc> config_reference();

/// Parses `key = value` lines; `#` starts a comment. Keys are applied over `base` in file order.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Applies `key=value` override strings.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ULL);

}  // namespace mpcl
