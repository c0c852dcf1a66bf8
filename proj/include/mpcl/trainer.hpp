#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mpcl/config.hpp"
#include "mpcl/metrics.hpp"

namespace mpcl {

/// Gaussian warm-up exp(-5 (1 - min(t, T) / T)^2). A ramp length of 0 gives 1 immediately.
double lambda_con(double t, double ramp_len);

/// One step's worth of inputs, already normalized and cropped.
template <class T>
struct StepBatch {
  std::vector<Grid<T>> labeled_images;
  std::vector<LabelGrid> labeled_labels;
  std::vector<Grid<T>> unlabeled_images;
  std::vector<Grid<T>> mixed_images;
  std::vector<LabelGrid> mixed_labels;   ///< hard labels (prototype masks)
  std::vector<Field<T>> mixed_targets;   ///< supervised targets: one-hot, or soft for mixup
};

struct StepOptions {
  TrainMethod method = TrainMethod::mpcl;
  FusionCoefficients fusion;
  double temperature = 20.0;
  FusionVariant fusion_variant = FusionVariant::full;
  bool detach_mixed = true;
  ConsistencyKind consistency_kind = ConsistencyKind::ce;
  SupervisedSettings supervised;
  UcTarget uc_target = UcTarget::soft;
  ReliabilityMode reliability_mode = ReliabilityMode::normalized;
  double lambda_con = 1.0;

  static StepOptions from_config(const RunConfig& cfg, double lambda);
};

template <class T>
struct StepResult {
  LossBundle bundle;
  Parameters<T> grad_student;
  Parameters<T> grad_aux;  ///< empty for the supervised baseline
  /// Fewer than two classes had a prototype; both consistency terms were set to zero.
  bool degenerate_prototypes = false;
  std::optional<FusedPrototypes<T>> prototypes;
};

/// Losses and parameter gradients for one step; the teacher only supplies targets and is never
/// differentiated. Pure, so it can be evaluated in double precision for finite-difference checks.
template <class T>
StepResult<T> compute_step(const SegNet<T>& net, const Parameters<T>& student, const Parameters<T>& teacher,
                           const Parameters<T>& aux, const StepBatch<T>& batch, const StepOptions& options);

struct TrainState {
  Parameters<float> student;
  Parameters<float> teacher;
  Parameters<float> aux;
  OptimizerState<float> student_opt;
  OptimizerState<float> aux_opt;
  std::int64_t step = 0;
  std::mt19937_64 rng;
};

/// Loads the dataset named by the config (generated in memory when data.root is empty) and sets
/// model.classes from it.
struct LoadedData {
  std::vector<VolumeSample> samples;
  DatasetSplit split;
};
LoadedData load_data(RunConfig& cfg);

class Trainer {
public:
  /// Intensities are normalized per volume on construction.
  Trainer(RunConfig cfg, const std::vector<VolumeSample>& samples, DatasetSplit split);

  const RunConfig& config() const noexcept { return cfg_; }
  const SegNet<float>& network() const noexcept { return net_; }
  TrainState& state() noexcept { return state_; }
  const TrainState& state() const noexcept { return state_; }

  /// Samples the batch, computes the step, applies optimizer and EMA updates. Throws NonFiniteLoss.
  LossBundle train_step();
  /// Draws the next batch from the state's RNG (exposed for tests).
  StepBatch<float> sample_batch();

  /// Sliding-window inference with the student's mean prediction, argmax, per-class metrics.
  std::vector<MetricReport> evaluate(const std::vector<std::string>& ids) const;
  std::vector<MetricReport> evaluate_validation() const { return evaluate(split_.validation); }
  ProbabilityVolume<float> predict(const Grid<float>& image) const;

  /// Steps in one pass over the training set at the configured batch sizes.
  int steps_per_epoch() const noexcept;
  const DatasetSplit& split() const noexcept { return split_; }
  const VolumeSample& sample(const std::string& id) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Throws Config if the checkpoint was written under a different configuration and `check_config`.
  void load_checkpoint(const std::filesystem::path& path, bool check_config = true);

private:
  RunConfig cfg_;
  SegNet<float> net_;
  std::vector<VolumeSample> samples_;
  std::vector<std::size_t> labeled_, unlabeled_;
  DatasetSplit split_;
  TrainState state_;
};

/// The configuration a checkpoint was written under, parsed over the defaults.
RunConfig read_checkpoint_config(const std::filesystem::path& path);

inline constexpr const char* kLossCsvVersion = "# mpcl-losses v1";
inline constexpr const char* kEvalCsvVersion = "# mpcl-eval v1";

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  ///< logs and checkpoints go here when set
  bool append_logs = false;                      ///< continue existing logs (resume)
  std::function<void(const std::string&)> progress;
};

struct RunSummary {
  std::vector<LossBundle> losses;
  std::vector<std::pair<std::int64_t, MetricReport>> evals;  ///< (step, validation aggregate)
  std::vector<MetricReport> final_reports;
  MetricReport final_aggregate;
  double train_seconds = 0.0;
  double seconds_per_epoch = 0.0;
  std::vector<std::filesystem::path> artifacts;
};

/// Runs the trainer from its current step to cfg.iterations, evaluating on the validation split
/// every eval_every steps and at the end.
RunSummary run_training(Trainer& trainer, const RunOptions& options = {});

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, std::int64_t step, const LossBundle& b);
/// Rows of a loss log as (step, bundle).
std::vector<std::pair<std::int64_t, LossBundle>> read_loss_log(std::istream& is);

}  // namespace mpcl
