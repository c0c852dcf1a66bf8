#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mpcl/trainer.hpp"

namespace mpcl {

/// One row of an ablation matrix: a label and the config overrides applied on top of the base config.
struct AblationRow {
  std::string name;
  std::vector<std::string> overrides;
};

/// Lines of the form `name : key=value key=value ...`; `#` starts a comment. The name and colon may be
/// omitted, in which case the overrides themselves (or "base") label the row.
std::vector<AblationRow> parse_ablation_matrix(const std::string& text);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
  int count = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct AblationRun {
  std::string row;
  std::uint64_t seed = 0;
  MetricReport aggregate;
  double seconds_per_epoch = 0.0;
};

struct AblationSummary {
  std::string row;
  RunConfig config;  ///< the row's effective config (seed of the first run)
  MeanStd dice, jaccard, hd95, asd, seconds_per_epoch;
};

struct AblationOptions {
  int seeds = 3;
  std::uint64_t first_seed = 0;  ///< run s uses train.seed = first_seed + s
  /// When set, each run writes its logs and checkpoint to `<run_root>/<row index>_s<seed>`.
  std::optional<std::filesystem::path> run_root;
  std::function<void(const std::string&)> progress;
};

/// Trains every row over `options.seeds` seeds and summarizes the final validation aggregates.
std::vector<AblationSummary> run_ablation(const RunConfig& base, const std::vector<AblationRow>& rows,
                                          const AblationOptions& options, std::vector<AblationRun>* runs = nullptr);

inline constexpr const char* kAblationCsvVersion = "# mpcl-ablation v1";

/// Columns: row, method, variant, gamma1, gamma2, k, consistency, augment, seeds, then mean and std of
/// dice, jaccard, hd95, asd and seconds per epoch.
void write_ablation_csv(std::ostream& os, const std::vector<AblationSummary>& rows);
void write_ablation_runs_csv(std::ostream& os, const std::vector<AblationRun>& runs);
std::string ablation_markdown(const std::vector<AblationSummary>& rows);

}  // namespace mpcl
