#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mpcl::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 420;
};

/// Standalone SVG line chart. Non-finite points (and non-positive ones on a log axis) are skipped.
std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& options);

/// Trailing moving average over `window` points.
std::vector<double> moving_average(const std::vector<double>& v, std::size_t window);

struct ReportFile {
  std::string kind;  ///< loss_curves | metric_table | ablation_table
  std::filesystem::path path;
  std::string format;  ///< csv | json | image | markdown
};

/// Renders whatever of losses.csv, eval.csv, metrics.csv and ablation.csv exist in `run_dir` into
/// `out_dir`, plus an index report.md. Returns the files written.
std::vector<ReportFile> render_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

}  // namespace mpcl::cli
