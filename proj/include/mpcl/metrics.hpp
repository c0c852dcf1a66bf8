#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mpcl/grid.hpp"

namespace mpcl {

/// Binary mask: nonzero voxels are inside.
using Mask = Grid<std::uint8_t>;

struct Overlap {
  double dice = 0.0;
  double jaccard = 0.0;
};

/// Both masks empty gives (1, 1); exactly one empty gives (0, 0).
Overlap dice_jaccard(const Mask& pred, const Mask& ref);

/// Flat indices of mask voxels with a 6-connected background neighbour or lying on the volume border.
std::vector<std::size_t> surface_voxels(const Mask& mask);

/// For each surface voxel of `from`, the Euclidean distance (voxel units) to the nearest surface voxel
/// of `to`, in increasing index order of `from`'s surface. Throws EmptyMask if either mask is empty.
std::vector<double> directed_surface_distances(const Mask& from, const Mask& to);

/// Linear interpolation between order statistics at rank q * (n - 1), q in [0, 1].
double percentile(std::vector<double> values, double q);

struct SurfaceDistances {
  double hd95 = 0.0;
  double asd = 0.0;
};

/// hd95: max of the two directed 95th percentiles; asd: mean of both directed sets pooled.
SurfaceDistances surface_distances(const Mask& pred, const Mask& ref);

Mask class_mask(const LabelGrid& labels, int c);

struct ClassMetrics {
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd95;  ///< missing when either mask is empty
  std::optional<double> asd;
};

struct MetricReport {
  std::string id;
  std::vector<int> classes;            ///< foreground class indices, parallel to per_class
  std::vector<ClassMetrics> per_class;
  ClassMetrics mean;                   ///< average over foreground classes; distances over available values
};

/// Metrics for every foreground class 1..classes-1.
MetricReport evaluate_labels(const LabelGrid& pred, const LabelGrid& ref, int classes, const std::string& id);

/// Per-class and overall averages across volumes (distances averaged over the volumes that have them).
MetricReport aggregate_reports(const std::vector<MetricReport>& reports, const std::string& id = "mean");

inline constexpr const char* kMetricsCsvVersion = "# mpcl-metrics v1";

/// One row per volume per class, plus a `mean` row per volume when there are several foreground classes.
/// Missing distances are written empty.
void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports);
std::vector<MetricReport> read_metrics_csv(std::istream& is);
/// {"volumes": [...], "aggregate": {...}}
std::string metrics_json(const std::vector<MetricReport>& reports);

}  // namespace mpcl
