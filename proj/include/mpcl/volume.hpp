#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mpcl/grid.hpp"

namespace mpcl {

enum class SampleSource { labeled, unlabeled, mixed, synthetic };

const char* to_string(SampleSource s) noexcept;
SampleSource parse_sample_source(const std::string& s);

/// One 3D image with an optional label volume of the same shape.
struct VolumeSample {
  Grid<float> image;
  std::optional<LabelGrid> label;
  std::string id;
  SampleSource source = SampleSource::synthetic;

  const Shape3& shape() const noexcept { return image.shape(); }
  bool has_label() const noexcept { return label.has_value(); }
};

/// Throws ShapeMismatch / InvalidLabel if the sample breaks its invariants.
void validate_sample(const VolumeSample& v, int classes);

/// C x H x W x D class probabilities; each voxel's class vector sums to one.
template <class T>
using ProbabilityVolume = Field<T>;

template <class T>
bool is_probability_volume(const Field<T>& p, double tol = 1e-5) {
  for (std::size_t v = 0; v < p.voxels(); ++v) {
    double sum = 0.0;
    for (int c = 0; c < p.channels(); ++c) {
      const double x = p.at(c, v);
      if (!(x >= -tol && x <= 1.0 + tol)) return false;
      sum += x;
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

struct DatasetSplit {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  std::vector<std::string> validation;

  /// Throws InvalidParam if any id appears in more than one list.
  void validate() const;
};

/// Zero-mean, unit population-variance rescaling computed per volume.
VolumeSample normalize_intensity(const VolumeSample& v);

/// Crops image and label with the same uniformly drawn offset.
VolumeSample random_crop(const VolumeSample& v, Shape3 patch, std::mt19937_64& rng);

/// Window offsets along one axis: 0, stride, 2*stride, ... with the final window clamped to the edge.
std::vector<int> window_offsets(int extent, int window, int stride);

using PatchInference = std::function<ProbabilityVolume<float>(const Grid<float>& patch)>;

/// Tiles the volume with windows, averages overlapping probabilities and renormalizes per voxel.
/// Windows are visited in fixed (i, j, k) offset order, so the reduction is deterministic.
ProbabilityVolume<float> sliding_window_predict(const Grid<float>& image, Shape3 window, Shape3 stride,
                                                const PatchInference& infer);

/// Copies the sub-block starting at `offset` with extent `extent`.
template <class T>
Grid<T> extract_block(const Grid<T>& g, std::array<int, 3> offset, Shape3 extent) {
  Grid<T> out(extent);
  for (int i = 0; i < extent.h; ++i)
    for (int j = 0; j < extent.w; ++j)
      for (int k = 0; k < extent.d; ++k) out(i, j, k) = g(i + offset[0], j + offset[1], k + offset[2]);
  return out;
}

}  // namespace mpcl
