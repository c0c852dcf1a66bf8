#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpcl/volume.hpp"

namespace mpcl {

enum class PhantomTask {
  ellipsoid,     ///< binary: one rotated ellipsoid on background
  nested_tubes,  ///< 3-class: background, true lumen (1), false lumen (2)
};

const char* to_string(PhantomTask t) noexcept;
PhantomTask parse_phantom_task(const std::string& s);
int task_classes(PhantomTask t) noexcept;

struct PhantomSpec {
  PhantomTask task = PhantomTask::ellipsoid;
  Shape3 volume_shape{32, 32, 32};
  int count = 50;
  double noise_std = 0.5;
  std::uint64_t seed = 0;
  double labeled_fraction = 0.2;
  int val_count = 10;

  void validate() const;
};

struct PhantomDataset {
  std::vector<VolumeSample> samples;
  DatasetSplit split;
};

/// Intensity assigned to voxels of class `c` before noise is added.
float phantom_base_intensity(PhantomTask task, int c) noexcept;

/// Bit-reproducible phantom set; each sample's random stream depends only on (seed, index).
PhantomDataset generate(const PhantomSpec& spec);

/// Shuffles ids, takes `val_count` for validation and round(labeled_fraction * rest) as labeled.
DatasetSplit make_split(const std::vector<VolumeSample>& samples, double labeled_fraction, int val_count,
                        std::uint64_t seed);

}  // namespace mpcl
