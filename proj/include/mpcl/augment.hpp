#pragma once

#include <random>
#include <string>

#include "mpcl/volume.hpp"

namespace mpcl {

enum class MixKind { cutmix, cutout, fmix, full };

const char* to_string(MixKind k) noexcept;

/// Binary mixing mask: 1 selects source A, 0 selects source B.
struct MixMask {
  Grid<std::uint8_t> mask;
  MixKind kind = MixKind::cutmix;
  double fraction = 0.0;

  static MixMask filled(Shape3 shape, bool ones, MixKind kind = MixKind::full);
  void refresh_fraction();
};

/// Cuboid side-length law: each side uniform in [cut_min, cut_max] of the dimension.
struct CuboidLaw {
  double cut_min = 0.25;
  double cut_max = 0.5;

  void validate() const;
};

MixMask random_cuboid_mask(Shape3 shape, const CuboidLaw& law, std::mt19937_64& rng, MixKind kind = MixKind::cutmix);

/// Applies mask to image and label: mask ? a : b. Labels are copied, never blended.
VolumeSample mix_with_mask(const VolumeSample& a, const VolumeSample& b, const MixMask& mask);

struct MixedPair {
  VolumeSample mixed;
  MixMask mask;
};

MixedPair cutmix_pair(const VolumeSample& a, const VolumeSample& b, std::mt19937_64& rng, const CuboidLaw& law = {});

struct SoftMixed {
  VolumeSample mixed;  ///< label holds the argmax of soft_label
  ProbabilityVolume<float> soft_label;
  double lambda = 1.0;
};

/// image = lambda*a + (1-lambda)*b, label = lambda*onehot(a) + (1-lambda)*onehot(b).
SoftMixed mixup_with_lambda(const VolumeSample& a, const VolumeSample& b, double lambda, int classes);
/// lambda ~ Beta(alpha, alpha).
SoftMixed mixup_pair(const VolumeSample& a, const VolumeSample& b, double alpha, int classes, std::mt19937_64& rng);
double sample_beta(double alpha, double beta, std::mt19937_64& rng);

/// Zeroes the image wherever the mask is 1; label unchanged.
VolumeSample cutout_with_mask(const VolumeSample& a, const MixMask& mask);
VolumeSample cutout(const VolumeSample& a, std::mt19937_64& rng, const CuboidLaw& law = {});

/// Marks exactly floor(V/2) voxels with the largest field values. Ties go to the lower voxel index.
MixMask median_threshold_mask(const Grid<float>& field);
/// Low-frequency mask: white noise blurred separably with a Gaussian, thresholded at its median.
MixMask fmix_mask(Shape3 shape, std::mt19937_64& rng, double sigma_fraction = 0.125);
MixedPair fmix_pair(const VolumeSample& a, const VolumeSample& b, std::mt19937_64& rng);

}  // namespace mpcl
