#include "mpcl/volume.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mpcl {

const char* to_string(SampleSource s) noexcept {
  switch (s) {
    case SampleSource::labeled: return "labeled";
    case SampleSource::unlabeled: return "unlabeled";
    case SampleSource::mixed: return "mixed";
    case SampleSource::synthetic: return "synthetic";
  }
  return "synthetic";
}

SampleSource parse_sample_source(const std::string& s) {
  if (s == "labeled") return SampleSource::labeled;
  if (s == "unlabeled") return SampleSource::unlabeled;
  if (s == "mixed") return SampleSource::mixed;
  if (s == "synthetic") return SampleSource::synthetic;
  throw Error(ErrorCode::InvalidParam, "unknown sample source '" + s + "'");
}

void validate_sample(const VolumeSample& v, int classes) {
  if (!v.label) return;
  if (v.label->shape() != v.image.shape())
    throw Error(ErrorCode::ShapeMismatch,
                v.id + ": label " + v.label->shape().str() + " vs image " + v.image.shape().str());
  for (std::size_t i = 0; i < v.label->size(); ++i)
    if ((*v.label)[i] >= classes)
      throw Error(ErrorCode::InvalidLabel, v.id + ": label value " + std::to_string((*v.label)[i]));
}

void DatasetSplit::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto* list : {&labeled, &unlabeled, &validation})
    for (const auto& id : *list)
      if (!seen.insert(id).second) throw Error(ErrorCode::InvalidParam, "id '" + id + "' appears in two splits");
}

VolumeSample normalize_intensity(const VolumeSample& v) {
  const auto values = v.image.values();
  if (values.size() < 2) throw Error(ErrorCode::ConstantVolume, v.id + ": fewer than two voxels");
  double mean = 0.0;
  for (float x : values) mean += x;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (float x : values) var += (x - mean) * (x - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0) || sd < 1e-12 * std::max(1.0, std::abs(mean)))
    throw Error(ErrorCode::ConstantVolume, v.id + ": image has zero variance");

  VolumeSample out = v;
  auto dst = out.image.values();
  for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<float>((values[i] - mean) / sd);
  return out;
}

VolumeSample random_crop(const VolumeSample& v, Shape3 patch, std::mt19937_64& rng) {
  if (!patch.fits_in(v.shape()) || patch.h < 1 || patch.w < 1 || patch.d < 1)
    throw Error(ErrorCode::PatchTooLarge, "patch " + patch.str() + " from volume " + v.shape().str());
  std::array<int, 3> offset{};
  for (int axis = 0; axis < 3; ++axis) {
    std::uniform_int_distribution<int> pick(0, v.shape()[axis] - patch[axis]);
    offset[axis] = pick(rng);
  }
  VolumeSample out;
  out.id = v.id;
  out.source = v.source;
  out.image = extract_block(v.image, offset, patch);
  if (v.label) out.label = extract_block(*v.label, offset, patch);
  return out;
}

std::vector<int> window_offsets(int extent, int window, int stride) {
  if (window > extent || window < 1)
    throw Error(ErrorCode::PatchTooLarge, "window " + std::to_string(window) + " for extent " + std::to_string(extent));
  if (stride < 1) throw Error(ErrorCode::InvalidParam, "stride must be >= 1");
  std::vector<int> out;
  for (int pos = 0;; pos += stride) {
    if (pos + window >= extent) {
      out.push_back(extent - window);
      break;
    }
    out.push_back(pos);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ProbabilityVolume<float> sliding_window_predict(const Grid<float>& image, Shape3 window, Shape3 stride,
                                                const PatchInference& infer) {
  const Shape3 shape = image.shape();
  if (!window.fits_in(shape)) throw Error(ErrorCode::PatchTooLarge, "window " + window.str() + " over " + shape.str());
  const auto oi = window_offsets(shape.h, window.h, stride.h);
  const auto oj = window_offsets(shape.w, window.w, stride.w);
  const auto ok = window_offsets(shape.d, window.d, stride.d);

  std::vector<double> acc;
  int classes = 0;
  for (int i0 : oi)
    for (int j0 : oj)
      for (int k0 : ok) {
        const auto patch = extract_block(image, {i0, j0, k0}, window);
        const auto probs = infer(patch);
        if (probs.shape() != window)
          throw Error(ErrorCode::ShapeMismatch, "inference returned " + probs.shape().str() + " for " + window.str());
        if (classes == 0) {
          classes = probs.channels();
          acc.assign(static_cast<std::size_t>(classes) * shape.voxels(), 0.0);
        } else if (probs.channels() != classes) {
          throw Error(ErrorCode::ShapeMismatch, "inference changed class count");
        }
        for (int i = 0; i < window.h; ++i)
          for (int j = 0; j < window.w; ++j)
            for (int k = 0; k < window.d; ++k) {
              const std::size_t dst = shape.index(i + i0, j + j0, k + k0);
              const std::size_t src = window.index(i, j, k);
              for (int c = 0; c < classes; ++c) acc[static_cast<std::size_t>(c) * shape.voxels() + dst] += probs.at(c, src);
            }
      }

  ProbabilityVolume<float> out(classes, shape);
  for (std::size_t v = 0; v < shape.voxels(); ++v) {
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) sum += acc[static_cast<std::size_t>(c) * shape.voxels() + v];
    for (int c = 0; c < classes; ++c) {
      // The per-voxel window count cancels in the renormalization.
      const double mean = acc[static_cast<std::size_t>(c) * shape.voxels() + v];
      out.at(c, v) = static_cast<float>(sum > 0.0 ? mean / sum : 1.0 / classes);
    }
  }
  return out;
}

}  // namespace mpcl
