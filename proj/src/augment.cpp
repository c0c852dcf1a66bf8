#include "mpcl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mpcl {

const char* to_string(MixKind k) noexcept {
  switch (k) {
    case MixKind::cutmix: return "cutmix";
    case MixKind::cutout: return "cutout";
    case MixKind::fmix: return "fmix";
    case MixKind::full: return "full";
  }
  return "cutmix";
}

MixMask MixMask::filled(Shape3 shape, bool ones, MixKind kind) {
  MixMask m{Grid<std::uint8_t>(shape, ones ? 1 : 0), kind, ones ? 1.0 : 0.0};
  return m;
}

void MixMask::refresh_fraction() {
  std::size_t on = 0;
  for (auto v : mask.values()) on += v != 0;
  fraction = mask.empty() ? 0.0 : static_cast<double>(on) / static_cast<double>(mask.size());
}

void CuboidLaw::validate() const {
  if (!(cut_min > 0.0 && cut_min <= cut_max && cut_max <= 1.0))
    throw Error(ErrorCode::InvalidParam, "cuboid law requires 0 < cut_min <= cut_max <= 1");
}

MixMask random_cuboid_mask(Shape3 shape, const CuboidLaw& law, std::mt19937_64& rng, MixKind kind) {
  law.validate();
  int side[3], start[3];
  for (int a = 0; a < 3; ++a) {
    const int n = shape[a];
    const int lo = std::max(1, static_cast<int>(std::ceil(law.cut_min * n - 1e-9)));
    const int hi = std::max(lo, static_cast<int>(std::floor(law.cut_max * n + 1e-9)));
    side[a] = std::uniform_int_distribution<int>(lo, hi)(rng);
    start[a] = std::uniform_int_distribution<int>(0, n - side[a])(rng);
  }
  MixMask m = MixMask::filled(shape, false, kind);
  for (int i = start[0]; i < start[0] + side[0]; ++i)
    for (int j = start[1]; j < start[1] + side[1]; ++j)
      for (int k = start[2]; k < start[2] + side[2]; ++k) m.mask(i, j, k) = 1;
  m.refresh_fraction();
  return m;
}

namespace {
void require_same_shape(const VolumeSample& a, const VolumeSample& b) {
  if (a.shape() != b.shape())
    throw Error(ErrorCode::ShapeMismatch, a.id + " " + a.shape().str() + " vs " + b.id + " " + b.shape().str());
}
void require_label(const VolumeSample& a) {
  if (!a.label) throw Error(ErrorCode::InvalidParam, a.id + " has no label");
}
}  // namespace

VolumeSample mix_with_mask(const VolumeSample& a, const VolumeSample& b, const MixMask& mask) {
  require_same_shape(a, b);
  if (mask.mask.shape() != a.shape()) throw Error(ErrorCode::ShapeMismatch, "mask shape " + mask.mask.shape().str());
  VolumeSample out;
  out.id = a.id + "+" + b.id;
  out.source = SampleSource::mixed;
  out.image = Grid<float>(a.shape());
  for (std::size_t v = 0; v < out.image.size(); ++v) out.image[v] = mask.mask[v] ? a.image[v] : b.image[v];
  if (a.label && b.label) {
    LabelGrid label(a.shape());
    for (std::size_t v = 0; v < label.size(); ++v) label[v] = mask.mask[v] ? (*a.label)[v] : (*b.label)[v];
    out.label = std::move(label);
  }
  return out;
}

MixedPair cutmix_pair(const VolumeSample& a, const VolumeSample& b, std::mt19937_64& rng, const CuboidLaw& law) {
  require_same_shape(a, b);
  require_label(a);
  require_label(b);
  MixMask mask = random_cuboid_mask(a.shape(), law, rng, MixKind::cutmix);
  VolumeSample mixed = mix_with_mask(a, b, mask);
  return {std::move(mixed), std::move(mask)};
}

SoftMixed mixup_with_lambda(const VolumeSample& a, const VolumeSample& b, double lambda, int classes) {
  require_same_shape(a, b);
  require_label(a);
  require_label(b);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidParam, "mixup lambda must be in [0,1]");
  SoftMixed out;
  out.lambda = lambda;
  out.mixed.id = a.id + "+" + b.id;
  out.mixed.source = SampleSource::mixed;
  out.mixed.image = Grid<float>(a.shape());
  for (std::size_t v = 0; v < a.image.size(); ++v)
    out.mixed.image[v] = static_cast<float>(lambda * a.image[v] + (1.0 - lambda) * b.image[v]);
  const auto ha = one_hot<float>(*a.label, classes);
  const auto hb = one_hot<float>(*b.label, classes);
  out.soft_label = ProbabilityVolume<float>(classes, a.shape());
  for (std::size_t i = 0; i < ha.size(); ++i)
    out.soft_label.values()[i] = static_cast<float>(lambda * ha.values()[i] + (1.0 - lambda) * hb.values()[i]);
  out.mixed.label = argmax_labels(out.soft_label);
  return out;
}

double sample_beta(double alpha, double beta, std::mt19937_64& rng) {
  const double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
  const double y = std::gamma_distribution<double>(beta, 1.0)(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

SoftMixed mixup_pair(const VolumeSample& a, const VolumeSample& b, double alpha, int classes, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidParam, "mixup alpha must be > 0");
  return mixup_with_lambda(a, b, sample_beta(alpha, alpha, rng), classes);
}

VolumeSample cutout_with_mask(const VolumeSample& a, const MixMask& mask) {
  if (mask.mask.shape() != a.shape()) throw Error(ErrorCode::ShapeMismatch, "mask shape " + mask.mask.shape().str());
  VolumeSample out = a;
  out.source = SampleSource::mixed;
  for (std::size_t v = 0; v < out.image.size(); ++v)
    if (mask.mask[v]) out.image[v] = 0.0f;
  return out;
}

VolumeSample cutout(const VolumeSample& a, std::mt19937_64& rng, const CuboidLaw& law) {
  return cutout_with_mask(a, random_cuboid_mask(a.shape(), law, rng, MixKind::cutout));
}

MixMask median_threshold_mask(const Grid<float>& field) {
  const std::size_t n = field.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = n / 2;
  // Descending by value; equal values keep voxel order.
  auto greater = [&](std::size_t x, std::size_t y) {
    return field[x] != field[y] ? field[x] > field[y] : x < y;
  };
  if (take > 0) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take - 1), order.end(), greater);
  MixMask m = MixMask::filled(field.shape(), false, MixKind::fmix);
  for (std::size_t i = 0; i < take; ++i) m.mask[order[i]] = 1;
  m.refresh_fraction();
  return m;
}

namespace {

void blur_axis(Grid<float>& g, int axis, const std::vector<double>& kernel) {
  const Shape3 s = g.shape();
  const int radius = static_cast<int>(kernel.size() / 2);
  const int n = s[axis];
  Grid<float> out(s);
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int k = 0; k < s.d; ++k) {
        int pos[3] = {i, j, k};
        const int centre = pos[axis];
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          int q = centre + t;
          // Periodic boundary keeps the field statistically stationary.
          q = ((q % n) + n) % n;
          pos[axis] = q;
          acc += kernel[static_cast<std::size_t>(t + radius)] * g(pos[0], pos[1], pos[2]);
        }
        out(i, j, k) = static_cast<float>(acc);
      }
  g = std::move(out);
}

}  // namespace

MixMask fmix_mask(Shape3 shape, std::mt19937_64& rng, double sigma_fraction) {
  Grid<float> field(shape);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t v = 0; v < field.size(); ++v) field[v] = static_cast<float>(noise(rng));
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma = std::max(0.5, sigma_fraction * shape[axis]);
    const int radius = std::min(static_cast<int>(std::ceil(3 * sigma)), shape[axis] / 2);
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int t = -radius; t <= radius; ++t) total += kernel[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
    for (double& w : kernel) w /= total;
    blur_axis(field, axis, kernel);
  }
  return median_threshold_mask(field);
}

MixedPair fmix_pair(const VolumeSample& a, const VolumeSample& b, std::mt19937_64& rng) {
  require_same_shape(a, b);
  require_label(a);
  require_label(b);
  MixMask mask = fmix_mask(a.shape(), rng);
  VolumeSample mixed = mix_with_mask(a, b, mask);
  return {std::move(mixed), std::move(mask)};
}

}  // namespace mpcl
