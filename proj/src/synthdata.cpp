#include "mpcl/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace mpcl {

const char* to_string(PhantomTask t) noexcept {
  return t == PhantomTask::ellipsoid ? "ellipsoid" : "nested_tubes";
}

PhantomTask parse_phantom_task(const std::string& s) {
  if (s == "ellipsoid") return PhantomTask::ellipsoid;
  if (s == "nested_tubes" || s == "tubes") return PhantomTask::nested_tubes;
  throw Error(ErrorCode::InvalidParam, "unknown phantom task '" + s + "'");
}

int task_classes(PhantomTask t) noexcept { return t == PhantomTask::ellipsoid ? 2 : 3; }

void PhantomSpec::validate() const {
  if (count < 1) throw Error(ErrorCode::InvalidParam, "count must be >= 1");
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::InvalidParam, "noise_std must be >= 0");
  if (volume_shape.h < 8 || volume_shape.w < 8 || volume_shape.d < 8)
    throw Error(ErrorCode::InvalidParam, "volume sides must be >= 8, got " + volume_shape.str());
}

float phantom_base_intensity(PhantomTask task, int c) noexcept {
  if (c == 0) return 0.0f;
  if (task == PhantomTask::ellipsoid) return 1.0f;
  return c == 1 ? 1.0f : 0.5f;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation(double a, double b, double c) {
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
               sc = std::sin(c);
  // Rz(a) * Ry(b) * Rx(c)
  return Mat3{{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
               {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
               {-sb, cb * sc, cb * cc}}};
}

LabelGrid ellipsoid_label(Shape3 s, Rng& rng) {
  const double scale = std::min({s.h, s.w, s.d}) / 32.0;
  std::array<double, 3> radius{};
  for (auto& r : radius) r = uniform(rng, 6.0, 11.0) * scale;
  const double rmax = *std::max_element(radius.begin(), radius.end());
  std::array<double, 3> center{};
  for (int a = 0; a < 3; ++a) {
    const double lo = std::min(rmax + 1.0, s[a] / 2.0), hi = std::max(s[a] - 1.0 - rmax, s[a] / 2.0);
    center[a] = uniform(rng, lo, hi);
  }
  const Mat3 R = rotation(uniform(rng, 0, 2 * std::numbers::pi), uniform(rng, 0, std::numbers::pi),
                          uniform(rng, 0, 2 * std::numbers::pi));
  LabelGrid label(s, 0);
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int k = 0; k < s.d; ++k) {
        const double p[3] = {i - center[0], j - center[1], k - center[2]};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double body = R[0][a] * p[0] + R[1][a] * p[1] + R[2][a] * p[2];
          q += (body / radius[a]) * (body / radius[a]);
        }
        if (q <= 1.0) label(i, j, k) = 1;
      }
  return label;
}

// Two parallel tubes running along the depth axis, following a shared sinusoidal centerline and
// separated by a background wall of 1-2 voxels.
LabelGrid tube_label(Shape3 s, Rng& rng) {
  const double scale = std::min(s.h, s.w) / 32.0;
  const double r_true = uniform(rng, 3.0, 4.5) * scale;
  const double r_false = uniform(rng, 4.0, 6.0) * scale;
  const double wall = uniform(rng, 1.0, 2.0);
  const double half_span = r_true + r_false + wall;
  const double amp_i = std::max(0.0, std::min(uniform(rng, 1.0, 4.0) * scale, s.h / 2.0 - half_span - 1.0));
  const double amp_j = std::max(0.0, std::min(uniform(rng, 1.0, 4.0) * scale, s.w / 2.0 - half_span - 1.0));
  const double freq_i = uniform(rng, 0.5, 1.5), freq_j = uniform(rng, 0.5, 1.5);
  const double phase_i = uniform(rng, 0, 2 * std::numbers::pi), phase_j = uniform(rng, 0, 2 * std::numbers::pi);
  const double theta0 = uniform(rng, 0, 2 * std::numbers::pi), twist = uniform(rng, -0.8, 0.8);

  LabelGrid label(s, 0);
  for (int k = 0; k < s.d; ++k) {
    const double t = static_cast<double>(k) / s.d;
    const double ci = s.h / 2.0 + amp_i * std::sin(2 * std::numbers::pi * freq_i * t + phase_i);
    const double cj = s.w / 2.0 + amp_j * std::sin(2 * std::numbers::pi * freq_j * t + phase_j);
    const double theta = theta0 + twist * t;
    const double ni = std::cos(theta), nj = std::sin(theta);
    const double ti = ci - ni * (r_true + wall / 2), tj = cj - nj * (r_true + wall / 2);
    const double fi = ci + ni * (r_false + wall / 2), fj = cj + nj * (r_false + wall / 2);
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) {
        if (std::hypot(i - ti, j - tj) <= r_true)
          label(i, j, k) = 1;
        else if (std::hypot(i - fi, j - fj) <= r_false)
          label(i, j, k) = 2;
      }
  }
  return label;
}

double foreground_fraction(const LabelGrid& label) {
  std::size_t fg = 0;
  for (auto v : label.values()) fg += v != 0;
  return static_cast<double>(fg) / static_cast<double>(label.size());
}

bool acceptable(const LabelGrid& label, PhantomTask task) {
  const double f = foreground_fraction(label);
  if (f < 0.02 || f > 0.40) return false;
  if (task == PhantomTask::nested_tubes) {
    bool has1 = false, has2 = false;
    for (auto v : label.values()) {
      has1 |= v == 1;
      has2 |= v == 2;
    }
    return has1 && has2;
  }
  return true;
}

}  // namespace

PhantomDataset generate(const PhantomSpec& spec) {
  spec.validate();
  PhantomDataset out;
  out.samples.reserve(static_cast<std::size_t>(spec.count));
  const int width = std::max(3, static_cast<int>(std::to_string(spec.count).size()));
  for (int n = 0; n < spec.count; ++n) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(spec.task)};
    Rng rng(seq);
    LabelGrid label;
    for (int attempt = 0;; ++attempt) {
      label = spec.task == PhantomTask::ellipsoid ? ellipsoid_label(spec.volume_shape, rng)
                                                  : tube_label(spec.volume_shape, rng);
      if (acceptable(label, spec.task)) break;
      if (attempt > 100) throw Error(ErrorCode::InvalidParam, "cannot place a phantom in " + spec.volume_shape.str());
    }
    Grid<float> image(spec.volume_shape);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t v = 0; v < image.size(); ++v) {
      const double eps = noise(rng);
      image[v] = phantom_base_intensity(spec.task, label[v]) + static_cast<float>(spec.noise_std * eps);
    }
    std::string id = std::to_string(n);
    id = std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(id.size(), width), '0') + id;
    VolumeSample sample;
    sample.id = std::string(to_string(spec.task)) + "_" + id;
    sample.image = std::move(image);
    sample.label = std::move(label);
    sample.source = SampleSource::synthetic;
    out.samples.push_back(std::move(sample));
  }
  out.split = make_split(out.samples, spec.labeled_fraction, spec.val_count, spec.seed);
  return out;
}

DatasetSplit make_split(const std::vector<VolumeSample>& samples, double labeled_fraction, int val_count,
                        std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw Error(ErrorCode::InvalidParam, "labeled_fraction must be in (0, 1]");
  if (val_count < 0 || val_count >= static_cast<int>(samples.size()))
    throw Error(ErrorCode::InvalidParam, "val_count must be in [0, count)");
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  Rng rng(seed ^ 0x5bd1e995ULL);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto train_count = ids.size() - static_cast<std::size_t>(val_count);
  const auto labeled = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(train_count)));
  if (labeled == 0) throw Error(ErrorCode::EmptySplit, "labeled fraction yields no labeled samples");

  DatasetSplit split;
  split.validation.assign(ids.begin(), ids.begin() + val_count);
  split.labeled.assign(ids.begin() + val_count, ids.begin() + val_count + static_cast<std::ptrdiff_t>(labeled));
  split.unlabeled.assign(ids.begin() + val_count + static_cast<std::ptrdiff_t>(labeled), ids.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.labeled.begin(), split.labeled.end());
  std::sort(split.unlabeled.begin(), split.unlabeled.end());
  return split;
}

}  // namespace mpcl
