// Brute-force reference implementations and random-input helpers shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "mpcl/metrics.hpp"
#include "mpcl/prototypes.hpp"
#include "mpcl/uncertainty.hpp"

namespace oracle {

using mpcl::Field;
using mpcl::Grid;
using mpcl::LabelGrid;
using mpcl::Shape3;

inline Field<double> random_field(int channels, Shape3 s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Field<double> f(channels, s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : f.values()) x = u(rng);
  return f;
}

inline LabelGrid random_labels(Shape3 s, int classes, std::mt19937_64& rng) {
  LabelGrid g(s);
  std::uniform_int_distribution<int> u(0, classes - 1);
  for (auto& x : g.values()) x = static_cast<std::uint8_t>(u(rng));
  return g;
}

/// Random probability volume; `sharpness` scales the logits.
inline Field<double> random_probs(int classes, Shape3 s, std::mt19937_64& rng, double sharpness = 3.0) {
  Field<double> p(classes, s);
  std::normal_distribution<double> n(0.0, sharpness);
  for (std::size_t v = 0; v < s.voxels(); ++v) {
    double total = 0.0;
    std::vector<double> e(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) total += e[static_cast<std::size_t>(c)] = std::exp(n(rng));
    for (int c = 0; c < classes; ++c) p.at(c, v) = e[static_cast<std::size_t>(c)] / total;
  }
  return p;
}

/// Literal triple loop over samples, classes, voxels and channels. `weights` may be empty.
inline std::vector<std::optional<std::vector<double>>> prototype_loop(const std::vector<Field<double>>& f,
                                                                      const std::vector<LabelGrid>& y,
                                                                      const std::vector<Grid<double>>& weights,
                                                                      int classes) {
  std::vector<std::optional<std::vector<double>>> out(static_cast<std::size_t>(classes));
  const int dim = f.empty() ? 0 : f[0].channels();
  for (int c = 0; c < classes; ++c) {
    std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
    int contributing = 0;
    for (std::size_t a = 0; a < f.size(); ++a) {
      double count = 0.0;
      std::vector<double> s(static_cast<std::size_t>(dim), 0.0);
      for (std::size_t p = 0; p < y[a].size(); ++p) {
        if (y[a][p] != c) continue;
        count += 1.0;
        const double w = weights.empty() ? 1.0 : weights[a][p];
        for (int e = 0; e < dim; ++e) s[static_cast<std::size_t>(e)] += w * f[a].at(e, p);
      }
      if (count == 0.0) continue;
      ++contributing;
      for (int e = 0; e < dim; ++e) acc[static_cast<std::size_t>(e)] += s[static_cast<std::size_t>(e)] / count;
    }
    if (contributing == 0) continue;
    for (auto& x : acc) x /= contributing;
    out[static_cast<std::size_t>(c)] = acc;
  }
  return out;
}

/// Voxels with a 6-neighbour outside the mask, by explicit neighbour enumeration.
inline std::vector<std::array<int, 3>> surface_points(const mpcl::Mask& m) {
  const Shape3 s = m.shape();
  std::vector<std::array<int, 3>> out;
  const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int k = 0; k < s.d; ++k) {
        if (!m(i, j, k)) continue;
        bool surf = false;
        for (const auto& o : off) {
          const int a = i + o[0], b = j + o[1], c = k + o[2];
          if (a < 0 || b < 0 || c < 0 || a >= s.h || b >= s.w || c >= s.d || !m(a, b, c)) surf = true;
        }
        if (surf) out.push_back({i, j, k});
      }
  return out;
}

/// All-pairs nearest distances from each surface point of `a` to the surface of `b`.
inline std::vector<double> directed_all_pairs(const mpcl::Mask& a, const mpcl::Mask& b) {
  const auto pa = surface_points(a);
  const auto pb = surface_points(b);
  std::vector<double> out;
  for (const auto& p : pa) {
    long best = std::numeric_limits<long>::max();
    for (const auto& q : pb) {
      const long dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
  return out;
}

/// numpy-style linear percentile, computed independently of the library routine.
inline double linear_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const double lo = std::floor(pos);
  const double hi = std::ceil(pos);
  return v[static_cast<std::size_t>(lo)] * (hi - pos) + v[static_cast<std::size_t>(hi)] * (pos - lo) +
         (lo == hi ? v[static_cast<std::size_t>(lo)] : 0.0);
}

struct BruteSurface {
  double hd95;
  double asd;
};

inline BruteSurface surface_brute(const mpcl::Mask& a, const mpcl::Mask& b) {
  const auto ab = directed_all_pairs(a, b);
  const auto ba = directed_all_pairs(b, a);
  double sum = 0.0;
  for (double x : ab) sum += x;
  for (double x : ba) sum += x;
  return {std::max(linear_percentile(ab, 0.95), linear_percentile(ba, 0.95)),
          sum / static_cast<double>(ab.size() + ba.size())};
}

inline mpcl::Mask random_blob_mask(Shape3 s, std::mt19937_64& rng, double density) {
  mpcl::Mask m(s);
  std::bernoulli_distribution b(density);
  for (auto& x : m.values()) x = b(rng);
  return m;
}

/// Central-difference derivative of f at x along coordinate i.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero derivatives from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
