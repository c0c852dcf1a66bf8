#include "mpcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <json.hpp>
#include <ostream>
#include <sstream>

namespace mpcl {

Overlap dice_jaccard(const Mask& pred, const Mask& ref) {
  if (pred.shape() != ref.shape()) throw Error(ErrorCode::ShapeMismatch, "mask shapes differ");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, r = ref[i] != 0;
    a += p;
    b += r;
    both += p && r;
  }
  if (a == 0 && b == 0) return {1.0, 1.0};
  if (a == 0 || b == 0) return {0.0, 0.0};
  const double inter = static_cast<double>(both);
  return {2.0 * inter / static_cast<double>(a + b), inter / static_cast<double>(a + b - both)};
}

std::vector<std::size_t> surface_voxels(const Mask& mask) {
  const Shape3 s = mask.shape();
  std::vector<std::size_t> out;
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j)
      for (int k = 0; k < s.d; ++k) {
        if (!mask(i, j, k)) continue;
        const bool border = i == 0 || j == 0 || k == 0 || i == s.h - 1 || j == s.w - 1 || k == s.d - 1;
        if (border || !mask(i - 1, j, k) || !mask(i + 1, j, k) || !mask(i, j - 1, k) || !mask(i, j + 1, k) ||
            !mask(i, j, k - 1) || !mask(i, j, k + 1))
          out.push_back(s.index(i, j, k));
      }
  return out;
}

namespace {

constexpr double kFar = std::numeric_limits<double>::max() / 4;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line, in place.
void edt_line(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  int first = -1;
  for (int q = 0; q < n; ++q)
    if (f[static_cast<std::size_t>(q)] < kFar) {
      first = q;
      break;
    }
  if (first < 0) return;  // nothing on this line
  v[0] = first;
  for (int q = first + 1; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] >= kFar) continue;
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) - (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double dq = q - p;
    d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(p)];
  }
  f.swap(d);
}

// Exact squared Euclidean distance to the nearest seed voxel; all values are integers held in doubles.
Grid<double> squared_distance_transform(const Shape3& s, const std::vector<std::size_t>& seeds) {
  Grid<double> g(s, kFar);
  for (auto i : seeds) g[i] = 0.0;
  const int n = std::max({s.h, s.w, s.d});
  std::vector<double> f, d(static_cast<std::size_t>(n));
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  auto pass = [&](int len, auto&& at) {
    f.resize(static_cast<std::size_t>(len));
    d.resize(static_cast<std::size_t>(len));
    for (int q = 0; q < len; ++q) f[static_cast<std::size_t>(q)] = at(q);
    edt_line(f, d, v, z);
    for (int q = 0; q < len; ++q) at(q) = f[static_cast<std::size_t>(q)];
  };
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j) pass(s.d, [&](int k) -> double& { return g(i, j, k); });
  for (int i = 0; i < s.h; ++i)
    for (int k = 0; k < s.d; ++k) pass(s.w, [&](int j) -> double& { return g(i, j, k); });
  for (int j = 0; j < s.w; ++j)
    for (int k = 0; k < s.d; ++k) pass(s.h, [&](int i) -> double& { return g(i, j, k); });
  return g;
}

bool any(const Mask& m) {
  return std::any_of(m.values().begin(), m.values().end(), [](std::uint8_t x) { return x != 0; });
}

}  // namespace

std::vector<double> directed_surface_distances(const Mask& from, const Mask& to) {
  if (from.shape() != to.shape()) throw Error(ErrorCode::ShapeMismatch, "mask shapes differ");
  if (!any(from) || !any(to)) throw Error(ErrorCode::EmptyMask, "surface distance needs two nonempty masks");
  const auto src = surface_voxels(from);
  const auto dst = surface_voxels(to);
  const auto sq = squared_distance_transform(to.shape(), dst);
  std::vector<double> out;
  out.reserve(src.size());
  for (auto i : src) out.push_back(std::sqrt(sq[i]));
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidParam, "percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidParam, "percentile rank must be in [0,1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const Mask& pred, const Mask& ref) {
  const auto ab = directed_surface_distances(pred, ref);
  const auto ba = directed_surface_distances(ref, pred);
  SurfaceDistances out;
  out.hd95 = std::max(percentile(ab, 0.95), percentile(ba, 0.95));
  double sum = 0.0;
  for (double x : ab) sum += x;
  for (double x : ba) sum += x;
  out.asd = sum / static_cast<double>(ab.size() + ba.size());
  return out;
}

Mask class_mask(const LabelGrid& labels, int c) {
  Mask m(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == c;
  return m;
}

namespace {

void accumulate_mean(const std::vector<ClassMetrics>& items, ClassMetrics& out) {
  out = {};
  if (items.empty()) return;
  double hd = 0.0, as = 0.0;
  int nd = 0, na = 0;
  for (const auto& m : items) {
    out.dice += m.dice;
    out.jaccard += m.jaccard;
    if (m.hd95) hd += *m.hd95, ++nd;
    if (m.asd) as += *m.asd, ++na;
  }
  out.dice /= static_cast<double>(items.size());
  out.jaccard /= static_cast<double>(items.size());
  if (nd) out.hd95 = hd / nd;
  if (na) out.asd = as / na;
}

}  // namespace

MetricReport evaluate_labels(const LabelGrid& pred, const LabelGrid& ref, int classes, const std::string& id) {
  if (pred.shape() != ref.shape()) throw Error(ErrorCode::ShapeMismatch, "prediction and reference shapes differ");
  if (classes < 2) throw Error(ErrorCode::InvalidParam, "need at least two classes");
  MetricReport r;
  r.id = id;
  for (int c = 1; c < classes; ++c) {
    const auto p = class_mask(pred, c);
    const auto q = class_mask(ref, c);
    ClassMetrics m;
    const auto o = dice_jaccard(p, q);
    m.dice = o.dice;
    m.jaccard = o.jaccard;
    try {
      const auto s = surface_distances(p, q);
      m.hd95 = s.hd95;
      m.asd = s.asd;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyMask) throw;
    }
    r.classes.push_back(c);
    r.per_class.push_back(m);
  }
  accumulate_mean(r.per_class, r.mean);
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports, const std::string& id) {
  MetricReport out;
  out.id = id;
  if (reports.empty()) return out;
  out.classes = reports.front().classes;
  for (std::size_t k = 0; k < out.classes.size(); ++k) {
    std::vector<ClassMetrics> items;
    for (const auto& r : reports) {
      if (r.classes != out.classes) throw Error(ErrorCode::ShapeMismatch, "reports cover different classes");
      items.push_back(r.per_class[k]);
    }
    ClassMetrics m;
    accumulate_mean(items, m);
    out.per_class.push_back(m);
  }
  std::vector<ClassMetrics> means;
  for (const auto& r : reports) means.push_back(r.mean);
  accumulate_mean(means, out.mean);
  return out;
}

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}
std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

void write_row(std::ostream& os, const std::string& id, const std::string& cls, const ClassMetrics& m) {
  os << id << ',' << cls << ',' << fmt(m.dice) << ',' << fmt(m.jaccard) << ',' << fmt(m.hd95) << ',' << fmt(m.asd)
     << '\n';
}

nlohmann::json to_json(const ClassMetrics& m) {
  nlohmann::json j;
  j["dice"] = m.dice;
  j["jaccard"] = m.jaccard;
  j["hd95"] = m.hd95 ? nlohmann::json(*m.hd95) : nlohmann::json(nullptr);
  j["asd"] = m.asd ? nlohmann::json(*m.asd) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  nlohmann::json pc = nlohmann::json::object();
  for (std::size_t k = 0; k < r.classes.size(); ++k) pc[std::to_string(r.classes[k])] = to_json(r.per_class[k]);
  j["per_class"] = pc;
  j["mean"] = to_json(r.mean);
  return j;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << kMetricsCsvVersion << '\n' << "id,class,dice,jaccard,hd95,asd\n";
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.classes.size(); ++k) write_row(os, r.id, std::to_string(r.classes[k]), r.per_class[k]);
    if (r.classes.size() > 1) write_row(os, r.id, "mean", r.mean);
  }
}

std::vector<MetricReport> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsCsvVersion)
    throw Error(ErrorCode::Io, "metrics CSV lacks the '" + std::string(kMetricsCsvVersion) + "' header");
  std::getline(is, line);  // column names
  std::vector<MetricReport> out;
  std::vector<bool> has_mean;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 6) cells.emplace_back();
    ClassMetrics m;
    m.dice = std::stod(cells[2]);
    m.jaccard = std::stod(cells[3]);
    if (!cells[4].empty()) m.hd95 = std::stod(cells[4]);
    if (!cells[5].empty()) m.asd = std::stod(cells[5]);
    if (out.empty() || out.back().id != cells[0]) {
      out.emplace_back();
      out.back().id = cells[0];
      has_mean.push_back(false);
    }
    if (cells[1] == "mean") {
      out.back().mean = m;
      has_mean.back() = true;
    } else {
      out.back().classes.push_back(std::stoi(cells[1]));
      out.back().per_class.push_back(m);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!has_mean[i]) accumulate_mean(out[i].per_class, out[i].mean);
  return out;
}

std::string metrics_json(const std::vector<MetricReport>& reports) {
  nlohmann::json j;
  j["volumes"] = nlohmann::json::array();
  for (const auto& r : reports) j["volumes"].push_back(to_json(r));
  j["aggregate"] = to_json(aggregate_reports(reports));
  return j.dump(2);
}

}  // namespace mpcl
