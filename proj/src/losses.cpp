#include "mpcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mpcl {

namespace {

template <class T>
std::size_t check_pairs(std::span<const Field<T>> probs, std::span<const Field<T>> targets) {
  if (probs.size() != targets.size()) throw Error(ErrorCode::ShapeMismatch, "prediction and target batch sizes differ");
  if (probs.empty()) throw Error(ErrorCode::InvalidParam, "empty batch");
  std::size_t voxels = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (!probs[a].same_layout(targets[a]) || probs[a].channels() != probs[0].channels())
      throw Error(ErrorCode::ShapeMismatch, "prediction/target layout mismatch in batch item " + std::to_string(a));
    voxels += probs[a].voxels();
  }
  return voxels;
}

template <class T>
std::vector<Field<T>> zero_like(std::span<const Field<T>> probs) {
  std::vector<Field<T>> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.emplace_back(p.channels(), p.shape());
  return out;
}

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }
// d/dp of safe_log(p).
double safe_log_grad(double p) { return p > kProbFloor ? 1.0 / p : 0.0; }

}  // namespace

template <class T>
std::vector<Field<T>> one_hot_batch(std::span<const LabelGrid> labels, int classes) {
  std::vector<Field<T>> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(one_hot<T>(l, classes));
  return out;
}

template <class T>
LossValue<T> cross_entropy_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets) {
  const double n = static_cast<double>(check_pairs(probs, targets));
  LossValue<T> out{0.0, zero_like(probs)};
  double sum = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const auto p = probs[a].values();
    const auto t = targets[a].values();
    auto g = out.grad[a].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (t[i] == T(0)) continue;
      sum -= t[i] * safe_log(p[i]);
      g[i] = static_cast<T>(-t[i] * safe_log_grad(p[i]) / n);
    }
  }
  out.value = sum / n;
  return out;
}

template <class T>
LossValue<T> focal_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double gamma) {
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidParam, "focal gamma must be >= 0");
  const double n = static_cast<double>(check_pairs(probs, targets));
  LossValue<T> out{0.0, zero_like(probs)};
  double sum = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    const auto p = probs[a].values();
    const auto t = targets[a].values();
    auto g = out.grad[a].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (t[i] == T(0)) continue;
      const double pi = p[i];
      const double q = std::max(1.0 - pi, 0.0);
      const double mod = std::pow(q, gamma);
      const double lg = safe_log(pi);
      sum -= t[i] * mod * lg;
      const double dmod = (gamma == 0.0 || q == 0.0) ? 0.0 : -gamma * std::pow(q, gamma - 1.0);
      g[i] = static_cast<T>(-t[i] * (dmod * lg + mod * safe_log_grad(pi)) / n);
    }
  }
  out.value = sum / n;
  return out;
}

namespace {

// Per-class pooled sums over the batch: intersection, prediction mass, target mass.
template <class T>
void overlap_sums(std::span<const Field<T>> probs, std::span<const Field<T>> targets, std::vector<double>& inter,
                  std::vector<double>& psum, std::vector<double>& tsum) {
  const int classes = probs[0].channels();
  inter.assign(static_cast<std::size_t>(classes), 0.0);
  psum = inter;
  tsum = inter;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    for (int c = 0; c < classes; ++c) {
      const auto p = probs[a].channel(c);
      const auto t = targets[a].channel(c);
      double i0 = 0, p0 = 0, t0 = 0;
      for (std::size_t v = 0; v < p.size(); ++v) {
        i0 += static_cast<double>(p[v]) * t[v];
        p0 += p[v];
        t0 += t[v];
      }
      inter[static_cast<std::size_t>(c)] += i0;
      psum[static_cast<std::size_t>(c)] += p0;
      tsum[static_cast<std::size_t>(c)] += t0;
    }
  }
}

int first_scored_class(int classes) { return classes > 1 ? 1 : 0; }

}  // namespace

template <class T>
LossValue<T> dice_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double epsilon) {
  check_pairs(probs, targets);
  const int classes = probs[0].channels();
  std::vector<double> inter, psum, tsum;
  overlap_sums(probs, targets, inter, psum, tsum);
  LossValue<T> out{0.0, zero_like(probs)};
  const int c0 = first_scored_class(classes);
  const double scored = classes - c0;
  for (int c = c0; c < classes; ++c) {
    const auto C = static_cast<std::size_t>(c);
    const double num = 2.0 * inter[C] + epsilon;
    const double den = psum[C] + tsum[C] + epsilon;
    out.value += (1.0 - num / den) / scored;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      const auto t = targets[a].channel(c);
      auto g = out.grad[a].channel(c);
      for (std::size_t v = 0; v < t.size(); ++v)
        g[v] = static_cast<T>(-(2.0 * t[v] * den - num) / (den * den) / scored);
    }
  }
  return out;
}

template <class T>
LossValue<T> iou_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double epsilon) {
  check_pairs(probs, targets);
  const int classes = probs[0].channels();
  std::vector<double> inter, psum, tsum;
  overlap_sums(probs, targets, inter, psum, tsum);
  LossValue<T> out{0.0, zero_like(probs)};
  const int c0 = first_scored_class(classes);
  const double scored = classes - c0;
  for (int c = c0; c < classes; ++c) {
    const auto C = static_cast<std::size_t>(c);
    const double num = inter[C] + epsilon;
    const double den = psum[C] + tsum[C] - inter[C] + epsilon;
    out.value += (1.0 - num / den) / scored;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      const auto t = targets[a].channel(c);
      auto g = out.grad[a].channel(c);
      for (std::size_t v = 0; v < t.size(); ++v)
        g[v] = static_cast<T>(-(t[v] * den - num * (1.0 - t[v])) / (den * den) / scored);
    }
  }
  return out;
}

template <class T>
SupervisedResult<T> supervised_loss(std::span<const NetworkOutputs<T>> outputs, std::span<const Field<T>> targets,
                                    const SupervisedSettings& settings) {
  if (outputs.size() != targets.size()) throw Error(ErrorCode::ShapeMismatch, "outputs and targets differ in batch size");
  const std::size_t batch = outputs.size();
  std::vector<std::vector<Field<T>>> heads(kHeadCount);
  std::vector<Field<T>> means;
  for (const auto& o : outputs) {
    if (static_cast<int>(o.head_probs.size()) != kHeadCount)
      throw Error(ErrorCode::ShapeMismatch, "expected four prediction heads");
    for (int h = 0; h < kHeadCount; ++h) heads[static_cast<std::size_t>(h)].push_back(o.head_probs[static_cast<std::size_t>(h)]);
    means.push_back(o.mean_probs);
  }
  auto ce = cross_entropy_loss<T>(heads[0], targets);
  auto dice = dice_loss<T>(heads[1], targets, settings.epsilon);
  auto focal = focal_loss<T>(heads[2], targets, settings.focal_gamma);
  auto iou = iou_loss<T>(heads[3], targets, settings.epsilon);
  auto fused = cross_entropy_loss<T>(means, targets);

  SupervisedResult<T> out;
  out.terms = {ce.value, dice.value, focal.value, iou.value, fused.value, 0.0};
  out.terms.seg = (ce.value + dice.value + focal.value + iou.value) / 4.0 + fused.value;
  out.grads.resize(batch);
  LossValue<T>* parts[kHeadCount] = {&ce, &dice, &focal, &iou};
  for (std::size_t a = 0; a < batch; ++a) {
    auto& g = out.grads[a];
    g.head_probs.resize(kHeadCount);
    for (int h = 0; h < kHeadCount; ++h) {
      auto& src = parts[h]->grad[a];
      for (auto& x : src.values()) x = static_cast<T>(x * 0.25);
      g.head_probs[static_cast<std::size_t>(h)] = std::move(src);
    }
    g.mean_probs = std::move(fused.grad[a]);
  }
  return out;
}

const char* to_string(ConsistencyKind k) noexcept {
  switch (k) {
    case ConsistencyKind::ce: return "ce";
    case ConsistencyKind::kl: return "kl";
    case ConsistencyKind::mse: return "mse";
    case ConsistencyKind::mae: return "mae";
  }
  return "ce";
}

ConsistencyKind parse_consistency_kind(const std::string& s) {
  if (s == "ce") return ConsistencyKind::ce;
  if (s == "kl") return ConsistencyKind::kl;
  if (s == "mse") return ConsistencyKind::mse;
  if (s == "mae") return ConsistencyKind::mae;
  throw Error(ErrorCode::InvalidParam, "unknown consistency kind '" + s + "' (ce, kl, mse, mae)");
}

template <class T>
LossValue<T> consistency_loss(std::span<const Field<T>> sim, std::span<const Field<T>> targets, ConsistencyKind kind) {
  if (kind == ConsistencyKind::ce) return cross_entropy_loss<T>(sim, targets);
  const double n = static_cast<double>(check_pairs(sim, targets));
  LossValue<T> out{0.0, zero_like(sim)};
  const double norm = kind == ConsistencyKind::kl ? n : n * sim[0].channels();
  double sum = 0.0;
  for (std::size_t a = 0; a < sim.size(); ++a) {
    const auto s = sim[a].values();
    const auto t = targets[a].values();
    auto g = out.grad[a].values();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double d = static_cast<double>(s[i]) - t[i];
      switch (kind) {
        case ConsistencyKind::kl:
          if (t[i] > T(0)) {
            sum += t[i] * (safe_log(t[i]) - safe_log(s[i]));
            g[i] = static_cast<T>(-t[i] * safe_log_grad(s[i]) / norm);
          }
          break;
        case ConsistencyKind::mse:
          sum += d * d;
          g[i] = static_cast<T>(2.0 * d / norm);
          break;
        case ConsistencyKind::mae:
          sum += std::abs(d);
          g[i] = static_cast<T>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / norm);
          break;
        case ConsistencyKind::ce: break;
      }
    }
  }
  // KL can dip a hair below zero when rounded; it is nonnegative mathematically.
  out.value = std::max(sum / norm, 0.0);
  return out;
}

bool LossBundle::all_finite() const noexcept {
  for (double x : columns())
    if (!std::isfinite(x)) return false;
  return true;
}

bool LossBundle::consistent(double tol) const noexcept {
  return std::abs(l_seg_l - ((l_ce + l_dice + l_focal + l_iou) / 4.0 + l_fused)) <= tol &&
         std::abs(l_seg - (l_seg_l + l_seg_m)) <= tol && std::abs(total - (l_seg + l_lc + lambda_con * l_uc)) <= tol;
}

std::vector<std::string> LossBundle::column_names() {
  return {"l_ce", "l_dice", "l_focal", "l_iou", "l_fused", "l_seg_l", "l_seg_m", "l_seg", "l_lc", "l_uc", "lambda_con", "total"};
}

std::vector<double> LossBundle::columns() const {
  return {l_ce, l_dice, l_focal, l_iou, l_fused, l_seg_l, l_seg_m, l_seg, l_lc, l_uc, lambda_con, total};
}

std::string LossBundle::str() const {
  std::ostringstream os;
  os.precision(9);
  const auto names = column_names();
  const auto vals = columns();
  for (std::size_t i = 0; i < names.size(); ++i) os << (i ? " " : "") << names[i] << "=" << vals[i];
  return os.str();
}

LossBundle total_loss(const SupervisedTerms& labeled, double seg_m, double l_lc, double l_uc, double lambda_con) {
  if (!(lambda_con >= 0.0 && lambda_con <= 1.0)) throw Error(ErrorCode::InvalidParam, "lambda_con must be in [0,1]");
  LossBundle b;
  b.l_ce = labeled.ce;
  b.l_dice = labeled.dice;
  b.l_focal = labeled.focal;
  b.l_iou = labeled.iou;
  b.l_fused = labeled.fused;
  b.l_seg_l = (labeled.ce + labeled.dice + labeled.focal + labeled.iou) / 4.0 + labeled.fused;
  b.l_seg_m = seg_m;
  b.l_seg = b.l_seg_l + seg_m;
  b.l_lc = l_lc;
  b.l_uc = l_uc;
  b.lambda_con = lambda_con;
  b.total = b.l_seg + l_lc + lambda_con * l_uc;
  return b;
}

#define MPCL_INSTANTIATE_LOSSES(T)                                                                                   \
  template std::vector<Field<T>> one_hot_batch<T>(std::span<const LabelGrid>, int);                                  \
  template LossValue<T> cross_entropy_loss<T>(std::span<const Field<T>>, std::span<const Field<T>>);                 \
  template LossValue<T> focal_loss<T>(std::span<const Field<T>>, std::span<const Field<T>>, double);                 \
  template LossValue<T> dice_loss<T>(std::span<const Field<T>>, std::span<const Field<T>>, double);                  \
  template LossValue<T> iou_loss<T>(std::span<const Field<T>>, std::span<const Field<T>>, double);                   \
  template SupervisedResult<T> supervised_loss<T>(std::span<const NetworkOutputs<T>>, std::span<const Field<T>>,      \
                                                  const SupervisedSettings&);                                        \
  template LossValue<T> consistency_loss<T>(std::span<const Field<T>>, std::span<const Field<T>>, ConsistencyKind);

MPCL_INSTANTIATE_LOSSES(float)
MPCL_INSTANTIATE_LOSSES(double)

}  // namespace mpcl
