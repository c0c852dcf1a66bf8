#include "mpcl/prototypes.hpp"

#include <cmath>

namespace mpcl {

const char* to_string(PrototypeSource s) noexcept {
  switch (s) {
    case PrototypeSource::labeled: return "labeled";
    case PrototypeSource::unlabeled: return "unlabeled";
    case PrototypeSource::mixed: return "mixed";
    case PrototypeSource::labeled_fused: return "labeled_fused";
    case PrototypeSource::unlabeled_fused: return "unlabeled_fused";
    case PrototypeSource::global: return "global";
  }
  return "global";
}

template <class T>
int PrototypeSet<T>::present_count() const noexcept {
  int n = 0;
  for (const auto& v : vectors) n += v.has_value();
  return n;
}

namespace {

template <class T>
void check_batch(std::span<const Field<T>> features, std::span<const LabelGrid> masks) {
  if (features.size() != masks.size()) throw Error(ErrorCode::ShapeMismatch, "features and masks differ in batch size");
  for (std::size_t a = 0; a < features.size(); ++a) {
    if (features[a].shape() != masks[a].shape())
      throw Error(ErrorCode::ShapeMismatch,
                  "features " + features[a].shape().str() + " vs mask " + masks[a].shape().str());
    if (features[a].channels() != features[0].channels())
      throw Error(ErrorCode::ShapeMismatch, "embedding width differs across the batch");
  }
}

// counts[a][c] = number of voxels of class c in sample a.
std::vector<std::vector<std::size_t>> class_counts(std::span<const LabelGrid> masks, int classes) {
  std::vector<std::vector<std::size_t>> counts(masks.size(), std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
  for (std::size_t a = 0; a < masks.size(); ++a)
    for (auto y : masks[a].values())
      if (y < classes) ++counts[a][y];
  return counts;
}

template <class T>
PrototypeSet<T> pool(std::span<const Field<T>> features, std::span<const LabelGrid> masks,
                     std::span<const Grid<T>> weights, int classes, PrototypeSource source) {
  check_batch(features, masks);
  PrototypeSet<T> out;
  out.source = source;
  out.vectors.resize(static_cast<std::size_t>(classes));
  if (features.empty()) return out;
  const int dim = features[0].channels();
  const auto counts = class_counts(masks, classes);
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(classes), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  std::vector<int> contributors(static_cast<std::size_t>(classes), 0);

  for (std::size_t a = 0; a < features.size(); ++a) {
    const auto& f = features[a];
    const auto& y = masks[a];
    std::vector<std::vector<double>> local(static_cast<std::size_t>(classes), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    for (int e = 0; e < dim; ++e) {
      const auto ch = f.channel(e);
      for (std::size_t v = 0; v < ch.size(); ++v) {
        const int c = y[v];
        if (c >= classes) continue;
        const double w = weights.empty() ? 1.0 : static_cast<double>(weights[a][v]);
        local[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] += w * ch[v];
      }
    }
    for (int c = 0; c < classes; ++c) {
      const std::size_t n = counts[a][static_cast<std::size_t>(c)];
      if (n == 0) continue;
      ++contributors[static_cast<std::size_t>(c)];
      for (int e = 0; e < dim; ++e)
        sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] +=
            local[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] / static_cast<double>(n);
    }
  }
  for (int c = 0; c < classes; ++c) {
    const int k = contributors[static_cast<std::size_t>(c)];
    if (k == 0) continue;
    std::vector<T> vec(static_cast<std::size_t>(dim));
    for (int e = 0; e < dim; ++e) vec[static_cast<std::size_t>(e)] = static_cast<T>(sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] / k);
    out.vectors[static_cast<std::size_t>(c)] = std::move(vec);
  }
  return out;
}

}  // namespace

template <class T>
PrototypeSet<T> masked_prototype(std::span<const Field<T>> features, std::span<const LabelGrid> masks, int classes) {
  return pool<T>(features, masks, {}, classes, PrototypeSource::labeled);
}

template <class T>
PrototypeSet<T> masked_prototype_weighted(std::span<const Field<T>> features, std::span<const LabelGrid> masks,
                                          std::span<const Grid<T>> entropy, int classes, ReliabilityMode mode) {
  if (entropy.size() != features.size()) throw Error(ErrorCode::ShapeMismatch, "entropy batch size mismatch");
  std::vector<Grid<T>> weights;
  weights.reserve(entropy.size());
  for (std::size_t a = 0; a < entropy.size(); ++a) {
    if (entropy[a].shape() != features[a].shape()) throw Error(ErrorCode::ShapeMismatch, "entropy grid shape mismatch");
    weights.push_back(reliability_weight(entropy[a], mode));
  }
  return pool<T>(features, masks, weights, classes, PrototypeSource::unlabeled);
}

template <class T>
std::vector<Field<T>> masked_prototype_backward(std::span<const Field<T>> features, std::span<const LabelGrid> masks,
                                                std::span<const Grid<T>> weights, const PrototypeGrad<T>& grad) {
  check_batch(features, masks);
  const int classes = static_cast<int>(grad.size());
  const auto counts = class_counts(masks, classes);
  std::vector<int> contributors(static_cast<std::size_t>(classes), 0);
  for (const auto& row : counts)
    for (int c = 0; c < classes; ++c) contributors[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c)] > 0;

  std::vector<Field<T>> out;
  out.reserve(features.size());
  for (std::size_t a = 0; a < features.size(); ++a) {
    const int dim = features[a].channels();
    Field<T> g(dim, features[a].shape());
    std::vector<double> scale(static_cast<std::size_t>(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
      const std::size_t n = counts[a][static_cast<std::size_t>(c)];
      if (n > 0) scale[static_cast<std::size_t>(c)] = 1.0 / (static_cast<double>(n) * contributors[static_cast<std::size_t>(c)]);
    }
    const auto& y = masks[a];
    for (int e = 0; e < dim; ++e) {
      auto ch = g.channel(e);
      for (std::size_t v = 0; v < ch.size(); ++v) {
        const int c = y[v];
        if (c >= classes || scale[static_cast<std::size_t>(c)] == 0.0) continue;
        const double w = weights.empty() ? 1.0 : static_cast<double>(weights[a][v]);
        ch[v] = static_cast<T>(grad[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] * w * scale[static_cast<std::size_t>(c)]);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

void FusionCoefficients::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
    throw Error(ErrorCode::InvalidParam, "fusion coefficients must be >= 0");
  if (!(lambda1 + lambda2 > 0) || !(lambda3 + lambda4 > 0))
    throw Error(ErrorCode::InvalidParam, "each fusion coefficient pair needs a positive sum");
}

FusionCoefficients FusionCoefficients::from_ratios(double gamma1, double gamma2) {
  if (!(gamma1 > 0) || !(gamma2 > 0)) throw Error(ErrorCode::InvalidParam, "fusion ratios must be > 0");
  return {gamma1 / (1 + gamma1), 1 / (1 + gamma1), gamma2 / (1 + gamma2), 1 / (1 + gamma2)};
}

template <class T>
PrototypeSet<T> combine_prototypes(const PrototypeSet<T>& a, const PrototypeSet<T>& b, double ca, double cb,
                                   PrototypeSource source) {
  if (a.classes() != b.classes()) throw Error(ErrorCode::ShapeMismatch, "prototype sets differ in class count");
  PrototypeSet<T> out;
  out.source = source;
  out.batch_ids = a.batch_ids;
  out.batch_ids.insert(out.batch_ids.end(), b.batch_ids.begin(), b.batch_ids.end());
  out.vectors.resize(a.vectors.size());
  for (int c = 0; c < a.classes(); ++c) {
    const auto C = static_cast<std::size_t>(c);
    if (a.present(c) && b.present(c)) {
      const auto& va = a.at(c);
      const auto& vb = b.at(c);
      if (va.size() != vb.size()) throw Error(ErrorCode::ShapeMismatch, "prototype dimensions differ");
      std::vector<T> v(va.size());
      for (std::size_t e = 0; e < v.size(); ++e) v[e] = static_cast<T>(ca * va[e] + cb * vb[e]);
      out.vectors[C] = std::move(v);
    } else if (a.present(c)) {
      out.vectors[C] = a.vectors[C];
    } else if (b.present(c)) {
      out.vectors[C] = b.vectors[C];
    }
  }
  return out;
}

template <class T>
void combine_prototypes_backward(const PrototypeSet<T>& a, const PrototypeSet<T>& b, double ca, double cb,
                                 const PrototypeGrad<T>& grad_out, PrototypeGrad<T>& grad_a, PrototypeGrad<T>& grad_b) {
  for (int c = 0; c < a.classes(); ++c) {
    const auto C = static_cast<std::size_t>(c);
    const auto& g = grad_out[C];
    const double wa = a.present(c) ? (b.present(c) ? ca : 1.0) : 0.0;
    const double wb = b.present(c) ? (a.present(c) ? cb : 1.0) : 0.0;
    for (std::size_t e = 0; e < g.size(); ++e) {
      if (wa != 0.0) grad_a[C][e] += static_cast<T>(wa * g[e]);
      if (wb != 0.0) grad_b[C][e] += static_cast<T>(wb * g[e]);
    }
  }
}

template <class T>
PrototypeSet<T> fuse_labeled_mixed(const PrototypeSet<T>& labeled, const PrototypeSet<T>& mixed,
                                   const FusionCoefficients& k) {
  return combine_prototypes(labeled, mixed, k.lambda1, k.lambda2, PrototypeSource::labeled_fused);
}

template <class T>
PrototypeSet<T> fuse_unlabeled_mixed(const PrototypeSet<T>& unlabeled, const PrototypeSet<T>& mixed,
                                     const FusionCoefficients& k) {
  return combine_prototypes(unlabeled, mixed, k.lambda3, k.lambda4, PrototypeSource::unlabeled_fused);
}

namespace {
void check_lambda_con(double lambda_con) {
  if (!(lambda_con >= 0.0 && lambda_con <= 1.0)) throw Error(ErrorCode::InvalidParam, "lambda_con must be in [0,1]");
}
}  // namespace

template <class T>
PrototypeSet<T> fuse_global(const PrototypeSet<T>& labeled_fused, const PrototypeSet<T>& unlabeled_fused,
                            double lambda_con) {
  check_lambda_con(lambda_con);
  return combine_prototypes(labeled_fused, unlabeled_fused, (2.0 - lambda_con) / 2.0, lambda_con / 2.0,
                            PrototypeSource::global);
}

const char* to_string(FusionVariant v) noexcept {
  switch (v) {
    case FusionVariant::full: return "full";
    case FusionVariant::none: return "N-N";
    case FusionVariant::no_labeled_mixed: return "M-L";
    case FusionVariant::no_unlabeled_mixed: return "M-UL";
    case FusionVariant::no_global: return "L-UL";
  }
  return "full";
}

FusionVariant parse_fusion_variant(const std::string& s) {
  if (s == "full") return FusionVariant::full;
  if (s == "N-N") return FusionVariant::none;
  if (s == "M-L") return FusionVariant::no_labeled_mixed;
  if (s == "M-UL") return FusionVariant::no_unlabeled_mixed;
  if (s == "L-UL") return FusionVariant::no_global;
  throw Error(ErrorCode::InvalidParam, "unknown fusion variant '" + s + "' (full, N-N, M-L, M-UL, L-UL)");
}

namespace {
bool uses_labeled_mixed(FusionVariant v) {
  return v == FusionVariant::full || v == FusionVariant::no_unlabeled_mixed || v == FusionVariant::no_global;
}
bool uses_unlabeled_mixed(FusionVariant v) {
  return v == FusionVariant::full || v == FusionVariant::no_labeled_mixed || v == FusionVariant::no_global;
}
}  // namespace

template <class T>
FusedPrototypes<T> fuse_all(const PrototypeSet<T>& labeled, const PrototypeSet<T>& unlabeled,
                            const PrototypeSet<T>& mixed, const FusionCoefficients& k, double lambda_con,
                            FusionVariant variant) {
  k.validate();
  FusedPrototypes<T> out;
  out.labeled_fused = uses_labeled_mixed(variant) ? fuse_labeled_mixed(labeled, mixed, k) : labeled;
  out.unlabeled_fused = uses_unlabeled_mixed(variant) ? fuse_unlabeled_mixed(unlabeled, mixed, k) : unlabeled;
  if (variant == FusionVariant::no_global) {
    check_lambda_con(lambda_con);
    out.global = out.labeled_fused;
    out.global.source = PrototypeSource::global;
  } else {
    out.global = fuse_global(out.labeled_fused, out.unlabeled_fused, lambda_con);
  }
  return out;
}

template <class T>
FusionGrads<T> fuse_all_backward(const PrototypeSet<T>& labeled, const PrototypeSet<T>& unlabeled,
                                 const PrototypeSet<T>& mixed, const FusedPrototypes<T>& fused,
                                 const FusionCoefficients& k, double lambda_con, FusionVariant variant,
                                 const PrototypeGrad<T>& grad_global) {
  const int classes = labeled.classes();
  const int dim = grad_global.empty() ? 0 : static_cast<int>(grad_global[0].size());
  auto g_lm = zero_prototype_grad<T>(classes, dim);
  auto g_um = zero_prototype_grad<T>(classes, dim);
  if (variant == FusionVariant::no_global) {
    g_lm = grad_global;
  } else {
    combine_prototypes_backward(fused.labeled_fused, fused.unlabeled_fused, (2.0 - lambda_con) / 2.0,
                                lambda_con / 2.0, grad_global, g_lm, g_um);
  }
  FusionGrads<T> out{zero_prototype_grad<T>(classes, dim), zero_prototype_grad<T>(classes, dim),
                     zero_prototype_grad<T>(classes, dim)};
  if (uses_labeled_mixed(variant))
    combine_prototypes_backward(labeled, mixed, k.lambda1, k.lambda2, g_lm, out.labeled, out.mixed);
  else
    out.labeled = g_lm;
  if (uses_unlabeled_mixed(variant))
    combine_prototypes_backward(unlabeled, mixed, k.lambda3, k.lambda4, g_um, out.unlabeled, out.mixed);
  else
    out.unlabeled = g_um;
  return out;
}

template <class T>
SimilarityMap<T> similarity_map(const Field<T>& features, const PrototypeSet<T>& prototypes, double temperature) {
  const int classes = prototypes.classes();
  if (prototypes.present_count() < 2)
    throw Error(ErrorCode::DegeneratePrototypes, "need at least two present prototypes, have " +
                                                     std::to_string(prototypes.present_count()));
  const int dim = features.channels();
  std::vector<std::vector<double>> unit(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    if (!prototypes.present(c)) continue;
    const auto& q = prototypes.at(c);
    if (static_cast<int>(q.size()) != dim) throw Error(ErrorCode::ShapeMismatch, "prototype width != feature width");
    double norm = 0.0;
    for (T x : q) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    auto& u = unit[static_cast<std::size_t>(c)];
    u.assign(static_cast<std::size_t>(dim), 0.0);
    if (norm > 0.0)
      for (int e = 0; e < dim; ++e) u[static_cast<std::size_t>(e)] = q[static_cast<std::size_t>(e)] / norm;
  }

  SimilarityMap<T> sim{ProbabilityVolume<T>(classes, features.shape()), temperature};
  const std::size_t n = features.voxels();
  std::vector<double> f(static_cast<std::size_t>(dim)), score(static_cast<std::size_t>(classes));
  for (std::size_t v = 0; v < n; ++v) {
    double fn = 0.0;
    for (int e = 0; e < dim; ++e) {
      f[static_cast<std::size_t>(e)] = features.at(e, v);
      fn += f[static_cast<std::size_t>(e)] * f[static_cast<std::size_t>(e)];
    }
    fn = std::sqrt(fn);
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      if (!prototypes.present(c)) continue;
      double dot = 0.0;
      if (fn > 0.0) {
        const auto& u = unit[static_cast<std::size_t>(c)];
        for (int e = 0; e < dim; ++e) dot += f[static_cast<std::size_t>(e)] * u[static_cast<std::size_t>(e)];
        dot /= fn;
      }
      score[static_cast<std::size_t>(c)] = temperature * dot;
      best = std::max(best, score[static_cast<std::size_t>(c)]);
    }
    double total = 0.0;
    for (int c = 0; c < classes; ++c) {
      if (!prototypes.present(c)) continue;
      score[static_cast<std::size_t>(c)] = std::exp(score[static_cast<std::size_t>(c)] - best);
      total += score[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < classes; ++c)
      sim.probs.at(c, v) = prototypes.present(c) ? static_cast<T>(score[static_cast<std::size_t>(c)] / total) : T(0);
  }
  return sim;
}

template <class T>
void similarity_map_backward(const Field<T>& features, const PrototypeSet<T>& prototypes, const SimilarityMap<T>& sim,
                             const Field<T>& grad_probs, Field<T>& grad_features, PrototypeGrad<T>& grad_prototypes) {
  const int classes = prototypes.classes();
  const int dim = features.channels();
  if (grad_features.empty()) grad_features = Field<T>(dim, features.shape());
  std::vector<std::vector<double>> unit(static_cast<std::size_t>(classes));
  std::vector<double> qnorm(static_cast<std::size_t>(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    if (!prototypes.present(c)) continue;
    const auto& q = prototypes.at(c);
    double norm = 0.0;
    for (T x : q) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    qnorm[static_cast<std::size_t>(c)] = norm;
    auto& u = unit[static_cast<std::size_t>(c)];
    u.assign(static_cast<std::size_t>(dim), 0.0);
    if (norm > 0.0)
      for (int e = 0; e < dim; ++e) u[static_cast<std::size_t>(e)] = q[static_cast<std::size_t>(e)] / norm;
  }
  std::vector<std::vector<double>> gq(static_cast<std::size_t>(classes), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  const double tau = sim.temperature;
  const std::size_t n = features.voxels();
  std::vector<double> fhat(static_cast<std::size_t>(dim)), gz(static_cast<std::size_t>(classes)),
      cosv(static_cast<std::size_t>(classes));
  for (std::size_t v = 0; v < n; ++v) {
    double fn = 0.0;
    for (int e = 0; e < dim; ++e) {
      const double x = features.at(e, v);
      fhat[static_cast<std::size_t>(e)] = x;
      fn += x * x;
    }
    fn = std::sqrt(fn);
    if (fn == 0.0) continue;  // cosine is held at 0 here, so no gradient flows
    for (auto& x : fhat) x /= fn;
    double dot = 0.0;
    for (int c = 0; c < classes; ++c)
      if (prototypes.present(c)) dot += static_cast<double>(sim.probs.at(c, v)) * grad_probs.at(c, v);
    for (int c = 0; c < classes; ++c) {
      const auto C = static_cast<std::size_t>(c);
      if (!prototypes.present(c)) {
        gz[C] = 0.0;
        continue;
      }
      gz[C] = tau * sim.probs.at(c, v) * (grad_probs.at(c, v) - dot);
      double cs = 0.0;
      for (int e = 0; e < dim; ++e) cs += fhat[static_cast<std::size_t>(e)] * unit[C][static_cast<std::size_t>(e)];
      cosv[C] = cs;
    }
    for (int e = 0; e < dim; ++e) {
      const auto E = static_cast<std::size_t>(e);
      double g = 0.0;
      for (int c = 0; c < classes; ++c) {
        const auto C = static_cast<std::size_t>(c);
        if (gz[C] == 0.0 || qnorm[C] == 0.0) continue;
        g += gz[C] * (unit[C][E] - cosv[C] * fhat[E]) / fn;
        gq[C][E] += gz[C] * (fhat[E] - cosv[C] * unit[C][E]) / qnorm[C];
      }
      grad_features.at(e, v) += static_cast<T>(g);
    }
  }
  for (int c = 0; c < classes; ++c)
    for (int e = 0; e < dim; ++e)
      grad_prototypes[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] +=
          static_cast<T>(gq[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)]);
}

#define MPCL_INSTANTIATE_PROTOTYPES(T)                                                                              \
  template struct PrototypeSet<T>;                                                                                  \
  template PrototypeSet<T> masked_prototype<T>(std::span<const Field<T>>, std::span<const LabelGrid>, int);         \
  template PrototypeSet<T> masked_prototype_weighted<T>(std::span<const Field<T>>, std::span<const LabelGrid>,      \
                                                        std::span<const Grid<T>>, int, ReliabilityMode);            \
  template std::vector<Field<T>> masked_prototype_backward<T>(std::span<const Field<T>>, std::span<const LabelGrid>, \
                                                              std::span<const Grid<T>>, const PrototypeGrad<T>&);   \
  template PrototypeSet<T> combine_prototypes<T>(const PrototypeSet<T>&, const PrototypeSet<T>&, double, double,    \
                                                 PrototypeSource);                                                  \
  template void combine_prototypes_backward<T>(const PrototypeSet<T>&, const PrototypeSet<T>&, double, double,      \
                                               const PrototypeGrad<T>&, PrototypeGrad<T>&, PrototypeGrad<T>&);      \
  template PrototypeSet<T> fuse_labeled_mixed<T>(const PrototypeSet<T>&, const PrototypeSet<T>&,                    \
                                                 const FusionCoefficients&);                                        \
  template PrototypeSet<T> fuse_unlabeled_mixed<T>(const PrototypeSet<T>&, const PrototypeSet<T>&,                  \
                                                   const FusionCoefficients&);                                      \
  template PrototypeSet<T> fuse_global<T>(const PrototypeSet<T>&, const PrototypeSet<T>&, double);                   \
  template FusedPrototypes<T> fuse_all<T>(const PrototypeSet<T>&, const PrototypeSet<T>&, const PrototypeSet<T>&,    \
                                          const FusionCoefficients&, double, FusionVariant);                        \
  template FusionGrads<T> fuse_all_backward<T>(const PrototypeSet<T>&, const PrototypeSet<T>&,                      \
                                               const PrototypeSet<T>&, const FusedPrototypes<T>&,                   \
                                               const FusionCoefficients&, double, FusionVariant,                   \
                                               const PrototypeGrad<T>&);                                            \
  template SimilarityMap<T> similarity_map<T>(const Field<T>&, const PrototypeSet<T>&, double);                     \
  template void similarity_map_backward<T>(const Field<T>&, const PrototypeSet<T>&, const SimilarityMap<T>&,         \
                                           const Field<T>&, Field<T>&, PrototypeGrad<T>&);

MPCL_INSTANTIATE_PROTOTYPES(float)
MPCL_INSTANTIATE_PROTOTYPES(double)

}  // namespace mpcl
