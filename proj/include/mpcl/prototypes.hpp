#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcl/uncertainty.hpp"
#include "mpcl/volume.hpp"

namespace mpcl {

enum class PrototypeSource { labeled, unlabeled, mixed, labeled_fused, unlabeled_fused, global };

const char* to_string(PrototypeSource s) noexcept;

/// Per-class embedding vectors. A class with no mask voxels anywhere in the batch is absent (nullopt).
template <class T>
struct PrototypeSet {
  std::vector<std::optional<std::vector<T>>> vectors;
  PrototypeSource source = PrototypeSource::labeled;
  std::vector<std::string> batch_ids;

  int classes() const noexcept { return static_cast<int>(vectors.size()); }
  bool present(int c) const noexcept { return vectors[static_cast<std::size_t>(c)].has_value(); }
  int present_count() const noexcept;
  const std::vector<T>& at(int c) const { return *vectors[static_cast<std::size_t>(c)]; }
};

/// Gradient with respect to a PrototypeSet: one vector per class (zeros for absent classes).
template <class T>
using PrototypeGrad = std::vector<std::vector<T>>;

template <class T>
PrototypeGrad<T> zero_prototype_grad(int classes, int dim) {
  return PrototypeGrad<T>(static_cast<std::size_t>(classes), std::vector<T>(static_cast<std::size_t>(dim), T(0)));
}

/// Masked average pooling per sample, averaged over the samples in which the class occurs.
template <class T>
PrototypeSet<T> masked_prototype(std::span<const Field<T>> features, std::span<const LabelGrid> masks, int classes);

/// As masked_prototype, with each voxel's feature pre-multiplied by its reliability weight derived from
/// the entropy grid of that sample.
template <class T>
PrototypeSet<T> masked_prototype_weighted(std::span<const Field<T>> features, std::span<const LabelGrid> masks,
                                          std::span<const Grid<T>> entropy, int classes, ReliabilityMode mode);

/// d(prototypes)/d(features) adjoint. `weights` may be empty (unit weights).
template <class T>
std::vector<Field<T>> masked_prototype_backward(std::span<const Field<T>> features, std::span<const LabelGrid> masks,
                                                std::span<const Grid<T>> weights, const PrototypeGrad<T>& grad);

struct FusionCoefficients {
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda3 = 0.5;
  double lambda4 = 0.5;

  double gamma1() const { return lambda1 / lambda2; }
  double gamma2() const { return lambda3 / lambda4; }
  void validate() const;
  /// Coefficients with lambda1/lambda2 = gamma1 and lambda3/lambda4 = gamma2, each pair summing to 1.
  static FusionCoefficients from_ratios(double gamma1, double gamma2);
};

/// ca * a + cb * b per class; an absent side yields the other side unscaled; both absent stays absent.
template <class T>
PrototypeSet<T> combine_prototypes(const PrototypeSet<T>& a, const PrototypeSet<T>& b, double ca, double cb,
                                   PrototypeSource source);

template <class T>
void combine_prototypes_backward(const PrototypeSet<T>& a, const PrototypeSet<T>& b, double ca, double cb,
                                 const PrototypeGrad<T>& grad_out, PrototypeGrad<T>& grad_a, PrototypeGrad<T>& grad_b);

template <class T>
PrototypeSet<T> fuse_labeled_mixed(const PrototypeSet<T>& labeled, const PrototypeSet<T>& mixed,
                                   const FusionCoefficients& k);
template <class T>
PrototypeSet<T> fuse_unlabeled_mixed(const PrototypeSet<T>& unlabeled, const PrototypeSet<T>& mixed,
                                     const FusionCoefficients& k);
/// ((2 - lambda_con) * p_lm + lambda_con * p_um) / 2.
template <class T>
PrototypeSet<T> fuse_global(const PrototypeSet<T>& labeled_fused, const PrototypeSet<T>& unlabeled_fused,
                            double lambda_con);

/// Fusion ablations: full; N-N drops both mixed fusions; M-L drops labeled+mixed; M-UL drops
/// unlabeled+mixed; L-UL replaces the global fusion by the labeled+mixed prototype.
enum class FusionVariant { full, none, no_labeled_mixed, no_unlabeled_mixed, no_global };

const char* to_string(FusionVariant v) noexcept;
FusionVariant parse_fusion_variant(const std::string& s);

template <class T>
struct FusedPrototypes {
  PrototypeSet<T> labeled_fused;
  PrototypeSet<T> unlabeled_fused;
  PrototypeSet<T> global;
};

template <class T>
FusedPrototypes<T> fuse_all(const PrototypeSet<T>& labeled, const PrototypeSet<T>& unlabeled,
                            const PrototypeSet<T>& mixed, const FusionCoefficients& k, double lambda_con,
                            FusionVariant variant);

template <class T>
struct FusionGrads {
  PrototypeGrad<T> labeled;
  PrototypeGrad<T> unlabeled;
  PrototypeGrad<T> mixed;
};

/// Back-propagates a gradient on the global prototypes to the three source sets.
template <class T>
FusionGrads<T> fuse_all_backward(const PrototypeSet<T>& labeled, const PrototypeSet<T>& unlabeled,
                                 const PrototypeSet<T>& mixed, const FusedPrototypes<T>& fused,
                                 const FusionCoefficients& k, double lambda_con, FusionVariant variant,
                                 const PrototypeGrad<T>& grad_global);

template <class T>
struct SimilarityMap {
  ProbabilityVolume<T> probs;
  double temperature = 20.0;
};

/// softmax_c(temperature * cos(f(p), p^c)) over present classes; absent classes get probability 0.
/// A zero-norm argument gives cosine 0. Throws DegeneratePrototypes with fewer than two present classes.
template <class T>
SimilarityMap<T> similarity_map(const Field<T>& features, const PrototypeSet<T>& prototypes, double temperature);

/// Accumulates into grad_features (resized if empty) and grad_prototypes.
template <class T>
void similarity_map_backward(const Field<T>& features, const PrototypeSet<T>& prototypes, const SimilarityMap<T>& sim,
                             const Field<T>& grad_probs, Field<T>& grad_features, PrototypeGrad<T>& grad_prototypes);

}  // namespace mpcl
