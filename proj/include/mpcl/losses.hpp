#pragma once

#include <span>
#include <string>
#include <vector>

#include "mpcl/segnet.hpp"
#include "mpcl/volume.hpp"

namespace mpcl {

/// Floor applied to probabilities inside every logarithm.
inline constexpr double kProbFloor = 1e-7;

/// A scalar loss over a batch together with its gradient with respect to each input probability field.
template <class T>
struct LossValue {
  double value = 0.0;
  std::vector<Field<T>> grad;
};

/// Targets are per-voxel class distributions (one-hot for hard labels). All losses are means over every
/// voxel of the batch; Dice and IoU pool their sums over the batch and average over foreground classes.
template <class T>
LossValue<T> cross_entropy_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets);
template <class T>
LossValue<T> focal_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double gamma);
template <class T>
LossValue<T> dice_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double epsilon);
template <class T>
LossValue<T> iou_loss(std::span<const Field<T>> probs, std::span<const Field<T>> targets, double epsilon);

/// One-hot targets for a batch of label grids; throws InvalidLabel.
template <class T>
std::vector<Field<T>> one_hot_batch(std::span<const LabelGrid> labels, int classes);

struct SupervisedSettings {
  double focal_gamma = 2.0;
  double epsilon = 1e-5;
};

struct SupervisedTerms {
  double ce = 0.0;
  double dice = 0.0;
  double focal = 0.0;
  double iou = 0.0;
  double fused = 0.0;
  /// (ce + dice + focal + iou) / 4 + fused
  double seg = 0.0;
};

template <class T>
struct SupervisedResult {
  SupervisedTerms terms;
  std::vector<OutputGradients<T>> grads;  ///< per sample; heads and mean_probs filled
};

/// Head 1 -> CE, head 2 -> Dice, head 3 -> focal, head 4 -> IoU, plus CE on the mean prediction.
template <class T>
SupervisedResult<T> supervised_loss(std::span<const NetworkOutputs<T>> outputs, std::span<const Field<T>> targets,
                                    const SupervisedSettings& settings = {});

enum class ConsistencyKind { ce, kl, mse, mae };

const char* to_string(ConsistencyKind k) noexcept;
ConsistencyKind parse_consistency_kind(const std::string& s);

/// ce: mean voxel cross-entropy -sum_c t ln s; kl: mean KL(t || s); mse / mae: mean over classes and voxels.
template <class T>
LossValue<T> consistency_loss(std::span<const Field<T>> sim, std::span<const Field<T>> targets, ConsistencyKind kind);

struct LossBundle {
  double l_ce = 0.0;
  double l_dice = 0.0;
  double l_focal = 0.0;
  double l_iou = 0.0;
  double l_fused = 0.0;
  double l_seg_l = 0.0;
  double l_seg_m = 0.0;
  double l_seg = 0.0;
  double l_lc = 0.0;
  double l_uc = 0.0;
  double lambda_con = 0.0;
  double total = 0.0;

  bool all_finite() const noexcept;
  /// Checks the three sum identities within `tol`.
  bool consistent(double tol = 1e-6) const noexcept;
  std::string str() const;

  static std::vector<std::string> column_names();
  std::vector<double> columns() const;
  bool operator==(const LossBundle&) const = default;
};

/// Assembles the bundle: l_seg_l from the labeled terms, l_seg = l_seg_l + seg_m,
/// total = l_seg + l_lc + lambda_con * l_uc. Throws InvalidParam for lambda_con outside [0, 1].
LossBundle total_loss(const SupervisedTerms& labeled, double seg_m, double l_lc, double l_uc, double lambda_con);

}  // namespace mpcl
