#pragma once

#include <string>

#include "mpcl/volume.hpp"

namespace mpcl {

/// literal keeps the 1/(H*W*D) prefactor on the reliability weight; normalized drops it.
enum class ReliabilityMode { literal, normalized };

const char* to_string(ReliabilityMode m) noexcept;
ReliabilityMode parse_reliability_mode(const std::string& s);

template <class T>
struct ReliabilityMap {
  Grid<T> entropy;  ///< nats, in [0, ln C]
  Grid<T> weight;
  ReliabilityMode mode = ReliabilityMode::normalized;
};

/// U(p) = -sum_c p_c ln p_c, with 0 ln 0 = 0.
template <class T>
Grid<T> voxel_entropy(const ProbabilityVolume<T>& probs);

/// w(p) = 1 - U(p) / sum_q U(q); literal mode multiplies by 1/V. All-zero entropy gives w = 1 (times 1/V in
/// literal mode).
template <class T>
Grid<T> reliability_weight(const Grid<T>& entropy, ReliabilityMode mode);

template <class T>
struct ReliablePseudoLabel {
  ProbabilityVolume<T> soft;  ///< w(p) * pl(p); not normalized per voxel
  LabelGrid hard;             ///< argmax_c pl(c, p)
  ReliabilityMap<T> reliability;
};

template <class T>
ReliablePseudoLabel<T> reliable_pseudo_label(const ProbabilityVolume<T>& mean_probs, ReliabilityMode mode);

}  // namespace mpcl
