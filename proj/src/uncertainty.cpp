#include "mpcl/uncertainty.hpp"

#include <cmath>

namespace mpcl {

const char* to_string(ReliabilityMode m) noexcept { return m == ReliabilityMode::literal ? "literal" : "normalized"; }

ReliabilityMode parse_reliability_mode(const std::string& s) {
  if (s == "literal") return ReliabilityMode::literal;
  if (s == "normalized") return ReliabilityMode::normalized;
  throw Error(ErrorCode::InvalidParam, "unknown uncertainty mode '" + s + "'");
}

template <class T>
Grid<T> voxel_entropy(const ProbabilityVolume<T>& probs) {
  Grid<T> u(probs.shape());
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    double h = 0.0;
    for (int c = 0; c < probs.channels(); ++c) {
      const double p = probs.at(c, v);
      if (p > 0.0) h -= p * std::log(p);
    }
    u[v] = static_cast<T>(h > 0.0 ? h : 0.0);
  }
  return u;
}

template <class T>
Grid<T> reliability_weight(const Grid<T>& entropy, ReliabilityMode mode) {
  double total = 0.0;
  for (T x : entropy.values()) total += x;
  const double scale = mode == ReliabilityMode::literal ? 1.0 / static_cast<double>(entropy.size()) : 1.0;
  Grid<T> w(entropy.shape());
  for (std::size_t v = 0; v < entropy.size(); ++v) {
    const double base = total > 0.0 ? 1.0 - entropy[v] / total : 1.0;
    w[v] = static_cast<T>(scale * base);
  }
  return w;
}

template <class T>
ReliablePseudoLabel<T> reliable_pseudo_label(const ProbabilityVolume<T>& mean_probs, ReliabilityMode mode) {
  ReliablePseudoLabel<T> out;
  out.reliability.mode = mode;
  out.reliability.entropy = voxel_entropy(mean_probs);
  out.reliability.weight = reliability_weight(out.reliability.entropy, mode);
  out.hard = argmax_labels(mean_probs);
  out.soft = mean_probs;
  for (int c = 0; c < mean_probs.channels(); ++c) {
    auto ch = out.soft.channel(c);
    for (std::size_t v = 0; v < ch.size(); ++v) ch[v] *= out.reliability.weight[v];
  }
  return out;
}

template Grid<float> voxel_entropy<float>(const ProbabilityVolume<float>&);
template Grid<double> voxel_entropy<double>(const ProbabilityVolume<double>&);
template Grid<float> reliability_weight<float>(const Grid<float>&, ReliabilityMode);
template Grid<double> reliability_weight<double>(const Grid<double>&, ReliabilityMode);
template ReliablePseudoLabel<float> reliable_pseudo_label<float>(const ProbabilityVolume<float>&, ReliabilityMode);
template ReliablePseudoLabel<double> reliable_pseudo_label<double>(const ProbabilityVolume<double>&, ReliabilityMode);

}  // namespace mpcl
