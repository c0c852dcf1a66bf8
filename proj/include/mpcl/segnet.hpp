#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpcl/grid.hpp"

namespace mpcl {

inline constexpr int kHeadCount = 4;

struct SegNetConfig {
  int depth = 3;          ///< encoder/decoder levels
  int base_channels = 8;  ///< channels at full resolution; doubled per level
  int classes = 2;
  int in_channels = 1;
  int head_count = kHeadCount;
  int feature_tap_k = 1;  ///< decoder layer feeding the prototypes; 1 = full-resolution layer

  void validate() const;
  int channels_at(int level) const noexcept { return base_channels << level; }
  /// Embedding width of the tapped decoder layer.
  int tap_channels() const noexcept { return channels_at(feature_tap_k - 1); }
  bool operator==(const SegNetConfig&) const = default;
};

/// Flat parameter vector; layer tensors are views at fixed offsets given by SegNet.
template <class T>
struct Parameters {
  std::vector<T> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const Parameters&) const = default;
};

template <class T>
struct NetworkOutputs {
  std::vector<Field<T>> head_probs;  ///< kHeadCount softmax outputs
  Field<T> mean_probs;               ///< voxelwise mean of the heads
  Field<T> tap_features;             ///< E x h x w x d at decoder layer k
  Field<T> tap_features_upsampled;   ///< E x H x W x D, trilinear (align corners)
};

/// Activations kept for the backward pass.
template <class T>
struct ForwardTrace {
  Field<T> input;
  std::vector<Field<T>> enc;   ///< per level, post-activation
  std::vector<Field<T>> down;  ///< per level (index 0 unused)
  std::vector<Field<T>> up;    ///< per decoder level (index depth-1 unused)
  std::vector<Field<T>> skip;  ///< up + enc, input of the decoder conv
  std::vector<Field<T>> dec;   ///< decoder outputs; dec[depth-1] aliases the bottleneck
};

/// Gradients of a scalar loss with respect to the network outputs. Empty fields mean zero.
template <class T>
struct OutputGradients {
  std::vector<Field<T>> head_probs;
  Field<T> mean_probs;
  Field<T> tap_features_upsampled;
};

/// Tiny V-Net-like encoder-decoder: conv blocks with residual adds, strided-conv downsampling,
/// transposed-conv upsampling, additive skips, four parallel 1x1x1 classifier heads.
template <class T>
class SegNet {
public:
  enum class LayerKind { conv3, down2, up2, pointwise };
  struct Layer {
    std::string name;
    LayerKind kind;
    int in_channels;
    int out_channels;
    std::size_t weight_offset;
    std::size_t weight_size;
    std::size_t bias_offset;
  };

  explicit SegNet(SegNetConfig config);

  const SegNetConfig& config() const noexcept { return config_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t parameter_count() const noexcept { return parameter_count_; }

  /// He-normal weights, zero biases.
  Parameters<T> init(std::mt19937_64& rng) const;
  Parameters<T> zeros() const { return Parameters<T>{std::vector<T>(parameter_count_, T(0))}; }
  /// Sets every classifier-head weight and bias to zero.
  void zero_heads(Parameters<T>& params) const;

  /// Throws ShapeNotDivisible unless every side is a multiple of 2^(depth-1).
  void check_input(Shape3 shape) const;

  NetworkOutputs<T> forward(const Parameters<T>& params, const Grid<T>& image, ForwardTrace<T>* trace = nullptr,
                            bool upsample_tap = true) const;

  /// Accumulates d(loss)/d(params) into `grad` (same size as params).
  void backward(const Parameters<T>& params, const ForwardTrace<T>& trace, const NetworkOutputs<T>& outputs,
                const OutputGradients<T>& grads, Parameters<T>& grad) const;

private:
  std::span<const T> weight(const Parameters<T>& p, const Layer& l) const {
    return {p.values.data() + l.weight_offset, l.weight_size};
  }
  std::span<const T> bias(const Parameters<T>& p, const Layer& l) const {
    return {p.values.data() + l.bias_offset, static_cast<std::size_t>(l.out_channels)};
  }
  std::span<T> weight(Parameters<T>& p, const Layer& l) const { return {p.values.data() + l.weight_offset, l.weight_size}; }
  std::span<T> bias(Parameters<T>& p, const Layer& l) const {
    return {p.values.data() + l.bias_offset, static_cast<std::size_t>(l.out_channels)};
  }
  std::size_t add_layer(const std::string& name, LayerKind kind, int in, int out);

  SegNetConfig config_;
  std::vector<Layer> layers_;
  std::size_t parameter_count_ = 0;
  std::size_t enc_first_ = 0;   // enc0, then (down_l, enc_l) pairs
  std::size_t dec_first_ = 0;   // (up_l, dec_l) pairs for l = depth-2 .. 0
  std::size_t head_first_ = 0;
};

/// teacher <- decay * teacher + (1 - decay) * student, elementwise.
template <class T>
void ema_update(Parameters<T>& teacher, const Parameters<T>& student, double decay);

enum class OptimizerKind { adam, sgd };

const char* to_string(OptimizerKind k) noexcept;
OptimizerKind parse_optimizer_kind(const std::string& s);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;  ///< SGD only
  double weight_decay = 0.0;
};

template <class T>
struct OptimizerState {
  std::vector<T> first;   ///< Adam m / SGD velocity
  std::vector<T> second;  ///< Adam v
  std::int64_t steps = 0;

  bool operator==(const OptimizerState&) const = default;
};

template <class T>
void optimizer_step(const OptimizerSettings& settings, Parameters<T>& params, const Parameters<T>& grad,
                    OptimizerState<T>& state);

}  // namespace mpcl
