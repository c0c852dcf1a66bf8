#include "mpcl/segnet.hpp"

#include <cmath>

#include "mpcl/layers.hpp"
#include "mpcl/upsample.hpp"

namespace mpcl {

void SegNetConfig::validate() const {
  if (depth < 1 || depth > 6) throw Error(ErrorCode::InvalidParam, "model.depth must be in [1, 6]");
  if (base_channels < 1) throw Error(ErrorCode::InvalidParam, "model.base_channels must be >= 1");
  if (classes < 2 || classes > 255) throw Error(ErrorCode::InvalidParam, "model.classes must be in [2, 255]");
  if (in_channels != 1) throw Error(ErrorCode::InvalidParam, "only single-channel input is supported");
  if (head_count != kHeadCount) throw Error(ErrorCode::InvalidParam, "head_count is fixed at 4");
  if (feature_tap_k < 1 || feature_tap_k > depth)
    throw Error(ErrorCode::InvalidParam, "feature_tap_k must be in [1, depth]");
}

template <class T>
std::size_t SegNet<T>::add_layer(const std::string& name, LayerKind kind, int in, int out) {
  const std::size_t taps = kind == LayerKind::conv3 ? 27 : (kind == LayerKind::pointwise ? 1 : 8);
  Layer l{name, kind, in, out, parameter_count_, taps * static_cast<std::size_t>(in) * static_cast<std::size_t>(out), 0};
  parameter_count_ += l.weight_size;
  l.bias_offset = parameter_count_;
  parameter_count_ += static_cast<std::size_t>(out);
  layers_.push_back(l);
  return layers_.size() - 1;
}

template <class T>
SegNet<T>::SegNet(SegNetConfig config) : config_(config) {
  config_.validate();
  const int depth = config_.depth;
  enc_first_ = add_layer("enc0", LayerKind::conv3, config_.in_channels, config_.channels_at(0));
  for (int l = 1; l < depth; ++l) {
    add_layer("down" + std::to_string(l), LayerKind::down2, config_.channels_at(l - 1), config_.channels_at(l));
    add_layer("enc" + std::to_string(l), LayerKind::conv3, config_.channels_at(l), config_.channels_at(l));
  }
  dec_first_ = layers_.size();
  for (int l = depth - 2; l >= 0; --l) {
    add_layer("up" + std::to_string(l), LayerKind::up2, config_.channels_at(l + 1), config_.channels_at(l));
    add_layer("dec" + std::to_string(l), LayerKind::conv3, config_.channels_at(l), config_.channels_at(l));
  }
  head_first_ = layers_.size();
  for (int h = 0; h < config_.head_count; ++h)
    add_layer("head" + std::to_string(h), LayerKind::pointwise, config_.channels_at(0), config_.classes);
}

template <class T>
Parameters<T> SegNet<T>::init(std::mt19937_64& rng) const {
  Parameters<T> p = zeros();
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    const std::size_t fan_in = l.weight_size / static_cast<std::size_t>(l.out_channels);
    double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    const bool residual_branch = l.kind == LayerKind::conv3 && li != enc_first_;
    if (residual_branch) sd *= 0.5;
    if (l.kind == LayerKind::pointwise) sd = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::normal_distribution<double> normal(0.0, sd);
    for (auto& w : weight(p, l)) w = static_cast<T>(normal(rng));
  }
  return p;
}

template <class T>
void SegNet<T>::zero_heads(Parameters<T>& params) const {
  for (int h = 0; h < config_.head_count; ++h) {
    const Layer& l = layers_[head_first_ + static_cast<std::size_t>(h)];
    for (auto& w : weight(params, l)) w = T(0);
    for (auto& b : bias(params, l)) b = T(0);
  }
}

template <class T>
void SegNet<T>::check_input(Shape3 s) const {
  const int m = 1 << (config_.depth - 1);
  if (s.h % m || s.w % m || s.d % m || s.h < m || s.w < m || s.d < m)
    throw Error(ErrorCode::ShapeNotDivisible, s.str() + " is not divisible by " + std::to_string(m));
}

namespace {

template <class T>
void relu_inplace(Field<T>& f) {
  for (auto& x : f.values()) x = x > T(0) ? x : T(0);
}

template <class T>
void add_inplace(Field<T>& dst, const Field<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class T>
void relu_mask_inplace(Field<T>& grad, const Field<T>& activation) {
  auto g = grad.values();
  auto a = activation.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(a[i] > T(0))) g[i] = T(0);
}

template <class T>
void accumulate(Field<T>& dst, const Field<T>& src) {
  if (dst.empty())
    dst = src;
  else
    add_inplace(dst, src);
}

}  // namespace

template <class T>
NetworkOutputs<T> SegNet<T>::forward(const Parameters<T>& params, const Grid<T>& image, ForwardTrace<T>* trace,
                                     bool upsample_tap) const {
  if (params.size() != parameter_count_) throw Error(ErrorCode::ShapeMismatch, "parameter count mismatch");
  check_input(image.shape());
  const int depth = config_.depth;
  ForwardTrace<T> local;
  ForwardTrace<T>& t = trace ? *trace : local;
  t.input = Field<T>(1, image.shape());
  std::copy(image.values().begin(), image.values().end(), t.input.values().begin());
  t.enc.assign(static_cast<std::size_t>(depth), {});
  t.down.assign(static_cast<std::size_t>(depth), {});
  t.up.assign(static_cast<std::size_t>(depth), {});
  t.skip.assign(static_cast<std::size_t>(depth), {});
  t.dec.assign(static_cast<std::size_t>(depth), {});

  const Layer& enc0 = layers_[enc_first_];
  layers::conv3_forward<T>(t.input, weight(params, enc0), bias(params, enc0), enc0.out_channels, t.enc[0]);
  relu_inplace(t.enc[0]);
  for (int l = 1; l < depth; ++l) {
    const Layer& dn = layers_[enc_first_ + 1 + 2 * static_cast<std::size_t>(l - 1)];
    const Layer& cv = layers_[enc_first_ + 2 + 2 * static_cast<std::size_t>(l - 1)];
    const auto L = static_cast<std::size_t>(l);
    layers::down2_forward<T>(t.enc[L - 1], weight(params, dn), bias(params, dn), dn.out_channels, t.down[L]);
    relu_inplace(t.down[L]);
    layers::conv3_forward<T>(t.down[L], weight(params, cv), bias(params, cv), cv.out_channels, t.enc[L]);
    add_inplace(t.enc[L], t.down[L]);
    relu_inplace(t.enc[L]);
  }
  t.dec[static_cast<std::size_t>(depth - 1)] = t.enc[static_cast<std::size_t>(depth - 1)];
  for (int l = depth - 2; l >= 0; --l) {
    const std::size_t pair = dec_first_ + 2 * static_cast<std::size_t>(depth - 2 - l);
    const Layer& up = layers_[pair];
    const Layer& cv = layers_[pair + 1];
    const auto L = static_cast<std::size_t>(l);
    layers::up2_forward<T>(t.dec[L + 1], weight(params, up), bias(params, up), up.out_channels, t.up[L]);
    relu_inplace(t.up[L]);
    t.skip[L] = t.up[L];
    add_inplace(t.skip[L], t.enc[L]);
    layers::conv3_forward<T>(t.skip[L], weight(params, cv), bias(params, cv), cv.out_channels, t.dec[L]);
    add_inplace(t.dec[L], t.skip[L]);
    relu_inplace(t.dec[L]);
  }

  NetworkOutputs<T> out;
  out.head_probs.resize(static_cast<std::size_t>(config_.head_count));
  for (int h = 0; h < config_.head_count; ++h) {
    const Layer& hd = layers_[head_first_ + static_cast<std::size_t>(h)];
    auto& probs = out.head_probs[static_cast<std::size_t>(h)];
    layers::pointwise_forward<T>(t.dec[0], weight(params, hd), bias(params, hd), hd.out_channels, probs);
    layers::softmax_channels(probs);
  }
  out.mean_probs = Field<T>(config_.classes, image.shape());
  const T inv = T(1) / static_cast<T>(config_.head_count);
  for (const auto& hp : out.head_probs) {
    auto dst = out.mean_probs.values();
    auto src = hp.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv;
  }
  out.tap_features = t.dec[static_cast<std::size_t>(config_.feature_tap_k - 1)];
  if (upsample_tap) out.tap_features_upsampled = trilinear_upsample(out.tap_features, image.shape());
  return out;
}

template <class T>
void SegNet<T>::backward(const Parameters<T>& params, const ForwardTrace<T>& t, const NetworkOutputs<T>& out,
                         const OutputGradients<T>& grads, Parameters<T>& grad) const {
  if (grad.size() != parameter_count_) grad = zeros();
  const int depth = config_.depth;
  std::vector<Field<T>> g_dec(static_cast<std::size_t>(depth));
  std::vector<Field<T>> g_enc(static_cast<std::size_t>(depth));

  const T inv = T(1) / static_cast<T>(config_.head_count);
  for (int h = 0; h < config_.head_count; ++h) {
    const auto H = static_cast<std::size_t>(h);
    Field<T> g_probs;
    if (H < grads.head_probs.size() && !grads.head_probs[H].empty()) g_probs = grads.head_probs[H];
    if (!grads.mean_probs.empty()) {
      if (g_probs.empty()) g_probs = Field<T>(config_.classes, t.input.shape());
      auto d = g_probs.values();
      auto s = grads.mean_probs.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * inv;
    }
    if (g_probs.empty()) continue;
    const Field<T> g_logits = layers::softmax_backward(out.head_probs[H], g_probs);
    const Layer& hd = layers_[head_first_ + H];
    Field<T> g_in;
    layers::pointwise_backward<T>(t.dec[0], weight(params, hd), g_logits, weight(grad, hd), bias(grad, hd), &g_in);
    accumulate(g_dec[0], g_in);
  }
  if (!grads.tap_features_upsampled.empty()) {
    const auto k = static_cast<std::size_t>(config_.feature_tap_k - 1);
    accumulate(g_dec[k], trilinear_upsample_backward(grads.tap_features_upsampled, t.dec[k].shape()));
  }

  for (int l = 0; l <= depth - 2; ++l) {
    const auto L = static_cast<std::size_t>(l);
    if (g_dec[L].empty()) continue;
    const std::size_t pair = dec_first_ + 2 * static_cast<std::size_t>(depth - 2 - l);
    const Layer& up = layers_[pair];
    const Layer& cv = layers_[pair + 1];
    Field<T> g = std::move(g_dec[L]);
    relu_mask_inplace(g, t.dec[L]);
    Field<T> g_skip;
    layers::conv3_backward<T>(t.skip[L], weight(params, cv), g, weight(grad, cv), bias(grad, cv), &g_skip);
    add_inplace(g_skip, g);
    accumulate(g_enc[L], g_skip);
    relu_mask_inplace(g_skip, t.up[L]);
    Field<T> g_in;
    layers::up2_backward<T>(t.dec[L + 1], weight(params, up), g_skip, weight(grad, up), bias(grad, up), &g_in);
    accumulate(g_dec[L + 1], g_in);
  }
  const auto bottom = static_cast<std::size_t>(depth - 1);
  if (!g_dec[bottom].empty()) accumulate(g_enc[bottom], g_dec[bottom]);

  for (int l = depth - 1; l >= 1; --l) {
    const auto L = static_cast<std::size_t>(l);
    if (g_enc[L].empty()) continue;
    const Layer& dn = layers_[enc_first_ + 1 + 2 * (L - 1)];
    const Layer& cv = layers_[enc_first_ + 2 + 2 * (L - 1)];
    Field<T> g = std::move(g_enc[L]);
    relu_mask_inplace(g, t.enc[L]);
    Field<T> g_down;
    layers::conv3_backward<T>(t.down[L], weight(params, cv), g, weight(grad, cv), bias(grad, cv), &g_down);
    add_inplace(g_down, g);
    relu_mask_inplace(g_down, t.down[L]);
    Field<T> g_in;
    layers::down2_backward<T>(t.enc[L - 1], weight(params, dn), g_down, weight(grad, dn), bias(grad, dn), &g_in);
    accumulate(g_enc[L - 1], g_in);
  }
  if (!g_enc[0].empty()) {
    Field<T> g = std::move(g_enc[0]);
    relu_mask_inplace(g, t.enc[0]);
    const Layer& enc0 = layers_[enc_first_];
    layers::conv3_backward<T>(t.input, weight(params, enc0), g, weight(grad, enc0), bias(grad, enc0), nullptr);
  }
}

template <class T>
void ema_update(Parameters<T>& teacher, const Parameters<T>& student, double decay) {
  if (teacher.size() != student.size()) throw Error(ErrorCode::ShapeMismatch, "EMA parameter sets differ in size");
  if (!(decay >= 0.0 && decay <= 1.0)) throw Error(ErrorCode::InvalidParam, "EMA decay must be in [0,1]");
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher.values[i] = a * teacher.values[i] + b * student.values[i];
}

const char* to_string(OptimizerKind k) noexcept { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw Error(ErrorCode::InvalidParam, "unknown optimizer '" + s + "'");
}

template <class T>
void optimizer_step(const OptimizerSettings& s, Parameters<T>& params, const Parameters<T>& grad,
                    OptimizerState<T>& state) {
  const std::size_t n = params.size();
  if (grad.size() != n) throw Error(ErrorCode::ShapeMismatch, "gradient size mismatch");
  if (state.first.size() != n) state.first.assign(n, T(0));
  ++state.steps;
  if (s.kind == OptimizerKind::adam) {
    if (state.second.size() != n) state.second.assign(n, T(0));
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.steps));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad.values[i] + s.weight_decay * params.values[i];
      const double m = s.beta1 * state.first[i] + (1.0 - s.beta1) * g;
      const double v = s.beta2 * state.second[i] + (1.0 - s.beta2) * g * g;
      state.first[i] = static_cast<T>(m);
      state.second[i] = static_cast<T>(v);
      params.values[i] -= static_cast<T>(s.learning_rate * (m / c1) / (std::sqrt(v / c2) + s.epsilon));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad.values[i] + s.weight_decay * params.values[i];
      const double vel = s.momentum * state.first[i] + g;
      state.first[i] = static_cast<T>(vel);
      params.values[i] -= static_cast<T>(s.learning_rate * vel);
    }
  }
}

template class SegNet<float>;
template class SegNet<double>;
template void ema_update<float>(Parameters<float>&, const Parameters<float>&, double);
template void ema_update<double>(Parameters<double>&, const Parameters<double>&, double);
template void optimizer_step<float>(const OptimizerSettings&, Parameters<float>&, const Parameters<float>&,
                                    OptimizerState<float>&);
template void optimizer_step<double>(const OptimizerSettings&, Parameters<double>&, const Parameters<double>&,
                                     OptimizerState<double>&);

}  // namespace mpcl
