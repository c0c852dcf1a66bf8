#pragma once

#include <span>

#include "mpcl/grid.hpp"

namespace mpcl::layers {

// Weight layouts (row-major):
//   conv3:     [out][in][27]           3x3x3 kernel, zero padding 1, stride 1
//   down2:     [out][in][8]            2x2x2 kernel, stride 2
//   up2:       [out][8][in]            transposed 2x2x2, stride 2
//   pointwise: [out][in]               1x1x1
// Biases are [out]. Backward passes accumulate into grad_w / grad_b and overwrite grad_in.

template <class T>
void conv3_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out);
template <class T>
void conv3_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                    std::span<T> grad_b, Field<T>* grad_in);

template <class T>
void down2_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out);
template <class T>
void down2_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                    std::span<T> grad_b, Field<T>* grad_in);

template <class T>
void up2_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out);
template <class T>
void up2_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                  std::span<T> grad_b, Field<T>* grad_in);

template <class T>
void pointwise_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels,
                       Field<T>& out);
template <class T>
void pointwise_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                        std::span<T> grad_b, Field<T>* grad_in);

/// In-place softmax over channels at every voxel.
template <class T>
void softmax_channels(Field<T>& logits);

/// grad_logits = p * (g - <g, p>) per voxel.
template <class T>
Field<T> softmax_backward(const Field<T>& probs, const Field<T>& grad_probs);

}  // namespace mpcl::layers
