#pragma once

#include "mpcl/grid.hpp"

namespace mpcl {

/// Trilinear interpolation with the align-corners convention: output index x maps to source
/// coordinate x * (n_in - 1) / (n_out - 1), so the corner voxels of source and target coincide.
/// A target extent of 1 samples source index 0. Requires the target to be no smaller than the source.
template <class T>
Field<T> trilinear_upsample(const Field<T>& features, Shape3 target);

/// Adjoint of trilinear_upsample: maps a gradient on the target grid back onto the source grid.
template <class T>
Field<T> trilinear_upsample_backward(const Field<T>& grad_target, Shape3 source);

}  // namespace mpcl
