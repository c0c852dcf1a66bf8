#include "mpcl/upsample.hpp"

#include <vector>

namespace mpcl {

namespace {

struct Tap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;  // weight of hi
};

std::vector<Tap> axis_taps(int n_in, int n_out) {
  std::vector<Tap> taps(static_cast<std::size_t>(n_out));
  for (int x = 0; x < n_out; ++x) {
    const double pos = n_out > 1 ? static_cast<double>(x) * (n_in - 1) / (n_out - 1) : 0.0;
    int lo = static_cast<int>(pos);
    if (lo >= n_in - 1) lo = std::max(0, n_in - 1);
    const int hi = std::min(lo + 1, n_in - 1);
    taps[static_cast<std::size_t>(x)] = {lo, hi, hi == lo ? 0.0 : pos - lo};
  }
  return taps;
}

// Interpolates along one axis of a (channels x shape) buffer.
template <class T>
Field<T> resample_axis(const Field<T>& in, int axis, int n_out) {
  const Shape3 s = in.shape();
  Shape3 o = s;
  (axis == 0 ? o.h : axis == 1 ? o.w : o.d) = n_out;
  const auto taps = axis_taps(s[axis], n_out);
  Field<T> out(in.channels(), o);
  for (int c = 0; c < in.channels(); ++c) {
    const auto src = in.channel(c);
    auto dst = out.channel(c);
    for (int i = 0; i < o.h; ++i)
      for (int j = 0; j < o.w; ++j)
        for (int k = 0; k < o.d; ++k) {
          const int idx[3] = {i, j, k};
          const Tap& t = taps[static_cast<std::size_t>(idx[axis])];
          int a[3] = {i, j, k}, b[3] = {i, j, k};
          a[axis] = t.lo;
          b[axis] = t.hi;
          const T va = src[s.index(a[0], a[1], a[2])], vb = src[s.index(b[0], b[1], b[2])];
          dst[o.index(i, j, k)] = static_cast<T>((1.0 - t.frac) * va + t.frac * vb);
        }
  }
  return out;
}

template <class T>
Field<T> resample_axis_adjoint(const Field<T>& grad_out, int axis, int n_in) {
  const Shape3 o = grad_out.shape();
  Shape3 s = o;
  (axis == 0 ? s.h : axis == 1 ? s.w : s.d) = n_in;
  const auto taps = axis_taps(n_in, o[axis]);
  Field<T> out(grad_out.channels(), s);
  for (int c = 0; c < grad_out.channels(); ++c) {
    const auto g = grad_out.channel(c);
    auto dst = out.channel(c);
    for (int i = 0; i < o.h; ++i)
      for (int j = 0; j < o.w; ++j)
        for (int k = 0; k < o.d; ++k) {
          const int idx[3] = {i, j, k};
          const Tap& t = taps[static_cast<std::size_t>(idx[axis])];
          int a[3] = {i, j, k}, b[3] = {i, j, k};
          a[axis] = t.lo;
          b[axis] = t.hi;
          const T gv = g[o.index(i, j, k)];
          dst[s.index(a[0], a[1], a[2])] += static_cast<T>((1.0 - t.frac) * gv);
          dst[s.index(b[0], b[1], b[2])] += static_cast<T>(t.frac * gv);
        }
  }
  return out;
}

}  // namespace

template <class T>
Field<T> trilinear_upsample(const Field<T>& features, Shape3 target) {
  if (!features.shape().fits_in(target))
    throw Error(ErrorCode::ShapeMismatch, "cannot upsample " + features.shape().str() + " to " + target.str());
  if (features.shape() == target) return features;
  Field<T> x = resample_axis(features, 2, target.d);
  x = resample_axis(x, 1, target.w);
  return resample_axis(x, 0, target.h);
}

template <class T>
Field<T> trilinear_upsample_backward(const Field<T>& grad_target, Shape3 source) {
  if (grad_target.shape() == source) return grad_target;
  Field<T> g = resample_axis_adjoint(grad_target, 0, source.h);
  g = resample_axis_adjoint(g, 1, source.w);
  return resample_axis_adjoint(g, 2, source.d);
}

template Field<float> trilinear_upsample<float>(const Field<float>&, Shape3);
template Field<double> trilinear_upsample<double>(const Field<double>&, Shape3);
template Field<float> trilinear_upsample_backward<float>(const Field<float>&, Shape3);
template Field<double> trilinear_upsample_backward<double>(const Field<double>&, Shape3);

}  // namespace mpcl
