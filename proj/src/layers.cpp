#include "mpcl/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mpcl::layers {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using Vec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Plain loop instead of Eigen's vectorized reduction, whose summation order depends on buffer alignment.
template <class T>
void add_row_sums(const T* g, Eigen::Index rows, Eigen::Index cols, std::span<T> out) {
  for (Eigen::Index r = 0; r < rows; ++r) {
    double acc = 0.0;
    const T* row = g + r * cols;
    for (Eigen::Index c = 0; c < cols; ++c) acc += row[c];
    out[static_cast<std::size_t>(r)] += static_cast<T>(acc);
  }
}

template <class T>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < n) buffer.resize(n);
  return buffer;
}

template <class T>
void check_weights(std::span<const T> w, std::size_t expected, std::span<const T> b, int out_channels) {
  if (w.size() != expected || b.size() != static_cast<std::size_t>(out_channels))
    throw Error(ErrorCode::ShapeMismatch, "layer weight/bias size mismatch");
}

// col[(ci*27 + t) * N + voxel] = in(ci, voxel + offset_t), zero outside.
template <class T>
void im2col3(const Field<T>& in, T* col) {
  const Shape3 s = in.shape();
  const std::size_t n = s.voxels();
  for (int ci = 0; ci < in.channels(); ++ci) {
    const T* src = in.channel(ci).data();
    for (int t = 0; t < 27; ++t) {
      const int di = t / 9 - 1, dj = (t / 3) % 3 - 1, dk = t % 3 - 1;
      T* row = col + (static_cast<std::size_t>(ci) * 27 + t) * n;
      const int k_lo = std::max(0, -dk), k_hi = std::min(s.d, s.d - dk);
      for (int i = 0; i < s.h; ++i) {
        const int ii = i + di;
        T* dst_slice = row + static_cast<std::size_t>(i) * s.w * s.d;
        if (ii < 0 || ii >= s.h) {
          std::fill(dst_slice, dst_slice + static_cast<std::size_t>(s.w) * s.d, T(0));
          continue;
        }
        for (int j = 0; j < s.w; ++j) {
          const int jj = j + dj;
          T* dst = dst_slice + static_cast<std::size_t>(j) * s.d;
          if (jj < 0 || jj >= s.w) {
            std::fill(dst, dst + s.d, T(0));
            continue;
          }
          const T* line = src + s.index(ii, jj, 0);
          for (int k = 0; k < k_lo; ++k) dst[k] = T(0);
          std::copy(line + k_lo + dk, line + k_hi + dk, dst + k_lo);
          for (int k = k_hi; k < s.d; ++k) dst[k] = T(0);
        }
      }
    }
  }
}

template <class T>
void col2im3(const T* col, Field<T>& out) {
  const Shape3 s = out.shape();
  const std::size_t n = s.voxels();
  std::fill(out.values().begin(), out.values().end(), T(0));
  for (int ci = 0; ci < out.channels(); ++ci) {
    T* dst = out.channel(ci).data();
    for (int t = 0; t < 27; ++t) {
      const int di = t / 9 - 1, dj = (t / 3) % 3 - 1, dk = t % 3 - 1;
      const T* row = col + (static_cast<std::size_t>(ci) * 27 + t) * n;
      const int k_lo = std::max(0, -dk), k_hi = std::min(s.d, s.d - dk);
      const int i_lo = std::max(0, -di), i_hi = std::min(s.h, s.h - di);
      const int j_lo = std::max(0, -dj), j_hi = std::min(s.w, s.w - dj);
      for (int i = i_lo; i < i_hi; ++i)
        for (int j = j_lo; j < j_hi; ++j) {
          const T* src = row + s.index(i, j, 0);
          T* line = dst + s.index(i + di, j + dj, 0);
          for (int k = k_lo; k < k_hi; ++k) line[k + dk] += src[k];
        }
    }
  }
}

template <class T>
void im2col_down2(const Field<T>& in, T* col, Shape3 os) {
  const Shape3 s = in.shape();
  const std::size_t n = os.voxels();
  for (int ci = 0; ci < in.channels(); ++ci) {
    const T* src = in.channel(ci).data();
    for (int t = 0; t < 8; ++t) {
      const int di = t >> 2, dj = (t >> 1) & 1, dk = t & 1;
      T* row = col + (static_cast<std::size_t>(ci) * 8 + t) * n;
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          const T* line = src + s.index(2 * i + di, 2 * j + dj, dk);
          T* dst = row + os.index(i, j, 0);
          for (int k = 0; k < os.d; ++k) dst[k] = line[2 * k];
        }
    }
  }
}

template <class T>
void col2im_down2(const T* col, Field<T>& out, Shape3 os) {
  const Shape3 s = out.shape();
  const std::size_t n = os.voxels();
  for (int ci = 0; ci < out.channels(); ++ci) {
    T* dst = out.channel(ci).data();
    for (int t = 0; t < 8; ++t) {
      const int di = t >> 2, dj = (t >> 1) & 1, dk = t & 1;
      const T* row = col + (static_cast<std::size_t>(ci) * 8 + t) * n;
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          T* line = dst + s.index(2 * i + di, 2 * j + dj, dk);
          const T* src = row + os.index(i, j, 0);
          for (int k = 0; k < os.d; ++k) line[2 * k] = src[k];
        }
    }
  }
}

Shape3 halved(Shape3 s) {
  if (s.h % 2 || s.w % 2 || s.d % 2) throw Error(ErrorCode::ShapeNotDivisible, "cannot halve " + s.str());
  return {s.h / 2, s.w / 2, s.d / 2};
}

}  // namespace

template <class T>
void conv3_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out) {
  const std::size_t k = static_cast<std::size_t>(in.channels()) * 27;
  check_weights(w, k * static_cast<std::size_t>(out_channels), b, out_channels);
  const std::size_t n = in.voxels();
  auto& col = scratch<T>(k * n);
  im2col3(in, col.data());
  if (!(out.channels() == out_channels && out.shape() == in.shape())) out = Field<T>(out_channels, in.shape());
  MapR<T> o(out.data(), out_channels, static_cast<Eigen::Index>(n));
  o.noalias() = CMapR<T>(w.data(), out_channels, static_cast<Eigen::Index>(k)) *
                CMapR<T>(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  o.colwise() += CVec<T>(b.data(), out_channels);
}

template <class T>
void conv3_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                    std::span<T> grad_b, Field<T>* grad_in) {
  const int co = grad_out.channels();
  const auto k = static_cast<Eigen::Index>(in.channels()) * 27;
  const auto n = static_cast<Eigen::Index>(in.voxels());
  auto& col = scratch<T>(static_cast<std::size_t>(k * n));
  im2col3(in, col.data());
  CMapR<T> g(grad_out.data(), co, n);
  MapR<T>(grad_w.data(), co, k).noalias() += g * CMapR<T>(col.data(), k, n).transpose();
  add_row_sums(grad_out.data(), co, n, grad_b);
  if (grad_in) {
    MapR<T>(col.data(), k, n).noalias() = CMapR<T>(w.data(), co, k).transpose() * g;
    if (!grad_in->same_layout(in)) *grad_in = Field<T>(in.channels(), in.shape());
    col2im3(col.data(), *grad_in);
  }
}

template <class T>
void down2_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out) {
  const Shape3 os = halved(in.shape());
  const auto k = static_cast<Eigen::Index>(in.channels()) * 8;
  check_weights(w, static_cast<std::size_t>(k) * static_cast<std::size_t>(out_channels), b, out_channels);
  const auto n = static_cast<Eigen::Index>(os.voxels());
  auto& col = scratch<T>(static_cast<std::size_t>(k * n));
  im2col_down2(in, col.data(), os);
  if (!(out.channels() == out_channels && out.shape() == os)) out = Field<T>(out_channels, os);
  MapR<T> o(out.data(), out_channels, n);
  o.noalias() = CMapR<T>(w.data(), out_channels, k) * CMapR<T>(col.data(), k, n);
  o.colwise() += CVec<T>(b.data(), out_channels);
}

template <class T>
void down2_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                    std::span<T> grad_b, Field<T>* grad_in) {
  const Shape3 os = grad_out.shape();
  const int co = grad_out.channels();
  const auto k = static_cast<Eigen::Index>(in.channels()) * 8;
  const auto n = static_cast<Eigen::Index>(os.voxels());
  auto& col = scratch<T>(static_cast<std::size_t>(k * n));
  im2col_down2(in, col.data(), os);
  CMapR<T> g(grad_out.data(), co, n);
  MapR<T>(grad_w.data(), co, k).noalias() += g * CMapR<T>(col.data(), k, n).transpose();
  add_row_sums(grad_out.data(), co, n, grad_b);
  if (grad_in) {
    MapR<T>(col.data(), k, n).noalias() = CMapR<T>(w.data(), co, k).transpose() * g;
    if (!grad_in->same_layout(in)) *grad_in = Field<T>(in.channels(), in.shape());
    col2im_down2(col.data(), *grad_in, os);
  }
}

template <class T>
void up2_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels, Field<T>& out) {
  const Shape3 is = in.shape();
  const Shape3 os{is.h * 2, is.w * 2, is.d * 2};
  const auto ci = static_cast<Eigen::Index>(in.channels());
  const auto rows = static_cast<Eigen::Index>(out_channels) * 8;
  check_weights(w, static_cast<std::size_t>(rows * ci), b, out_channels);
  const auto n = static_cast<Eigen::Index>(is.voxels());
  auto& tmp = scratch<T>(static_cast<std::size_t>(rows * n));
  MapR<T>(tmp.data(), rows, n).noalias() = CMapR<T>(w.data(), rows, ci) * CMapR<T>(in.data(), ci, n);
  if (!(out.channels() == out_channels && out.shape() == os)) out = Field<T>(out_channels, os);
  for (int c = 0; c < out_channels; ++c) {
    T* dst = out.channel(c).data();
    const T bias = b[static_cast<std::size_t>(c)];
    for (int t = 0; t < 8; ++t) {
      const int di = t >> 2, dj = (t >> 1) & 1, dk = t & 1;
      const T* src = tmp.data() + (static_cast<std::size_t>(c) * 8 + t) * static_cast<std::size_t>(n);
      for (int i = 0; i < is.h; ++i)
        for (int j = 0; j < is.w; ++j) {
          T* line = dst + os.index(2 * i + di, 2 * j + dj, dk);
          const T* s = src + is.index(i, j, 0);
          for (int k = 0; k < is.d; ++k) line[2 * k] = s[k] + bias;
        }
    }
  }
}

template <class T>
void up2_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                  std::span<T> grad_b, Field<T>* grad_in) {
  const Shape3 is = in.shape();
  const Shape3 os = grad_out.shape();
  const int co = grad_out.channels();
  const auto ci = static_cast<Eigen::Index>(in.channels());
  const auto rows = static_cast<Eigen::Index>(co) * 8;
  const auto n = static_cast<Eigen::Index>(is.voxels());
  auto& tmp = scratch<T>(static_cast<std::size_t>(rows * n));
  for (int c = 0; c < co; ++c) {
    const T* src = grad_out.channel(c).data();
    T bias_grad = 0;
    for (int t = 0; t < 8; ++t) {
      const int di = t >> 2, dj = (t >> 1) & 1, dk = t & 1;
      T* dst = tmp.data() + (static_cast<std::size_t>(c) * 8 + t) * static_cast<std::size_t>(n);
      for (int i = 0; i < is.h; ++i)
        for (int j = 0; j < is.w; ++j) {
          const T* line = src + os.index(2 * i + di, 2 * j + dj, dk);
          T* d = dst + is.index(i, j, 0);
          for (int k = 0; k < is.d; ++k) {
            d[k] = line[2 * k];
            bias_grad += d[k];
          }
        }
    }
    grad_b[static_cast<std::size_t>(c)] += bias_grad;
  }
  CMapR<T> g(tmp.data(), rows, n);
  MapR<T>(grad_w.data(), rows, ci).noalias() += g * CMapR<T>(in.data(), ci, n).transpose();
  if (grad_in) {
    if (!grad_in->same_layout(in)) *grad_in = Field<T>(in.channels(), in.shape());
    MapR<T>(grad_in->data(), ci, n).noalias() = CMapR<T>(w.data(), rows, ci).transpose() * g;
  }
}

template <class T>
void pointwise_forward(const Field<T>& in, std::span<const T> w, std::span<const T> b, int out_channels,
                       Field<T>& out) {
  const auto ci = static_cast<Eigen::Index>(in.channels());
  check_weights(w, static_cast<std::size_t>(ci) * static_cast<std::size_t>(out_channels), b, out_channels);
  const auto n = static_cast<Eigen::Index>(in.voxels());
  if (!(out.channels() == out_channels && out.shape() == in.shape())) out = Field<T>(out_channels, in.shape());
  MapR<T> o(out.data(), out_channels, n);
  o.noalias() = CMapR<T>(w.data(), out_channels, ci) * CMapR<T>(in.data(), ci, n);
  o.colwise() += CVec<T>(b.data(), out_channels);
}

template <class T>
void pointwise_backward(const Field<T>& in, std::span<const T> w, const Field<T>& grad_out, std::span<T> grad_w,
                        std::span<T> grad_b, Field<T>* grad_in) {
  const int co = grad_out.channels();
  const auto ci = static_cast<Eigen::Index>(in.channels());
  const auto n = static_cast<Eigen::Index>(in.voxels());
  CMapR<T> g(grad_out.data(), co, n);
  MapR<T>(grad_w.data(), co, ci).noalias() += g * CMapR<T>(in.data(), ci, n).transpose();
  add_row_sums(grad_out.data(), co, n, grad_b);
  if (grad_in) {
    if (!grad_in->same_layout(in)) *grad_in = Field<T>(in.channels(), in.shape());
    MapR<T>(grad_in->data(), ci, n).noalias() = CMapR<T>(w.data(), co, ci).transpose() * g;
  }
}

template <class T>
void softmax_channels(Field<T>& logits) {
  const int c = logits.channels();
  const std::size_t n = logits.voxels();
  T* base = logits.data();
  std::vector<T> maxv(n, -std::numeric_limits<T>::infinity());
  for (int ch = 0; ch < c; ++ch) {
    const T* row = base + static_cast<std::size_t>(ch) * n;
    for (std::size_t v = 0; v < n; ++v) maxv[v] = std::max(maxv[v], row[v]);
  }
  std::vector<T> sum(n, T(0));
  for (int ch = 0; ch < c; ++ch) {
    T* row = base + static_cast<std::size_t>(ch) * n;
    for (std::size_t v = 0; v < n; ++v) {
      row[v] = std::exp(row[v] - maxv[v]);
      sum[v] += row[v];
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    T* row = base + static_cast<std::size_t>(ch) * n;
    for (std::size_t v = 0; v < n; ++v) row[v] /= sum[v];
  }
}

template <class T>
Field<T> softmax_backward(const Field<T>& probs, const Field<T>& grad_probs) {
  const int c = probs.channels();
  const std::size_t n = probs.voxels();
  std::vector<T> dot(n, T(0));
  for (int ch = 0; ch < c; ++ch) {
    const T* p = probs.channel(ch).data();
    const T* g = grad_probs.channel(ch).data();
    for (std::size_t v = 0; v < n; ++v) dot[v] += p[v] * g[v];
  }
  Field<T> out(c, probs.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T* p = probs.channel(ch).data();
    const T* g = grad_probs.channel(ch).data();
    T* o = out.channel(ch).data();
    for (std::size_t v = 0; v < n; ++v) o[v] = p[v] * (g[v] - dot[v]);
  }
  return out;
}

#define MPCL_INSTANTIATE_LAYERS(T)                                                                                  \
  template void conv3_forward<T>(const Field<T>&, std::span<const T>, std::span<const T>, int, Field<T>&);           \
  template void conv3_backward<T>(const Field<T>&, std::span<const T>, const Field<T>&, std::span<T>, std::span<T>, \
                                  Field<T>*);                                                                       \
  template void down2_forward<T>(const Field<T>&, std::span<const T>, std::span<const T>, int, Field<T>&);           \
  template void down2_backward<T>(const Field<T>&, std::span<const T>, const Field<T>&, std::span<T>, std::span<T>, \
                                  Field<T>*);                                                                       \
  template void up2_forward<T>(const Field<T>&, std::span<const T>, std::span<const T>, int, Field<T>&);             \
  template void up2_backward<T>(const Field<T>&, std::span<const T>, const Field<T>&, std::span<T>, std::span<T>,   \
                                Field<T>*);                                                                         \
  template void pointwise_forward<T>(const Field<T>&, std::span<const T>, std::span<const T>, int, Field<T>&);       \
  template void pointwise_backward<T>(const Field<T>&, std::span<const T>, const Field<T>&, std::span<T>,           \
                                      std::span<T>, Field<T>*);                                                     \
  template void softmax_channels<T>(Field<T>&);                                                                     \
  template Field<T> softmax_backward<T>(const Field<T>&, const Field<T>&);

MPCL_INSTANTIATE_LAYERS(float)
MPCL_INSTANTIATE_LAYERS(double)

}  // namespace mpcl::layers
