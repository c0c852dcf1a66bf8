#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpcl/error.hpp"

namespace mpcl {

/// Spatial extent of a volume, H x W x D, stored C-order (depth fastest).
struct Shape3 {
  int h = 0;
  int w = 0;
  int d = 0;

  constexpr std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(d);
  }
  constexpr std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(w) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(d) +
           static_cast<std::size_t>(k);
  }
  constexpr bool fits_in(const Shape3& outer) const noexcept {
    return h <= outer.h && w <= outer.w && d <= outer.d;
  }
  constexpr int operator[](int axis) const noexcept { return axis == 0 ? h : (axis == 1 ? w : d); }

  bool operator==(const Shape3&) const = default;

  std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
  }
};

/// Dense single-channel 3D grid.
template <class T>
class Grid {
public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.voxels(), fill) {}
  Grid(Shape3 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.voxels())
      throw Error(ErrorCode::ShapeMismatch, "grid data size does not match " + shape_.str());
  }

  const Shape3& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(int i, int j, int k) noexcept { return data_[shape_.index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const noexcept { return data_[shape_.index(i, j, k)]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool operator==(const Grid&) const = default;

private:
  Shape3 shape_{};
  std::vector<T> data_;
};

/// Dense multi-channel 3D field, channel-major (channels x H x W x D).
template <class T>
class Field {
public:
  using value_type = T;

  Field() = default;
  Field(int channels, Shape3 shape, T fill = T{})
      : channels_(channels), shape_(shape), data_(static_cast<std::size_t>(channels) * shape.voxels(), fill) {}

  int channels() const noexcept { return channels_; }
  const Shape3& shape() const noexcept { return shape_; }
  std::size_t voxels() const noexcept { return shape_.voxels(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int c, std::size_t voxel) noexcept { return data_[static_cast<std::size_t>(c) * voxels() + voxel]; }
  const T& at(int c, std::size_t voxel) const noexcept {
    return data_[static_cast<std::size_t>(c) * voxels() + voxel];
  }
  std::span<T> channel(int c) noexcept { return {data_.data() + static_cast<std::size_t>(c) * voxels(), voxels()}; }
  std::span<const T> channel(int c) const noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * voxels(), voxels()};
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool same_layout(const Field& other) const noexcept {
    return channels_ == other.channels_ && shape_ == other.shape_;
  }

  bool operator==(const Field&) const = default;

private:
  int channels_ = 0;
  Shape3 shape_{};
  std::vector<T> data_;
};

template <class To, class From>
Grid<To> grid_cast(const Grid<From>& g) {
  Grid<To> out(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<To>(g[i]);
  return out;
}

template <class To, class From>
Field<To> field_cast(const Field<From>& f) {
  Field<To> out(f.channels(), f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) out.values()[i] = static_cast<To>(f.values()[i]);
  return out;
}

using LabelGrid = Grid<std::uint8_t>;

/// One-hot encoding of a label grid into a C-channel field.
template <class T>
Field<T> one_hot(const LabelGrid& labels, int classes) {
  Field<T> out(classes, labels.shape());
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const int c = labels[v];
    if (c >= classes) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(c) + " outside [0," +
                                                               std::to_string(classes) + ")");
    out.at(c, v) = T(1);
  }
  return out;
}

/// Per-voxel argmax over channels; ties resolve to the lowest class index.
template <class T>
LabelGrid argmax_labels(const Field<T>& probs) {
  LabelGrid out(probs.shape());
  const std::size_t n = probs.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    int best = 0;
    T best_value = probs.at(0, v);
    for (int c = 1; c < probs.channels(); ++c) {
      if (probs.at(c, v) > best_value) {
        best_value = probs.at(c, v);
        best = c;
      }
    }
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace mpcl
