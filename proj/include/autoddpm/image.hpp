#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace autoddpm {

// Row-major 2D grid. Images carry intensities, heatmaps carry non-negative
// anomaly scores and masks carry {0,1}.
template <class T>
class Plane {
 public:
  using value_type = T;

  Plane() = default;
  Plane(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("Plane: negative dimensions");
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }
  Plane(int height, int width, std::vector<T> data) : height_(height), width_(width), data_(std::move(data)) {
    if (height < 0 || width < 0 ||
        data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
      throw std::invalid_argument("Plane: data length does not match height*width");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col) noexcept { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const noexcept {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& vector() const noexcept { return data_; }

  bool same_shape(const auto& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Plane& a, const Plane& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

template <class T>
using ImageT = Plane<T>;
using Image = Plane<float>;
using Heatmap = Plane<float>;
using BinaryMask = Plane<std::uint8_t>;

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()) + ")");
  }
}

template <class T>
bool all_finite(const Plane<T>& p) {
  for (const T v : p.values()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <class T>
Plane<T> clamp01(Plane<T> p) {
  for (T& v : p.values()) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
  return p;
}

inline std::size_t popcount(const BinaryMask& m) {
  std::size_t n = 0;
  for (const auto v : m.values()) n += v != 0;
  return n;
}

template <class To, class From>
Plane<To> plane_cast(const Plane<From>& p) {
  std::vector<To> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<To>(p[i]);
  return Plane<To>(p.height(), p.width(), std::move(out));
}

}  // namespace autoddpm
