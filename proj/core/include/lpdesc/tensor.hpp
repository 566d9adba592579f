#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lpdesc {

/// Dense NCHW tensor.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int n, int c, int h, int w, T fill = T(0))
      : dims_{n, c, h, w},
        data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }
  const std::array<int, 4>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  /// Elements per sample (C * H * W).
  std::size_t sample_size() const {
    return static_cast<std::size_t>(dims_[1]) * dims_[2] * dims_[3];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor4& other) const { return dims_ == other.dims_; }
  bool operator==(const Tensor4&) const = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x;
  }

  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

std::string format_dims(const std::array<int, 4>& dims);

}  // namespace lpdesc
