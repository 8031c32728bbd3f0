#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "dualseg/error.hpp"

namespace dualseg {

/// Allocator with a fixed 64-byte alignment. Vectorized reductions split
/// their work by address, so a fixed alignment keeps results bitwise
/// reproducible from one allocation to the next.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dimensions of a dense NCHW array.
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const noexcept { return static_cast<std::size_t>(c) * h * w; }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Dense row-major NCHW array owning its storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {}
  Tensor(Shape4 shape, const std::vector<T>& values) : Tensor(shape, AlignedVector<T>(values.begin(), values.end())) {}
  Tensor(Shape4 shape, AlignedVector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.count()) {
      throw Error(Errc::ShapeMismatch, "tensor storage does not match " + to_string(shape_));
    }
  }

  const Shape4& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

  T* sample(int n) noexcept { return data_.data() + n * shape_.sample(); }
  const T* sample(int n) const noexcept { return data_.data() + n * shape_.sample(); }
  T* plane(int n, int c) noexcept { return sample(n) + c * shape_.plane(); }
  const T* plane(int n, int c) const noexcept { return sample(n) + c * shape_.plane(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{}); }

  /// Same storage viewed with a different shape of equal element count.
  Tensor reshaped(Shape4 shape) const {
    if (shape.count() != shape_.count()) {
      throw Error(Errc::ShapeMismatch, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(shape, data_);
  }

  template <class U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same(const Tensor& other, const char* what) const {
    if (!(shape_ == other.shape_)) {
      throw Error(Errc::ShapeMismatch, std::string(what) + ": " + to_string(shape_) + " vs " + to_string(other.shape_));
    }
  }

 private:
  std::size_t index(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape4 shape_;
  AlignedVector<T> data_;
};

/// Concatenate along the channel axis.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw Error(Errc::ShapeMismatch, "concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> out({a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t sa = a.shape().sample();
  const std::size_t sb = b.shape().sample();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample(n), sa, out.sample(n));
    std::copy_n(b.sample(n), sb, out.sample(n) + sa);
  }
  return out;
}

/// Inverse of concat_channels: the first `first_channels` go left.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels) {
  const Shape4 s = x.shape();
  Tensor<T> a({s.n, first_channels, s.h, s.w});
  Tensor<T> b({s.n, s.c - first_channels, s.h, s.w});
  const std::size_t sa = a.shape().sample();
  const std::size_t sb = b.shape().sample();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(x.sample(n), sa, a.sample(n));
    std::copy_n(x.sample(n) + sa, sb, b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

/// Samples [begin, begin + count) along the batch axis.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, int begin, int count) {
  Shape4 s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s.n) {
    throw Error(Errc::ShapeMismatch, "slice_batch out of range for " + to_string(s));
  }
  s.n = count;
  Tensor<T> out(s);
  std::copy_n(x.sample(begin), s.count(), out.data());
  return out;
}

/// Writes `part` into samples [begin, begin + part.n()) of `x`.
template <class T>
void assign_batch(Tensor<T>& x, int begin, const Tensor<T>& part) {
  if (part.empty()) return;
  std::copy_n(part.data(), part.size(), x.sample(begin));
}

/// Binary masks for a batch of 2D images, shape (n, h, w).
struct MaskBatch {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<unsigned char> values;

  std::size_t count() const noexcept { return values.size(); }
};

}  // namespace dualseg
