#pragma once

#include <cstddef>
#include <vector>

namespace dualseg {

struct Dims3 {
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const noexcept { return static_cast<std::size_t>(d) * h * w; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Dense (D, H, W) array, W fastest.
template <class T>
struct Grid3 {
  Dims3 dims;
  std::vector<T> values;

  Grid3() = default;
  explicit Grid3(Dims3 d, T fill = T{}) : dims(d), values(d.count(), fill) {}

  T& at(int z, int y, int x) noexcept { return values[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x]; }
  const T& at(int z, int y, int x) const noexcept {
    return values[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x];
  }
  const T* slice(int z) const noexcept { return values.data() + static_cast<std::size_t>(z) * dims.h * dims.w; }

  friend bool operator==(const Grid3&, const Grid3&) = default;
};

/// Dense (H, W) array, row-major.
template <class T>
struct Grid2 {
  int h = 0;
  int w = 0;
  std::vector<T> values;

  Grid2() = default;
  Grid2(int rows, int cols, T fill = T{}) : h(rows), w(cols), values(static_cast<std::size_t>(rows) * cols, fill) {}
  Grid2(int rows, int cols, std::vector<T> v) : h(rows), w(cols), values(std::move(v)) {}

  T& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * w + x]; }

  friend bool operator==(const Grid2&, const Grid2&) = default;
};

using Volume = Grid3<float>;
using LabelVolume = Grid3<unsigned char>;
using Image = Grid2<float>;
using Mask = Grid2<unsigned char>;

}  // namespace dualseg
