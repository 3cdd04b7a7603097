#pragma once

#include <cstddef>
#include <vector>

#include "deformsplat/error.hpp"

namespace deformsplat {

/// Row-major interleaved image. Pixel (x, y) has its center at integer
/// coordinates, x along the width.
template <typename T> class Image {
public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0)
      throw ContractError("image dimensions must be non-negative");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T &operator()(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const T &operator()(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::vector<T> &data() { return data_; }
  const std::vector<T> &data() const { return data_; }

  bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
  template <typename U> bool same_shape(const Image<U> &o) const {
    return width_ == o.width() && height_ == o.height();
  }

  bool operator==(const Image &) const = default;

private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using ImageF = Image<double>;
using Mask = Image<unsigned char>;

template <typename A, typename B>
void require_same_shape(const Image<A> &a, const Image<B> &b, const char *what) {
  if (!a.same_shape(b))
    throw ContractError(std::string(what) + ": image shapes differ");
}

} // namespace deformsplat
