#ifndef REVFACE_IMAGE_HPP_
#define REVFACE_IMAGE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace revface {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H x W x 3 image with intensities in [0,1], stored channel-planar
/// (all of R, then G, then B; each plane row-major).
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
      throw Error("image dimensions must be positive, got " +
                  std::to_string(height) + "x" + std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return kChannels; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * width_;
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::span<float> plane(int c) {
    return std::span<float>(data_).subspan(c * pixel_count(), pixel_count());
  }
  std::span<const float> plane(int c) const {
    return std::span<const float>(data_).subspan(c * pixel_count(),
                                                 pixel_count());
  }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

inline void require_same_shape(const Image& a, const Image& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw Error(std::string(what) + ": shape mismatch (" +
                std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                " vs " + std::to_string(b.height()) + "x" +
                std::to_string(b.width()) + ")");
  }
}

/// Checks the dataset payload invariants: both sides >= 8 and divisible by 4.
inline void require_payload_shape(int height, int width) {
  if (height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0) {
    throw Error("image resolution " + std::to_string(height) + "x" +
                std::to_string(width) +
                " must be at least 8x8 and divisible by 4");
  }
}

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

inline void clamp_in_place(Image& img) {
  for (float& v : img.data()) v = clamp01(v);
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0f));
}

/// Snaps every value to the nearest multiple of 1/255, as a PNG round trip
/// would.
inline void quantize_in_place(Image& img) {
  for (float& v : img.data()) v = static_cast<float>(to_byte(v)) / 255.0f;
}

inline Image quantized(Image img) {
  quantize_in_place(img);
  return img;
}

inline bool all_in_unit_range(const Image& img) {
  return std::all_of(img.data().begin(), img.data().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace revface

#endif  // REVFACE_IMAGE_HPP_
