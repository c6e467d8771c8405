#ifndef REVFACE_FILTERS_HPP_
#define REVFACE_FILTERS_HPP_

#include <cmath>
#include <span>
#include <vector>

#include "revface/image.hpp"

namespace revface {

/// Mirror index without repeating the edge sample (d c b | a b c d | c b a).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Normalized 1-D Gaussian of odd length `size`.
inline std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw Error("kernel size must be odd");
  if (!(sigma > 0)) throw Error("gaussian sigma must be positive");
  std::vector<double> k(size);
  const int r = size / 2;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable correlation of a single row-major plane with the same 1-D
/// kernel along both axes, reflect-padded. Works for any scalar type.
template <class T, class K>
void filter_plane(std::span<const T> in, std::span<T> out, int height,
                  int width, std::span<const K> kernel) {
  const int r = static_cast<int>(kernel.size()) / 2;
  std::vector<T> tmp(in.size());
  for (int y = 0; y < height; ++y) {
    const T* row = in.data() + static_cast<std::size_t>(y) * width;
    T* dst = tmp.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      T acc = 0;
      for (int k = -r; k <= r; ++k) {
        acc += static_cast<T>(kernel[k + r]) * row[reflect_index(x + k, width)];
      }
      dst[x] = acc;
    }
  }
  for (int y = 0; y < height; ++y) {
    T* dst = out.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) dst[x] = 0;
    for (int k = -r; k <= r; ++k) {
      const T w = static_cast<T>(kernel[k + r]);
      const T* src =
          tmp.data() + static_cast<std::size_t>(reflect_index(y + k, height)) *
                           width;
      for (int x = 0; x < width; ++x) dst[x] += w * src[x];
    }
  }
}

/// Adjoint of filter_plane: scatters each output sample back to the input
/// positions that produced it.
template <class T, class K>
void filter_plane_adjoint(std::span<const T> grad_out, std::span<T> grad_in,
                          int height, int width, std::span<const K> kernel) {
  const int r = static_cast<int>(kernel.size()) / 2;
  std::vector<T> tmp(grad_out.size(), T{0});
  for (int y = 0; y < height; ++y) {
    const T* src = grad_out.data() + static_cast<std::size_t>(y) * width;
    for (int k = -r; k <= r; ++k) {
      const T w = static_cast<T>(kernel[k + r]);
      T* dst =
          tmp.data() + static_cast<std::size_t>(reflect_index(y + k, height)) *
                           width;
      for (int x = 0; x < width; ++x) dst[x] += w * src[x];
    }
  }
  for (T& v : grad_in) v = 0;
  for (int y = 0; y < height; ++y) {
    const T* src = tmp.data() + static_cast<std::size_t>(y) * width;
    T* dst = grad_in.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      for (int k = -r; k <= r; ++k) {
        dst[reflect_index(x + k, width)] += static_cast<T>(kernel[k + r]) * src[x];
      }
    }
  }
}

inline Image filter_image(const Image& img, std::span<const double> kernel) {
  Image out(img.height(), img.width());
  for (int c = 0; c < Image::kChannels; ++c) {
    filter_plane<float, double>(img.plane(c), out.plane(c), img.height(),
                                img.width(), kernel);
  }
  return out;
}

namespace detail {

inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace detail

enum class ResampleMode { kLinear, kBicubic };

/// Resize with half-pixel-centre alignment and edge clamping. Bicubic uses
/// the Keys kernel with a = -0.5; results are clamped to [0,1].
inline Image resize(const Image& img, int height, int width,
                    ResampleMode mode) {
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < height; ++y) {
      const double fy = (y + 0.5) * sy - 0.5;
      const int y0 = static_cast<int>(std::floor(fy));
      const double ty = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = (x + 0.5) * sx - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const double tx = fx - x0;
        double acc = 0;
        if (mode == ResampleMode::kLinear) {
          for (int j = 0; j < 2; ++j) {
            const double wy = j == 0 ? 1 - ty : ty;
            const int yy = detail::clamp_index(y0 + j, img.height());
            for (int i = 0; i < 2; ++i) {
              const double wx = i == 0 ? 1 - tx : tx;
              acc += wy * wx *
                     img.at(c, yy, detail::clamp_index(x0 + i, img.width()));
            }
          }
        } else {
          for (int j = -1; j <= 2; ++j) {
            const double wy = detail::cubic_weight(j - ty);
            const int yy = detail::clamp_index(y0 + j, img.height());
            for (int i = -1; i <= 2; ++i) {
              acc += wy * detail::cubic_weight(i - tx) *
                     img.at(c, yy, detail::clamp_index(x0 + i, img.width()));
            }
          }
        }
        out.at(c, y, x) = clamp01(static_cast<float>(acc));
      }
    }
  }
  return out;
}

}  // namespace revface

#endif  // REVFACE_FILTERS_HPP_
