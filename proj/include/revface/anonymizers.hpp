#ifndef REVFACE_ANONYMIZERS_HPP_
#define REVFACE_ANONYMIZERS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "revface/dataset.hpp"
#include "revface/filters.hpp"
#include "revface/image.hpp"
#include "revface/pca.hpp"
#include "revface/rng.hpp"

namespace revface {

// ---------------------------------------------------------------------------
// Parameters. Defaults are the evaluation settings for 224x224 faces.

struct IdentityParams {};
struct EyeMaskParams {};
struct BlockPermuteParams {
  int block_size = 32;
};
struct PixelRelocateParams {
  int steps = 50;
};
struct GaussianNoiseParams {
  double sigma = 200;  // 8-bit units
};
struct GaussianBlurParams {
  int kernel = 29;
};
struct PixelateParams {
  int size = 16;  // cells per axis
};
struct KRtioParams {
  int overlays = 3;
  double alpha = 0.4;
  int block_size = 16;
};
struct DpPixParams {
  double epsilon = 5;
  int b = 12;
  int m = 16;
};
struct DpSnowParams {
  double delta = 0.5;
};
struct DpSampParams {
  double epsilon = 25;
  int k = 24;
  double m = 12;  // colour threshold, 8-bit units
};
struct KSamePixelParams {
  int k = 10;
};
struct KSameEigenParams {
  int k = 10;
};

using AnonymizerParams =
    std::variant<IdentityParams, EyeMaskParams, BlockPermuteParams,
                 PixelRelocateParams, GaussianNoiseParams, GaussianBlurParams,
                 PixelateParams, KRtioParams, DpPixParams, DpSnowParams,
                 DpSampParams, KSamePixelParams, KSameEigenParams>;

inline constexpr std::array<std::string_view, 13> kMethodNames = {
    "Identity",   "EyeMask", "BlockPermute", "PixelRelocate", "GaussianNoise",
    "GaussianBlur", "Pixelate", "KRTIO", "DPPix", "DPSnow", "DPSamp",
    "KSamePixel", "KSameEigen"};

/// Tagged method plus parameters; together with `key` and `noise_seed` it
/// fully determines the anonymization of an image with a given id.
struct AnonymizerSpec {
  AnonymizerParams params;
  std::uint64_t key = 0;
  std::uint64_t noise_seed = 0;

  std::string_view method() const { return kMethodNames[params.index()]; }
  bool needs_background() const {
    return std::holds_alternative<KSamePixelParams>(params) ||
           std::holds_alternative<KSameEigenParams>(params) ||
           std::holds_alternative<KRtioParams>(params);
  }
};

inline void validate(const AnonymizerSpec& spec) {
  std::visit(
      [](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, BlockPermuteParams>) {
          if (p.block_size < 1) throw Error("BlockPermute: block_size >= 1");
        } else if constexpr (std::is_same_v<P, PixelRelocateParams>) {
          if (p.steps < 1) throw Error("PixelRelocate: steps >= 1");
        } else if constexpr (std::is_same_v<P, GaussianNoiseParams>) {
          if (!(p.sigma >= 0)) throw Error("GaussianNoise: sigma >= 0");
        } else if constexpr (std::is_same_v<P, GaussianBlurParams>) {
          if (p.kernel < 3 || p.kernel % 2 == 0) {
            throw Error("GaussianBlur: kernel must be odd and >= 3");
          }
        } else if constexpr (std::is_same_v<P, PixelateParams>) {
          if (p.size < 1) throw Error("Pixelate: size >= 1");
        } else if constexpr (std::is_same_v<P, KRtioParams>) {
          if (p.overlays < 1) throw Error("KRTIO: overlays >= 1");
          if (!(p.alpha >= 0 && p.alpha <= 1)) throw Error("KRTIO: alpha in [0,1]");
          if (p.block_size < 1) throw Error("KRTIO: block_size >= 1");
        } else if constexpr (std::is_same_v<P, DpPixParams>) {
          if (!(p.epsilon > 0)) throw Error("DPPix: epsilon > 0");
          if (p.b < 1 || p.m < 1) throw Error("DPPix: b >= 1 and m >= 1");
        } else if constexpr (std::is_same_v<P, DpSnowParams>) {
          if (!(p.delta >= 0 && p.delta <= 1)) throw Error("DPSnow: delta in [0,1]");
        } else if constexpr (std::is_same_v<P, DpSampParams>) {
          if (!(p.epsilon > 0)) throw Error("DPSamp: epsilon > 0");
          if (p.k < 2) throw Error("DPSamp: k >= 2");
          if (!(p.m >= 0)) throw Error("DPSamp: m >= 0");
        } else if constexpr (std::is_same_v<P, KSamePixelParams> ||
                             std::is_same_v<P, KSameEigenParams>) {
          if (p.k < 2) throw Error("k-Same: k >= 2");
        }
      },
      spec.params);
}

inline nlohmann::json to_json(const AnonymizerSpec& spec) {
  nlohmann::json params = nlohmann::json::object();
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, BlockPermuteParams>) {
          params["block_size"] = p.block_size;
        } else if constexpr (std::is_same_v<P, PixelRelocateParams>) {
          params["steps"] = p.steps;
        } else if constexpr (std::is_same_v<P, GaussianNoiseParams>) {
          params["sigma"] = p.sigma;
        } else if constexpr (std::is_same_v<P, GaussianBlurParams>) {
          params["kernel"] = p.kernel;
        } else if constexpr (std::is_same_v<P, PixelateParams>) {
          params["size"] = p.size;
        } else if constexpr (std::is_same_v<P, KRtioParams>) {
          params["K"] = p.overlays;
          params["alpha"] = p.alpha;
          params["block_size"] = p.block_size;
        } else if constexpr (std::is_same_v<P, DpPixParams>) {
          params["epsilon"] = p.epsilon;
          params["b"] = p.b;
          params["m"] = p.m;
        } else if constexpr (std::is_same_v<P, DpSnowParams>) {
          params["delta"] = p.delta;
        } else if constexpr (std::is_same_v<P, DpSampParams>) {
          params["epsilon"] = p.epsilon;
          params["k"] = p.k;
          params["m"] = p.m;
        } else if constexpr (std::is_same_v<P, KSamePixelParams> ||
                             std::is_same_v<P, KSameEigenParams>) {
          params["k"] = p.k;
        }
      },
      spec.params);
  return {{"method", spec.method()},
          {"params", params},
          {"key", spec.key},
          {"noise_seed", spec.noise_seed}};
}

/// Parses `{method, params{...}, key, noise_seed}`. Missing parameters take
/// their defaults.
inline AnonymizerSpec anonymizer_from_json(const nlohmann::json& j) {
  const std::string method = j.at("method").get<std::string>();
  const nlohmann::json params = j.value("params", nlohmann::json::object());
  AnonymizerSpec spec;
  spec.key = j.value("key", std::uint64_t{0});
  spec.noise_seed = j.value("noise_seed", std::uint64_t{0});
  auto get = [&](const char* name, auto fallback) {
    return params.value(name, fallback);
  };
  if (method == "Identity") {
    spec.params = IdentityParams{};
  } else if (method == "EyeMask") {
    spec.params = EyeMaskParams{};
  } else if (method == "BlockPermute") {
    spec.params = BlockPermuteParams{get("block_size", 32)};
  } else if (method == "PixelRelocate") {
    spec.params = PixelRelocateParams{get("steps", 50)};
  } else if (method == "GaussianNoise") {
    spec.params = GaussianNoiseParams{get("sigma", 200.0)};
  } else if (method == "GaussianBlur") {
    spec.params = GaussianBlurParams{get("kernel", 29)};
  } else if (method == "Pixelate") {
    spec.params = PixelateParams{get("size", 16)};
  } else if (method == "KRTIO") {
    spec.params = KRtioParams{get("K", 3), get("alpha", 0.4), get("block_size", 16)};
  } else if (method == "DPPix") {
    spec.params = DpPixParams{get("epsilon", 5.0), get("b", 12), get("m", 16)};
  } else if (method == "DPSnow") {
    spec.params = DpSnowParams{get("delta", 0.5)};
  } else if (method == "DPSamp") {
    spec.params = DpSampParams{get("epsilon", 25.0), get("k", 24), get("m", 12.0)};
  } else if (method == "KSamePixel") {
    spec.params = KSamePixelParams{get("k", 10)};
  } else if (method == "KSameEigen") {
    spec.params = KSameEigenParams{get("k", 10)};
  } else {
    throw Error("unknown anonymization method '" + method + "'");
  }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Geometry-only methods.

/// Black bar over rows [0.30H, 0.45H) and columns [0.15W, 0.85W).
inline Image eye_mask(const Image& img) {
  Image out = img;
  const int y0 = static_cast<int>(std::floor(0.30 * img.height()));
  const int y1 = static_cast<int>(std::floor(0.45 * img.height()));
  const int x0 = static_cast<int>(std::floor(0.15 * img.width()));
  const int x1 = static_cast<int>(std::floor(0.85 * img.width()));
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) out.at(c, y, x) = 0.0f;
    }
  }
  return out;
}

/// Uniform permutation of `count` items determined by (key, domain, grid).
inline std::vector<int> keyed_permutation(std::uint64_t key,
                                          std::string_view domain, int rows,
                                          int cols) {
  std::vector<int> perm(static_cast<std::size_t>(rows) * cols);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(key, domain, static_cast<std::uint64_t>(rows),
                      static_cast<std::uint64_t>(cols)));
  rng.shuffle(std::span<int>(perm));
  return perm;
}

inline std::vector<int> invert_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  }
  return inv;
}

/// Block grid rows/cols covered by full blocks.
inline std::pair<int, int> block_grid(const Image& img, int block_size) {
  return {img.height() / block_size, img.width() / block_size};
}

/// Output block i takes input block perm[i]; trailing partial blocks stay.
inline Image apply_block_permutation(const Image& img, int block_size,
                                     std::span<const int> perm) {
  const auto [rows, cols] = block_grid(img, block_size);
  if (perm.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error("block permutation size does not match the block grid");
  }
  Image out = img;
  for (int dst = 0; dst < rows * cols; ++dst) {
    const int src = perm[dst];
    const int dy = (dst / cols) * block_size, dx = (dst % cols) * block_size;
    const int sy = (src / cols) * block_size, sx = (src % cols) * block_size;
    for (int c = 0; c < Image::kChannels; ++c) {
      for (int y = 0; y < block_size; ++y) {
        for (int x = 0; x < block_size; ++x) {
          out.at(c, dy + y, dx + x) = img.at(c, sy + y, sx + x);
        }
      }
    }
  }
  return out;
}

inline std::vector<int> block_permutation(const Image& img, int block_size,
                                          std::uint64_t key) {
  const auto [rows, cols] = block_grid(img, block_size);
  return keyed_permutation(key, "block_permute", rows, cols);
}

inline Image block_permute(const Image& img, int block_size,
                           std::uint64_t key) {
  if (block_size < 1) throw Error("block_permute: block_size >= 1");
  return apply_block_permutation(img, block_size,
                                 block_permutation(img, block_size, key));
}

/// Source pixel index for every output pixel after `steps` compositions of
/// the keyed pixel permutation.
inline std::vector<int> relocation_map(int height, int width, int steps,
                                       std::uint64_t key) {
  if (steps < 1) throw Error("pixel_relocate: steps >= 1");
  const std::vector<int> base =
      keyed_permutation(key, "pixel_relocate", height, width);
  std::vector<int> composed = base;
  std::vector<int> next(base.size());
  for (int s = 1; s < steps; ++s) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      next[i] = composed[static_cast<std::size_t>(base[i])];
    }
    composed.swap(next);
  }
  return composed;
}

/// out[i] = in[map[i]] for every channel.
inline Image gather_pixels(const Image& img, std::span<const int> map) {
  if (map.size() != img.pixel_count()) {
    throw Error("pixel map size does not match the image");
  }
  Image out(img.height(), img.width());
  for (int c = 0; c < Image::kChannels; ++c) {
    const auto src = img.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < map.size(); ++i) {
      dst[i] = src[static_cast<std::size_t>(map[i])];
    }
  }
  return out;
}

inline Image pixel_relocate(const Image& img, int steps, std::uint64_t key) {
  return gather_pixels(img, relocation_map(img.height(), img.width(), steps, key));
}

// ---------------------------------------------------------------------------
// Noise, blur and pixelation.

/// Pre-clamp noise field in [0,1] units, i.i.d. N(0, (sigma/255)^2).
inline std::vector<float> gaussian_noise_field(std::size_t count, double sigma,
                                               std::uint64_t noise_seed) {
  std::vector<float> noise(count);
  Rng rng(derive_seed(noise_seed, "gaussian_noise"));
  for (float& v : noise) v = static_cast<float>(rng.normal() * sigma / 255.0);
  return noise;
}

inline Image gaussian_noise(const Image& img, double sigma,
                            std::uint64_t noise_seed) {
  if (!(sigma >= 0)) throw Error("gaussian_noise: sigma >= 0");
  Image out = img;
  if (sigma == 0) return out;
  const auto noise = gaussian_noise_field(img.size(), sigma, noise_seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = clamp01(out.data()[i] + noise[i]);
  }
  return out;
}

/// Gaussian sigma implied by an odd kernel size.
inline double blur_sigma(int kernel) {
  return 0.3 * ((kernel - 1) / 2.0 - 1) + 0.8;
}

inline Image gaussian_blur(const Image& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw Error("gaussian_blur: kernel size must be odd, got " +
                std::to_string(kernel));
  }
  const auto k = gaussian_kernel(kernel, blur_sigma(kernel));
  Image out = filter_image(img, k);
  clamp_in_place(out);
  return out;
}

/// Boundaries 0 = b_0 < ... < b_n = extent of n near-equal cells.
inline std::vector<int> even_cells(int extent, int count) {
  std::vector<int> bounds(count + 1);
  for (int i = 0; i <= count; ++i) {
    bounds[i] = static_cast<int>(static_cast<long>(i) * extent / count);
  }
  return bounds;
}

/// Boundaries of fixed-size cells; the last one may be partial.
inline std::vector<int> fixed_cells(int extent, int cell) {
  std::vector<int> bounds;
  for (int b = 0; b < extent; b += cell) bounds.push_back(b);
  bounds.push_back(extent);
  return bounds;
}

/// Replaces every cell by its per-channel mean; returns the per-cell means
/// in channel, row, col order.
inline std::vector<double> average_cells(Image& img, std::span<const int> rows,
                                         std::span<const int> cols) {
  std::vector<double> means;
  for (int c = 0; c < Image::kChannels; ++c) {
    for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
      for (std::size_t q = 0; q + 1 < cols.size(); ++q) {
        double sum = 0;
        for (int y = rows[r]; y < rows[r + 1]; ++y) {
          for (int x = cols[q]; x < cols[q + 1]; ++x) sum += img.at(c, y, x);
        }
        const double mean =
            sum / ((rows[r + 1] - rows[r]) * (cols[q + 1] - cols[q]));
        means.push_back(mean);
        for (int y = rows[r]; y < rows[r + 1]; ++y) {
          for (int x = cols[q]; x < cols[q + 1]; ++x) {
            img.at(c, y, x) = static_cast<float>(mean);
          }
        }
      }
    }
  }
  return means;
}

/// size x size grid of constant cells.
inline Image pixelate(const Image& img, int size) {
  if (size < 1 || size > std::min(img.height(), img.width())) {
    throw Error("pixelate: size must lie in [1, min(H, W)]");
  }
  Image out = img;
  average_cells(out, even_cells(img.height(), size), even_cells(img.width(), size));
  return out;
}

/// Laplace scale of DP-Pix in [0,1] intensity units.
inline double dp_pix_scale(double epsilon, int b, int m) {
  return static_cast<double>(m) / (static_cast<double>(b) * b * epsilon);
}

/// Pixelates with m x m cells and adds per-cell, per-channel Laplace noise.
inline Image dp_pix(const Image& img, double epsilon, int b, int m,
                    std::uint64_t noise_seed) {
  if (!(epsilon > 0) || b < 1 || m < 1) throw Error("dp_pix: invalid parameters");
  Image out = img;
  const auto rows = fixed_cells(img.height(), m);
  const auto cols = fixed_cells(img.width(), m);
  average_cells(out, rows, cols);
  const double scale = dp_pix_scale(epsilon, b, m);
  Rng rng(derive_seed(noise_seed, "dp_pix"));
  for (int c = 0; c < Image::kChannels; ++c) {
    for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
      for (std::size_t q = 0; q + 1 < cols.size(); ++q) {
        const float noise = static_cast<float>(rng.laplace(scale));
        for (int y = rows[r]; y < rows[r + 1]; ++y) {
          for (int x = cols[q]; x < cols[q + 1]; ++x) {
            out.at(c, y, x) = clamp01(out.at(c, y, x) + noise);
          }
        }
      }
    }
  }
  return out;
}

inline constexpr float kSnowGray = 127.0f / 255.0f;

/// Exactly round(delta * H * W) uniformly chosen pixels become gray.
inline Image dp_snow(const Image& img, double delta, std::uint64_t noise_seed) {
  if (!(delta >= 0 && delta <= 1)) throw Error("dp_snow: delta in [0,1]");
  Image out = img;
  const std::size_t n = img.pixel_count();
  const auto count = static_cast<std::size_t>(std::llround(delta * n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(noise_seed, "dp_snow"));
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(order[i], order[i + rng.index(n - i)]);
  }
  for (std::size_t i = 0; i < count; ++i) {
    for (int c = 0; c < Image::kChannels; ++c) {
      out.plane(c)[static_cast<std::size_t>(order[i])] = kSnowGray;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DP-Samp.

struct KMeansResult {
  std::vector<std::array<double, 3>> centers;
  std::vector<int> labels;
};

/// k-means++ seeded clustering of pixel colours; at most 50 Lloyd
/// iterations, ties to the lowest cluster index.
inline KMeansResult kmeans_colors(const Image& img, int k, std::uint64_t seed,
                                  int max_iterations = 50) {
  const std::size_t n = img.pixel_count();
  auto color = [&](std::size_t i) {
    return std::array<double, 3>{img.plane(0)[i], img.plane(1)[i],
                                 img.plane(2)[i]};
  };
  auto dist2 = [](const std::array<double, 3>& a,
                  const std::array<double, 3>& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
    return d;
  };
  Rng rng(derive_seed(seed, "kmeans"));
  KMeansResult result;
  result.centers.push_back(color(rng.index(n)));
  std::vector<double> nearest(n);
  while (static_cast<int>(result.centers.size()) < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : result.centers) best = std::min(best, dist2(color(i), c));
      nearest[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = rng.index(n);
    } else {
      double target = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        target -= nearest[pick];
        if (target < 0) break;
      }
    }
    result.centers.push_back(color(pick));
  }
  result.labels.assign(n, -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = dist2(color(i), result.centers[0]);
      for (int j = 1; j < k; ++j) {
        const double d = dist2(color(i), result.centers[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (result.labels[i] != best) {
        result.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::array<double, 3>> sums(k, {0, 0, 0});
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto col = color(i);
      for (int c = 0; c < 3; ++c) sums[result.labels[i]][c] += col[c];
      ++counts[result.labels[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (int c = 0; c < 3; ++c) result.centers[j][c] = sums[j][c] / counts[j];
    }
  }
  return result;
}

/// Positions (flat indices, ascending) that DP-Samp keeps.
inline std::vector<int> dp_samp_sample(const Image& img, double epsilon, int k,
                                       double m, std::uint64_t noise_seed) {
  if (!(epsilon > 0) || k < 2) throw Error("dp_samp: invalid parameters");
  const KMeansResult km = kmeans_colors(img, k, noise_seed);
  const std::size_t n = img.pixel_count();
  std::vector<std::vector<int>> members(k);
  for (std::size_t i = 0; i < n; ++i) {
    members[km.labels[i]].push_back(static_cast<int>(i));
  }
  const double threshold2 = (m / 255.0) * (m / 255.0);
  std::vector<double> freq(k, 0.0);
  for (int j = 0; j < k; ++j) {
    for (int i : members[j]) {
      double d = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = img.plane(c)[i] - km.centers[j][c];
        d += diff * diff;
      }
      if (d <= threshold2) freq[j] += 1;
    }
  }
  const double freq_total = std::accumulate(freq.begin(), freq.end(), 0.0);
  std::vector<int> sampled;
  Rng rng(derive_seed(noise_seed, "dp_samp"));
  for (int j = 0; j < k; ++j) {
    if (freq_total <= 0 || members[j].empty()) continue;
    const double budget = epsilon * freq[j] / freq_total;
    const double fraction = std::min(1.0, budget / epsilon);
    const auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members[j].size())));
    auto& pool = members[j];
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
      sampled.push_back(pool[i]);
    }
  }
  if (sampled.empty()) throw Error("dp_samp: empty sample");
  std::sort(sampled.begin(), sampled.end());
  return sampled;
}

/// Fills every non-sampled pixel with the inverse-distance-weighted mean of
/// its four spatially nearest sampled pixels.
inline Image interpolate_from_samples(const Image& img,
                                      std::span<const int> sampled) {
  const int w = img.width();
  Image out = img;
  std::vector<char> is_sampled(img.pixel_count(), 0);
  for (int s : sampled) is_sampled[static_cast<std::size_t>(s)] = 1;
  const std::size_t neighbors = std::min<std::size_t>(4, sampled.size());
  std::vector<std::pair<double, int>> cand(sampled.size());
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (is_sampled[i]) continue;
    const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
    for (std::size_t s = 0; s < sampled.size(); ++s) {
      const int sy = sampled[s] / w, sx = sampled[s] % w;
      cand[s] = {static_cast<double>((sy - y) * (sy - y) + (sx - x) * (sx - x)),
                 sampled[s]};
    }
    std::partial_sort(cand.begin(), cand.begin() + neighbors, cand.end());
    double wsum = 0;
    std::array<double, 3> acc{0, 0, 0};
    for (std::size_t j = 0; j < neighbors; ++j) {
      const double wt = 1.0 / std::sqrt(cand[j].first);
      wsum += wt;
      for (int c = 0; c < 3; ++c) {
        acc[c] += wt * img.plane(c)[static_cast<std::size_t>(cand[j].second)];
      }
    }
    for (int c = 0; c < 3; ++c) {
      out.plane(c)[i] = clamp01(static_cast<float>(acc[c] / wsum));
    }
  }
  return out;
}

inline Image dp_samp(const Image& img, double epsilon, int k, double m,
                     std::uint64_t noise_seed) {
  return interpolate_from_samples(img,
                                  dp_samp_sample(img, epsilon, k, m, noise_seed));
}

// ---------------------------------------------------------------------------
// k-Same.

struct BackgroundRecord {
  std::string identity_id;
  Eigen::VectorXd coeffs;
  Image image;
};

/// PCA fitted on the background images plus one record (the first image)
/// per background identity.
struct BackgroundDb {
  PcaModel pca;
  std::vector<BackgroundRecord> records;
};

inline BackgroundDb build_background_db(std::span<const LabeledImage> images,
                                        int components) {
  std::vector<Image> flat;
  std::vector<std::string> seen;
  BackgroundDb db;
  for (const auto& li : images) flat.push_back(li.image);
  for (const auto& li : images) {
    if (std::find(seen.begin(), seen.end(), li.identity_id) != seen.end()) continue;
    seen.push_back(li.identity_id);
  }
  if (seen.size() < 2) throw Error("build_background_db: need >= 2 identities");
  if (components < 1 || static_cast<std::size_t>(components) > flat.size()) {
    throw Error("build_background_db: insufficient data for " +
                std::to_string(components) + " components");
  }
  db.pca = fit_pca(flat, components);
  seen.clear();
  for (const auto& li : images) {
    if (std::find(seen.begin(), seen.end(), li.identity_id) != seen.end()) continue;
    seen.push_back(li.identity_id);
    db.records.push_back({li.identity_id, embed(db.pca, li.image), li.image});
  }
  return db;
}

/// Indices of the `count` records nearest to `coeffs` (ties by index).
inline std::vector<std::size_t> nearest_records(const BackgroundDb& db,
                                                const Eigen::VectorXd& coeffs,
                                                int count) {
  if (count > static_cast<int>(db.records.size())) {
    throw Error("k-Same: k-1 = " + std::to_string(count) +
                " exceeds the background database size " +
                std::to_string(db.records.size()));
  }
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    d.push_back({(db.records[i].coeffs - coeffs).squaredNorm(), i});
  }
  std::partial_sort(d.begin(), d.begin() + count, d.end());
  std::vector<std::size_t> out;
  for (int i = 0; i < count; ++i) out.push_back(d[i].second);
  return out;
}

/// Pixel-wise mean of the image and its k-1 nearest background faces.
inline Image k_same_pixel(const Image& img, const BackgroundDb& db, int k) {
  if (k < 2) throw Error("k_same_pixel: k >= 2");
  const auto nn = nearest_records(db, embed(db.pca, img), k - 1);
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = img.data()[i];
    for (std::size_t r : nn) sum += db.records[r].image.data()[i];
    out.data()[i] = clamp01(static_cast<float>(sum / k));
  }
  return out;
}

/// Inverse PCA transform of the mean of the k coefficient vectors.
inline Image k_same_eigen(const Image& img, const BackgroundDb& db, int k) {
  if (k < 2) throw Error("k_same_eigen: k >= 2");
  const Eigen::VectorXd own = embed(db.pca, img);
  const auto nn = nearest_records(db, own, k - 1);
  Eigen::VectorXd mean = own;
  for (std::size_t r : nn) mean += db.records[r].coeffs;
  mean /= k;
  Image out = reconstruct(db.pca, mean);
  clamp_in_place(out);
  return out;
}

/// Closed-set k-Same-Pixel over a collection with one image per identity:
/// repeatedly takes the first unassigned face and its k-1 nearest unassigned
/// faces (PCA distance), and replaces all k by their pixel-wise mean. Fewer
/// than k leftovers join the last cluster. Every output is shared by at least
/// k identities. Returns outputs in input order plus the cluster of each.
inline std::pair<std::vector<Image>, std::vector<int>> k_same_pixel_closed(
    std::span<const Image> images, int k, int components) {
  const std::size_t n = images.size();
  if (k < 2 || n < static_cast<std::size_t>(k)) {
    throw Error("k_same_pixel_closed: need at least k >= 2 images");
  }
  const PcaModel pca = fit_pca(images, std::min<int>(components, static_cast<int>(n)));
  std::vector<Eigen::VectorXd> coeffs;
  for (const Image& img : images) coeffs.push_back(embed(pca, img));
  std::vector<int> cluster(n, -1);
  int clusters = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cluster[i] >= 0) continue;
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (cluster[j] < 0) d.push_back({(coeffs[j] - coeffs[i]).squaredNorm(), j});
    }
    if (d.size() + 1 < static_cast<std::size_t>(k)) {
      cluster[i] = clusters - 1;
      for (const auto& [dist, j] : d) cluster[j] = clusters - 1;
      break;
    }
    std::partial_sort(d.begin(), d.begin() + (k - 1), d.end());
    cluster[i] = clusters;
    for (int m = 0; m < k - 1; ++m) cluster[d[m].second] = clusters;
    ++clusters;
  }
  std::vector<Image> means(clusters, Image(images[0].height(), images[0].width()));
  std::vector<int> sizes(clusters, 0);
  for (std::size_t i = 0; i < n; ++i) {
    require_same_shape(images[0], images[i], "k_same_pixel_closed");
    auto& m = means[cluster[i]];
    for (std::size_t p = 0; p < m.size(); ++p) m.data()[p] += images[i].data()[p];
    ++sizes[cluster[i]];
  }
  for (int c = 0; c < clusters; ++c) {
    for (float& v : means[c].data()) v = clamp01(v / static_cast<float>(sizes[c]));
  }
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(means[cluster[i]]);
  return {out, cluster};
}

// ---------------------------------------------------------------------------
// k-RTIO.

struct OverlaySet {
  std::vector<Image> images;
};

/// Alpha-blends the mean of K key-selected, block-permuted overlays.
inline Image k_rtio(const Image& img, const OverlaySet& overlays,
                    const KRtioParams& p, std::uint64_t key,
                    std::string_view image_id) {
  if (overlays.images.empty()) throw Error("k_rtio: empty overlay set");
  if (p.overlays < 1) throw Error("k_rtio: K >= 1");
  Rng rng(derive_seed(key, "krtio", image_id));
  const std::size_t pool = overlays.images.size();
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> chosen;
  for (int i = 0; i < p.overlays; ++i) {
    if (static_cast<std::size_t>(i) < pool) {
      std::swap(order[i], order[i + rng.index(pool - i)]);
      chosen.push_back(order[i]);
    } else {
      chosen.push_back(rng.index(pool));
    }
  }
  Image combined(img.height(), img.width());
  for (std::size_t idx : chosen) {
    const Image& overlay = overlays.images[idx];
    require_same_shape(img, overlay, "k_rtio");
    const Image permuted = block_permute(overlay, p.block_size, key);
    for (std::size_t i = 0; i < combined.size(); ++i) {
      combined.data()[i] += permuted.data()[i];
    }
  }
  const float alpha = static_cast<float>(p.alpha);
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float mean = combined.data()[i] / static_cast<float>(chosen.size());
    out.data()[i] = clamp01((1.0f - alpha) * img.data()[i] + alpha * mean);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Per-call inputs beyond the AnonymizerSpec: the image id (keys per-image randomness)
/// and the shared background resources.
struct AnonymizeContext {
  std::string_view image_id;
  const BackgroundDb* background = nullptr;
  const OverlaySet* overlays = nullptr;
};

/// Applies the anonymizer described by `spec`. Per-image noise is seeded by (noise_seed, image_id).
/// Output is quantized to 8 bits like a stored PNG.
inline Image anonymize(const Image& img, const AnonymizerSpec& spec,
                       const AnonymizeContext& ctx = {}) {
  const std::uint64_t seed = derive_seed(spec.noise_seed, ctx.image_id);
  Image out = std::visit(
      [&](const auto& p) -> Image {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, IdentityParams>) {
          return img;
        } else if constexpr (std::is_same_v<P, EyeMaskParams>) {
          return eye_mask(img);
        } else if constexpr (std::is_same_v<P, BlockPermuteParams>) {
          return block_permute(img, p.block_size, spec.key);
        } else if constexpr (std::is_same_v<P, PixelRelocateParams>) {
          return pixel_relocate(img, p.steps, spec.key);
        } else if constexpr (std::is_same_v<P, GaussianNoiseParams>) {
          return gaussian_noise(img, p.sigma, seed);
        } else if constexpr (std::is_same_v<P, GaussianBlurParams>) {
          return gaussian_blur(img, p.kernel);
        } else if constexpr (std::is_same_v<P, PixelateParams>) {
          return pixelate(img, p.size);
        } else if constexpr (std::is_same_v<P, KRtioParams>) {
          if (!ctx.overlays) throw Error("KRTIO requires an overlay set");
          return k_rtio(img, *ctx.overlays, p, spec.key, ctx.image_id);
        } else if constexpr (std::is_same_v<P, DpPixParams>) {
          return dp_pix(img, p.epsilon, p.b, p.m, seed);
        } else if constexpr (std::is_same_v<P, DpSnowParams>) {
          return dp_snow(img, p.delta, seed);
        } else if constexpr (std::is_same_v<P, DpSampParams>) {
          return dp_samp(img, p.epsilon, p.k, p.m, seed);
        } else if constexpr (std::is_same_v<P, KSamePixelParams>) {
          if (!ctx.background) throw Error("KSamePixel requires a background db");
          return k_same_pixel(img, *ctx.background, p.k);
        } else {
          if (!ctx.background) throw Error("KSameEigen requires a background db");
          return k_same_eigen(img, *ctx.background, p.k);
        }
      },
      spec.params);
  quantize_in_place(out);
  return out;
}

}  // namespace revface

#endif  // REVFACE_ANONYMIZERS_HPP_
