#ifndef REVFACE_DEANON_HPP_
#define REVFACE_DEANON_HPP_

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "revface/anonymizers.hpp"
#include "revface/dataset.hpp"
#include "revface/filters.hpp"
#include "revface/image.hpp"
#include "revface/metrics.hpp"

namespace revface {

// ---------------------------------------------------------------------------
// Learn Permutation.

/// Pixel rearrangement: output position i reads input position source[i].
/// `confidence` is the fraction of positions matched without ambiguity.
struct PermutationMap {
  int height = 0;
  int width = 0;
  std::vector<int> source;
  double confidence = 1.0;

  static PermutationMap identity(int height, int width) {
    PermutationMap map;
    map.height = height;
    map.width = width;
    map.source.resize(static_cast<std::size_t>(height) * width);
    for (std::size_t i = 0; i < map.source.size(); ++i) {
      map.source[i] = static_cast<int>(i);
    }
    return map;
  }

  PermutationMap inverse() const {
    PermutationMap inv = *this;
    inv.source = invert_permutation(source);
    return inv;
  }
};

namespace detail {

/// 8-bit colour sequence of one pixel position across all images.
inline std::string pixel_signature(std::span<const Image* const> images,
                                   std::size_t position) {
  std::string sig;
  sig.reserve(images.size() * 3);
  for (const Image* img : images) {
    for (int c = 0; c < Image::kChannels; ++c) {
      sig.push_back(static_cast<char>(to_byte(img->plane(c)[position])));
    }
  }
  return sig;
}

}  // namespace detail

/// Known-plaintext recovery of a fixed pixel permutation: every clear
/// position is matched to the anonymized position whose colour sequence over
/// all pairs is identical. The returned map turns anonymized images back into
/// clear ones.
inline PermutationMap learn_permutation(std::span<const ImagePair> pairs) {
  if (pairs.empty()) throw Error("learn_permutation: no pairs");
  const Image& first = pairs.front().clear;
  std::vector<const Image*> clear, anon;
  for (const auto& p : pairs) {
    require_same_shape(first, p.clear, "learn_permutation");
    require_same_shape(first, p.anonymized, "learn_permutation");
    clear.push_back(&p.clear);
    anon.push_back(&p.anonymized);
  }
  const std::size_t n = first.pixel_count();
  std::unordered_map<std::string, std::vector<int>> by_signature;
  for (std::size_t i = 0; i < n; ++i) {
    by_signature[detail::pixel_signature(anon, i)].push_back(static_cast<int>(i));
  }
  // Candidate lists are ascending; consume them front to back.
  std::unordered_map<std::string, std::size_t> cursor;

  PermutationMap map;
  map.height = first.height();
  map.width = first.width();
  map.source.assign(n, -1);
  std::vector<char> used(n, 0);
  std::size_t unambiguous = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::string sig = detail::pixel_signature(clear, j);
    const auto it = by_signature.find(sig);
    if (it == by_signature.end()) continue;
    std::size_t& pos = cursor[sig];
    if (pos >= it->second.size()) continue;
    const int src = it->second[pos++];
    map.source[j] = src;
    used[static_cast<std::size_t>(src)] = 1;
    if (it->second.size() == 1) ++unambiguous;
  }
  // Unresolved positions keep their own index when it is free.
  for (std::size_t j = 0; j < n; ++j) {
    if (map.source[j] == -1 && !used[j]) {
      map.source[j] = static_cast<int>(j);
      used[j] = 1;
    }
  }
  std::size_t next_free = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (map.source[j] != -1) continue;
    while (used[next_free]) ++next_free;
    map.source[j] = static_cast<int>(next_free);
    used[next_free] = 1;
  }
  map.confidence = static_cast<double>(unambiguous) / static_cast<double>(n);
  return map;
}

inline Image apply_permutation(const PermutationMap& map, const Image& img) {
  if (img.height() != map.height || img.width() != map.width) {
    throw Error("apply_permutation: shape mismatch");
  }
  return gather_pixels(img, map.source);
}

inline nlohmann::json to_json(const PermutationMap& map) {
  return {{"height", map.height},
          {"width", map.width},
          {"confidence", map.confidence},
          {"source", map.source}};
}

inline PermutationMap permutation_from_json(const nlohmann::json& j) {
  PermutationMap map;
  map.height = j.at("height").get<int>();
  map.width = j.at("width").get<int>();
  map.confidence = j.value("confidence", 1.0);
  map.source = j.at("source").get<std::vector<int>>();
  if (map.source.size() != static_cast<std::size_t>(map.height) * map.width) {
    throw Error("permutation map: index count does not match its shape");
  }
  std::vector<char> seen(map.source.size(), 0);
  for (int s : map.source) {
    if (s < 0 || static_cast<std::size_t>(s) >= seen.size() ||
        seen[static_cast<std::size_t>(s)]) {
      throw Error("permutation map: not a bijection");
    }
    seen[static_cast<std::size_t>(s)] = 1;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Neighbour interpolation of gray pixels.

inline bool is_snow_gray(const Image& img, std::size_t i) {
  for (int c = 0; c < Image::kChannels; ++c) {
    if (to_byte(img.plane(c)[i]) != 127) return false;
  }
  return true;
}

/// Replaces every exactly-gray pixel with the mean of its non-gray
/// 8-neighbours. Pixels surrounded by gray are filled in later passes (at
/// most 100).
inline Image interpolate_gray(const Image& img) {
  const int h = img.height(), w = img.width();
  const std::size_t n = img.pixel_count();
  std::vector<char> unknown(n, 0);
  std::size_t remaining = 0;
  for (std::size_t i = 0; i < n; ++i) {
    unknown[i] = is_snow_gray(img, i) ? 1 : 0;
    remaining += unknown[i];
  }
  if (remaining == n) throw Error("interpolate_gray: nothing to interpolate from");
  Image out = img;
  for (int pass = 0; pass < 100 && remaining > 0; ++pass) {
    std::vector<std::pair<std::size_t, std::array<float, 3>>> fills;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!unknown[i]) continue;
        std::array<double, 3> acc{0, 0, 0};
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
            if (unknown[j]) continue;
            for (int c = 0; c < 3; ++c) acc[c] += out.plane(c)[j];
            ++count;
          }
        }
        if (count == 0) continue;
        fills.push_back({i,
                         {static_cast<float>(acc[0] / count),
                          static_cast<float>(acc[1] / count),
                          static_cast<float>(acc[2] / count)}});
      }
    }
    if (fills.empty()) break;
    for (const auto& [i, color] : fills) {
      for (int c = 0; c < 3; ++c) out.plane(c)[i] = color[c];
      unknown[i] = 0;
    }
    remaining -= fills.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Down/up resampling with an SSIM-selected intermediate resolution.

namespace detail {

/// True when the image is constant on each cell of an r x r grid.
inline bool constant_on_grid(const Image& img, int r) {
  const auto rows = even_cells(img.height(), r);
  const auto cols = even_cells(img.width(), r);
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const float v = img.at(c, rows[i], cols[j]);
        for (int y = rows[i]; y < rows[i + 1]; ++y) {
          for (int x = cols[j]; x < cols[j + 1]; ++x) {
            if (img.at(c, y, x) != v) return false;
          }
        }
      }
    }
  }
  return true;
}

}  // namespace detail

/// Down to r x r, then back up to the original size with the same mode.
/// Images that are already pixelated on the r x r grid skip the down-step
/// and use their cell values directly.
inline Image resample_through(const Image& img, int r, ResampleMode mode) {
  if (r == img.height() && r == img.width()) return img;
  Image small(r, r);
  if (img.height() % r == 0 && img.width() % r == 0 &&
      detail::constant_on_grid(img, r)) {
    const auto rows = even_cells(img.height(), r);
    const auto cols = even_cells(img.width(), r);
    for (int c = 0; c < Image::kChannels; ++c) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) small.at(c, i, j) = img.at(c, rows[i], cols[j]);
      }
    }
  } else {
    small = resize(img, r, r, mode);
  }
  return resize(small, img.height(), img.width(), mode);
}

struct ResampleSearchResult {
  int resolution = 0;
  std::vector<std::pair<int, double>> scores;  // (r, mean SSIM)
};

inline ResampleSearchResult resample_search(std::span<const ImagePair> pairs,
                                            ResampleMode mode) {
  if (pairs.empty()) throw Error("resample_search: no pairs");
  const int limit = std::min(pairs.front().clear.height(),
                             pairs.front().clear.width());
  ResampleSearchResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (int r = 2; r <= limit; r += 2) {
    double total = 0;
    for (const auto& p : pairs) {
      total += ssim(resample_through(p.anonymized, r, mode), p.clear);
    }
    const double score = total / static_cast<double>(pairs.size());
    result.scores.push_back({r, score});
    if (score >= best) {  // ties go to the larger resolution
      best = score;
      result.resolution = r;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Deconvolution with a Gaussian point-spread function.

struct DeconvParams {
  double psf_sigma = 1.0;
  double balance = 1e-2;
  int iterations = 30;

  friend bool operator==(const DeconvParams&, const DeconvParams&) = default;
};

inline void validate(const DeconvParams& p) {
  if (!(p.psf_sigma > 0)) throw Error("deconvolution: psf_sigma must be > 0");
  if (!(p.balance >= 0)) throw Error("deconvolution: balance must be >= 0");
  if (p.iterations < 1) throw Error("deconvolution: iterations must be >= 1");
}

inline nlohmann::json to_json(const DeconvParams& p) {
  return {{"psf_sigma", p.psf_sigma},
          {"balance", p.balance},
          {"iterations", p.iterations}};
}

inline DeconvParams deconv_from_json(const nlohmann::json& j) {
  DeconvParams p;
  p.psf_sigma = j.value("psf_sigma", p.psf_sigma);
  p.balance = j.value("balance", p.balance);
  p.iterations = j.value("iterations", p.iterations);
  validate(p);
  return p;
}

inline std::vector<double> psf_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  return gaussian_kernel(2 * radius + 1, sigma);
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Real 2-D DFT of an h x w row-major array; returns h x (w/2+1) bins.
inline std::vector<std::complex<double>> rfft2(std::vector<double> in, int h,
                                               int w) {
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * (w / 2 + 1));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_2d(h, w, in.data(),
                                reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

inline std::vector<double> irfft2(std::vector<std::complex<double>> in, int h,
                                  int w) {
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(in.data()),
                                out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  const double scale = 1.0 / (static_cast<double>(h) * w);
  for (double& v : out) v *= scale;
  return out;
}

/// Kernel centred on the origin of an h x w periodic grid.
inline std::vector<double> centered_2d(std::span<const double> k1d, int h,
                                       int w) {
  std::vector<double> grid(static_cast<std::size_t>(h) * w, 0.0);
  const int r = static_cast<int>(k1d.size()) / 2;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int y = ((dy % h) + h) % h, x = ((dx % w) + w) % w;
      grid[static_cast<std::size_t>(y) * w + x] += k1d[dy + r] * k1d[dx + r];
    }
  }
  return grid;
}

}  // namespace detail

/// Wiener deconvolution per channel with a Laplacian regulariser, so that
/// the DC component passes unchanged for any balance. The image is
/// mirror-extended to 2H x 2W to avoid wrap-around artefacts.
inline Image wiener_deconv(const Image& img, const DeconvParams& params) {
  validate(params);
  const int h = img.height(), w = img.width();
  const int eh = 2 * h, ew = 2 * w;
  const auto kernel = psf_kernel(params.psf_sigma);
  const auto otf = detail::rfft2(detail::centered_2d(kernel, eh, ew), eh, ew);
  const std::vector<double> lap_kernel = {0, -1, 0, -1, 4, -1, 0, -1, 0};
  std::vector<double> lap(static_cast<std::size_t>(eh) * ew, 0.0);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int y = (dy + eh) % eh, x = (dx + ew) % ew;
      lap[static_cast<std::size_t>(y) * ew + x] = lap_kernel[(dy + 1) * 3 + dx + 1];
    }
  }
  const auto reg = detail::rfft2(std::move(lap), eh, ew);

  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c) {
    std::vector<double> ext(static_cast<std::size_t>(eh) * ew);
    for (int y = 0; y < eh; ++y) {
      const int sy = y < h ? y : eh - 1 - y;
      for (int x = 0; x < ew; ++x) {
        const int sx = x < w ? x : ew - 1 - x;
        ext[static_cast<std::size_t>(y) * ew + x] = img.at(c, sy, sx);
      }
    }
    auto spectrum = detail::rfft2(std::move(ext), eh, ew);
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
      const std::complex<double> hk = otf[i];
      const double denom = std::norm(hk) + params.balance * std::norm(reg[i]);
      spectrum[i] = denom > 0 ? std::conj(hk) * spectrum[i] / denom
                              : std::complex<double>(0, 0);
    }
    const auto restored = detail::irfft2(std::move(spectrum), eh, ew);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(c, y, x) =
            clamp01(static_cast<float>(restored[static_cast<std::size_t>(y) * ew + x]));
      }
    }
  }
  return out;
}

namespace detail {

/// Richardson-Lucy on one plane; `snapshots` lists iteration counts (in
/// ascending order) at which a copy is recorded.
inline std::vector<std::vector<double>> richardson_lucy_plane(
    std::span<const float> observed, int h, int w,
    std::span<const double> kernel, std::span<const int> snapshots) {
  constexpr double kFloor = 1e-6;
  const std::size_t n = observed.size();
  std::vector<double> obs(n), est(n), blurred(n), ratio(n), corr(n);
  for (std::size_t i = 0; i < n; ++i) {
    obs[i] = std::clamp<double>(observed[i], kFloor, 1.0);
    est[i] = obs[i];
  }
  // Mirrored borders make the adjoint blur non-normalized near the edges.
  std::vector<double> sensitivity(n);
  filter_plane_adjoint<double, double>(std::vector<double>(n, 1.0), sensitivity, h, w, kernel);
  std::vector<std::vector<double>> out;
  std::size_t next = 0;
  const int last = snapshots.empty() ? 0 : snapshots.back();
  for (int it = 1; it <= last; ++it) {
    filter_plane<double, double>(est, blurred, h, w, kernel);
    for (std::size_t i = 0; i < n; ++i) {
      ratio[i] = obs[i] / std::max(blurred[i], kFloor);
    }
    filter_plane_adjoint<double, double>(ratio, corr, h, w, kernel);
    for (std::size_t i = 0; i < n; ++i) {
      est[i] = std::clamp(est[i] * corr[i] / sensitivity[i], kFloor, 1.0);
    }
    while (next < snapshots.size() && snapshots[next] == it) {
      out.push_back(est);
      ++next;
    }
  }
  return out;
}

}  // namespace detail

inline Image richardson_lucy(const Image& img, const DeconvParams& params) {
  validate(params);
  const auto kernel = psf_kernel(params.psf_sigma);
  const int snapshot[] = {params.iterations};
  Image out(img.height(), img.width());
  for (int c = 0; c < Image::kChannels; ++c) {
    const auto planes = detail::richardson_lucy_plane(
        img.plane(c), img.height(), img.width(), kernel, snapshot);
    for (std::size_t i = 0; i < planes[0].size(); ++i) {
      out.plane(c)[i] = static_cast<float>(planes[0][i]);
    }
  }
  return out;
}

enum class DeconvMethod { kWiener, kRichardsonLucy };

struct DeconvGrid {
  std::vector<double> psf_sigmas;
  std::vector<double> balances;
  std::vector<int> iterations;

  static DeconvGrid standard() {
    DeconvGrid g;
    for (int i = 1; i <= 16; ++i) g.psf_sigmas.push_back(0.5 * i);
    for (int i = 0; i < 7; ++i) g.balances.push_back(std::pow(10.0, -4.0 + 0.5 * i));
    g.iterations = {10, 30, 50};
    return g;
  }
};

/// Exhaustive search maximizing mean SSIM against the clear images over at
/// most `max_pairs` leading pairs. Wiener searches psf_sigma x balance,
/// Richardson-Lucy psf_sigma x iterations. Ties keep the first grid point.
inline DeconvParams grid_search_deconv(std::span<const ImagePair> pairs,
                                       DeconvMethod method,
                                       const DeconvGrid& grid = DeconvGrid::standard(),
                                       std::size_t max_pairs = 16) {
  if (pairs.empty()) throw Error("grid_search_deconv: no pairs");
  const auto used = pairs.first(std::min(max_pairs, pairs.size()));
  DeconvParams best;
  double best_score = -std::numeric_limits<double>::infinity();
  auto consider = [&](const DeconvParams& p, double score) {
    if (score > best_score) {
      best_score = score;
      best = p;
    }
  };
  for (double sigma : grid.psf_sigmas) {
    if (method == DeconvMethod::kWiener) {
      for (double balance : grid.balances) {
        DeconvParams p{sigma, balance, 1};
        double total = 0;
        for (const auto& pair : used) {
          total += ssim(wiener_deconv(pair.anonymized, p), pair.clear);
        }
        consider(p, total / static_cast<double>(used.size()));
      }
    } else {
      std::vector<int> iters = grid.iterations;
      std::sort(iters.begin(), iters.end());
      const auto kernel = psf_kernel(sigma);
      std::vector<double> totals(iters.size(), 0.0);
      for (const auto& pair : used) {
        std::vector<Image> restored(iters.size(),
                                    Image(pair.anonymized.height(),
                                          pair.anonymized.width()));
        for (int c = 0; c < Image::kChannels; ++c) {
          const auto planes = detail::richardson_lucy_plane(
              pair.anonymized.plane(c), pair.anonymized.height(),
              pair.anonymized.width(), kernel, iters);
          for (std::size_t s = 0; s < iters.size(); ++s) {
            for (std::size_t i = 0; i < planes[s].size(); ++i) {
              restored[s].plane(c)[i] = static_cast<float>(planes[s][i]);
            }
          }
        }
        for (std::size_t s = 0; s < iters.size(); ++s) {
          totals[s] += ssim(restored[s], pair.clear);
        }
      }
      // Report grid points in the caller's iteration order.
      for (int it : grid.iterations) {
        const auto s = static_cast<std::size_t>(
            std::find(iters.begin(), iters.end(), it) - iters.begin());
        consider(DeconvParams{sigma, grid.balances.empty() ? 0.0 : grid.balances.front(), it},
                 totals[s] / static_cast<double>(used.size()));
      }
    }
  }
  return best;
}

}  // namespace revface

#endif  // REVFACE_DEANON_HPP_
