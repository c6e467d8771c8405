#ifndef REVFACE_METRICS_HPP_
#define REVFACE_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revface/filters.hpp"
#include "revface/image.hpp"

namespace revface {

/// Gaussian-window SSIM constants (Wang et al.).
struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  /// 1x1 window: SSIM computed from single pixels. Test sanity mode.
  static SsimConfig pointwise() {
    SsimConfig cfg;
    cfg.window = 1;
    return cfg;
  }

  std::vector<double> kernel() const {
    if (window == 1) return {1.0};
    return gaussian_kernel(window, sigma);
  }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Mean SSIM between two row-major planes. When `grad_x` is non-empty it
/// receives d(mean SSIM)/dx.
template <class T>
T ssim_plane(std::span<const T> x, std::span<const T> y, int height, int width,
             const SsimConfig& cfg, std::span<T> grad_x = {}) {
  const std::size_t n = x.size();
  const std::vector<double> kernel = cfg.kernel();
  const std::span<const double> k(kernel);
  std::vector<T> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<T> mx(n), my(n), exx(n), eyy(n), exy(n);
  filter_plane<T, double>(x, mx, height, width, k);
  filter_plane<T, double>(y, my, height, width, k);
  filter_plane<T, double>(xx, exx, height, width, k);
  filter_plane<T, double>(yy, eyy, height, width, k);
  filter_plane<T, double>(xy, exy, height, width, k);

  const T c1 = static_cast<T>(cfg.c1());
  const T c2 = static_cast<T>(cfg.c2());
  const bool want_grad = !grad_x.empty();
  std::vector<T> g_mu, g_exx, g_exy;
  if (want_grad) {
    g_mu.resize(n);
    g_exx.resize(n);
    g_exy.resize(n);
  }
  T total = 0;
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T a1 = 2 * mx[i] * my[i] + c1;
    const T a2 = 2 * (exy[i] - mx[i] * my[i]) + c2;
    const T b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
    const T b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + c2;
    const T s = (a1 * a2) / (b1 * b2);
    total += s;
    if (want_grad) {
      g_mu[i] = inv_n * (2 * my[i] * (a2 - a1) / (b1 * b2) -
                         2 * mx[i] * s * (T(1) / b1 - T(1) / b2));
      g_exx[i] = inv_n * (-s / b2);
      g_exy[i] = inv_n * (2 * a1 / (b1 * b2));
    }
  }
  if (want_grad) {
    std::vector<T> t_mu(n), t_exx(n), t_exy(n);
    filter_plane_adjoint<T, double>(g_mu, t_mu, height, width, k);
    filter_plane_adjoint<T, double>(g_exx, t_exx, height, width, k);
    filter_plane_adjoint<T, double>(g_exy, t_exy, height, width, k);
    for (std::size_t i = 0; i < n; ++i) {
      grad_x[i] = t_mu[i] + 2 * x[i] * t_exx[i] + y[i] * t_exy[i];
    }
  }
  return total * inv_n;
}

/// Mean SSIM over positions and channels.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  require_same_shape(a, b, "ssim");
  double total = 0;
  for (int c = 0; c < Image::kChannels; ++c) {
    const std::vector<double> pa(a.plane(c).begin(), a.plane(c).end());
    const std::vector<double> pb(b.plane(c).begin(), b.plane(c).end());
    total += ssim_plane<double>(pa, pb, a.height(), a.width(), cfg);
  }
  return total / Image::kChannels;
}

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double mae(const Image& a, const Image& b) {
  require_same_shape(a, b, "mae");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  }
  return acc / static_cast<double>(a.size());
}

enum class ReversibilityCategory {
  kIrreversible,
  kPartiallyReversible,
  kHighlyReversible,
};

inline std::string_view to_string(ReversibilityCategory c) {
  switch (c) {
    case ReversibilityCategory::kIrreversible: return "irreversible";
    case ReversibilityCategory::kPartiallyReversible:
      return "partially reversible";
    case ReversibilityCategory::kHighlyReversible: return "highly reversible";
  }
  return "?";
}

struct ReversibilityScore {
  double value = 0;
  ReversibilityCategory category = ReversibilityCategory::kIrreversible;
};

inline constexpr double kPartiallyReversibleThreshold = 0.2;
inline constexpr double kHighlyReversibleThreshold = 0.8;

inline ReversibilityCategory categorize_reversibility(double value) {
  if (value < kPartiallyReversibleThreshold) {
    return ReversibilityCategory::kIrreversible;
  }
  if (value < kHighlyReversibleThreshold) {
    return ReversibilityCategory::kPartiallyReversible;
  }
  return ReversibilityCategory::kHighlyReversible;
}

/// Accuracy gained by de-anonymization over naive recognition, as a
/// fraction of the gap between naive and clear recognition.
inline ReversibilityScore reversibility(double acc_clear, double acc_naive,
                                        double acc_deanon) {
  for (double a : {acc_clear, acc_naive, acc_deanon}) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw Error("reversibility: accuracies must lie in [0, 1]");
    }
  }
  if (!(acc_clear > acc_naive)) {
    throw Error(
        "reversibility: undefined when clear accuracy does not exceed naive "
        "accuracy");
  }
  const double value = std::clamp(
      (acc_deanon - acc_naive) / (acc_clear - acc_naive), 0.0, 1.0);
  return {value, categorize_reversibility(value)};
}

}  // namespace revface

#endif  // REVFACE_METRICS_HPP_
