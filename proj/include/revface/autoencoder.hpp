#ifndef REVFACE_AUTOENCODER_HPP_
#define REVFACE_AUTOENCODER_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "revface/dataset.hpp"
#include "revface/image.hpp"
#include "revface/metrics.hpp"
#include "revface/parallel.hpp"
#include "revface/rng.hpp"

namespace revface {

// Eigen's vectorized kernels peel leading elements up to packet alignment, so
// the summation order depends on where a buffer starts. Fixed alignment keeps
// training bit-reproducible across processes.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

enum class AeLoss { kSsim, kMse, kMae };

inline std::string_view to_string(AeLoss loss) {
  switch (loss) {
    case AeLoss::kSsim: return "ssim";
    case AeLoss::kMse: return "mse";
    case AeLoss::kMae: return "mae";
  }
  return "?";
}

inline AeLoss ae_loss_from_string(std::string_view s) {
  for (AeLoss l : {AeLoss::kSsim, AeLoss::kMse, AeLoss::kMae}) {
    if (to_string(l) == s) return l;
  }
  throw Error("unknown loss '" + std::string(s) + "'");
}

struct AeHyperparams {
  int features = 16;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int plateau_patience = 5;
  double plateau_factor = 0.75;
  int early_stop_patience = 20;
  AeLoss loss = AeLoss::kSsim;
  double activation_slope = 0.01;
  bool with_linear_layer = true;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::uint64_t max_parameters = std::uint64_t{1} << 28;
};

inline void validate(const AeHyperparams& h) {
  if (h.features < 1) throw Error("autoencoder: features must be >= 1");
  if (!(h.learning_rate > 0)) throw Error("autoencoder: learning_rate must be > 0");
  if (h.batch_size < 1) throw Error("autoencoder: batch_size must be >= 1");
  if (h.max_epochs < 1) throw Error("autoencoder: max_epochs must be >= 1");
  if (!(h.plateau_factor > 0 && h.plateau_factor < 1)) {
    throw Error("autoencoder: plateau_factor must lie in (0, 1)");
  }
  if (h.plateau_patience < 1 || h.early_stop_patience < 1) {
    throw Error("autoencoder: patience values must be >= 1");
  }
  if (!(h.validation_fraction > 0 && h.validation_fraction <= 0.5)) {
    throw Error("autoencoder: validation_fraction must lie in (0, 0.5]");
  }
}

inline nlohmann::json to_json(const AeHyperparams& h) {
  return {{"features", h.features},
          {"learning_rate", h.learning_rate},
          {"batch_size", h.batch_size},
          {"max_epochs", h.max_epochs},
          {"plateau_patience", h.plateau_patience},
          {"plateau_factor", h.plateau_factor},
          {"early_stop_patience", h.early_stop_patience},
          {"loss", to_string(h.loss)},
          {"activation_slope", h.activation_slope},
          {"with_linear_layer", h.with_linear_layer},
          {"seed", h.seed},
          {"validation_fraction", h.validation_fraction},
          {"max_parameters", h.max_parameters}};
}

inline AeHyperparams hyperparams_from_json(const nlohmann::json& j) {
  AeHyperparams h;
  h.features = j.value("features", h.features);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.plateau_patience = j.value("plateau_patience", h.plateau_patience);
  h.plateau_factor = j.value("plateau_factor", h.plateau_factor);
  h.early_stop_patience = j.value("early_stop_patience", h.early_stop_patience);
  h.loss = ae_loss_from_string(j.value("loss", std::string(to_string(h.loss))));
  h.activation_slope = j.value("activation_slope", h.activation_slope);
  h.with_linear_layer = j.value("with_linear_layer", h.with_linear_layer);
  h.seed = j.value("seed", h.seed);
  h.validation_fraction = j.value("validation_fraction", h.validation_fraction);
  h.max_parameters = j.value("max_parameters", h.max_parameters);
  validate(h);
  return h;
}

/// Offsets of every weight tensor inside the flat parameter vector.
///
/// Network (F features, input H x W):
///   conv1   3 -> F, 3x3, pad 1      weights [F][3][3][3]
///   pool    2x2 max
///   conv2   F -> F, 3x3, pad 1      weights [F][F][3][3]
///   pool    2x2 max                 bottleneck N = F * H/4 * W/4
///   linear  N -> N (optional)       weights [N][N]
///   tconv1  F -> F, 4x4, stride 2   weights [F][F][4][4] (in, out, ky, kx)
///   tconv2  F -> F, 4x4, stride 2
///   out     F -> 3, 3x3, pad 1, sigmoid
/// Every hidden layer is followed by LeakyReLU.
struct AeLayout {
  struct Block {
    std::string_view name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  int features = 0;
  int height = 0;
  int width = 0;
  bool linear = true;
  std::size_t bottleneck = 0;
  Block conv1_w, conv1_b, conv2_w, conv2_b, lin_w, lin_b, tconv1_w, tconv1_b,
      tconv2_w, tconv2_b, out_w, out_b;
  std::size_t total = 0;

  std::vector<Block> blocks() const {
    std::vector<Block> all = {conv1_w, conv1_b, conv2_w, conv2_b};
    if (linear) {
      all.push_back(lin_w);
      all.push_back(lin_b);
    }
    for (const Block& b : {tconv1_w, tconv1_b, tconv2_w, tconv2_b, out_w, out_b}) {
      all.push_back(b);
    }
    return all;
  }
};

/// Closed-form parameter count.
inline std::uint64_t ae_parameter_count(int features, int height, int width,
                                        bool linear) {
  const std::uint64_t f = static_cast<std::uint64_t>(features);
  const std::uint64_t n = f * (height / 4) * (width / 4);
  std::uint64_t count = (27 * f + f) + (9 * f * f + f) + 2 * (16 * f * f + f) +
                        (27 * f + 3);
  if (linear) count += n * n + n;
  return count;
}

inline AeLayout make_layout(int features, int height, int width, bool linear) {
  AeLayout l;
  l.features = features;
  l.height = height;
  l.width = width;
  l.linear = linear;
  const std::size_t f = static_cast<std::size_t>(features);
  l.bottleneck = f * (height / 4) * (width / 4);
  std::size_t offset = 0;
  auto take = [&](std::string_view name, std::size_t size) {
    AeLayout::Block b{name, offset, size};
    offset += size;
    return b;
  };
  l.conv1_w = take("conv1_w", f * 3 * 9);
  l.conv1_b = take("conv1_b", f);
  l.conv2_w = take("conv2_w", f * f * 9);
  l.conv2_b = take("conv2_b", f);
  if (linear) {
    l.lin_w = take("linear_w", l.bottleneck * l.bottleneck);
    l.lin_b = take("linear_b", l.bottleneck);
  }
  l.tconv1_w = take("tconv1_w", f * f * 16);
  l.tconv1_b = take("tconv1_b", f);
  l.tconv2_w = take("tconv2_w", f * f * 16);
  l.tconv2_b = take("tconv2_b", f);
  l.out_w = take("out_w", 3 * f * 9);
  l.out_b = take("out_b", 3);
  l.total = offset;
  return l;
}

template <class T>
struct AutoencoderModel {
  AeHyperparams hyper;
  AeLayout layout;
  AlignedVector<T> params;

  int height() const { return layout.height; }
  int width() const { return layout.width; }

  std::span<T> block(const AeLayout::Block& b) {
    return std::span<T>(params).subspan(b.offset, b.size);
  }
  std::span<const T> block(const AeLayout::Block& b) const {
    return std::span<const T>(params).subspan(b.offset, b.size);
  }

  template <class U>
  AutoencoderModel<U> cast() const {
    AutoencoderModel<U> out;
    out.hyper = hyper;
    out.layout = layout;
    out.params.assign(params.begin(), params.end());
    return out;
  }
};

using Autoencoder = AutoencoderModel<float>;

/// Seeded He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
template <class T = float>
AutoencoderModel<T> ae_init(const AeHyperparams& hyper, int height, int width) {
  validate(hyper);
  if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4) {
    throw Error("ae_init: resolution " + std::to_string(height) + "x" +
                std::to_string(width) + " is not divisible by 4");
  }
  const std::uint64_t count =
      ae_parameter_count(hyper.features, height, width, hyper.with_linear_layer);
  if (count > hyper.max_parameters) {
    throw Error("ae_init: model needs " + std::to_string(count) +
                " parameters, above the cap of " +
                std::to_string(hyper.max_parameters));
  }
  AutoencoderModel<T> model;
  model.hyper = hyper;
  model.layout = make_layout(hyper.features, height, width, hyper.with_linear_layer);
  model.params.assign(model.layout.total, T{0});
  Rng rng(derive_seed(hyper.seed, "ae_init"));
  const std::size_t f = static_cast<std::size_t>(hyper.features);
  auto fill = [&](const AeLayout::Block& b, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (T& w : model.block(b)) w = static_cast<T>(rng.uniform(-bound, bound));
  };
  fill(model.layout.conv1_w, 3 * 9);
  fill(model.layout.conv2_w, f * 9);
  if (hyper.with_linear_layer) fill(model.layout.lin_w, model.layout.bottleneck);
  fill(model.layout.tconv1_w, f * 4);
  fill(model.layout.tconv2_w, f * 4);
  fill(model.layout.out_w, f * 9);
  return model;
}

// ---------------------------------------------------------------------------
// Layer kernels. Feature maps are channel-planar; a plane of C channels over
// P pixels is viewed as a column-major P x C matrix.

namespace nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <class T>
using RowMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

/// col is (cin*9) x (h*w), column-major.
template <class T>
void im2col3x3(const T* in, int cin, int h, int w, T* col) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ci = 0; ci < cin; ++ci) {
        const T* src = in + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            *col++ = (yy >= 0 && yy < h && xx >= 0 && xx < w)
                         ? src[static_cast<std::size_t>(yy) * w + xx]
                         : T{0};
          }
        }
      }
    }
  }
}

template <class T>
void col2im3x3(const T* col, int cin, int h, int w, T* out) {
  std::fill(out, out + static_cast<std::size_t>(cin) * h * w, T{0});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ci = 0; ci < cin; ++ci) {
        T* dst = out + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, ++col) {
            const int xx = x + kx - 1;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
              dst[static_cast<std::size_t>(yy) * w + xx] += *col;
            }
          }
        }
      }
    }
  }
}

/// 3x3 convolution, padding 1. Weights are [cout][cin][3][3]; `col` receives
/// the unfolded input and is needed again by the backward pass.
template <class T>
void conv3x3(const T* in, int cin, int h, int w, const T* weight, const T* bias,
             int cout, T* col, T* out) {
  const int k = cin * 9, p = h * w;
  im2col3x3(in, cin, h, w, col);
  ConstMatMap<T> c(col, k, p);
  ConstMatMap<T> wt(weight, k, cout);
  MatMap<T> o(out, p, cout);
  o.noalias() = c.transpose() * wt;
  o.rowwise() += RowMap<T>(bias, cout);
}

/// Accumulates weight and bias gradients; overwrites grad_in unless null.
template <class T>
void conv3x3_backward(const T* col, int cin, int h, int w, const T* weight, int cout,
                      const T* grad_out, T* grad_weight, T* grad_bias, T* grad_in,
                      Mat<T>& scratch) {
  const int k = cin * 9, p = h * w;
  ConstMatMap<T> c(col, k, p);
  ConstMatMap<T> wt(weight, k, cout);
  ConstMatMap<T> go(grad_out, p, cout);
  MatMap<T>(grad_weight, k, cout).noalias() += c * go;
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grad_bias, cout) +=
      go.colwise().sum().transpose();
  if (grad_in) {
    scratch.noalias() = wt * go.transpose();
    col2im3x3(scratch.data(), cin, h, w, grad_in);
  }
}

/// 4x4 transposed convolution, stride 2, padding 1: h x w -> 2h x 2w.
/// Weights are [cin][cout][4][4].
template <class T>
void tconv4x4(const T* in, int cin, int h, int w, const T* weight, const T* bias,
              int cout, T* out, Mat<T>& scratch) {
  const int oh = 2 * h, ow = 2 * w;
  ConstMatMap<T> wm(weight, cout * 16, cin);
  ConstMatMap<T> x(in, h * w, cin);
  scratch.noalias() = wm * x.transpose();
  for (int co = 0; co < cout; ++co) {
    std::fill(out + static_cast<std::size_t>(co) * oh * ow,
              out + static_cast<std::size_t>(co + 1) * oh * ow, bias[co]);
  }
  for (int y = 0; y < h; ++y) {
    for (int x0 = 0; x0 < w; ++x0) {
      const T* c = scratch.data() + static_cast<std::size_t>(y * w + x0) * cout * 16;
      for (int co = 0; co < cout; ++co) {
        T* dst = out + static_cast<std::size_t>(co) * oh * ow;
        for (int ky = 0; ky < 4; ++ky) {
          const int oy = 2 * y + ky - 1;
          for (int kx = 0; kx < 4; ++kx, ++c) {
            const int ox = 2 * x0 + kx - 1;
            if (oy >= 0 && oy < oh && ox >= 0 && ox < ow) {
              dst[static_cast<std::size_t>(oy) * ow + ox] += *c;
            }
          }
        }
      }
    }
  }
}

template <class T>
void tconv4x4_backward(const T* in, int cin, int h, int w, const T* weight, int cout,
                       const T* grad_out, T* grad_weight, T* grad_bias, T* grad_in,
                       Mat<T>& scratch) {
  const int oh = 2 * h, ow = 2 * w;
  scratch.resize(cout * 16, h * w);
  T* c = scratch.data();
  for (int y = 0; y < h; ++y) {
    for (int x0 = 0; x0 < w; ++x0) {
      for (int co = 0; co < cout; ++co) {
        const T* src = grad_out + static_cast<std::size_t>(co) * oh * ow;
        for (int ky = 0; ky < 4; ++ky) {
          const int oy = 2 * y + ky - 1;
          for (int kx = 0; kx < 4; ++kx) {
            const int ox = 2 * x0 + kx - 1;
            *c++ = (oy >= 0 && oy < oh && ox >= 0 && ox < ow)
                       ? src[static_cast<std::size_t>(oy) * ow + ox]
                       : T{0};
          }
        }
      }
    }
  }
  ConstMatMap<T> wm(weight, cout * 16, cin);
  ConstMatMap<T> x(in, h * w, cin);
  MatMap<T>(grad_weight, cout * 16, cin).noalias() += scratch * x;
  MatMap<T>(grad_in, h * w, cin).noalias() = scratch.transpose() * wm;
  ConstMatMap<T> go(grad_out, oh * ow, cout);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grad_bias, cout) +=
      go.colwise().sum().transpose();
}

template <class T>
void leaky_relu(const T* z, T* a, std::size_t n, T slope) {
  for (std::size_t i = 0; i < n; ++i) a[i] = z[i] > 0 ? z[i] : slope * z[i];
}

/// grad <- grad * LeakyReLU'(z), in place.
template <class T>
void leaky_relu_backward(const T* z, T* grad, std::size_t n, T slope) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(z[i] > 0)) grad[i] *= slope;
  }
}

template <class T>
void maxpool2(const T* in, int c, int h, int w, T* out, int* argmax) {
  const int oh = h / 2, ow = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const std::size_t base = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + w, base + w + 1}) {
          if (in[cand] > in[best]) best = cand;
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + y) * ow + x;
        out[o] = in[best];
        argmax[o] = static_cast<int>(best);
      }
    }
  }
}

template <class T>
void maxpool2_backward(const T* grad_out, const int* argmax, std::size_t n_out,
                       T* grad_in, std::size_t n_in) {
  std::fill(grad_in, grad_in + n_in, T{0});
  for (std::size_t o = 0; o < n_out; ++o) grad_in[argmax[o]] += grad_out[o];
}

}  // namespace nn

/// Activations of a forward pass over a batch, kept for backpropagation.
/// Every buffer holds `batch` consecutive per-sample slices.
template <class T>
struct AeActivations {
  int batch = 0;
  std::size_t full = 0, half = 0, quarter = 0, features = 0;
  AlignedVector<T> input, col1, z1, a1, p1, col2, z2, a2, p2, zl, al, z3, a3, z4, a4,
      col5, z5, output;
  std::vector<int> p1_arg, p2_arg;
  nn::Mat<T> scratch;

  void resize(const AeLayout& l, int n) {
    batch = n;
    features = static_cast<std::size_t>(l.features);
    full = static_cast<std::size_t>(l.height) * l.width;
    half = full / 4;
    quarter = full / 16;
    const std::size_t b = static_cast<std::size_t>(n), f = features;
    input.resize(b * 3 * full);
    col1.resize(b * 27 * full);
    z1.resize(b * f * full);
    a1.resize(b * f * full);
    p1.resize(b * f * half);
    p1_arg.resize(b * f * half);
    col2.resize(b * 9 * f * half);
    z2.resize(b * f * half);
    a2.resize(b * f * half);
    p2.resize(b * f * quarter);
    p2_arg.resize(b * f * quarter);
    zl.resize(l.linear ? b * f * quarter : 0);
    al.resize(l.linear ? b * f * quarter : 0);
    z3.resize(b * f * half);
    a3.resize(b * f * half);
    z4.resize(b * f * full);
    a4.resize(b * f * full);
    col5.resize(b * 9 * f * full);
    z5.resize(b * 3 * full);
    output.resize(b * 3 * full);
  }

  std::span<const T> output_of(int s) const {
    return std::span<const T>(output).subspan(s * 3 * full, 3 * full);
  }
};

/// Forward pass; `inputs` holds `batch` images of 3 x H x W back to back.
template <class T>
void ae_forward_batch(const AutoencoderModel<T>& model, std::span<const T> inputs,
                      int batch, AeActivations<T>& act) {
  const AeLayout& l = model.layout;
  act.resize(l, batch);
  const int f = l.features, h = l.height, w = l.width;
  const std::size_t full = act.full, half = act.half, quarter = act.quarter;
  const std::size_t fs = act.features;
  const T slope = static_cast<T>(model.hyper.activation_slope);
  const T* prm = model.params.data();
  std::copy(inputs.begin(), inputs.end(), act.input.begin());
  for (int s = 0; s < batch; ++s) {
    nn::conv3x3(act.input.data() + s * 3 * full, 3, h, w, prm + l.conv1_w.offset,
                prm + l.conv1_b.offset, f, act.col1.data() + s * 27 * full,
                act.z1.data() + s * fs * full);
    nn::leaky_relu(act.z1.data() + s * fs * full, act.a1.data() + s * fs * full,
                   fs * full, slope);
    nn::maxpool2(act.a1.data() + s * fs * full, f, h, w, act.p1.data() + s * fs * half,
                 act.p1_arg.data() + s * fs * half);
    nn::conv3x3(act.p1.data() + s * fs * half, f, h / 2, w / 2, prm + l.conv2_w.offset,
                prm + l.conv2_b.offset, f, act.col2.data() + s * 9 * fs * half,
                act.z2.data() + s * fs * half);
    nn::leaky_relu(act.z2.data() + s * fs * half, act.a2.data() + s * fs * half,
                   fs * half, slope);
    nn::maxpool2(act.a2.data() + s * fs * half, f, h / 2, w / 2,
                 act.p2.data() + s * fs * quarter, act.p2_arg.data() + s * fs * quarter);
  }
  const T* bottleneck = act.p2.data();
  if (l.linear) {
    const auto n = static_cast<Eigen::Index>(l.bottleneck);
    nn::ConstMatMap<T> wt(prm + l.lin_w.offset, n, n);
    nn::ConstMatMap<T> p(act.p2.data(), n, batch);
    nn::MatMap<T> z(act.zl.data(), n, batch);
    z.noalias() = wt.transpose() * p;
    z.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
        prm + l.lin_b.offset, n);
    nn::leaky_relu(act.zl.data(), act.al.data(), act.zl.size(), slope);
    bottleneck = act.al.data();
  }
  for (int s = 0; s < batch; ++s) {
    nn::tconv4x4(bottleneck + s * fs * quarter, f, h / 4, w / 4, prm + l.tconv1_w.offset,
                 prm + l.tconv1_b.offset, f, act.z3.data() + s * fs * half, act.scratch);
    nn::leaky_relu(act.z3.data() + s * fs * half, act.a3.data() + s * fs * half,
                   fs * half, slope);
    nn::tconv4x4(act.a3.data() + s * fs * half, f, h / 2, w / 2, prm + l.tconv2_w.offset,
                 prm + l.tconv2_b.offset, f, act.z4.data() + s * fs * full, act.scratch);
    nn::leaky_relu(act.z4.data() + s * fs * full, act.a4.data() + s * fs * full,
                   fs * full, slope);
    nn::conv3x3(act.a4.data() + s * fs * full, f, h, w, prm + l.out_w.offset,
                prm + l.out_b.offset, 3, act.col5.data() + s * 9 * fs * full,
                act.z5.data() + s * 3 * full);
  }
  for (std::size_t i = 0; i < act.z5.size(); ++i) {
    act.output[i] = T(1) / (T(1) + std::exp(-act.z5[i]));
  }
}

/// Backpropagates d(loss)/d(output) for every sample of the batch and
/// accumulates into `grad` (same layout as the parameters).
template <class T>
void ae_backward_batch(const AutoencoderModel<T>& model, AeActivations<T>& act,
                       std::span<const T> grad_output, std::span<T> grad) {
  const AeLayout& l = model.layout;
  const int f = l.features, h = l.height, w = l.width, batch = act.batch;
  const std::size_t full = act.full, half = act.half, quarter = act.quarter;
  const std::size_t fs = act.features;
  const T slope = static_cast<T>(model.hyper.activation_slope);
  const T* prm = model.params.data();
  T* g = grad.data();

  AlignedVector<T> d5(act.z5.size());
  for (std::size_t i = 0; i < d5.size(); ++i) {
    d5[i] = grad_output[i] * act.output[i] * (T(1) - act.output[i]);
  }
  AlignedVector<T> d4(fs * full), d3(fs * half);
  AlignedVector<T> d_bottleneck(static_cast<std::size_t>(batch) * fs * quarter);
  const T* bottleneck = l.linear ? act.al.data() : act.p2.data();
  for (int s = 0; s < batch; ++s) {
    nn::conv3x3_backward(act.col5.data() + s * 9 * fs * full, f, h, w, prm + l.out_w.offset,
                         3, d5.data() + s * 3 * full, g + l.out_w.offset,
                         g + l.out_b.offset, d4.data(), act.scratch);
    nn::leaky_relu_backward(act.z4.data() + s * fs * full, d4.data(), fs * full, slope);
    nn::tconv4x4_backward(act.a3.data() + s * fs * half, f, h / 2, w / 2,
                          prm + l.tconv2_w.offset, f, d4.data(), g + l.tconv2_w.offset,
                          g + l.tconv2_b.offset, d3.data(), act.scratch);
    nn::leaky_relu_backward(act.z3.data() + s * fs * half, d3.data(), fs * half, slope);
    nn::tconv4x4_backward(bottleneck + s * fs * quarter, f, h / 4, w / 4,
                          prm + l.tconv1_w.offset, f, d3.data(), g + l.tconv1_w.offset,
                          g + l.tconv1_b.offset, d_bottleneck.data() + s * fs * quarter,
                          act.scratch);
  }
  AlignedVector<T> dp2;
  if (l.linear) {
    nn::leaky_relu_backward(act.zl.data(), d_bottleneck.data(), d_bottleneck.size(), slope);
    const auto n = static_cast<Eigen::Index>(l.bottleneck);
    nn::ConstMatMap<T> wt(prm + l.lin_w.offset, n, n);
    nn::ConstMatMap<T> p(act.p2.data(), n, batch);
    nn::ConstMatMap<T> d(d_bottleneck.data(), n, batch);
    nn::MatMap<T>(g + l.lin_w.offset, n, n).noalias() += p * d.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(g + l.lin_b.offset, n) +=
        d.rowwise().sum();
    dp2.resize(d_bottleneck.size());
    nn::MatMap<T>(dp2.data(), n, batch).noalias() = wt * d;
  } else {
    dp2 = std::move(d_bottleneck);
  }
  AlignedVector<T> da2(fs * half), dp1(fs * half), da1(fs * full);
  for (int s = 0; s < batch; ++s) {
    nn::maxpool2_backward(dp2.data() + s * fs * quarter, act.p2_arg.data() + s * fs * quarter,
                          fs * quarter, da2.data(), fs * half);
    nn::leaky_relu_backward(act.z2.data() + s * fs * half, da2.data(), fs * half, slope);
    nn::conv3x3_backward(act.col2.data() + s * 9 * fs * half, f, h / 2, w / 2,
                         prm + l.conv2_w.offset, f, da2.data(), g + l.conv2_w.offset,
                         g + l.conv2_b.offset, dp1.data(), act.scratch);
    nn::maxpool2_backward(dp1.data(), act.p1_arg.data() + s * fs * half, fs * half,
                          da1.data(), fs * full);
    nn::leaky_relu_backward(act.z1.data() + s * fs * full, da1.data(), fs * full, slope);
    nn::conv3x3_backward(act.col1.data() + s * 27 * full, 3, h, w, prm + l.conv1_w.offset, f,
                         da1.data(), g + l.conv1_w.offset, g + l.conv1_b.offset,
                         static_cast<T*>(nullptr), act.scratch);
  }
}
/// Loss of one prediction against its target; writes d(loss)/d(prediction)
/// when `grad` is non-empty.
template <class T>
T ae_loss(AeLoss loss, std::span<const T> pred, std::span<const T> target, int h,
          int w, std::span<T> grad = {}) {
  const std::size_t n = pred.size();
  const bool want = !grad.empty();
  switch (loss) {
    case AeLoss::kMse: {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pred[i] - target[i];
        acc += d * d;
        if (want) grad[i] = 2 * d / static_cast<T>(n);
      }
      return acc / static_cast<T>(n);
    }
    case AeLoss::kMae: {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pred[i] - target[i];
        acc += std::abs(d);
        if (want) grad[i] = (d > 0 ? T(1) : (d < 0 ? T(-1) : T(0))) / static_cast<T>(n);
      }
      return acc / static_cast<T>(n);
    }
    case AeLoss::kSsim: {
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      const SsimConfig cfg;
      T total = 0;
      for (int c = 0; c < 3; ++c) {
        auto gp = want ? grad.subspan(c * plane, plane) : std::span<T>{};
        total += ssim_plane<T>(pred.subspan(c * plane, plane),
                               target.subspan(c * plane, plane), h, w, cfg, gp);
      }
      if (want) {
        for (T& v : grad) v *= T(-1) / T(3);
      }
      return T(1) - total / T(3);
    }
  }
  return 0;
}

template <class T>
AlignedVector<T> image_to_buffer(const Image& img) {
  return AlignedVector<T>(img.data().begin(), img.data().end());
}

template <class T>
Image buffer_to_image(std::span<const T> buffer, int h, int w) {
  Image img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.data()[i] = clamp01(static_cast<float>(buffer[i]));
  }
  return img;
}

template <class T>
void require_model_shape(const AutoencoderModel<T>& model, const Image& img) {
  if (img.height() != model.height() || img.width() != model.width()) {
    throw Error("autoencoder: input " + std::to_string(img.height()) + "x" +
                std::to_string(img.width()) + " does not match model " +
                std::to_string(model.height()) + "x" + std::to_string(model.width()));
  }
}

template <class T>
std::vector<Image> ae_forward(const AutoencoderModel<T>& model,
                              std::span<const Image> batch, int jobs = 1) {
  for (const Image& img : batch) require_model_shape(model, img);
  constexpr std::size_t kGroup = 16;
  std::vector<Image> out(batch.size());
  const std::size_t groups = (batch.size() + kGroup - 1) / kGroup;
  parallel_for(groups, jobs, [&](std::size_t gi) {
    const std::size_t lo = gi * kGroup, hi = std::min(batch.size(), lo + kGroup);
    AlignedVector<T> input;
    for (std::size_t i = lo; i < hi; ++i) {
      input.insert(input.end(), batch[i].data().begin(), batch[i].data().end());
    }
    AeActivations<T> act;
    ae_forward_batch<T>(model, input, static_cast<int>(hi - lo), act);
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = buffer_to_image<T>(act.output_of(static_cast<int>(i - lo)),
                                  model.height(), model.width());
    }
  });
  return out;
}

template <class T>
Image ae_apply(const AutoencoderModel<T>& model, const Image& img) {
  return ae_forward(model, std::span<const Image>(&img, 1)).front();
}

/// Loss and its gradient for a single (input, target) pair.
template <class T>
T ae_loss_and_gradient(const AutoencoderModel<T>& model, const Image& input,
                       const Image& target, std::span<T> grad) {
  AeActivations<T> act;
  const auto x = image_to_buffer<T>(input);
  const auto y = image_to_buffer<T>(target);
  ae_forward_batch<T>(model, x, 1, act);
  AlignedVector<T> g_out(act.output.size());
  const T loss = ae_loss<T>(model.hyper.loss, act.output, y, model.height(),
                            model.width(), g_out);
  std::fill(grad.begin(), grad.end(), T{0});
  ae_backward_batch<T>(model, act, g_out, grad);
  return loss;
}

/// Largest relative difference |a - n| / max(|a|, |n|, 1e-3 * max|a|)
/// between the analytic gradient and central finite differences (step h)
/// over every parameter.
inline double ae_gradient_check(const AutoencoderModel<double>& model,
                                const ImagePair& pair, double step = 1e-4) {
  require_model_shape(model, pair.anonymized);
  std::vector<double> analytic(model.params.size());
  ae_loss_and_gradient<double>(model, pair.anonymized, pair.clear, analytic);
  AutoencoderModel<double> probe = model;
  const auto x = image_to_buffer<double>(pair.anonymized);
  const auto y = image_to_buffer<double>(pair.clear);
  AeActivations<double> act;
  auto loss_at = [&]() {
    ae_forward_batch<double>(probe, x, 1, act);
    return ae_loss<double>(probe.hyper.loss, act.output, y, probe.height(),
                           probe.width());
  };
  double scale = 0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0;
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    const double saved = probe.params[i];
    probe.params[i] = saved + step;
    const double up = loss_at();
    probe.params[i] = saved - step;
    const double down = loss_at();
    probe.params[i] = saved;
    const double numeric = (up - down) / (2 * step);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainingLogRow {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double learning_rate = 0;
};

struct TrainResult {
  Autoencoder model;
  std::vector<TrainingLogRow> log;
  int best_epoch = 0;
  double best_val_loss = 0;
};

struct TrainOptions {
  int jobs = 1;
  /// Called after every epoch; may be empty.
  std::function<void(const TrainingLogRow&)> on_epoch;
};

/// Splits pair indices into (train, validation) by identity.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
validation_split(std::span<const ImagePair> pairs, double fraction,
                 std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    by_identity[pairs[i].identity_id].push_back(i);
  }
  if (by_identity.size() < 2) {
    throw Error("ae_train: need pairs from at least two identities");
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_identity) ids.push_back(id);
  Rng rng(derive_seed(seed, "validation_split"));
  rng.shuffle(std::span<std::string>(ids));
  const auto wanted = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(pairs.size())));
  std::set<std::string> val_ids;
  std::size_t val_count = 0;
  for (const auto& id : ids) {
    if (val_count >= wanted || val_ids.size() + 1 == ids.size()) break;
    val_ids.insert(id);
    val_count += by_identity[id].size();
  }
  std::vector<std::size_t> train, val;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    (val_ids.count(pairs[i].identity_id) ? val : train).push_back(i);
  }
  return {train, val};
}

namespace detail {

struct Adam {
  AlignedVector<float> m, v;
  long step = 0;
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  explicit Adam(std::size_t n) : m(n, 0.0f), v(n, 0.0f) {}

  void update(std::span<float> params, std::span<const float> grad, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    const float b1 = static_cast<float>(kBeta1), b2 = static_cast<float>(kBeta2);
    const float alpha = static_cast<float>(lr * std::sqrt(c2) / c1);
    const float eps = static_cast<float>(kEps * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      params[i] -= alpha * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
};

}  // namespace detail

/// Mean loss of the model over the indexed pairs (forward only).
inline double ae_evaluate_loss(const Autoencoder& model, std::span<const ImagePair> pairs,
                               std::span<const std::size_t> indices, int jobs = 1) {
  constexpr std::size_t kGroup = 16;
  const std::size_t groups = (indices.size() + kGroup - 1) / kGroup;
  const std::size_t plane = static_cast<std::size_t>(3) * model.height() * model.width();
  std::vector<double> losses(indices.size());
  parallel_for(groups, jobs, [&](std::size_t gi) {
    const std::size_t lo = gi * kGroup, hi = std::min(indices.size(), lo + kGroup);
    AlignedVector<float> x, y;
    for (std::size_t k = lo; k < hi; ++k) {
      const ImagePair& p = pairs[indices[k]];
      x.insert(x.end(), p.anonymized.data().begin(), p.anonymized.data().end());
      y.insert(y.end(), p.clear.data().begin(), p.clear.data().end());
    }
    AeActivations<float> act;
    ae_forward_batch<float>(model, x, static_cast<int>(hi - lo), act);
    for (std::size_t k = lo; k < hi; ++k) {
      const int s = static_cast<int>(k - lo);
      losses[k] = ae_loss<float>(model.hyper.loss, act.output_of(s),
                                 std::span<const float>(y).subspan(s * plane, plane),
                                 model.height(), model.width());
    }
  });
  double total = 0;
  for (double l : losses) total += l;
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

/// Mini-batch Adam training on (anonymized -> clear) pairs with an
/// identity-disjoint validation split, reduce-on-plateau learning rate and
/// early stopping. Returns the weights with the best validation loss.
///
/// Per-batch gradients are accumulated in a fixed number of chunks and
/// summed in chunk order, so results do not depend on `jobs`.
inline TrainResult ae_train(std::span<const ImagePair> pairs, const AeHyperparams& hyper,
                            const TrainOptions& options = {}) {
  validate(hyper);
  if (pairs.empty()) throw Error("ae_train: no training pairs");
  const int h = pairs.front().clear.height(), w = pairs.front().clear.width();
  for (const auto& p : pairs) {
    require_same_shape(pairs.front().clear, p.clear, "ae_train");
    require_same_shape(pairs.front().clear, p.anonymized, "ae_train");
  }
  const auto [train_idx, val_idx] =
      validation_split(pairs, hyper.validation_fraction, hyper.seed);
  if (train_idx.size() < 2 * static_cast<std::size_t>(hyper.batch_size)) {
    throw Error("ae_train: insufficient data (" + std::to_string(train_idx.size()) +
                " training pairs for batch size " + std::to_string(hyper.batch_size) +
                ")");
  }

  TrainResult result;
  Autoencoder model = ae_init<float>(hyper, h, w);
  const std::size_t n_params = model.params.size();
  detail::Adam adam(n_params);

  constexpr std::size_t kChunks = 8;
  std::vector<AlignedVector<float>> chunk_grads(kChunks, AlignedVector<float>(n_params));
  std::vector<double> chunk_loss(kChunks);
  std::vector<AeActivations<float>> chunk_acts(kChunks);
  std::vector<AlignedVector<float>> chunk_inputs(kChunks), chunk_targets(kChunks);
  const std::size_t plane = static_cast<std::size_t>(3) * h * w;
  AlignedVector<float> grad(n_params);

  AlignedVector<float> best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  double lr = hyper.learning_rate;
  int bad_epochs = 0;
  int since_best = 0;
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());

  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    Rng rng(derive_seed(hyper.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const std::size_t bsize = end - start;
      parallel_for(kChunks, options.jobs, [&](std::size_t c) {
        auto& g = chunk_grads[c];
        std::fill(g.begin(), g.end(), 0.0f);
        chunk_loss[c] = 0;
        const std::size_t lo = start + c * bsize / kChunks;
        const std::size_t hi = start + (c + 1) * bsize / kChunks;
        if (lo == hi) return;
        auto& x = chunk_inputs[c];
        auto& y = chunk_targets[c];
        x.clear();
        y.clear();
        for (std::size_t k = lo; k < hi; ++k) {
          const ImagePair& p = pairs[order[k]];
          x.insert(x.end(), p.anonymized.data().begin(), p.anonymized.data().end());
          y.insert(y.end(), p.clear.data().begin(), p.clear.data().end());
        }
        auto& act = chunk_acts[c];
        ae_forward_batch<float>(model, x, static_cast<int>(hi - lo), act);
        AlignedVector<float> g_out(act.output.size());
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t s = k - lo;
          chunk_loss[c] += ae_loss<float>(
              hyper.loss, act.output_of(static_cast<int>(s)),
              std::span<const float>(y).subspan(s * plane, plane), h, w,
              std::span<float>(g_out).subspan(s * plane, plane));
        }
        ae_backward_batch<float>(model, act, g_out, g);
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      double batch_loss = 0;
      for (std::size_t c = 0; c < kChunks; ++c) {
        batch_loss += chunk_loss[c];
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += chunk_grads[c][i];
      }
      if (!std::isfinite(batch_loss)) {
        throw Error("ae_train: non-finite loss at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(batch_no) + " (learning rate " +
                    std::to_string(lr) + ")");
      }
      const float inv = 1.0f / static_cast<float>(bsize);
      for (float& v : grad) v *= inv;
      adam.update(model.params, grad, lr);
      epoch_loss += batch_loss;
    }
    const double train_loss = epoch_loss / static_cast<double>(order.size());
    const double val_loss = ae_evaluate_loss(model, pairs, val_idx, options.jobs);
    if (!std::isfinite(val_loss)) {
      throw Error("ae_train: non-finite validation loss at epoch " +
                  std::to_string(epoch));
    }
    const TrainingLogRow row{epoch, train_loss, val_loss, lr};
    result.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.params;
      result.best_epoch = epoch;
      bad_epochs = 0;
      since_best = 0;
    } else {
      ++bad_epochs;
      ++since_best;
      if (bad_epochs >= hyper.plateau_patience) {
        lr *= hyper.plateau_factor;
        bad_epochs = 0;
      }
      if (since_best >= hyper.early_stop_patience) break;
    }
  }
  model.params = std::move(best_params);
  result.model = std::move(model);
  result.best_val_loss = best_val;
  return result;
}

inline void write_training_log_csv(const std::vector<TrainingLogRow>& log,
                                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ','
        << r.learning_rate << '\n';
  }
}

inline std::vector<TrainingLogRow> read_training_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,lr") {
    throw Error(path.string() + ": bad training log header");
  }
  std::vector<TrainingLogRow> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrainingLogRow r{};
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.val_loss,
                    &r.learning_rate) != 4) {
      throw Error(path.string() + ": bad training log row '" + line + "'");
    }
    log.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints: "RVAE" magic, u32 version, u64 header length, JSON header,
// u64 parameter count, little-endian float32 parameters.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <class U>
U read_le(std::istream& in) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == EOF) throw Error("checkpoint: truncated file");
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<U>(value);
}

}  // namespace detail

inline void save_checkpoint(const Autoencoder& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  nlohmann::json header;
  header["format"] = "revface-autoencoder";
  header["version"] = kCheckpointVersion;
  header["hyper"] = to_json(model.hyper);
  header["height"] = model.height();
  header["width"] = model.width();
  header["parameters"] = model.params.size();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.layout.blocks()) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  }
  header["layout"] = blocks;
  const std::string text = header.dump();
  out.write("RVAE", 4);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_le<std::uint64_t>(out, model.params.size());
  for (float v : model.params) {
    detail::write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw Error("write failed: " + path.string());
}

inline Autoencoder load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "RVAE") {
    throw Error(path.string() + ": not an autoencoder checkpoint");
  }
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint version " +
                std::to_string(version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  const auto header = nlohmann::json::parse(text);
  const AeHyperparams hyper = hyperparams_from_json(header.at("hyper"));
  Autoencoder model;
  model.hyper = hyper;
  model.layout = make_layout(hyper.features, header.at("height").get<int>(),
                             header.at("width").get<int>(), hyper.with_linear_layer);
  const auto count = detail::read_le<std::uint64_t>(in);
  if (count != model.layout.total) {
    throw Error(path.string() + ": parameter count does not match the layout");
  }
  model.params.resize(count);
  for (float& v : model.params) {
    v = std::bit_cast<float>(detail::read_le<std::uint32_t>(in));
  }
  return model;
}

}  // namespace revface

#endif  // REVFACE_AUTOENCODER_HPP_
