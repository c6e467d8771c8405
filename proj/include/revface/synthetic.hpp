#ifndef REVFACE_SYNTHETIC_HPP_
#define REVFACE_SYNTHETIC_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "revface/dataset.hpp"
#include "revface/filters.hpp"
#include "revface/image.hpp"
#include "revface/png_io.hpp"
#include "revface/rng.hpp"

namespace revface {

using Color = std::array<float, 3>;

/// Appearance parameters that are fixed for an identity. Geometry is in
/// fractions of the image side.
struct FaceLatent {
  Color skin;
  Color hair;
  Color eye;
  Color mouth;
  float face_half_width;
  float face_half_height;
  float eye_spacing;
  float eye_height;
  float eye_radius;
  float mouth_half_width;
  float mouth_height;
  float nose_length;
  float hairline;

  friend bool operator==(const FaceLatent&, const FaceLatent&) = default;
};

struct SyntheticParams {
  int identity_count = 50;
  int images_per_identity = 10;
  int resolution = 32;
  std::uint64_t seed = 7;
  /// Offsets the latent distribution so a second "family" of faces shares no
  /// identity with the first.
  int family = 0;
  /// Standard deviation (pixels) of the camera blur applied before noise.
  double optics_sigma = 0.5;
  /// Largest per-image shift, as a fraction of the side.
  double translation = 0.02;
  /// Largest per-image linear lighting slope across the frame.
  double lighting_gradient = 0.3;
};

/// Per-image capture nuisance shared by every image of a collection.
struct CaptureParams {
  double optics_sigma = 0.5;
  double translation = 0.02;
  double lighting_gradient = 0.3;
};

inline std::string synthetic_identity_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "id%04d", index);
  return buf;
}

inline std::string synthetic_image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img%03d", index);
  return buf;
}

inline FaceLatent identity_latent(std::uint64_t seed, int identity_index,
                                  int family = 0) {
  Rng rng(derive_seed(seed, "latent", static_cast<std::uint64_t>(family),
                      static_cast<std::uint64_t>(identity_index)));
  auto color = [&](float lo, float hi) {
    return Color{static_cast<float>(rng.uniform(lo, hi)),
                 static_cast<float>(rng.uniform(lo, hi)),
                 static_cast<float>(rng.uniform(lo, hi))};
  };
  FaceLatent f{};
  // Family 1 draws from shifted ranges: warmer skin, larger faces.
  const float shift = family == 0 ? 0.0f : 0.08f;
  const float tone = static_cast<float>(rng.uniform(0.35, 0.85));
  f.skin = {std::min(1.0f, tone + 0.12f + shift),
            tone * static_cast<float>(rng.uniform(0.75, 0.95)),
            tone * static_cast<float>(rng.uniform(0.55, 0.85)) - shift / 2};
  f.hair = color(0.02f, 0.6f);
  f.eye = color(0.05f, 0.7f);
  f.mouth = {static_cast<float>(rng.uniform(0.45, 0.9)),
             static_cast<float>(rng.uniform(0.1, 0.4)),
             static_cast<float>(rng.uniform(0.15, 0.45))};
  f.face_half_width = static_cast<float>(rng.uniform(0.27, 0.37)) + shift / 4;
  f.face_half_height = static_cast<float>(rng.uniform(0.36, 0.45));
  f.eye_spacing = static_cast<float>(rng.uniform(0.24, 0.38));
  f.eye_height = static_cast<float>(rng.uniform(0.34, 0.40));
  f.eye_radius = static_cast<float>(rng.uniform(0.045, 0.075));
  f.mouth_half_width = static_cast<float>(rng.uniform(0.08, 0.18));
  f.mouth_height = static_cast<float>(rng.uniform(0.68, 0.78));
  f.nose_length = static_cast<float>(rng.uniform(0.10, 0.22));
  f.hairline = static_cast<float>(rng.uniform(0.16, 0.30));
  return f;
}

namespace detail {

inline float ellipse(float px, float py, float cx, float cy, float rx,
                     float ry) {
  const float dx = (px - cx) / rx;
  const float dy = (py - cy) / ry;
  return dx * dx + dy * dy;
}

/// Color of the face scene at continuous point (u, v) in unit coordinates.
inline Color shade(const FaceLatent& f, float u, float v, const Color& bg) {
  constexpr float cx = 0.5f;
  constexpr float cy = 0.52f;
  const bool in_face =
      ellipse(u, v, cx, cy, f.face_half_width, f.face_half_height) <= 1.0f;
  const bool in_hair_cap =
      ellipse(u, v, cx, cy - 0.02f, f.face_half_width + 0.05f,
              f.face_half_height + 0.06f) <= 1.0f &&
      v < f.hairline;
  if (in_hair_cap) return f.hair;
  if (!in_face) return bg;
  for (float side : {-1.0f, 1.0f}) {
    const float ex = cx + side * f.eye_spacing / 2;
    const float d = ellipse(u, v, ex, f.eye_height, f.eye_radius * 1.6f,
                            f.eye_radius);
    if (d <= 0.45f) return f.eye;
    if (d <= 1.0f) return {0.95f, 0.95f, 0.92f};
  }
  if (std::abs(u - cx) <= 0.025f && v >= f.eye_height + 0.04f &&
      v <= f.eye_height + 0.04f + f.nose_length) {
    return {f.skin[0] * 0.7f, f.skin[1] * 0.65f, f.skin[2] * 0.65f};
  }
  if (ellipse(u, v, cx, f.mouth_height, f.mouth_half_width, 0.035f) <= 1.0f) {
    return f.mouth;
  }
  return f.skin;
}

}  // namespace detail

/// Renders one image of the identity. Per-image jitter: a shift of up to
/// `capture.translation` of the side, brightness within +-10%, a linear
/// lighting ramp in a random direction, additive noise with sigma 0.01.
/// A Gaussian camera blur of `capture.optics_sigma` pixels precedes the
/// noise. Output is quantized to 8 bits.
inline Image render_face(const FaceLatent& face, int resolution,
                         std::uint64_t image_seed,
                         const CaptureParams& capture = {}) {
  Rng rng(image_seed);
  const double t = capture.translation;
  const float dx = static_cast<float>(rng.uniform(-t, t));
  const float dy = static_cast<float>(rng.uniform(-t, t));
  const float brightness = static_cast<float>(rng.uniform(0.9, 1.1));
  const Color bg{static_cast<float>(rng.uniform(0.2, 0.35)),
                 static_cast<float>(rng.uniform(0.25, 0.4)),
                 static_cast<float>(rng.uniform(0.3, 0.45))};
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double slope = rng.uniform(0, capture.lighting_gradient);
  const auto lx = static_cast<float>(2 * slope * std::cos(angle));
  const auto ly = static_cast<float>(2 * slope * std::sin(angle));
  Image img(resolution, resolution);
  constexpr int kSuper = 3;
  const float inv = 1.0f / static_cast<float>(resolution * kSuper);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      Color acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const float u = (x * kSuper + sx + 0.5f) * inv - dx;
          const float v = (y * kSuper + sy + 0.5f) * inv - dy;
          const Color c = detail::shade(face, u, v, bg);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      const float gu = (x + 0.5f) / resolution - 0.5f;
      const float gv = (y + 0.5f) / resolution - 0.5f;
      const float light = brightness * (1.0f + lx * gu + ly * gv);
      for (int ch = 0; ch < 3; ++ch) {
        img.at(ch, y, x) = acc[ch] / (kSuper * kSuper) * light;
      }
    }
  }
  if (capture.optics_sigma > 0) {
    const int radius = static_cast<int>(std::ceil(3 * capture.optics_sigma));
    img = filter_image(img,
                       gaussian_kernel(2 * radius + 1, capture.optics_sigma));
  }
  for (float& v : img.data()) v = clamp01(v + 0.01f * static_cast<float>(rng.normal()));
  quantize_in_place(img);
  return img;
}

/// In-memory synthetic face collection, ordered by (identity, image).
inline std::vector<LabeledImage> render_synthetic_faces(
    const SyntheticParams& p) {
  if (p.identity_count < 1 || p.images_per_identity < 1) {
    throw Error("synthetic faces: counts must be >= 1");
  }
  require_payload_shape(p.resolution, p.resolution);
  if (p.translation < 0 || p.translation > 0.05 || p.lighting_gradient < 0 ||
      p.optics_sigma < 0) {
    throw Error("synthetic faces: nuisance parameters out of range");
  }
  const CaptureParams capture{p.optics_sigma, p.translation,
                              p.lighting_gradient};
  std::vector<LabeledImage> images;
  images.reserve(static_cast<std::size_t>(p.identity_count) *
                 p.images_per_identity);
  for (int i = 0; i < p.identity_count; ++i) {
    const FaceLatent face = identity_latent(p.seed, i, p.family);
    for (int j = 0; j < p.images_per_identity; ++j) {
      const auto image_seed =
          derive_seed(p.seed, "image", static_cast<std::uint64_t>(p.family),
                      static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(j));
      images.push_back({render_face(face, p.resolution, image_seed, capture),
                        synthetic_identity_id(i), synthetic_image_id(j)});
    }
  }
  return images;
}

/// Writes the collection as a PNG tree under `root` and returns its manifest.
inline DatasetManifest generate_synthetic_faces(
    const SyntheticParams& p, const std::filesystem::path& root) {
  const auto images = render_synthetic_faces(p);
  DatasetManifest manifest;
  manifest.source_tag = "synthetic:seed=" + std::to_string(p.seed) +
                        ",family=" + std::to_string(p.family);
  for (const auto& li : images) {
    const auto path = root / li.identity_id / (li.image_id + ".png");
    write_png(path, li.image);
    manifest.entries.push_back({li.identity_id, li.image_id, path});
  }
  return manifest;
}

}  // namespace revface

#endif  // REVFACE_SYNTHETIC_HPP_
