#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "revface/anonymizers.hpp"
#include "revface/synthetic.hpp"

using namespace revface;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  Rng rng(seed);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform());
  return quantized(img);
}

Image flat_image(int h, int w, float v) { return Image(h, w, v); }

std::vector<LabeledImage> faces(int identities, int per_identity, int res = 32) {
  SyntheticParams p;
  p.identity_count = identities;
  p.images_per_identity = per_identity;
  p.resolution = res;
  return render_synthetic_faces(p);
}

// Direct 2-D convolution with reflected borders, written independently of the
// separable filter.
Image blur_oracle(const Image& img, int kernel) {
  const double sigma = 0.3 * ((kernel - 1) / 2.0 - 1) + 0.8;
  const int r = kernel / 2;
  std::vector<double> g(kernel);
  double sum = 0;
  for (int i = 0; i < kernel; ++i) sum += g[i] = std::exp(-(i - r) * (i - r) / (2 * sigma * sigma));
  for (double& v : g) v /= sum;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image out(img.height(), img.width());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            acc += g[dy + r] * g[dx + r] *
                   img.at(c, reflect(y + dy, img.height()), reflect(x + dx, img.width()));
          }
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

TEST(Spec, JsonRoundTripForEveryMethod) {
  for (auto name : kMethodNames) {
    const auto spec = anonymizer_from_json({{"method", name}, {"key", 5}, {"noise_seed", 6}});
    EXPECT_EQ(spec.method(), name);
    const auto again = anonymizer_from_json(to_json(spec));
    EXPECT_EQ(to_json(again), to_json(spec));
    EXPECT_EQ(again.key, 5u);
    EXPECT_EQ(again.noise_seed, 6u);
  }
}

TEST(Spec, RejectsUnknownMethodAndBadParameters) {
  EXPECT_THROW(anonymizer_from_json({{"method", "Swirl"}}), Error);
  EXPECT_THROW(anonymizer_from_json({{"method", "GaussianBlur"}, {"params", {{"kernel", 4}}}}),
               Error);
  EXPECT_THROW(anonymizer_from_json({{"method", "DPSnow"}, {"params", {{"delta", 1.5}}}}), Error);
  EXPECT_THROW(anonymizer_from_json({{"method", "KSamePixel"}, {"params", {{"k", 1}}}}), Error);
}

TEST(Anonymize, OutputsAreQuantizedAndInRange) {
  const auto imgs = faces(12, 1);
  const auto db = build_background_db(imgs, 8);
  OverlaySet overlays;
  for (const auto& li : imgs) overlays.images.push_back(li.image);
  for (auto name : kMethodNames) {
    auto spec = anonymizer_from_json({{"method", name}, {"key", 1}, {"noise_seed", 2}});
    if (auto* p = std::get_if<BlockPermuteParams>(&spec.params)) p->block_size = 8;
    if (auto* p = std::get_if<KRtioParams>(&spec.params)) p->block_size = 4;
    if (auto* p = std::get_if<PixelateParams>(&spec.params)) p->size = 8;
    if (auto* p = std::get_if<GaussianBlurParams>(&spec.params)) p->kernel = 9;
    if (auto* p = std::get_if<DpPixParams>(&spec.params)) p->m = 4;
    if (auto* p = std::get_if<KSamePixelParams>(&spec.params)) p->k = 4;
    if (auto* p = std::get_if<KSameEigenParams>(&spec.params)) p->k = 4;
    const Image out = anonymize(imgs[0].image, spec, {"img000", &db, &overlays});
    EXPECT_TRUE(all_in_unit_range(out)) << name;
    EXPECT_EQ(quantized(out), out) << name;
    EXPECT_EQ(out, anonymize(imgs[0].image, spec, {"img000", &db, &overlays})) << name;
  }
}

TEST(Anonymize, IdentityLeavesQuantizedImagesUnchanged) {
  const Image img = random_image(16, 16, 1);
  AnonymizerSpec spec{IdentityParams{}};
  EXPECT_EQ(anonymize(img, spec), img);
}

TEST(EyeMask, ZeroesOnlyTheEyeBand) {
  const Image img = flat_image(32, 32, 0.6f);
  const Image out = eye_mask(img);
  EXPECT_EQ(out.at(0, 10, 16), 0.0f);
  EXPECT_EQ(out.at(0, 2, 16), 0.6f);
  EXPECT_EQ(out.at(0, 20, 16), 0.6f);
  EXPECT_EQ(out.at(2, 10, 1), 0.6f);
}

TEST(BlockPermute, IsABijectionOfBlocks) {
  const Image img = random_image(32, 32, 2);
  const Image out = block_permute(img, 8, 77);
  std::vector<float> a(img.data().begin(), img.data().end());
  std::vector<float> b(out.data().begin(), out.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  const auto perm = block_permutation(img, 8, 77);
  EXPECT_EQ(apply_block_permutation(out, 8, invert_permutation(perm)), img);
}

TEST(BlockPermute, SameKeySamePermutationAcrossImages) {
  const Image a = random_image(32, 32, 3), b = random_image(32, 32, 4);
  EXPECT_EQ(block_permutation(a, 8, 9), block_permutation(b, 8, 9));
  EXPECT_NE(block_permutation(a, 8, 9), block_permutation(a, 8, 10));
}

TEST(BlockPermute, NonDividingBlockLeavesMarginInPlace) {
  const Image img = random_image(20, 20, 5);
  const Image out = block_permute(img, 8, 3);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 20; ++i) {
      EXPECT_EQ(out.at(c, 16 + i % 4, i), img.at(c, 16 + i % 4, i));
      EXPECT_EQ(out.at(c, i, 17), img.at(c, i, 17));
    }
  }
}

TEST(PixelRelocate, ComposesTheKeyedPermutation) {
  const auto base = keyed_permutation(4, "pixel_relocate", 8, 8);
  const auto map3 = relocation_map(8, 8, 3, 4);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(map3[i], base[base[base[i]]]);
  }
  const Image img = random_image(8, 8, 6);
  EXPECT_EQ(gather_pixels(pixel_relocate(img, 3, 4), invert_permutation(map3)), img);
}

TEST(GaussianNoise, EmpiricalSigmaMatchesRequested) {
  const auto noise = gaussian_noise_field(20000, 50.0, 3);
  double sq = 0, sum = 0;
  for (float v : noise) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(noise.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 50.0 / 255.0, 0.1 * 50.0 / 255.0);
  EXPECT_NEAR(sum / n, 0.0, 0.01);
}

TEST(GaussianNoise, ZeroSigmaIsIdentity) {
  const Image img = random_image(8, 8, 7);
  EXPECT_EQ(gaussian_noise(img, 0.0, 1), img);
}

TEST(GaussianBlur, MatchesDirectConvolution) {
  const Image img = random_image(16, 16, 8);
  const Image fast = gaussian_blur(img, 9);
  const Image slow = blur_oracle(img, 9);
  for (std::size_t i = 0; i < fast.size(); ++i) {
    EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-5);
  }
}

TEST(GaussianBlur, PreservesConstantImages) {
  const Image img = flat_image(16, 16, 0.3f);
  const Image out = gaussian_blur(img, 7);
  for (float v : out.data()) EXPECT_NEAR(v, 0.3f, 1e-6);
  EXPECT_THROW(gaussian_blur(img, 4), Error);
}

TEST(Pixelate, CellsAreConstantWithMeanColor) {
  const Image img = random_image(32, 32, 9);
  const Image out = pixelate(img, 8);
  for (int c = 0; c < 3; ++c) {
    for (int cy = 0; cy < 8; ++cy) {
      for (int cx = 0; cx < 8; ++cx) {
        double sum = 0;
        for (int y = 0; y < 4; ++y) {
          for (int x = 0; x < 4; ++x) sum += img.at(c, cy * 4 + y, cx * 4 + x);
        }
        for (int y = 0; y < 4; ++y) {
          for (int x = 0; x < 4; ++x) {
            EXPECT_NEAR(out.at(c, cy * 4 + y, cx * 4 + x), sum / 16, 1e-6);
          }
        }
      }
    }
  }
}

TEST(Pixelate, FullResolutionIsIdentity) {
  const Image img = random_image(16, 16, 10);
  EXPECT_EQ(pixelate(img, 16), img);
  EXPECT_THROW(pixelate(img, 17), Error);
}

TEST(DpPix, ScaleFollowsFormula) {
  EXPECT_DOUBLE_EQ(dp_pix_scale(5, 12, 16), 16.0 / (144.0 * 5));
  EXPECT_DOUBLE_EQ(dp_pix_scale(0.5, 6, 4), 4.0 / (36.0 * 0.5));
}

TEST(DpPix, EmpiricalLaplaceScaleWithinTenPercent) {
  // Mid-gray input and a small scale keep clamping out of play; every 1x1
  // cell then carries one independent Laplace draw per channel.
  const int side = 64;
  const Image img = flat_image(side, side, 0.5f);
  const double scale = dp_pix_scale(20, 2, 1);
  double mad = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Image out = dp_pix(img, 20, 2, 1, seed);
    for (float v : out.data()) {
      mad += std::abs(v - 0.5);
      ++n;
    }
  }
  ASSERT_GE(n, 10000u);
  EXPECT_NEAR(mad / static_cast<double>(n), scale, 0.1 * scale);
}

TEST(DpPix, NoiseIsConstantWithinCells) {
  const Image img = random_image(16, 16, 11);
  const Image out = dp_pix(img, 1.0, 4, 4, 3);
  const Image pix = pixelate(img, 4);
  for (int c = 0; c < 3; ++c) {
    for (int cy = 0; cy < 4; ++cy) {
      const float ref = out.at(c, cy * 4, 0) - pix.at(c, cy * 4, 0);
      for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
          const float v = out.at(c, cy * 4 + y, x);
          if (v > 0 && v < 1) EXPECT_NEAR(v - pix.at(c, cy * 4 + y, x), ref, 1e-5);
        }
      }
    }
  }
}

TEST(DpSnow, ReplacesExactlyRoundDeltaHW) {
  // A background without gray pixels makes replacements countable.
  const Image img = flat_image(32, 32, 0.9f);
  for (double delta : {0.0, 0.1, 0.25, 0.5, 0.77, 1.0}) {
    const Image out = dp_snow(img, delta, 5);
    std::size_t gray = 0;
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
      bool all = true;
      for (int c = 0; c < 3; ++c) all &= out.plane(c)[i] == kSnowGray;
      gray += all;
    }
    EXPECT_EQ(gray, static_cast<std::size_t>(std::llround(delta * 1024))) << delta;
  }
}

TEST(DpSnow, DifferentImageIdsGetDifferentPatterns) {
  const Image img = flat_image(16, 16, 0.9f);
  AnonymizerSpec spec{DpSnowParams{0.5}, 0, 3};
  EXPECT_NE(anonymize(img, spec, {"a"}), anonymize(img, spec, {"b"}));
}

TEST(DpSamp, SampledPixelsAreKeptAndOthersInterpolated) {
  const Image img = random_image(16, 16, 12);
  const auto sampled = dp_samp_sample(img, 25, 6, 40, 4);
  ASSERT_FALSE(sampled.empty());
  const Image out = dp_samp(img, 25, 6, 40, 4);
  for (int s : sampled) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.plane(c)[s], img.plane(c)[s]);
  }
  EXPECT_TRUE(all_in_unit_range(out));
}

TEST(DpSamp, KMeansIsDeterministic) {
  const Image img = random_image(16, 16, 13);
  const auto a = kmeans_colors(img, 5, 1);
  const auto b = kmeans_colors(img, 5, 1);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(KSame, PixelOutputIsMeanOfNearestRecords) {
  const auto imgs = faces(10, 1);
  const auto db = build_background_db(imgs, 9);
  const Image probe = faces(11, 1).back().image;
  const Image out = k_same_pixel(probe, db, 4);
  // Oracle: brute-force nearest three records in the db's PCA space.
  const auto coeffs = embed(db.pca, probe);
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < db.records.size(); ++i) {
    d.push_back({(db.records[i].coeffs - coeffs).norm(), i});
  }
  std::sort(d.begin(), d.end());
  for (std::size_t p = 0; p < out.size(); ++p) {
    double sum = probe.data()[p];
    for (int j = 0; j < 3; ++j) sum += db.records[d[j].second].image.data()[p];
    EXPECT_NEAR(out.data()[p], sum / 4, 1e-6);
  }
}

TEST(KSame, PixelWithExactCopyAndKTwoIsIdentity) {
  const auto imgs = faces(4, 1);
  const auto db = build_background_db(imgs, 4);
  EXPECT_EQ(quantized(k_same_pixel(imgs[2].image, db, 2)), imgs[2].image);
}

TEST(KSame, EigenFullRankWithCopyReconstructs) {
  const auto imgs = faces(5, 1, 8);
  const auto db = build_background_db(imgs, 5);
  const Image out = k_same_eigen(imgs[1].image, db, 2);
  for (std::size_t p = 0; p < out.size(); ++p) {
    EXPECT_NEAR(out.data()[p], imgs[1].image.data()[p], 1e-5);
  }
}

TEST(KSame, EigenOutputsDifferForDifferentInputsWithSameNeighbours) {
  const auto imgs = faces(12, 1);
  const auto db = build_background_db(std::span(imgs).first(10), 9);
  EXPECT_NE(k_same_eigen(imgs[10].image, db, 10), k_same_eigen(imgs[11].image, db, 10));
}

TEST(KSame, KLargerThanDatabaseIsAnError) {
  const auto imgs = faces(3, 1);
  const auto db = build_background_db(imgs, 3);
  EXPECT_THROW(k_same_pixel(imgs[0].image, db, 5), Error);
}

TEST(KSame, ClosedSetClustersHaveAtLeastKMembersAndShareOutput) {
  const auto imgs = faces(23, 1);
  std::vector<Image> set;
  for (const auto& li : imgs) set.push_back(li.image);
  for (int k : {2, 5, 10}) {
    const auto [out, cluster] = k_same_pixel_closed(set, k, 16);
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < cluster.size(); ++i) members[cluster[i]].push_back(i);
    for (const auto& [c, m] : members) {
      EXPECT_GE(m.size(), static_cast<std::size_t>(k));
      EXPECT_LT(m.size(), static_cast<std::size_t>(2 * k));
      for (std::size_t i : m) EXPECT_EQ(out[i], out[m.front()]);
      for (std::size_t p = 0; p < set[0].size(); p += 97) {
        double sum = 0;
        for (std::size_t i : m) sum += set[i].data()[p];
        EXPECT_NEAR(out[m.front()].data()[p], sum / static_cast<double>(m.size()), 1e-5);
      }
    }
  }
}

TEST(KRtio, ZeroAlphaIsIdentity) {
  const auto imgs = faces(4, 1);
  OverlaySet overlays;
  for (const auto& li : imgs) overlays.images.push_back(li.image);
  KRtioParams p{1, 0.0, 8};
  EXPECT_EQ(k_rtio(imgs[0].image, overlays, p, 3, "x"), imgs[0].image);
}

TEST(KRtio, DeterministicPerKeyAndImageId) {
  const auto imgs = faces(6, 1);
  OverlaySet overlays;
  for (const auto& li : imgs) overlays.images.push_back(li.image);
  KRtioParams p{3, 0.4, 8};
  const Image& img = imgs[0].image;
  EXPECT_EQ(k_rtio(img, overlays, p, 3, "x"), k_rtio(img, overlays, p, 3, "x"));
  EXPECT_NE(k_rtio(img, overlays, p, 3, "x"), k_rtio(img, overlays, p, 3, "y"));
}

TEST(Anonymize, BackgroundMethodsWithoutDatabaseFail) {
  const Image img = random_image(16, 16, 14);
  EXPECT_THROW(anonymize(img, AnonymizerSpec{KSamePixelParams{}}), Error);
  EXPECT_THROW(anonymize(img, AnonymizerSpec{KRtioParams{}}), Error);
}
