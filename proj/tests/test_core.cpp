#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <stdexcept>

#include "revface/image.hpp"
#include "revface/log.hpp"
#include "revface/parallel.hpp"
#include "revface/png_io.hpp"
#include "revface/rng.hpp"

namespace fs = std::filesystem;
using namespace revface;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("revface_core_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image ramp(int h, int w) {
  Image img(h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        img.at(c, y, x) = static_cast<float>((c * 7 + y * 13 + x * 29) % 256) / 255.0f;
      }
    }
  }
  return img;
}

}  // namespace

TEST(Image, LayoutIsChannelMajor) {
  Image img(2, 3);
  img.at(1, 1, 2) = 0.5f;
  EXPECT_EQ(img.data()[1 * 6 + 1 * 3 + 2], 0.5f);
  EXPECT_EQ(img.plane(1)[5], 0.5f);
  EXPECT_EQ(img.size(), 18u);
}

TEST(Image, RejectsNonPositiveShape) {
  EXPECT_THROW(Image(0, 4), Error);
  EXPECT_THROW(Image(4, -1), Error);
}

TEST(Image, QuantizeIsIdempotentAndOnGrid) {
  Image img(4, 4);
  Rng rng(3);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform(-0.2, 1.2));
  const Image q = quantized(img);
  EXPECT_EQ(quantized(q), q);
  for (float v : q.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
    EXPECT_NEAR(v * 255.0f, std::round(v * 255.0f), 1e-3);
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DeriveSeedSeparatesTags) {
  EXPECT_EQ(derive_seed(1, "split"), derive_seed(1, "split"));
  EXPECT_NE(derive_seed(1, "split"), derive_seed(1, "anonymizer"));
  EXPECT_NE(derive_seed(1, "image", 0, 1), derive_seed(1, "image", 1, 0));
  EXPECT_NE(derive_seed(1, "x"), derive_seed(2, "x"));
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) ++counts[rng.index(7)];
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, LaplaceMeanAbsoluteDeviationIsScale) {
  Rng rng(12);
  const int n = 200000;
  double mad = 0;
  for (int i = 0; i < n; ++i) mad += std::abs(rng.laplace(0.3));
  EXPECT_NEAR(mad / n, 0.3, 0.005);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(9);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.begin(), 0);
  EXPECT_EQ(*s.rbegin(), 49);
}

TEST(Png, RoundTripIsExactForQuantizedImages) {
  const auto dir = temp_dir("png");
  const Image img = quantized(ramp(9, 13));
  write_png(dir / "a" / "img.png", img);
  const Image back = read_png(dir / "a" / "img.png");
  EXPECT_EQ(back, img);
}

TEST(Png, MissingFileNamesPath) {
  try {
    read_png("/nonexistent/revface.png");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/revface.png"), std::string::npos);
  }
}

TEST(Log, SinkReceivesMessagesAboveThreshold) {
  std::vector<std::string> seen;
  auto previous = set_log_sink([&](LogLevel, std::string_view m) { seen.emplace_back(m); });
  set_log_level(LogLevel::kWarning);
  log_info("hidden");
  log_warning("shown");
  set_log_level(LogLevel::kInfo);
  set_log_sink(previous);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0], "shown");
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (int jobs : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RethrowsTaskFailure) {
  EXPECT_THROW(parallel_for(10, 4,
                            [](std::size_t i) {
                              if (i == 6) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}
