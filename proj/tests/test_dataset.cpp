#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "revface/dataset.hpp"
#include "revface/png_io.hpp"
#include "revface/synthetic.hpp"

namespace fs = std::filesystem;
using namespace revface;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("revface_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DatasetManifest toy_manifest(int identities, int per_identity) {
  DatasetManifest m;
  for (int i = 0; i < identities; ++i) {
    for (int j = 0; j < per_identity; ++j) {
      m.entries.push_back({synthetic_identity_id(i), synthetic_image_id(j), {}});
    }
  }
  return m;
}

}  // namespace

TEST(Synthetic, DeterministicForSeed) {
  SyntheticParams p;
  p.identity_count = 3;
  p.images_per_identity = 2;
  const auto a = render_synthetic_faces(p);
  const auto b = render_synthetic_faces(p);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, b[i].image);
  p.seed += 1;
  const auto c = render_synthetic_faces(p);
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synthetic, ImagesAreQuantizedAndInRange) {
  SyntheticParams p;
  p.identity_count = 2;
  p.images_per_identity = 2;
  for (const auto& li : render_synthetic_faces(p)) {
    EXPECT_EQ(li.image.height(), 32);
    EXPECT_TRUE(all_in_unit_range(li.image));
    EXPECT_EQ(quantized(li.image), li.image);
  }
}

TEST(Synthetic, ImagesOfOneIdentityDiffer) {
  SyntheticParams p;
  p.identity_count = 1;
  p.images_per_identity = 3;
  const auto imgs = render_synthetic_faces(p);
  EXPECT_NE(imgs[0].image, imgs[1].image);
  EXPECT_NE(imgs[1].image, imgs[2].image);
}

TEST(Synthetic, FamiliesHaveDistinctLatents) {
  for (int i = 0; i < 5; ++i) {
    EXPECT_NE(identity_latent(7, i, 0), identity_latent(7, i, 1));
  }
  // Family 1 draws wider faces on average.
  double mean_width0 = 0, mean_width1 = 0;
  for (int i = 0; i < 50; ++i) {
    mean_width0 += identity_latent(7, i, 0).face_half_width;
    mean_width1 += identity_latent(7, i, 1).face_half_width;
  }
  EXPECT_GT(mean_width1, mean_width0);
}

TEST(Synthetic, RejectsOutOfRangeTranslation) {
  SyntheticParams p;
  p.translation = 0.2;
  EXPECT_THROW(render_synthetic_faces(p), Error);
}

TEST(Synthetic, GeneratedTreeLoadsBack) {
  const auto dir = temp_dir("tree");
  SyntheticParams p;
  p.identity_count = 3;
  p.images_per_identity = 2;
  p.resolution = 16;
  const auto written = generate_synthetic_faces(p, dir);
  const auto loaded = load_manifest(dir);
  ASSERT_EQ(loaded.entries.size(), 6u);
  const auto images = load_images(loaded);
  const auto expected = render_synthetic_faces(p);
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(images[i].identity_id, expected[i].identity_id);
    EXPECT_EQ(images[i].image, expected[i].image);
  }
  EXPECT_EQ(written.entries.size(), 6u);
}

TEST(Manifest, CsvRoundTrip) {
  const auto dir = temp_dir("csv");
  DatasetManifest m = toy_manifest(2, 2);
  for (auto& e : m.entries) e.path = dir / e.identity_id / (e.image_id + ".png");
  write_manifest_csv(m, dir / "manifest.csv");
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "identity_id,image_id,path");
  const auto back = read_manifest_csv(dir / "manifest.csv");
  EXPECT_EQ(back.entries, m.entries);
}

TEST(Manifest, RejectsWrongHeader) {
  const auto dir = temp_dir("badcsv");
  std::ofstream(dir / "m.csv") << "id,image,path\n";
  EXPECT_THROW(read_manifest_csv(dir / "m.csv"), Error);
}

TEST(Manifest, DropsIdentitiesWithOneImage) {
  const auto dir = temp_dir("sparse");
  const Image img(8, 8, 0.5f);
  write_png(dir / "a" / "0.png", img);
  write_png(dir / "a" / "1.png", img);
  write_png(dir / "b" / "0.png", img);
  const auto m = load_manifest(dir);
  EXPECT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.warnings.size(), 1u);
}

TEST(Manifest, CorruptPngNamesTheFile) {
  const auto dir = temp_dir("corrupt");
  write_png(dir / "a" / "0.png", Image(8, 8));
  std::ofstream(dir / "a" / "1.png") << "not a png";
  try {
    load_manifest(dir);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("1.png"), std::string::npos);
  }
}

TEST(Manifest, EmptyDirectoryIsAnError) {
  EXPECT_THROW(load_manifest(temp_dir("empty")), Error);
  EXPECT_THROW(load_manifest("/nonexistent/revface"), Error);
}

TEST(Split, RolesAreDisjointAndCoverTheIdentities) {
  const auto m = toy_manifest(50, 10);
  const auto s = split_dataset(m, {}, 123);
  EXPECT_EQ(s.background_ids.size(), 10u);
  EXPECT_EQ(s.eval_ids.size(), 10u);
  EXPECT_EQ(s.training_ids.size(), 30u);
  std::set<std::string> all;
  for (const auto* ids : {&s.background_ids, &s.eval_ids, &s.training_ids}) {
    for (const auto& id : *ids) EXPECT_TRUE(all.insert(id).second) << id;
  }
  EXPECT_EQ(all.size(), 50u);
  std::set<ImageRef> enroll(s.enrollment_images.begin(), s.enrollment_images.end());
  for (const auto& r : s.test_images) EXPECT_FALSE(enroll.count(r));
  EXPECT_EQ(s.enrollment_images.size(), 50u);
  EXPECT_EQ(s.test_images.size(), 50u);
}

TEST(Split, EveryEvalIdentityHasEnrollmentAndTestImages) {
  const auto s = split_dataset(toy_manifest(30, 3), {5, 5, 0.5}, 1);
  for (const auto& id : s.eval_ids) {
    const auto has = [&](const std::vector<ImageRef>& v) {
      return std::any_of(v.begin(), v.end(), [&](const ImageRef& r) { return r.identity_id == id; });
    };
    EXPECT_TRUE(has(s.enrollment_images));
    EXPECT_TRUE(has(s.test_images));
  }
}

TEST(Split, SameSeedSameSplitDifferentSeedDifferentSplit) {
  const auto m = toy_manifest(50, 10);
  EXPECT_EQ(split_dataset(m, {}, 5), split_dataset(m, {}, 5));
  EXPECT_NE(split_dataset(m, {}, 5).eval_ids, split_dataset(m, {}, 6).eval_ids);
}

TEST(Split, JsonRoundTripEmbedsSeed) {
  const auto s = split_dataset(toy_manifest(30, 4), {5, 5, 0.5}, 99);
  const auto j = to_json(s);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 99u);
  EXPECT_EQ(split_from_json(j), s);
}

TEST(Split, InsufficientIdentitiesIsAnError) {
  EXPECT_THROW(split_dataset(toy_manifest(20, 4), {10, 10, 0.5}, 1), Error);
  EXPECT_THROW(split_dataset(toy_manifest(30, 1), {5, 5, 0.5}, 1), Error);
}

TEST(Split, PartitionFollowsAssignment) {
  SyntheticParams p;
  p.identity_count = 12;
  p.images_per_identity = 4;
  p.resolution = 8;
  const auto images = render_synthetic_faces(p);
  const auto s = split_dataset(manifest_of(images, "t"), {3, 3, 0.5}, 4);
  const auto parts = partition_images(images, s);
  EXPECT_EQ(parts.background.size(), 12u);
  EXPECT_EQ(parts.training.size(), 24u);
  EXPECT_EQ(parts.enrollment.size(), 6u);
  EXPECT_EQ(parts.test.size(), 6u);
}
