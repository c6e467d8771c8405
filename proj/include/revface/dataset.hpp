#ifndef REVFACE_DATASET_HPP_
#define REVFACE_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "revface/image.hpp"
#include "revface/log.hpp"
#include "revface/png_io.hpp"
#include "revface/rng.hpp"

namespace revface {

struct LabeledImage {
  Image image;
  std::string identity_id;
  std::string image_id;
};

/// A clear image and its anonymized counterpart.
struct ImagePair {
  Image anonymized;
  Image clear;
  std::string identity_id;
};

struct ManifestEntry {
  std::string identity_id;
  std::string image_id;
  std::filesystem::path path;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string source_tag;
  std::vector<std::string> warnings;

  /// Identity ids in lexicographic order.
  std::vector<std::string> identities() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.identity_id);
    return {ids.begin(), ids.end()};
  }
};

/// Enumerates `<root>/<identity_id>/<image_id>.png`. Identities with fewer
/// than two decodable images are dropped with a warning.
inline DatasetManifest load_manifest(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw Error("load_manifest: missing directory " + root.string());
  }
  std::vector<fs::path> identity_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) identity_dirs.push_back(entry.path());
  }
  std::sort(identity_dirs.begin(), identity_dirs.end());

  DatasetManifest manifest;
  manifest.source_tag = root.string();
  for (const auto& dir : identity_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::vector<ManifestEntry> kept;
    for (const auto& file : files) {
      const Image img = read_png(file);  // throws with the path on failure
      require_payload_shape(img.height(), img.width());
      kept.push_back({dir.filename().string(), file.stem().string(), file});
    }
    if (kept.size() < 2) {
      const std::string warning = "identity " + dir.filename().string() +
                                  " has " + std::to_string(kept.size()) +
                                  " image(s); dropped";
      log_warning(warning);
      manifest.warnings.push_back(warning);
      continue;
    }
    manifest.entries.insert(manifest.entries.end(), kept.begin(), kept.end());
  }
  if (manifest.entries.empty()) {
    throw Error("load_manifest " + root.string() + ": no identities found");
  }
  return manifest;
}

inline std::vector<LabeledImage> load_images(const DatasetManifest& manifest) {
  std::vector<LabeledImage> images;
  images.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    images.push_back({read_png(e.path), e.identity_id, e.image_id});
  }
  return images;
}

/// Builds a path-less manifest describing in-memory images.
inline DatasetManifest manifest_of(const std::vector<LabeledImage>& images,
                                   std::string source_tag) {
  DatasetManifest manifest;
  manifest.source_tag = std::move(source_tag);
  for (const auto& li : images) {
    manifest.entries.push_back({li.identity_id, li.image_id, {}});
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return std::tie(a.identity_id, a.image_id) <
                     std::tie(b.identity_id, b.image_id);
            });
  return manifest;
}

inline void write_manifest_csv(const DatasetManifest& manifest,
                               const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "identity_id,image_id,path\n";
  for (const auto& e : manifest.entries) {
    out << e.identity_id << ',' << e.image_id << ',' << e.path.string()
        << '\n';
  }
}

inline DatasetManifest read_manifest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "identity_id,image_id,path") {
    throw Error(path.string() + ": expected header identity_id,image_id,path");
  }
  DatasetManifest manifest;
  manifest.source_tag = path.string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    ManifestEntry e;
    std::string file;
    std::getline(row, e.identity_id, ',');
    std::getline(row, e.image_id, ',');
    std::getline(row, file);
    e.path = file;
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

struct ImageRef {
  std::string identity_id;
  std::string image_id;

  friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

struct SplitParams {
  int background_count = 10;
  int test_identity_count = 10;
  double enroll_fraction = 0.5;
};

/// Identity-level four-way split: background identities (k-Same database,
/// overlays), de-anonymization training identities, and evaluation
/// identities whose images are divided into enrollment and test.
struct SplitAssignment {
  std::vector<std::string> background_ids;
  std::vector<std::string> training_ids;
  std::vector<std::string> eval_ids;
  std::vector<ImageRef> enrollment_images;
  std::vector<ImageRef> test_images;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitAssignment&,
                         const SplitAssignment&) = default;
};

inline SplitAssignment split_dataset(const DatasetManifest& manifest,
                                     const SplitParams& params,
                                     std::uint64_t seed) {
  if (!(params.enroll_fraction > 0.0 && params.enroll_fraction < 1.0)) {
    throw Error("split_dataset: enroll_fraction must lie in (0, 1)");
  }
  if (params.background_count < 0 || params.test_identity_count < 1) {
    throw Error("split_dataset: invalid identity counts");
  }
  std::map<std::string, std::vector<std::string>> by_identity;
  for (const auto& e : manifest.entries) {
    by_identity[e.identity_id].push_back(e.image_id);
  }
  const auto total = static_cast<long>(by_identity.size());
  if (params.background_count + params.test_identity_count >= total) {
    throw Error("split_dataset: insufficient identities (" +
                std::to_string(total) + " available, " +
                std::to_string(params.background_count) + " background + " +
                std::to_string(params.test_identity_count) +
                " test requested)");
  }

  std::vector<std::string> ids;
  for (const auto& [id, _] : by_identity) ids.push_back(id);
  Rng rng(derive_seed(seed, "split", "identities"));
  rng.shuffle(std::span<std::string>(ids));

  SplitAssignment split;
  split.seed = seed;
  const auto bg_end = ids.begin() + params.background_count;
  const auto eval_end = bg_end + params.test_identity_count;
  split.background_ids.assign(ids.begin(), bg_end);
  split.eval_ids.assign(bg_end, eval_end);
  split.training_ids.assign(eval_end, ids.end());
  std::sort(split.background_ids.begin(), split.background_ids.end());
  std::sort(split.eval_ids.begin(), split.eval_ids.end());
  std::sort(split.training_ids.begin(), split.training_ids.end());

  for (const auto& id : split.eval_ids) {
    auto images = by_identity[id];
    std::sort(images.begin(), images.end());
    const auto n = static_cast<long>(images.size());
    const long enroll =
        static_cast<long>(std::ceil(params.enroll_fraction * n - 1e-12));
    if (n < 2 || enroll >= n) {
      throw Error("split_dataset: insufficient images for identity " + id +
                  " (" + std::to_string(n) + ")");
    }
    Rng image_rng(derive_seed(seed, "split", "images", id));
    image_rng.shuffle(std::span<std::string>(images));
    for (long i = 0; i < n; ++i) {
      auto& dest = i < enroll ? split.enrollment_images : split.test_images;
      dest.push_back({id, images[i]});
    }
  }
  std::sort(split.enrollment_images.begin(), split.enrollment_images.end());
  std::sort(split.test_images.begin(), split.test_images.end());
  return split;
}

inline nlohmann::json to_json(const SplitAssignment& split) {
  auto refs = [](const std::vector<ImageRef>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : v) arr.push_back({r.identity_id, r.image_id});
    return arr;
  };
  nlohmann::json j;
  j["seed"] = split.seed;
  j["background_ids"] = split.background_ids;
  j["training_ids"] = split.training_ids;
  j["eval_ids"] = split.eval_ids;
  j["enrollment_images"] = refs(split.enrollment_images);
  j["test_images"] = refs(split.test_images);
  return j;
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  auto refs = [](const nlohmann::json& arr) {
    std::vector<ImageRef> v;
    for (const auto& r : arr) {
      v.push_back({r.at(0).get<std::string>(), r.at(1).get<std::string>()});
    }
    return v;
  };
  SplitAssignment split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.background_ids = j.at("background_ids").get<std::vector<std::string>>();
  split.training_ids = j.at("training_ids").get<std::vector<std::string>>();
  split.eval_ids = j.at("eval_ids").get<std::vector<std::string>>();
  split.enrollment_images = refs(j.at("enrollment_images"));
  split.test_images = refs(j.at("test_images"));
  return split;
}

/// Groups images by split role. Images keep manifest order.
struct SplitImages {
  std::vector<LabeledImage> background;
  std::vector<LabeledImage> training;
  std::vector<LabeledImage> enrollment;
  std::vector<LabeledImage> test;
};

inline SplitImages partition_images(const std::vector<LabeledImage>& images,
                                    const SplitAssignment& split) {
  const std::set<std::string> bg(split.background_ids.begin(),
                                 split.background_ids.end());
  const std::set<std::string> train(split.training_ids.begin(),
                                    split.training_ids.end());
  const std::set<ImageRef> enroll(split.enrollment_images.begin(),
                                  split.enrollment_images.end());
  const std::set<ImageRef> test(split.test_images.begin(),
                                split.test_images.end());
  SplitImages out;
  for (const auto& li : images) {
    const ImageRef ref{li.identity_id, li.image_id};
    if (bg.count(li.identity_id)) {
      out.background.push_back(li);
    } else if (train.count(li.identity_id)) {
      out.training.push_back(li);
    } else if (enroll.count(ref)) {
      out.enrollment.push_back(li);
    } else if (test.count(ref)) {
      out.test.push_back(li);
    }
  }
  return out;
}

}  // namespace revface

#endif  // REVFACE_DATASET_HPP_
