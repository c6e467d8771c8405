#ifndef REVFACE_RECOGNITION_HPP_
#define REVFACE_RECOGNITION_HPP_

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "revface/dataset.hpp"
#include "revface/pca.hpp"

namespace revface {

/// Eigenface gallery: one embedding per enrolled image.
struct Gallery {
  std::vector<std::string> identity_ids;
  std::vector<Eigen::VectorXd> embeddings;

  void add(std::string identity_id, Eigen::VectorXd embedding) {
    identity_ids.push_back(std::move(identity_id));
    embeddings.push_back(std::move(embedding));
  }
  bool empty() const { return embeddings.empty(); }
};

inline Gallery enroll(const PcaModel& pca, std::span<const LabeledImage> images) {
  Gallery gallery;
  for (const auto& li : images) gallery.add(li.identity_id, embed(pca, li.image));
  return gallery;
}

/// 1-nearest neighbour by L2; ties go to the lexicographically smaller id.
inline std::string identify(const Gallery& gallery,
                            const Eigen::VectorXd& probe) {
  if (gallery.empty()) throw Error("identify: empty gallery");
  std::size_t best = 0;
  double best_dist = (gallery.embeddings[0] - probe).squaredNorm();
  for (std::size_t i = 1; i < gallery.embeddings.size(); ++i) {
    const double d = (gallery.embeddings[i] - probe).squaredNorm();
    if (d < best_dist ||
        (d == best_dist && gallery.identity_ids[i] < gallery.identity_ids[best])) {
      best = i;
      best_dist = d;
    }
  }
  return gallery.identity_ids[best];
}

struct Prediction {
  std::string image_id;
  std::string true_id;
  std::string predicted_id;
};

struct RecognitionOutcome {
  std::vector<Prediction> predictions;
  std::map<std::string, double> per_identity;
  double mean_accuracy = 0;
  double ci_half_width = 0;
};

/// Per-identity accuracy, its mean over identities and the 95% confidence
/// half-width 1.96 s / sqrt(n) across identities.
inline RecognitionOutcome summarize(std::vector<Prediction> predictions) {
  std::map<std::string, std::pair<int, int>> tally;  // correct, total
  for (const auto& p : predictions) {
    auto& [correct, total] = tally[p.true_id];
    correct += p.predicted_id == p.true_id ? 1 : 0;
    ++total;
  }
  if (tally.size() < 2) {
    throw Error("summarize: confidence interval needs at least two identities");
  }
  RecognitionOutcome outcome;
  outcome.predictions = std::move(predictions);
  double sum = 0;
  for (const auto& [id, ct] : tally) {
    const double acc = static_cast<double>(ct.first) / ct.second;
    outcome.per_identity[id] = acc;
    sum += acc;
  }
  const double n = static_cast<double>(tally.size());
  outcome.mean_accuracy = sum / n;
  double ss = 0;
  for (const auto& [id, acc] : outcome.per_identity) {
    ss += (acc - outcome.mean_accuracy) * (acc - outcome.mean_accuracy);
  }
  outcome.ci_half_width = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
  return outcome;
}

enum class Protocol { kClearBaseline, kNaive, kParrot, kReversal };

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::kClearBaseline: return "clear_baseline";
    case Protocol::kNaive: return "naive";
    case Protocol::kParrot: return "parrot";
    case Protocol::kReversal: return "reversal";
  }
  return "?";
}

inline Protocol protocol_from_string(std::string_view s) {
  for (Protocol p : {Protocol::kClearBaseline, Protocol::kNaive,
                     Protocol::kParrot, Protocol::kReversal}) {
    if (to_string(p) == s) return p;
  }
  throw Error("unknown protocol '" + std::string(s) + "'");
}

using ImageTransform = std::function<Image(const LabeledImage&)>;

/// Runs one attacker protocol. Galleries are enrolled from clear images
/// (naive, reversal) or from `anonymizer` applied to them (parrot). Probes
/// are the anonymized test images, passed through `deanonymizer` for the
/// reversal protocol. For kClearBaseline, `probes` must be the clear test
/// images.
inline RecognitionOutcome run_protocol(
    Protocol protocol, std::span<const LabeledImage> clear_enroll,
    std::span<const LabeledImage> probes, const PcaModel& pca,
    const ImageTransform& anonymizer,
    const std::optional<ImageTransform>& deanonymizer = std::nullopt) {
  std::set<std::string> enrolled, probed;
  for (const auto& li : clear_enroll) enrolled.insert(li.identity_id);
  for (const auto& li : probes) probed.insert(li.identity_id);
  if (enrolled != probed) {
    throw Error("run_protocol: enrollment and test identity sets differ");
  }
  if ((protocol == Protocol::kReversal) != deanonymizer.has_value()) {
    throw Error(protocol == Protocol::kReversal
                    ? "run_protocol: reversal requires a deanonymizer"
                    : "run_protocol: deanonymizer given for a non-reversal "
                      "protocol");
  }

  Gallery gallery;
  if (protocol == Protocol::kParrot) {
    if (!anonymizer) throw Error("run_protocol: parrot requires an anonymizer");
    for (const auto& li : clear_enroll) {
      gallery.add(li.identity_id, embed(pca, anonymizer(li)));
    }
  } else {
    gallery = enroll(pca, clear_enroll);
  }

  std::vector<Prediction> predictions;
  predictions.reserve(probes.size());
  for (const auto& li : probes) {
    const Image probe =
        protocol == Protocol::kReversal ? (*deanonymizer)(li) : li.image;
    predictions.push_back(
        {li.image_id, li.identity_id, identify(gallery, embed(pca, probe))});
  }
  return summarize(std::move(predictions));
}

}  // namespace revface

#endif  // REVFACE_RECOGNITION_HPP_
