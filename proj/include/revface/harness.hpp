#ifndef REVFACE_HARNESS_HPP_
#define REVFACE_HARNESS_HPP_

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "revface/anonymizers.hpp"
#include "revface/autoencoder.hpp"
#include "revface/dataset.hpp"
#include "revface/deanon.hpp"
#include "revface/image.hpp"
#include "revface/log.hpp"
#include "revface/metrics.hpp"
#include "revface/parallel.hpp"
#include "revface/pca.hpp"
#include "revface/png_io.hpp"
#include "revface/recognition.hpp"
#include "revface/rng.hpp"
#include "revface/synthetic.hpp"

#ifndef REVFACE_VERSION
#define REVFACE_VERSION "0.1.0"
#endif

namespace revface {

inline constexpr std::string_view kVersion = REVFACE_VERSION;

/// Raised for malformed or inconsistent experiment configurations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause),
        stage_(std::move(stage)),
        cause_(cause) {}
  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }

 private:
  std::string stage_;
  std::string cause_;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Content hash of labeled images: ids plus 8-bit pixel values.
inline std::uint64_t hash_images(std::span<const LabeledImage> images) {
  std::uint64_t h = fnv1a("images");
  std::string buf;
  for (const auto& li : images) {
    buf.clear();
    buf += li.identity_id;
    buf += '/';
    buf += li.image_id;
    buf += ':';
    buf += std::to_string(li.image.height()) + "x" + std::to_string(li.image.width());
    for (float v : li.image.data()) buf += static_cast<char>(to_byte(v));
    h = fnv1a(buf, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Configuration.

struct DatasetConfig {
  /// Either synthetic generation parameters or a dataset root / manifest CSV.
  std::variant<SyntheticParams, std::filesystem::path> source = SyntheticParams{};
};

inline nlohmann::json to_json(const DatasetConfig& d) {
  if (const auto* p = std::get_if<SyntheticParams>(&d.source)) {
    return {{"synthetic",
             {{"identities", p->identity_count},
              {"images_per_identity", p->images_per_identity},
              {"resolution", p->resolution},
              {"seed", p->seed},
              {"family", p->family},
              {"optics_sigma", p->optics_sigma},
              {"translation", p->translation},
              {"lighting_gradient", p->lighting_gradient}}}};
  }
  return {{"path", std::get<std::filesystem::path>(d.source).string()}};
}

inline DatasetConfig dataset_from_json(const nlohmann::json& j) {
  DatasetConfig d;
  if (j.contains("path")) {
    d.source = std::filesystem::path(j.at("path").get<std::string>());
    return d;
  }
  SyntheticParams p;
  const auto s = j.value("synthetic", nlohmann::json::object());
  p.identity_count = s.value("identities", p.identity_count);
  p.images_per_identity = s.value("images_per_identity", p.images_per_identity);
  p.resolution = s.value("resolution", p.resolution);
  p.seed = s.value("seed", p.seed);
  p.family = s.value("family", p.family);
  p.optics_sigma = s.value("optics_sigma", p.optics_sigma);
  p.translation = s.value("translation", p.translation);
  p.lighting_gradient = s.value("lighting_gradient", p.lighting_gradient);
  d.source = p;
  return d;
}

enum class DeanonMethod {
  kNone,
  kLearnPermutation,
  kLinear,
  kBicubic,
  kWiener,
  kRichardsonLucy,
  kInterpolateGray,
  kAutoencoder
};

inline constexpr std::array<std::string_view, 8> kDeanonNames = {
    "none",   "learn_permutation", "linear",           "bicubic",
    "wiener", "richardson_lucy",   "interpolate_gray", "autoencoder"};

inline std::string_view to_string(DeanonMethod m) {
  return kDeanonNames[static_cast<std::size_t>(m)];
}

struct DeanonymizerConfig {
  DeanonMethod method = DeanonMethod::kNone;
  AeHyperparams hyper;
  /// Fixed deconvolution parameters; when absent they are grid-searched.
  std::optional<DeconvParams> deconv;

  /// Short label used in aggregate tables.
  std::string label() const {
    if (method == DeanonMethod::kAutoencoder) {
      return hyper.with_linear_layer ? "autoencoder" : "conv_autoencoder";
    }
    return std::string(to_string(method));
  }
};

inline nlohmann::json to_json(const DeanonymizerConfig& d) {
  nlohmann::json j = {{"method", d.label()}};
  if (d.method == DeanonMethod::kAutoencoder) j["hyper"] = to_json(d.hyper);
  if (d.deconv) j["params"] = to_json(*d.deconv);
  return j;
}

inline DeanonymizerConfig deanonymizer_from_json(const nlohmann::json& j,
                                                 std::uint64_t default_seed) {
  DeanonymizerConfig d;
  std::string name = j.is_string() ? j.get<std::string>() : j.at("method").get<std::string>();
  bool conv_only = false;
  if (name == "conv_autoencoder") {
    name = "autoencoder";
    conv_only = true;
  }
  const auto it = std::find(kDeanonNames.begin(), kDeanonNames.end(), name);
  if (it == kDeanonNames.end()) throw ConfigError("unknown deanonymizer '" + name + "'");
  d.method = static_cast<DeanonMethod>(it - kDeanonNames.begin());
  if (d.method == DeanonMethod::kAutoencoder) {
    nlohmann::json hj = j.is_object() ? j.value("hyper", nlohmann::json::object())
                                      : nlohmann::json::object();
    if (!hj.contains("seed")) hj["seed"] = default_seed;
    if (conv_only) hj["with_linear_layer"] = false;
    d.hyper = hyperparams_from_json(hj);
  }
  if (j.is_object() && j.contains("params")) {
    if (d.method != DeanonMethod::kWiener && d.method != DeanonMethod::kRichardsonLucy) {
      throw ConfigError("deanonymizer params are only accepted for deconvolution");
    }
    d.deconv = deconv_from_json(j.at("params"));
  }
  return d;
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  SplitParams split;
  AnonymizerSpec anonymizer;
  DeanonymizerConfig deanonymizer;
  std::vector<Protocol> protocols = {Protocol::kNaive};
  std::optional<AnonymizerSpec> train_anonymizer_override;
  std::optional<DatasetConfig> train_dataset_override;
  /// Eigenface components used by the recognizer.
  int recognition_components = 64;

  bool wants(Protocol p) const {
    return std::find(protocols.begin(), protocols.end(), p) != protocols.end();
  }
};

inline void validate(const ExperimentConfig& c) {
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("experiment name must be a non-empty plain file name");
  }
  if (c.protocols.empty()) throw ConfigError("no protocols requested");
  if (c.wants(Protocol::kReversal) && c.deanonymizer.method == DeanonMethod::kNone) {
    throw ConfigError("the reversal protocol requires a deanonymizer");
  }
  if ((c.train_anonymizer_override || c.train_dataset_override) &&
      !c.wants(Protocol::kReversal)) {
    throw ConfigError("training overrides are only valid with the reversal protocol");
  }
  if (c.recognition_components < 1) {
    throw ConfigError("recognition_components must be >= 1");
  }
  try {
    validate(c.anonymizer);
    if (c.train_anonymizer_override) validate(*c.train_anonymizer_override);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["dataset"] = to_json(c.dataset);
  j["split"] = {{"background_identities", c.split.background_count},
                {"test_identities", c.split.test_identity_count},
                {"enroll_fraction", c.split.enroll_fraction}};
  j["anonymizer"] = to_json(c.anonymizer);
  j["deanonymizer"] = to_json(c.deanonymizer);
  nlohmann::json protocols = nlohmann::json::array();
  for (Protocol p : c.protocols) protocols.push_back(to_string(p));
  j["protocols"] = protocols;
  j["train_anonymizer_override"] =
      c.train_anonymizer_override ? to_json(*c.train_anonymizer_override) : nlohmann::json();
  j["train_dataset_override"] =
      c.train_dataset_override ? to_json(*c.train_dataset_override) : nlohmann::json();
  j["recognition_components"] = c.recognition_components;
  return j;
}

namespace detail {

/// Anonymizer keys and noise seeds that the file leaves out are derived
/// from the experiment's root seed.
inline AnonymizerSpec anonymizer_with_seeds(const nlohmann::json& j,
                                            std::uint64_t root, std::string_view role) {
  AnonymizerSpec spec = anonymizer_from_json(j);
  if (!j.contains("key")) spec.key = derive_seed(root, "key");
  if (!j.contains("noise_seed")) spec.noise_seed = derive_seed(root, "noise", role);
  return spec;
}

}  // namespace detail

/// Parses an experiment configuration. `seed_override` replaces the root
/// seed before any derived seed is computed.
inline ExperimentConfig experiment_from_json(
    const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {}) {
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.seed = seed_override ? *seed_override : j.value("seed", c.seed);
    c.dataset = dataset_from_json(j.value("dataset", nlohmann::json::object()));
    const auto split = j.value("split", nlohmann::json::object());
    c.split.background_count = split.value("background_identities", c.split.background_count);
    c.split.test_identity_count = split.value("test_identities", c.split.test_identity_count);
    c.split.enroll_fraction = split.value("enroll_fraction", c.split.enroll_fraction);
    if (!j.contains("anonymizer")) throw ConfigError("missing 'anonymizer'");
    c.anonymizer = detail::anonymizer_with_seeds(j.at("anonymizer"), c.seed, "eval");
    c.deanonymizer = deanonymizer_from_json(j.value("deanonymizer", nlohmann::json("none")),
                                            derive_seed(c.seed, "autoencoder"));
    if (j.contains("protocols")) {
      c.protocols.clear();
      for (const auto& p : j.at("protocols")) {
        c.protocols.push_back(protocol_from_string(p.get<std::string>()));
      }
    }
    if (j.contains("train_anonymizer_override") && !j["train_anonymizer_override"].is_null()) {
      c.train_anonymizer_override =
          detail::anonymizer_with_seeds(j["train_anonymizer_override"], c.seed, "train");
    }
    if (j.contains("train_dataset_override") && !j["train_dataset_override"].is_null()) {
      c.train_dataset_override = dataset_from_json(j["train_dataset_override"]);
    }
    c.recognition_components = j.value("recognition_components", c.recognition_components);
    validate(c);
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Reports.

struct StageRecord {
  std::string name;
  bool cached = false;
  double seconds = 0;
};

struct ExperimentReport {
  std::string name;
  nlohmann::json config;
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
  std::string anonymizer;
  std::string deanonymizer;
  std::string recognizer = "eigenfaces";
  std::map<Protocol, RecognitionOutcome> outcomes;
  std::optional<double> ssim_anonymized;
  std::optional<double> ssim_deanonymized;
  std::optional<ReversibilityScore> reversibility;
  std::string reversibility_note;
  /// Details of the fitted de-anonymizer (selected parameters, epochs, ...).
  nlohmann::json deanonymizer_fit = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::string dataset_hash;
  std::string probe_hash;
  std::vector<StageRecord> stages;

  bool ok() const { return status == "ok"; }
  bool stage_cached(std::string_view stage) const {
    for (const auto& s : stages) {
      if (s.name == stage) return s.cached;
    }
    return false;
  }
};

inline nlohmann::json to_json(const RecognitionOutcome& o) {
  return {{"mean_accuracy", o.mean_accuracy},
          {"ci_half_width", o.ci_half_width},
          {"per_identity", o.per_identity},
          {"probes", o.predictions.size()}};
}

/// Everything except wall-clock timings is a pure function of the config.
inline nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["version"] = kVersion;
  j["config"] = r.config;
  j["status"] = r.status;
  j["failed_stage"] = r.failed_stage;
  j["error"] = r.error;
  j["anonymizer"] = r.anonymizer;
  j["deanonymizer"] = r.deanonymizer;
  j["recognizer"] = r.recognizer;
  nlohmann::json outcomes = nlohmann::json::object();
  for (const auto& [p, o] : r.outcomes) outcomes[std::string(to_string(p))] = to_json(o);
  j["outcomes"] = outcomes;
  j["ssim_anonymized"] = r.ssim_anonymized ? nlohmann::json(*r.ssim_anonymized) : nlohmann::json();
  j["ssim_deanonymized"] =
      r.ssim_deanonymized ? nlohmann::json(*r.ssim_deanonymized) : nlohmann::json();
  if (r.reversibility) {
    j["reversibility"] = {{"value", r.reversibility->value},
                          {"category", to_string(r.reversibility->category)}};
  } else {
    j["reversibility"] = nullptr;
  }
  j["reversibility_note"] = r.reversibility_note;
  j["deanonymizer_fit"] = r.deanonymizer_fit;
  j["seeds"] = r.seeds;
  j["dataset_hash"] = r.dataset_hash;
  j["probe_hash"] = r.probe_hash;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"name", s.name}, {"cached", s.cached}});
  }
  j["stages"] = stages;
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& s : r.stages) timings[s.name] = s.seconds;
  j["timings"] = timings;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.name = j.at("name").get<std::string>();
  r.config = j.at("config");
  r.status = j.at("status").get<std::string>();
  r.failed_stage = j.at("failed_stage").get<std::string>();
  r.error = j.at("error").get<std::string>();
  r.anonymizer = j.at("anonymizer").get<std::string>();
  r.deanonymizer = j.at("deanonymizer").get<std::string>();
  r.recognizer = j.at("recognizer").get<std::string>();
  for (const auto& [name, o] : j.at("outcomes").items()) {
    RecognitionOutcome outcome;
    outcome.mean_accuracy = o.at("mean_accuracy").get<double>();
    outcome.ci_half_width = o.at("ci_half_width").get<double>();
    outcome.per_identity = o.at("per_identity").get<std::map<std::string, double>>();
    outcome.predictions.resize(o.at("probes").get<std::size_t>());
    r.outcomes[protocol_from_string(name)] = std::move(outcome);
  }
  if (!j.at("ssim_anonymized").is_null()) r.ssim_anonymized = j["ssim_anonymized"].get<double>();
  if (!j.at("ssim_deanonymized").is_null()) {
    r.ssim_deanonymized = j["ssim_deanonymized"].get<double>();
  }
  if (!j.at("reversibility").is_null()) {
    const double v = j["reversibility"].at("value").get<double>();
    r.reversibility = ReversibilityScore{v, categorize_reversibility(v)};
  }
  r.reversibility_note = j.at("reversibility_note").get<std::string>();
  r.deanonymizer_fit = j.at("deanonymizer_fit");
  r.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  r.dataset_hash = j.at("dataset_hash").get<std::string>();
  r.probe_hash = j.at("probe_hash").get<std::string>();
  const auto& timings = j.at("timings");
  for (const auto& s : j.at("stages")) {
    const auto name = s.at("name").get<std::string>();
    r.stages.push_back({name, s.at("cached").get<bool>(), timings.value(name, 0.0)});
  }
  return r;
}

inline constexpr std::string_view kAggregateHeader =
    "experiment,anonymizer,deanonymizer,recognizer,protocol,mean_acc,ci,ssim,"
    "reversibility,status";

namespace detail {

inline std::string fixed6(std::optional<double> v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Rows of the aggregate table for one report: one per protocol, or a
/// single status row when the experiment failed.
inline std::vector<std::string> aggregate_rows(const ExperimentReport& r) {
  const std::string prefix = detail::csv_field(r.name) + "," +
                             detail::csv_field(r.anonymizer) + "," +
                             detail::csv_field(r.deanonymizer) + "," + r.recognizer + ",";
  const std::string ssim = detail::fixed6(r.ssim_deanonymized);
  const std::string rev =
      r.reversibility ? detail::fixed6(r.reversibility->value) : std::string();
  std::vector<std::string> rows;
  if (!r.ok()) {
    rows.push_back(prefix + ",,,,," +
                   detail::csv_field("failed:" + r.failed_stage));
    return rows;
  }
  for (const auto& [p, o] : r.outcomes) {
    const bool rev_row = p == Protocol::kReversal;
    rows.push_back(prefix + std::string(to_string(p)) + "," +
                   detail::fixed6(o.mean_accuracy) + "," + detail::fixed6(o.ci_half_width) +
                   "," + (rev_row ? ssim : "") + "," + (rev_row ? rev : "") + ",ok");
  }
  return rows;
}

inline std::string aggregate_csv(std::span<const ExperimentReport> reports) {
  std::string out(kAggregateHeader);
  out += '\n';
  for (const auto& r : reports) {
    for (const auto& row : aggregate_rows(r)) out += row + '\n';
  }
  return out;
}

enum class ReportFormat { kJson, kCsv };

/// Writes `<dir>/report.json` or `<dir>/metrics.csv` (plus one outcomes CSV
/// per protocol) and returns the main file's path.
inline std::filesystem::path emit_report(const ExperimentReport& report,
                                         const std::filesystem::path& dir,
                                         ReportFormat format) {
  std::filesystem::create_directories(dir);
  if (format == ReportFormat::kJson) {
    const auto path = dir / "report.json";
    write_text_file(path, to_json(report).dump(2) + "\n");
    return path;
  }
  for (const auto& [p, o] : report.outcomes) {
    std::string csv = "image_id,true_id,predicted_id\n";
    for (const auto& pred : o.predictions) {
      csv += detail::csv_field(pred.image_id) + "," + detail::csv_field(pred.true_id) +
             "," + detail::csv_field(pred.predicted_id) + "\n";
    }
    write_text_file(dir / ("outcomes_" + std::string(to_string(p)) + ".csv"), csv);
  }
  const auto path = dir / "metrics.csv";
  write_text_file(path, aggregate_csv(std::span<const ExperimentReport>(&report, 1)));
  return path;
}

// ---------------------------------------------------------------------------
// Pipeline.

struct RunOptions {
  /// Output directory for reports and artifacts; nothing is written if empty.
  std::filesystem::path out_dir;
  /// Content-addressed cache of anonymized datasets and fitted models;
  /// disabled if empty.
  std::filesystem::path cache_dir;
  int jobs = 1;
};

namespace detail {

inline std::vector<LabeledImage> load_dataset(const DatasetConfig& d) {
  if (const auto* p = std::get_if<SyntheticParams>(&d.source)) {
    return render_synthetic_faces(*p);
  }
  const auto& path = std::get<std::filesystem::path>(d.source);
  DatasetManifest manifest = std::filesystem::is_directory(path)
                                 ? load_manifest(path)
                                 : read_manifest_csv(path);
  return load_images(manifest);
}

/// Shared k-Same database and k-RTIO overlays built from background images.
struct BackgroundResources {
  std::optional<BackgroundDb> db;
  OverlaySet overlays;
  std::uint64_t hash = 0;
};

inline BackgroundResources background_for(const AnonymizerSpec& spec,
                                          const std::vector<LabeledImage>& background,
                                          int components) {
  BackgroundResources res;
  if (!spec.needs_background()) return res;
  if (background.empty()) {
    throw Error(std::string(spec.method()) + " needs background identities");
  }
  res.hash = hash_images(background);
  if (std::holds_alternative<KRtioParams>(spec.params)) {
    for (const auto& li : background) res.overlays.images.push_back(li.image);
  } else {
    const int c = std::min<int>(components, static_cast<int>(background.size()));
    res.db = build_background_db(background, c);
  }
  return res;
}

/// Anonymizes `images` (in parallel), reading and filling the cache.
inline std::vector<LabeledImage> anonymize_set(const std::vector<LabeledImage>& images,
                                               const AnonymizerSpec& spec,
                                               const BackgroundResources& bg,
                                               const RunOptions& opt, bool& cached,
                                               std::string& key_out) {
  const std::string spec_text = to_json(spec).dump();
  const std::uint64_t key =
      fnv1a(spec_text, mix_seed(hash_images(images), bg.hash));
  key_out = hex64(key);
  cached = false;
  const auto dir = opt.cache_dir.empty() ? std::filesystem::path()
                                         : opt.cache_dir / "anonymized" / key_out;
  if (!dir.empty() && std::filesystem::exists(dir / "complete")) {
    std::vector<LabeledImage> out(images.size());
    parallel_for(images.size(), opt.jobs, [&](std::size_t i) {
      out[i] = {read_png(dir / images[i].identity_id / (images[i].image_id + ".png")),
                images[i].identity_id, images[i].image_id};
    });
    cached = true;
    log_info("anonymize: cache hit " + key_out + " (" + std::string(spec.method()) + ")");
    return out;
  }
  std::vector<LabeledImage> out(images.size());
  parallel_for(images.size(), opt.jobs, [&](std::size_t i) {
    const AnonymizeContext ctx{images[i].image_id, bg.db ? &*bg.db : nullptr,
                               &bg.overlays};
    out[i] = {anonymize(images[i].image, spec, ctx), images[i].identity_id,
              images[i].image_id};
  });
  if (!dir.empty()) {
    parallel_for(out.size(), opt.jobs, [&](std::size_t i) {
      write_png(dir / out[i].identity_id / (out[i].image_id + ".png"), out[i].image);
    });
    write_text_file(dir / "spec.json", to_json(spec).dump(2) + "\n");
    write_manifest_csv(manifest_of(out, "anonymized:" + key_out), dir / "manifest.csv");
    write_text_file(dir / "complete", key_out + "\n");
  }
  return out;
}

inline std::vector<ImagePair> make_pairs(const std::vector<LabeledImage>& anonymized,
                                         const std::vector<LabeledImage>& clear) {
  std::vector<ImagePair> pairs;
  pairs.reserve(clear.size());
  for (std::size_t i = 0; i < clear.size(); ++i) {
    pairs.push_back({anonymized[i].image, clear[i].image, clear[i].identity_id});
  }
  return pairs;
}

/// A fitted de-anonymizer: the transform plus a JSON description.
struct FittedDeanonymizer {
  std::function<std::vector<Image>(const std::vector<Image>&)> apply;
  nlohmann::json fit;
  std::shared_ptr<const Autoencoder> model;
};

inline FittedDeanonymizer make_deanonymizer(const DeanonymizerConfig& cfg,
                                            const nlohmann::json& fit,
                                            std::shared_ptr<const Autoencoder> model,
                                            int jobs) {
  FittedDeanonymizer out;
  out.fit = fit;
  out.model = model;
  auto per_image = [jobs](std::function<Image(const Image&)> f) {
    return [f, jobs](const std::vector<Image>& in) {
      std::vector<Image> result(in.size());
      parallel_for(in.size(), jobs, [&](std::size_t i) { result[i] = quantized(f(in[i])); });
      return result;
    };
  };
  switch (cfg.method) {
    case DeanonMethod::kNone:
      throw Error("no deanonymizer configured");
    case DeanonMethod::kLearnPermutation: {
      auto map = std::make_shared<PermutationMap>(permutation_from_json(fit.at("map")));
      out.apply = per_image([map](const Image& img) { return apply_permutation(*map, img); });
      break;
    }
    case DeanonMethod::kLinear:
    case DeanonMethod::kBicubic: {
      const int r = fit.at("resolution").get<int>();
      const ResampleMode mode =
          cfg.method == DeanonMethod::kLinear ? ResampleMode::kLinear : ResampleMode::kBicubic;
      out.apply = per_image([r, mode](const Image& img) { return resample_through(img, r, mode); });
      break;
    }
    case DeanonMethod::kWiener: {
      const DeconvParams p = deconv_from_json(fit.at("params"));
      out.apply = per_image([p](const Image& img) { return wiener_deconv(img, p); });
      break;
    }
    case DeanonMethod::kRichardsonLucy: {
      const DeconvParams p = deconv_from_json(fit.at("params"));
      out.apply = per_image([p](const Image& img) { return richardson_lucy(img, p); });
      break;
    }
    case DeanonMethod::kInterpolateGray:
      out.apply = per_image([](const Image& img) { return interpolate_gray(img); });
      break;
    case DeanonMethod::kAutoencoder:
      out.apply = [model, jobs](const std::vector<Image>& in) {
        auto result = ae_forward(*model, std::span<const Image>(in), jobs);
        for (Image& img : result) quantize_in_place(img);
        return result;
      };
      break;
  }
  return out;
}

/// Fits the de-anonymizer on training pairs, reading and filling the cache.
inline FittedDeanonymizer fit_deanonymizer(const DeanonymizerConfig& cfg,
                                           const std::vector<ImagePair>& pairs,
                                           const std::string& train_key,
                                           const RunOptions& opt, bool& cached,
                                           std::vector<TrainingLogRow>& log_rows) {
  const std::string cfg_text = to_json(cfg).dump();
  const std::string key = hex64(fnv1a(cfg_text, fnv1a(train_key)));
  const auto dir =
      opt.cache_dir.empty() ? std::filesystem::path() : opt.cache_dir / "models" / key;
  cached = false;
  if (!dir.empty() && std::filesystem::exists(dir / "complete")) {
    const auto fit = read_json_file(dir / "fit.json");
    std::shared_ptr<const Autoencoder> model;
    if (cfg.method == DeanonMethod::kAutoencoder) {
      model = std::make_shared<Autoencoder>(load_checkpoint(dir / "model.bin"));
      log_rows = read_training_log_csv(dir / "training_log.csv");
    }
    cached = true;
    log_info("train: cache hit " + key + " (" + cfg.label() + ")");
    return make_deanonymizer(cfg, fit, model, opt.jobs);
  }

  nlohmann::json fit = {{"method", cfg.label()}};
  std::shared_ptr<const Autoencoder> model;
  switch (cfg.method) {
    case DeanonMethod::kNone:
      throw Error("no deanonymizer configured");
    case DeanonMethod::kLearnPermutation: {
      const PermutationMap map = learn_permutation(pairs);
      fit["map"] = to_json(map);
      fit["confidence"] = map.confidence;
      break;
    }
    case DeanonMethod::kLinear:
    case DeanonMethod::kBicubic: {
      const auto search = resample_search(
          pairs, cfg.method == DeanonMethod::kLinear ? ResampleMode::kLinear
                                                     : ResampleMode::kBicubic);
      fit["resolution"] = search.resolution;
      break;
    }
    case DeanonMethod::kWiener:
    case DeanonMethod::kRichardsonLucy: {
      const DeconvParams p =
          cfg.deconv ? *cfg.deconv
                     : grid_search_deconv(pairs, cfg.method == DeanonMethod::kWiener
                                                     ? DeconvMethod::kWiener
                                                     : DeconvMethod::kRichardsonLucy);
      fit["params"] = to_json(p);
      break;
    }
    case DeanonMethod::kInterpolateGray:
      break;
    case DeanonMethod::kAutoencoder: {
      TrainOptions topt;
      topt.jobs = opt.jobs;
      topt.on_epoch = [&](const TrainingLogRow& row) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "train %s: epoch %d train %.5f val %.5f lr %.2e",
                      cfg.label().c_str(), row.epoch, row.train_loss, row.val_loss,
                      row.learning_rate);
        log(LogLevel::kDebug, buf);
      };
      TrainResult result = ae_train(pairs, cfg.hyper, topt);
      log_rows = result.log;
      fit["best_epoch"] = result.best_epoch;
      fit["best_val_loss"] = result.best_val_loss;
      fit["epochs_run"] = result.log.size();
      model = std::make_shared<Autoencoder>(std::move(result.model));
      break;
    }
  }
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    if (model) {
      save_checkpoint(*model, dir / "model.bin");
      write_training_log_csv(log_rows, dir / "training_log.csv");
    }
    write_text_file(dir / "fit.json", fit.dump(2) + "\n");
    write_text_file(dir / "complete", key + "\n");
  }
  return make_deanonymizer(cfg, fit, model, opt.jobs);
}

inline std::vector<Image> images_of(const std::vector<LabeledImage>& v) {
  std::vector<Image> out;
  out.reserve(v.size());
  for (const auto& li : v) out.push_back(li.image);
  return out;
}

inline double mean_ssim(const std::vector<Image>& a, const std::vector<LabeledImage>& b,
                        int jobs) {
  std::vector<double> s(a.size());
  parallel_for(a.size(), jobs, [&](std::size_t i) { s[i] = ssim(a[i], b[i].image); });
  double total = 0;
  for (double v : s) total += v;
  return a.empty() ? 0.0 : total / static_cast<double>(a.size());
}

class StageRunner {
 public:
  explicit StageRunner(ExperimentReport& report) : report_(report) {}

  template <class Fn>
  auto run(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    StageRecord record{name, false, 0};
    auto finish = [&] {
      record.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report_.stages.push_back(record);
      log_info("stage " + name + (record.cached ? ": cached" : ": done"));
    };
    log(LogLevel::kDebug, "stage " + name + ": start");
    try {
      if constexpr (std::is_void_v<decltype(fn(record.cached))>) {
        fn(record.cached);
        finish();
      } else {
        auto result = fn(record.cached);
        finish();
        return result;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      record.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report_.stages.push_back(record);
      throw StageError(name, e.what());
    }
  }

 private:
  ExperimentReport& report_;
};


/// Training identities for the de-anonymizer: the main dataset's training
/// split, or the training split of the override dataset.
inline SplitImages training_source(const ExperimentConfig& config, const SplitImages& parts,
                                   StageRunner& stage) {
  if (!config.train_dataset_override) return parts;
  return stage.run("load_train", [&](bool&) {
    auto imgs = load_dataset(*config.train_dataset_override);
    const auto split = split_dataset(manifest_of(imgs, "train"), config.split,
                                     derive_seed(config.seed, "train_split"));
    return partition_images(imgs, split);
  });
}

inline std::vector<LabeledImage> anonymize_training(const ExperimentConfig& config,
                                                    const std::vector<LabeledImage>& clear,
                                                    const std::vector<LabeledImage>& background,
                                                    const RunOptions& opt, bool& cached,
                                                    std::string& key) {
  const AnonymizerSpec& spec = config.train_anonymizer_override
                                   ? *config.train_anonymizer_override
                                   : config.anonymizer;
  const auto bg = background_for(spec, background, config.recognition_components);
  auto out = anonymize_set(clear, spec, bg, opt, cached, key);
  key += "/" + hex64(hash_images(clear));
  return out;
}

}  // namespace detail

/// Runs the full pipeline: load, split, anonymize, train, deanonymize,
/// recognize, metrics, report. Stage failures propagate as StageError.
inline ExperimentReport run_experiment(const ExperimentConfig& config,
                                       const RunOptions& opt = {}) {
  validate(config);
  ExperimentReport report;
  report.name = config.name;
  report.config = to_json(config);
  report.anonymizer = std::string(config.anonymizer.method());
  report.deanonymizer = config.deanonymizer.label();
  report.seeds = {{"root", config.seed},
                  {"split", derive_seed(config.seed, "split")},
                  {"anonymizer_key", config.anonymizer.key},
                  {"noise_seed", config.anonymizer.noise_seed}};
  if (config.deanonymizer.method == DeanonMethod::kAutoencoder) {
    report.seeds["autoencoder"] = config.deanonymizer.hyper.seed;
  }
  if (config.train_anonymizer_override) {
    report.seeds["train_noise_seed"] = config.train_anonymizer_override->noise_seed;
  }
  detail::StageRunner stage(report);
  const bool reversal = config.wants(Protocol::kReversal);

  const auto images = stage.run("load", [&](bool&) {
    auto imgs = detail::load_dataset(config.dataset);
    if (imgs.empty()) throw Error("dataset is empty");
    return imgs;
  });
  report.dataset_hash = hex64(hash_images(images));

  const auto parts = stage.run("split", [&](bool&) {
    const auto split = split_dataset(manifest_of(images, "experiment"), config.split,
                                     derive_seed(config.seed, "split"));
    if (!opt.out_dir.empty()) {
      write_text_file(opt.out_dir / config.name / "split.json", to_json(split).dump(2) + "\n");
    }
    return partition_images(images, split);
  });

  const auto train_source = detail::training_source(config, parts, stage);
  const auto& train_clear = train_source.training;
  const auto& train_background = train_source.background;

  struct Anonymized {
    std::vector<LabeledImage> test, enrollment, training;
    std::string train_key;
  };
  const auto anon = stage.run("anonymize", [&](bool& cached) {
    Anonymized a;
    const auto bg = detail::background_for(config.anonymizer, parts.background,
                                           config.recognition_components);
    bool c1 = false, c2 = true, c3 = true;
    std::string key;
    a.test = detail::anonymize_set(parts.test, config.anonymizer, bg, opt, c1, key);
    if (config.wants(Protocol::kParrot)) {
      a.enrollment =
          detail::anonymize_set(parts.enrollment, config.anonymizer, bg, opt, c2, key);
    }
    if (reversal) {
      a.training = detail::anonymize_training(config, train_clear, train_background, opt,
                                              c3, a.train_key);
    }
    cached = c1 && c2 && c3;
    return a;
  });
  report.probe_hash = hex64(hash_images(anon.test));

  std::vector<Image> deanonymized;
  if (reversal) {
    std::vector<TrainingLogRow> log_rows;
    const auto fitted = stage.run("train", [&](bool& cached) {
      return detail::fit_deanonymizer(config.deanonymizer,
                                      detail::make_pairs(anon.training, train_clear),
                                      anon.train_key, opt, cached, log_rows);
    });
    report.deanonymizer_fit = fitted.fit;
    if (report.deanonymizer_fit.contains("map")) report.deanonymizer_fit.erase("map");
    if (!opt.out_dir.empty()) {
      const auto dir = opt.out_dir / config.name;
      if (fitted.fit.contains("map")) {
        write_text_file(dir / "permutation.json", fitted.fit["map"].dump() + "\n");
      }
      if (fitted.fit.contains("params")) {
        write_text_file(dir / "deconv.json", fitted.fit["params"].dump(2) + "\n");
      }
      if (!log_rows.empty()) write_training_log_csv(log_rows, dir / "training_log.csv");
    }
    deanonymized = stage.run("deanonymize", [&](bool&) {
      return fitted.apply(detail::images_of(anon.test));
    });
  }

  stage.run("recognize", [&](bool&) {
    const auto train_images = detail::images_of(parts.training);
    const int components =
        std::min<int>(config.recognition_components, static_cast<int>(train_images.size()));
    const PcaModel pca = fit_pca(train_images, components);
    std::map<std::string, std::size_t> enroll_index;
    for (std::size_t i = 0; i < parts.enrollment.size(); ++i) {
      enroll_index[parts.enrollment[i].identity_id + "/" + parts.enrollment[i].image_id] = i;
    }
    const ImageTransform parrot_anonymizer = [&](const LabeledImage& li) {
      return anon.enrollment.at(enroll_index.at(li.identity_id + "/" + li.image_id)).image;
    };
    const bool need_clear = reversal || config.wants(Protocol::kClearBaseline);
    const bool need_naive = reversal || config.wants(Protocol::kNaive);
    if (need_clear) {
      report.outcomes[Protocol::kClearBaseline] = run_protocol(
          Protocol::kClearBaseline, parts.enrollment, parts.test, pca, nullptr);
    }
    if (need_naive) {
      report.outcomes[Protocol::kNaive] =
          run_protocol(Protocol::kNaive, parts.enrollment, anon.test, pca, nullptr);
    }
    if (config.wants(Protocol::kParrot)) {
      report.outcomes[Protocol::kParrot] = run_protocol(
          Protocol::kParrot, parts.enrollment, anon.test, pca, parrot_anonymizer);
    }
    if (reversal) {
      std::map<std::string, std::size_t> position;
      for (std::size_t i = 0; i < anon.test.size(); ++i) {
        position[anon.test[i].identity_id + "/" + anon.test[i].image_id] = i;
      }
      const ImageTransform deanon = [&](const LabeledImage& li) {
        return deanonymized.at(position.at(li.identity_id + "/" + li.image_id));
      };
      report.outcomes[Protocol::kReversal] = run_protocol(
          Protocol::kReversal, parts.enrollment, anon.test, pca, nullptr, deanon);
    }
  });

  stage.run("metrics", [&](bool&) {
    report.ssim_anonymized = detail::mean_ssim(detail::images_of(anon.test), parts.test, opt.jobs);
    if (!reversal) return;
    report.ssim_deanonymized = detail::mean_ssim(deanonymized, parts.test, opt.jobs);
    const double clear = report.outcomes.at(Protocol::kClearBaseline).mean_accuracy;
    const double naive = report.outcomes.at(Protocol::kNaive).mean_accuracy;
    const double rev = report.outcomes.at(Protocol::kReversal).mean_accuracy;
    if (clear > naive) {
      report.reversibility = reversibility(clear, naive, rev);
    } else {
      report.reversibility_note =
          "undefined: clear accuracy does not exceed naive accuracy";
    }
  });

  stage.run("report", [&](bool&) {
    if (opt.out_dir.empty()) return;
    const auto dir = opt.out_dir / config.name;
    emit_report(report, dir, ReportFormat::kJson);
    emit_report(report, dir, ReportFormat::kCsv);
  });
  return report;
}

/// Like run_experiment, but a stage failure yields a failed report (also
/// written to the output directory) instead of an exception.
inline ExperimentReport run_experiment_recorded(const ExperimentConfig& config,
                                                const RunOptions& opt = {}) {
  try {
    return run_experiment(config, opt);
  } catch (const StageError& e) {
    ExperimentReport report;
    report.name = config.name;
    report.config = to_json(config);
    report.anonymizer = std::string(config.anonymizer.method());
    report.deanonymizer = config.deanonymizer.label();
    report.status = "failed";
    report.failed_stage = e.stage();
    report.error = e.cause();
    report.seeds = {{"root", config.seed}};
    log(LogLevel::kError, config.name + ": " + e.what());
    if (!opt.out_dir.empty()) {
      emit_report(report, opt.out_dir / config.name, ReportFormat::kJson);
      emit_report(report, opt.out_dir / config.name, ReportFormat::kCsv);
    }
    return report;
  }
}

struct TrainedDeanonymizer {
  detail::FittedDeanonymizer fitted;
  std::vector<TrainingLogRow> log;
  std::vector<StageRecord> stages;
};

/// Fits the configured de-anonymizer on the anonymized training split without
/// evaluating it. With an output directory, writes fit.json and, as
/// applicable, model.bin, training_log.csv, permutation.json, deconv.json
/// under `<out>/<name>/`.
inline TrainedDeanonymizer train_deanonymizer(const ExperimentConfig& config,
                                              const RunOptions& opt = {}) {
  validate(config);
  if (config.deanonymizer.method == DeanonMethod::kNone) {
    throw ConfigError("no deanonymizer configured");
  }
  ExperimentReport scratch;
  detail::StageRunner stage(scratch);
  TrainedDeanonymizer out;
  const auto images = stage.run("load", [&](bool&) {
    auto imgs = detail::load_dataset(config.dataset);
    if (imgs.empty()) throw Error("dataset is empty");
    return imgs;
  });
  const auto parts = stage.run("split", [&](bool&) {
    return partition_images(images, split_dataset(manifest_of(images, "experiment"),
                                                  config.split,
                                                  derive_seed(config.seed, "split")));
  });
  const auto source = detail::training_source(config, parts, stage);
  std::string key;
  const auto anonymized = stage.run("anonymize", [&](bool& cached) {
    return detail::anonymize_training(config, source.training, source.background, opt,
                                      cached, key);
  });
  out.fitted = stage.run("train", [&](bool& cached) {
    return detail::fit_deanonymizer(config.deanonymizer,
                                    detail::make_pairs(anonymized, source.training), key,
                                    opt, cached, out.log);
  });
  out.stages = scratch.stages;
  if (!opt.out_dir.empty()) {
    const auto dir = opt.out_dir / config.name;
    const auto& fit = out.fitted.fit;
    write_text_file(dir / "fit.json", fit.dump(2) + "\n");
    if (fit.contains("map")) write_text_file(dir / "permutation.json", fit["map"].dump() + "\n");
    if (fit.contains("params")) write_text_file(dir / "deconv.json", fit["params"].dump(2) + "\n");
    if (out.fitted.model) save_checkpoint(*out.fitted.model, dir / "model.bin");
    if (!out.log.empty()) write_training_log_csv(out.log, dir / "training_log.csv");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Suites.

struct Suite {
  std::string name = "suite";
  std::vector<ExperimentConfig> experiments;
};

/// Suite file: {"name", "seed", "defaults": {...}, "experiments": [{...}]}.
/// Each experiment is merged over the defaults; experiments without their
/// own seed take the suite seed.
inline Suite suite_from_json(const nlohmann::json& j,
                             std::optional<std::uint64_t> seed_override = {}) {
  if (!j.is_object()) throw ConfigError("suite file must be a JSON object");
  Suite suite;
  suite.name = j.value("name", suite.name);
  const auto defaults = j.value("defaults", nlohmann::json::object());
  const auto list = j.value("experiments", nlohmann::json::array());
  if (!list.is_array() || list.empty()) throw ConfigError("suite has no experiments");
  std::set<std::string> names;
  for (const auto& e : list) {
    nlohmann::json merged = defaults;
    merged.merge_patch(e);
    if (!merged.contains("seed") && j.contains("seed")) merged["seed"] = j["seed"];
    auto config = experiment_from_json(merged, seed_override);
    if (!names.insert(config.name).second) {
      throw ConfigError("duplicate experiment name '" + config.name + "'");
    }
    suite.experiments.push_back(std::move(config));
  }
  return suite;
}

struct SuiteResult {
  std::vector<ExperimentReport> reports;
  std::string aggregate;
};

/// Runs every experiment; failures are recorded and the suite continues.
/// Writes `<out>/<experiment>/...` and `<out>/aggregate.csv`.
inline SuiteResult run_suite(const Suite& suite, const RunOptions& opt = {}) {
  if (suite.experiments.empty()) throw ConfigError("suite has no experiments");
  SuiteResult result;
  for (const auto& config : suite.experiments) {
    log_info("experiment " + config.name);
    result.reports.push_back(run_experiment_recorded(config, opt));
  }
  result.aggregate = aggregate_csv(result.reports);
  if (!opt.out_dir.empty()) write_text_file(opt.out_dir / "aggregate.csv", result.aggregate);
  return result;
}

inline SuiteResult run_suite(const std::filesystem::path& suite_path,
                             const RunOptions& opt = {},
                             std::optional<std::uint64_t> seed_override = {}) {
  return run_suite(suite_from_json(read_json_file(suite_path), seed_override), opt);
}

/// Anonymizer parameters scaled to the 32x32 synthetic fixture.
inline nlohmann::json desk_scale_anonymizer(std::string_view method) {
  static const std::map<std::string, nlohmann::json, std::less<>> params = {
      {"EyeMask", nlohmann::json::object()},
      {"BlockPermute", {{"block_size", 8}}},
      {"PixelRelocate", {{"steps", 50}}},
      {"GaussianNoise", {{"sigma", 200.0}}},
      {"GaussianBlur", {{"kernel", 9}}},
      {"Pixelate", {{"size", 8}}},
      {"DPPix", {{"epsilon", 5.0}, {"b", 6}, {"m", 4}}},
      {"DPSnow", {{"delta", 0.5}}},
      {"DPSamp", {{"epsilon", 25.0}, {"k", 24}, {"m", 12.0}}},
      {"KSamePixel", {{"k", 10}}},
      {"KSameEigen", {{"k", 10}}},
      {"KRTIO", {{"K", 3}, {"alpha", 0.4}, {"block_size", 4}}},
  };
  const auto it = params.find(method);
  if (it == params.end()) throw ConfigError("no desk-scale parameters for " + std::string(method));
  return {{"method", method}, {"params", it->second}};
}

/// Autoencoder settings that train in minutes on the synthetic fixture.
inline nlohmann::json desk_scale_hyper(int max_epochs = 60) {
  return {{"learning_rate", 1e-3}, {"batch_size", 16}, {"max_epochs", max_epochs},
          {"early_stop_patience", 10}};
}

/// Every in-scope de-anonymizer/anonymizer pairing of the combination
/// matrix, on the synthetic fixture.
inline nlohmann::json default_suite_json(std::uint64_t seed = 1, int ae_epochs = 60) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> matrix = {
      {"EyeMask", {}},
      {"BlockPermute", {"learn_permutation"}},
      {"PixelRelocate", {"learn_permutation"}},
      {"GaussianNoise", {"linear", "bicubic", "wiener", "richardson_lucy"}},
      {"GaussianBlur", {"linear", "bicubic", "wiener", "richardson_lucy"}},
      {"Pixelate", {"linear", "bicubic", "wiener"}},
      {"DPPix", {"linear", "bicubic", "wiener", "richardson_lucy"}},
      {"DPSnow", {"linear", "bicubic", "wiener", "richardson_lucy", "interpolate_gray"}},
      {"DPSamp", {}},
      {"KSamePixel", {}},
      {"KSameEigen", {}},
      {"KRTIO", {}},
  };
  nlohmann::json experiments = nlohmann::json::array();
  for (const auto& [anonymizer, specialized] : matrix) {
    std::vector<std::string> methods = specialized;
    methods.push_back("autoencoder");
    methods.push_back("conv_autoencoder");
    for (const auto& m : methods) {
      nlohmann::json deanon = {{"method", m}};
      if (m == "autoencoder" || m == "conv_autoencoder") deanon["hyper"] = desk_scale_hyper(ae_epochs);
      experiments.push_back({{"name", anonymizer + "-" + m},
                             {"anonymizer", desk_scale_anonymizer(anonymizer)},
                             {"deanonymizer", deanon}});
    }
  }
  return {{"name", "default"},
          {"seed", seed},
          {"defaults",
           {{"dataset", {{"synthetic", {{"identities", 50}, {"images_per_identity", 10},
                                        {"resolution", 32}, {"seed", 7}}}}},
            {"protocols", {"clear_baseline", "naive", "parrot", "reversal"}}}},
          {"experiments", experiments}};
}

inline Suite default_suite(std::uint64_t seed = 1, int ae_epochs = 60) {
  return suite_from_json(default_suite_json(seed, ae_epochs));
}

}  // namespace revface

#endif  // REVFACE_HARNESS_HPP_
