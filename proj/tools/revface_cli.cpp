// revface: command-line front end for the de-anonymization evaluation
// pipeline. See README.md for the config file formats.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "revface/revface.hpp"

namespace fs = std::filesystem;
using namespace revface;

namespace {

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kStageFailure = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string cache;
  int jobs = 1;
  bool verbose = false;
  bool quiet = false;
  int epochs = 60;
};

RunOptions run_options(const Options& o) {
  RunOptions r;
  r.out_dir = o.out;
  r.cache_dir = o.cache;
  r.jobs = o.jobs;
  return r;
}

nlohmann::json config_json(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  return read_json_file(o.config);
}

// Anything that goes wrong while interpreting a config is a config error.
template <class Fn>
auto parse_config(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig experiment(const Options& o) {
  return parse_config([&] {
    auto config = experiment_from_json(config_json(o), o.seed);
    validate(config);
    return config;
  });
}

void require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
}

void print_summary(const ExperimentReport& r) {
  std::printf("%s: %s", r.name.c_str(), r.status.c_str());
  if (r.status != "ok") {
    std::printf(" (stage %s: %s)\n", r.failed_stage.c_str(), r.error.c_str());
    return;
  }
  std::printf("\n");
  for (const auto& [protocol, outcome] : r.outcomes) {
    std::printf("  %-15s acc %.3f +- %.3f\n", std::string(to_string(protocol)).c_str(),
                outcome.mean_accuracy, outcome.ci_half_width);
  }
  if (r.ssim_deanonymized) std::printf("  ssim(deanonymized, clear) %.4f\n", *r.ssim_deanonymized);
  if (r.reversibility) std::printf("  reversibility %.4f (%s)\n", r.reversibility->value,
                                    std::string(to_string(r.reversibility->category)).c_str());
  if (!r.reversibility_note.empty()) std::printf("  reversibility %s\n", r.reversibility_note.c_str());
}

// generate: writes a synthetic collection as <out>/<identity>/<image>.png plus
// manifest.csv. The config is a dataset object or an experiment config with a
// "dataset" member; without a config the default fixture is written.
int cmd_generate(const Options& o) {
  require_out(o);
  SyntheticParams p;
  if (!o.config.empty()) {
    p = parse_config([&] {
      auto j = config_json(o);
      if (j.contains("dataset")) j = j["dataset"];
      const auto d = dataset_from_json(j);
      const auto* sp = std::get_if<SyntheticParams>(&d.source);
      if (!sp) throw ConfigError("generate needs a synthetic dataset config");
      return *sp;
    });
  }
  if (o.seed) p.seed = *o.seed;
  const auto manifest = generate_synthetic_faces(p, o.out);
  write_manifest_csv(manifest, fs::path(o.out) / "manifest.csv");
  std::printf("wrote %zu images to %s\n", manifest.entries.size(), o.out.c_str());
  return kOk;
}

// anonymize: applies the experiment's anonymizer to every non-background
// image and writes the result as a PNG tree with manifest.csv and spec.json.
int cmd_anonymize(const Options& o) {
  require_out(o);
  const auto config = experiment(o);
  RunOptions opt = run_options(o);
  std::vector<LabeledImage> anonymized;
  try {
    const auto images = detail::load_dataset(config.dataset);
    const auto split = split_dataset(manifest_of(images, "experiment"), config.split,
                                     derive_seed(config.seed, "split"));
    const auto parts = partition_images(images, split);
    std::vector<LabeledImage> targets = parts.training;
    targets.insert(targets.end(), parts.enrollment.begin(), parts.enrollment.end());
    targets.insert(targets.end(), parts.test.begin(), parts.test.end());
    const auto bg = detail::background_for(config.anonymizer, parts.background,
                                           config.recognition_components);
    bool cached = false;
    std::string key;
    anonymized = detail::anonymize_set(targets, config.anonymizer, bg, opt, cached, key);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("anonymize", e.what());
  }
  const fs::path out(o.out);
  DatasetManifest manifest;
  manifest.source_tag = "anonymized";
  for (const auto& li : anonymized) {
    const auto path = out / li.identity_id / (li.image_id + ".png");
    write_png(path, li.image);
    manifest.entries.push_back({li.identity_id, li.image_id, path});
  }
  write_manifest_csv(manifest, out / "manifest.csv");
  write_text_file(out / "spec.json", to_json(config.anonymizer).dump(2) + "\n");
  std::printf("anonymized %zu images with %s\n", anonymized.size(),
              std::string(config.anonymizer.method()).c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  require_out(o);
  const auto config = experiment(o);
  const auto trained = train_deanonymizer(config, run_options(o));
  std::printf("%s: %s\n", config.name.c_str(), trained.fitted.fit.dump().substr(0, 200).c_str());
  return kOk;
}

int cmd_evaluate(const Options& o) {
  const auto config = experiment(o);
  const auto report = run_experiment_recorded(config, run_options(o));
  print_summary(report);
  return report.status == "ok" ? kOk : kStageFailure;
}

// suite: runs a suite file, or the built-in default suite without --config.
int cmd_suite(const Options& o) {
  const Suite suite = parse_config([&] {
    return o.config.empty() ? suite_from_json(default_suite_json(o.seed.value_or(1), o.epochs))
                            : suite_from_json(config_json(o), o.seed);
  });
  const auto result = run_suite(suite, run_options(o));
  int failed = 0;
  for (const auto& r : result.reports) {
    print_summary(r);
    if (r.status != "ok") ++failed;
  }
  if (o.out.empty()) std::cout << result.aggregate;
  return failed == 0 ? kOk : kStageFailure;
}

// report: re-emits CSV reports from report.json files. --config names a
// report.json or a directory searched recursively for them; an aggregate over
// all found reports goes to <out>/aggregate.csv (or stdout).
int cmd_report(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  const fs::path src(o.config);
  std::vector<fs::path> files;
  if (fs::is_directory(src)) {
    for (const auto& e : fs::recursive_directory_iterator(src)) {
      if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(src);
  }
  if (files.empty()) throw ConfigError("no report.json under " + src.string());
  std::vector<ExperimentReport> reports;
  for (const auto& f : files) {
    reports.push_back(parse_config([&] { return report_from_json(read_json_file(f)); }));
  }
  const std::string aggregate = aggregate_csv(reports);
  if (o.out.empty()) {
    std::cout << aggregate;
    return kOk;
  }
  for (const auto& r : reports) emit_report(r, fs::path(o.out) / r.name, ReportFormat::kCsv);
  write_text_file(fs::path(o.out) / "aggregate.csv", aggregate);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revface: reversibility evaluation of face anonymization"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Root seed override");
    sub->add_option("--cache", o.cache, "Cache directory for anonymized data and models");
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("-v,--verbose", o.verbose, "Debug logging");
    sub->add_flag("-q,--quiet", o.quiet, "Only log errors");
  };
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Verb verbs[] = {
      {"generate", "Write the synthetic face fixture", cmd_generate},
      {"anonymize", "Anonymize a dataset", cmd_anonymize},
      {"train-deanon", "Fit a de-anonymizer on anonymized training data", cmd_train},
      {"evaluate", "Run one experiment", cmd_evaluate},
      {"suite", "Run a suite of experiments", cmd_suite},
      {"report", "Rebuild CSV reports from report.json files", cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Verb*>> subs;
  for (const auto& v : verbs) {
    auto* sub = app.add_subcommand(v.name, v.help);
    common(sub);
    if (std::string(v.name) == "suite") {
      sub->add_option("--epochs", o.epochs, "Autoencoder epoch budget for the default suite");
    }
    subs.emplace_back(sub, &v);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }
  set_log_level(o.verbose ? LogLevel::kDebug : o.quiet ? LogLevel::kError : LogLevel::kInfo);

  try {
    for (const auto& [sub, verb] : subs) {
      if (sub->parsed()) return verb->run(o);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigFailure;
  } catch (const StageError& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kStageFailure;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStageFailure;
  }
  return kConfigFailure;
}
