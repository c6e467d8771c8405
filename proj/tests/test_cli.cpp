#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("revface_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(REVFACE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

json tiny_experiment() {
  return {{"name", "tiny"},
          {"dataset", {{"synthetic", {{"identities", 12}, {"images_per_identity", 4},
                                      {"resolution", 16}}}}},
          {"split", {{"background_identities", 3}, {"test_identities", 3}}},
          {"anonymizer", {{"method", "BlockPermute"}, {"params", {{"block_size", 4}}}}},
          {"deanonymizer", "learn_permutation"},
          {"protocols", {"clear_baseline", "naive", "reversal"}},
          {"recognition_components", 8}};
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("evaluate --jobs 0 --config x.json"), 1);
}

TEST(Cli, GenerateWritesManifest) {
  const auto dir = temp_dir("generate");
  const auto cfg = write_config(dir, tiny_experiment());
  ASSERT_EQ(run("generate --config " + cfg.string() + " --out " + (dir / "faces").string()), 0);
  std::ifstream in(dir / "faces" / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "identity_id,image_id,path");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 48);
  EXPECT_EQ(run("generate"), 1);
}

TEST(Cli, EvaluateWritesReports) {
  const auto dir = temp_dir("evaluate");
  const auto cfg = write_config(dir, tiny_experiment());
  ASSERT_EQ(run("evaluate --config " + cfg.string() + " --out " + (dir / "out").string() +
                " --seed 5 --jobs 2"),
            0);
  const auto report = json::parse(slurp(dir / "out" / "tiny" / "report.json"));
  EXPECT_EQ(report.at("status"), "ok");
  EXPECT_EQ(report.at("seeds").at("root"), 5);
  EXPECT_TRUE(fs::exists(dir / "out" / "tiny" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "tiny" / "outcomes_reversal.csv"));

  ASSERT_EQ(run("report --config " + (dir / "out").string() + " --out " +
                (dir / "rebuilt").string()),
            0);
  EXPECT_EQ(slurp(dir / "rebuilt" / "tiny" / "metrics.csv"),
            slurp(dir / "out" / "tiny" / "metrics.csv"));
}

TEST(Cli, ConfigErrorsExitWithOne) {
  const auto dir = temp_dir("config");
  EXPECT_EQ(run("evaluate --config " + (dir / "missing.json").string()), 1);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run("evaluate --config " + (dir / "broken.json").string()), 1);
  auto j = tiny_experiment();
  j["anonymizer"]["params"]["block_size"] = -3;
  EXPECT_EQ(run("evaluate --config " + write_config(dir, j).string()), 1);
}

TEST(Cli, StageFailuresExitWithTwo) {
  const auto dir = temp_dir("stage");
  auto j = tiny_experiment();
  j["dataset"] = {{"path", (dir / "nowhere").string()}};
  const auto cfg = write_config(dir, j);
  EXPECT_EQ(run("evaluate --config " + cfg.string() + " --out " + (dir / "out").string()), 2);
  const auto report = json::parse(slurp(dir / "out" / "tiny" / "report.json"));
  EXPECT_EQ(report.at("failed_stage"), "load");
  EXPECT_EQ(run("train-deanon --config " + cfg.string() + " --out " + (dir / "t").string()), 2);
}

TEST(Cli, AnonymizeAndTrain) {
  const auto dir = temp_dir("anon");
  const auto cfg = write_config(dir, tiny_experiment());
  ASSERT_EQ(run("anonymize --config " + cfg.string() + " --out " + (dir / "anon").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "anon" / "manifest.csv"));
  const auto spec = json::parse(slurp(dir / "anon" / "spec.json"));
  EXPECT_EQ(spec.at("method"), "BlockPermute");
  ASSERT_EQ(run("train-deanon --config " + cfg.string() + " --out " + (dir / "t").string()), 0);
  const auto perm = json::parse(slurp(dir / "t" / "tiny" / "permutation.json"));
  EXPECT_EQ(perm.at("source").size(), 256u);
}

TEST(Cli, SuiteAggregatesAndIsRepeatable) {
  const auto dir = temp_dir("suite");
  auto e = tiny_experiment();
  e.erase("name");
  const json suite = {{"name", "s"},
                      {"seed", 2},
                      {"defaults", e},
                      {"experiments", {{{"name", "a"}}, {{"name", "b"}, {"seed", 3}}}}};
  const auto cfg = write_config(dir, suite);
  ASSERT_EQ(run("suite --config " + cfg.string() + " --out " + (dir / "one").string()), 0);
  ASSERT_EQ(run("suite --config " + cfg.string() + " --out " + (dir / "two").string() +
                " --cache " + (dir / "cache").string()),
            0);
  EXPECT_EQ(slurp(dir / "one" / "aggregate.csv"), slurp(dir / "two" / "aggregate.csv"));
}

TEST(Cli, AutoencoderRunsMatchAcrossProcesses) {
  const auto dir = temp_dir("ae_repeat");
  auto j = tiny_experiment();
  j["anonymizer"] = {{"method", "GaussianBlur"}, {"params", {{"kernel", 5}}}};
  j["deanonymizer"] = {{"method", "autoencoder"},
                       {"hyper", {{"features", 4}, {"batch_size", 8}, {"max_epochs", 2},
                                  {"learning_rate", 1e-3}}}};
  const auto cfg = write_config(dir, j);
  for (const char* out : {"one", "two"}) {
    ASSERT_EQ(run("evaluate --config " + cfg.string() + " --out " + (dir / out).string()), 0);
  }
  for (const char* f : {"metrics.csv", "training_log.csv"}) {
    EXPECT_EQ(slurp(dir / "one" / "tiny" / f), slurp(dir / "two" / "tiny" / f)) << f;
  }
}
