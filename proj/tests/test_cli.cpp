#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("spillover_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  // Exit status of the tool; stderr goes to err.txt under the test root.
  int run(const std::string& args) {
    const std::string cmd = std::string(SPILLOVER_CLI) + " " + args + " > " + (root_ / "out.txt").string() +
                            " 2> " + (root_ / "err.txt").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  }
  std::string config() const { return std::string(SPILLOVER_CONFIG_DIR) + "/demo12.json"; }
  fs::path path(const std::string& name) const { return root_ / name; }

  fs::path root_;
};

TEST_F(Cli, SynthIsReproducible) {
  ASSERT_EQ(run("synth --config " + config() + " --seed 11 --out " + path("a").string()), 0);
  ASSERT_EQ(run("synth --config " + config() + " --seed 11 --out " + path("b").string()), 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(path("a"))) {
    const auto name = e.path().filename().string();
    if (name == "manifest.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(path("b") / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 7u);
  const auto manifest = nlohmann::json::parse(slurp(path("a") / "manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "synth");
  EXPECT_TRUE(manifest.contains("config_sha256"));
}

TEST_F(Cli, FitOnEmptySampleIsValidationError) {
  ASSERT_EQ(run("synth --config " + config() + " --out " + path("data").string()), 0);
  EXPECT_EQ(run("fit --config " + config() + " --bandwidth 1e-9 --data " + path("data").string() + " --out " +
                path("fit").string()),
            1);
  const auto err = nlohmann::json::parse(slurp(path("err.txt")));
  EXPECT_EQ(err["error"]["type"], "validation");
  EXPECT_EQ(err["error"]["subcommand"], "fit");
}

TEST_F(Cli, MissingRequiredOptionIsUsageError) {
  EXPECT_EQ(run("fit --config " + config()), 1);
  EXPECT_EQ(run("nonsense"), 1);
}

TEST_F(Cli, EffectsPipeline) {
  const auto data = path("data").string();
  ASSERT_EQ(run("synth --config " + config() + " --out " + data), 0);
  ASSERT_EQ(run("bootstrap --config " + config() + " --trials 3 --epochs 8 --data " + data + " --out " +
                path("boot").string()),
            0);
  ASSERT_EQ(run("effects --config " + config() + " --bootstrap " + path("boot").string() + " --out " +
                path("effects").string()),
            0);
  std::ifstream csv(path("effects") / "effects.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 12);  // 4 groups x 3 contrasts
  const auto boot = nlohmann::json::parse(slurp(path("boot") / "bootstrap.json"));
  EXPECT_FALSE(boot.empty());
}

}  // namespace
