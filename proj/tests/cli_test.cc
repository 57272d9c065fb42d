// Copyright 2026 The oodshift Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oodshift/cli.hpp"

namespace oodshift {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "oodshift");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("oodshift_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
  }

  fs::path dir_;
};

TEST_F(CliTest, GenerateIsReproducible) {
  const auto a = run({"generate", "--preset", "irm-cmnist", "--seed", "7", "-o", path("a")});
  const auto b = run({"generate", "--preset", "irm-cmnist", "--seed", "7", "-o", path("b")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(path("a/data.csv")), slurp(path("b/data.csv")));
  EXPECT_EQ(slurp(path("a/spec.json")), slurp(path("b/spec.json")));
  const auto spec = nlohmann::json::parse(slurp(path("a/spec.json")));
  EXPECT_EQ(spec.at("seed"), 7);
  EXPECT_EQ(spec.at("spec").at("rho_te"), 0.9);
  EXPECT_TRUE(fs::exists(path("a/run.log")));
  const auto c = run({"generate", "--preset", "irm-cmnist", "--seed", "8", "-o", path("c")});
  EXPECT_NE(slurp(path("a/data.csv")), slurp(path("c/data.csv")));
}

TEST_F(CliTest, InvalidRhoIsAUsageError) {
  const auto r = run({"generate", "--preset", "cmnist-rho", "1.5", "0.1", "-o", path("x")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("rho_tr"), std::string::npos);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({"estimate", "--data", path("missing.csv"), "-o", path("x")}).code, cli::kExitUsage);
  EXPECT_EQ(run({"generate", "--preset", "nope"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"generate", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  write("bad.json", "{ not json");
  EXPECT_EQ(run({"generate", "--config", path("bad.json"), "-o", path("x")}).code, cli::kExitUsage);
  write("bad_est.json", R"({"estimator": {"M": 0}})");
  EXPECT_EQ(run({"generate", "--config", path("bad_est.json"), "-o", path("x")}).code, cli::kExitUsage);
  write("bad.csv", "env,label,x0\n0,1,abc\n");
  const auto r = run({"estimate", "--data", path("bad.csv"), "--no-extractor", "-o", path("x")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
  EXPECT_EQ(run({"sweep", "--preset", "latent-a", "-o", path("x")}).code, cli::kExitUsage);
  EXPECT_EQ(run({"estimate", "--bandwidth-rule", "nope", "-o", path("x")}).code, cli::kExitUsage);
}

TEST_F(CliTest, HelpAndVersion) {
  const auto h = run({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("estimate"), std::string::npos);
  EXPECT_EQ(run({"--version"}).code, 0);
}

TEST_F(CliTest, EstimateFlagsOverrideConfigAndOutputIsDeterministic) {
  ASSERT_EQ(run({"generate", "--preset", "latent-a", "--seed", "1", "-o", path("g")}).code, 0);
  write("cfg.json", R"({"seed": 5, "estimator": {"M": 1500, "n_runs": 4}})");
  std::vector<std::string> args{"estimate", "--config", path("cfg.json"), "--data", path("g/data.csv"),
                                "--no-extractor", "--seed", "9", "--runs", "2"};
  auto a_args = args, b_args = args;
  a_args.insert(a_args.end(), {"-o", path("a")});
  b_args.insert(b_args.end(), {"-o", path("b")});
  const auto a = run(a_args);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(run(b_args).code, 0);
  EXPECT_EQ(slurp(path("a/result.json")), slurp(path("b/result.json")));
  const auto cfg = nlohmann::json::parse(slurp(path("a/config.json")));
  EXPECT_EQ(cfg.at("seed"), 9);
  EXPECT_EQ(cfg.at("estimator").at("M"), 1500);
  EXPECT_EQ(cfg.at("estimator").at("n_runs"), 2);
  const auto result = nlohmann::json::parse(slurp(path("a/result.json")));
  EXPECT_EQ(result.at("estimate").at("n_runs"), 2);
  EXPECT_NEAR(result.at("estimate").at("d_div").at("mean").get<double>(), 0.5, 0.1);
  EXPECT_NEAR(result.at("estimate").at("d_cor").at("mean").get<double>(), 0.4, 0.1);
  EXPECT_EQ(slurp(path("a/result.json")).find("wall"), std::string::npos);
  EXPECT_NE(slurp(path("a/run.log")).find("wall="), std::string::npos);
}

TEST_F(CliTest, SweepWritesOneRowPerCell) {
  write("cfg.json", R"({
    "data": {"n_per_env": 60, "image_side": 3, "label_noise": 0.0},
    "mlp": {"hidden_dims": [8], "feature_dim": 2, "head_hidden": 4, "iters": 20},
    "estimator": {"M": 300}})");
  const auto r = run({"sweep", "--config", path("cfg.json"), "--axis", "rho", "--values", "0", "0.5", "1",
                      "--threads", "2", "-o", path("s")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(path("s/sweep.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  EXPECT_EQ(csv.rfind("rho_tr,rho_te,d_div,d_div_se,d_cor,d_cor_se\n", 0), 0u);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("s/config.json"))).at("estimator").at("n_runs"), 1);
  ASSERT_EQ(run({"sweep", "--config", path("cfg.json"), "--values", "0", "--runs", "2", "-o", path("s2")}).code, 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("s2/config.json"))).at("estimator").at("n_runs"), 2);
  EXPECT_EQ(run({"sweep", "--config", path("cfg.json"), "--axis", "sigma", "-o", path("s")}).code,
            cli::kExitUsage);
}

TEST_F(CliTest, NumericFailureExitsWithOne) {
  std::string csv = "env,label,x0,x1\n";
  for (int e = 0; e < 2; ++e) {
    for (int i = 0; i < 20; ++i) {
      csv += std::to_string(e) + "," + std::to_string(i % 2) + "," + (i % 3 ? "1.7e308" : "-1.7e308") + ",1e300\n";
    }
  }
  write("huge.csv", csv);
  const auto a = run({"estimate", "--data", path("huge.csv"), "--iters", "20", "--samples", "200", "-o", path("h")});
  EXPECT_EQ(a.code, cli::kExitNumeric) << a.err;
  const auto b = run({"estimate", "--data", path("huge.csv"), "--no-extractor", "--samples", "200", "-o", path("h")});
  EXPECT_EQ(b.code, cli::kExitNumeric) << b.err;
  write("nan.csv", "env,label,x0\n0,0,nan\n1,1,0\n");
  EXPECT_EQ(run({"estimate", "--data", path("nan.csv"), "-o", path("h")}).code, cli::kExitUsage);
}

TEST_F(CliTest, ScorePrintsRankings) {
  const auto r = run({"score", "--table", OODSHIFT_DATA_DIR "/table1.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("MLDG"), std::string::npos);
  EXPECT_EQ(r.out.find("note:"), std::string::npos);
  const auto j = run({"score", "--table", OODSHIFT_DATA_DIR "/table2.csv", "--json", "-o", path("sc")});
  ASSERT_EQ(j.code, 0);
  const auto parsed = nlohmann::json::parse(j.out);
  EXPECT_EQ(parsed.at("reference"), "ERM");
  EXPECT_TRUE(fs::exists(path("sc/score.json")));
  EXPECT_EQ(run({"score", "--table", path("none.csv")}).code, cli::kExitUsage);
}

}  // namespace
}  // namespace oodshift
