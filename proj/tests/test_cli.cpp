#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "npc/datagen.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("npc_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = "NPC_LOG=warn " + std::string(NPC_CLI_PATH) + " " + args + " > " + (dir_ / "stdout").string() +
                            " 2> " + (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  std::string slurp(const std::string& name) const {
    std::ifstream f(dir_ / name);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  nlohmann::json json(const std::string& name) const { return nlohmann::json::parse(slurp(name)); }

  std::string tiny_config(const std::string& extra = "") const {
    return "task = regression\ndata.source = sine\ndata.series = 4\ndata.test_series = 2\ndata.length = 16\n"
           "data.drop = 0.5\nmodel.hidden = 4\nmodel.fwidth = 8\ncontroller.hidden = 4\ncontroller.head_hidden = 8\n"
           "controller.action_dim = 2\ncontroller.window = 3\nmodel.horizon = 2\nsolver.substeps = 1\n"
           "trainer.epochs = 2\ntrainer.batch = 4\nseed = 5\n" +
           extra;
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, GenerateToyCounts) {
  ASSERT_EQ(run("generate-data --kind toy-train --seed 1 --out " + path("train.csv")), 0);
  ASSERT_EQ(run("generate-data --kind toy-test --seed 1 --out " + path("test.csv")), 0);
  EXPECT_EQ(npc::load_csv(path("train.csv")).size(), 100u);
  EXPECT_EQ(npc::load_csv(path("test.csv")).size(), 1050u);
}

TEST_F(Cli, GenerateIsByteIdentical) {
  ASSERT_EQ(run("generate-data --kind sine --series 3 --length 20 --seed 7 --out " + path("a.csv")), 0);
  ASSERT_EQ(run("generate-data --kind sine --series 3 --length 20 --seed 7 --out " + path("b.csv")), 0);
  ASSERT_EQ(run("generate-data --kind sine --series 3 --length 20 --seed 8 --out " + path("c.csv")), 0);
  EXPECT_EQ(slurp("a.csv"), slurp("b.csv"));
  EXPECT_NE(slurp("a.csv"), slurp("c.csv"));
  EXPECT_EQ(npc::load_csv(path("a.csv")).size(), 3u);
}

TEST_F(Cli, GenerateRejectsUnknownKind) { EXPECT_EQ(run("generate-data --kind pv --out " + path("x.csv")), 1); }

TEST_F(Cli, TrainWritesCheckpointAndReportDeterministically) {
  write("run.cfg", tiny_config());
  ASSERT_EQ(run("train --config " + path("run.cfg") + " --out " + path("a")), 0) << slurp("stderr");
  ASSERT_EQ(run("train --config " + path("run.cfg") + " --out " + path("b")), 0);
  ASSERT_TRUE(fs::exists(dir_ / "a" / "checkpoint.json"));
  const auto ra = json("a/report.json"), rb = json("b/report.json");
  EXPECT_EQ(ra["method"], "npc");
  EXPECT_EQ(ra["epochs_run"], 2);
  EXPECT_EQ(ra["epoch_losses"].back(), rb["epoch_losses"].back());
  EXPECT_GE(ra["test"]["rmse"].get<double>(), 0.0);
  EXPECT_EQ(json("a/checkpoint.json")["format"], "npc-checkpoint");
}

TEST_F(Cli, TrainMissingDatasetFails) {
  write("run.cfg", "data.source = csv\ndata.train = " + path("nowhere.csv") + "\n");
  EXPECT_NE(run("train --config " + path("run.cfg") + " --out " + path("o")), 0);
  EXPECT_NE(slurp("stderr").find("nowhere.csv"), std::string::npos);
}

TEST_F(Cli, TrainConfigErrorIsUsageFailure) {
  write("run.cfg", "trainer.epochs = 2\nmystery = 1\n");
  EXPECT_EQ(run("train --config " + path("run.cfg")), 1);
  EXPECT_NE(slurp("stderr").find("run.cfg:2: unknown config key 'mystery'"), std::string::npos);
  EXPECT_EQ(run("train"), 1);
}

TEST_F(Cli, EvaluateAndTaskMismatch) {
  write("run.cfg", tiny_config());
  ASSERT_EQ(run("train --config " + path("run.cfg") + " --out " + path("m")), 0);
  const std::string ck = path("m/checkpoint.json");
  ASSERT_EQ(run("evaluate --checkpoint " + ck + " --config " + path("run.cfg") + " --out " + path("ev")), 0)
      << slurp("stderr");
  const auto metrics = json("ev/metrics.json");
  EXPECT_EQ(metrics["task"], "regression");
  EXPECT_EQ(metrics["series"], 2);
  EXPECT_EQ(count_lines(slurp("ev/points.csv")), 1u + 2u * 16u);
  EXPECT_EQ(run("evaluate --checkpoint " + ck + " --config " + path("run.cfg") + " --task classification"), 1);
  EXPECT_EQ(run("evaluate --checkpoint " + path("missing.json") + " --config " + path("run.cfg")), 2);
}

TEST_F(Cli, InterpolateAndExtrapolate) {
  write("run.cfg", tiny_config());
  ASSERT_EQ(run("train --config " + path("run.cfg") + " --out " + path("m")), 0);
  ASSERT_EQ(run("generate-data --kind sine --series 2 --length 12 --seed 3 --out " + path("s.csv")), 0);
  const std::string ck = path("m/checkpoint.json");
  ASSERT_EQ(run("interpolate --checkpoint " + ck + " --data " + path("s.csv") + " --out " + path("i.csv")), 0);
  EXPECT_EQ(count_lines(slurp("i.csv")), 1u + 2u * 12u);
  ASSERT_EQ(run("extrapolate --checkpoint " + ck + " --data " + path("s.csv") + " --steps 2 --out " + path("e.csv")), 0);
  EXPECT_EQ(count_lines(slurp("e.csv")), 1u + 2u * 2u);
  EXPECT_EQ(run("extrapolate --checkpoint " + ck + " --data " + path("s.csv") + " --steps 3 --out " + path("f.csv")), 1);
}

TEST_F(Cli, SweepWritesTable) {
  write("run.cfg", tiny_config("sweep.horizons = 1, 2\nsweep.drops = 0.5\n"));
  ASSERT_EQ(run("sweep --config " + path("run.cfg") + " --out " + path("sw")), 0) << slurp("stderr");
  EXPECT_EQ(count_lines(slurp("sw/sweep.csv")), 3u);
  EXPECT_TRUE(json("sw/sweep.json").contains("best_horizon_shifts_right_as_drop_decreases"));
}

TEST_F(Cli, VerifyTheoryScalar) {
  ASSERT_EQ(run("verify-theory --model scalar --T 1,2,4 --p0 zero --out " + path("th")), 0) << slurp("stderr");
  const auto s = json("th/summary.json");
  EXPECT_NEAR(s["P_inf"][0][0].get<double>(), 1.0, 1e-12);
  EXPECT_LT(s["discrepancy_slope"].get<double>(), 0.0);
  EXPECT_EQ(count_lines(slurp("th/discrepancy.csv")), 1u + 3u);
  EXPECT_EQ(count_lines(slurp("th/decay.csv")), 1u + 3u);
}

TEST_F(Cli, VerifyTheoryFromFile) {
  write("m.json", R"({"A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]], "R": [[1]], "h0": [1, -1]})");
  ASSERT_EQ(run("verify-theory --model " + path("m.json") + " --T 1,2 --out " + path("th")), 0) << slurp("stderr");
  EXPECT_EQ(json("th/summary.json")["P_inf"].size(), 2u);
  write("bad.json", R"({"A": [[0, 1], [0, 0]], "B": [[1], [0]], "C": [[1, 0]], "R": [[1]]})");
  EXPECT_EQ(run("verify-theory --model " + path("bad.json") + " --out " + path("th2")), 1);
  EXPECT_EQ(run("verify-theory --model nothing --out " + path("th3")), 1);
}

TEST_F(Cli, GradCheck) {
  ASSERT_EQ(run("grad-check --component ops"), 0);
  const std::string out = slurp("stdout");
  EXPECT_NE(out.find("max_rel_error"), std::string::npos);
  EXPECT_EQ(out.find("FAIL"), std::string::npos);
  EXPECT_EQ(run("grad-check --component no-such-case"), 1);
}
