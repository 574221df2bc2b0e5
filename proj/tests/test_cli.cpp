#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cli_app.hpp"

using namespace namnc;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("namnc_cli_" + std::to_string(std::random_device{}()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string slurp(const fs::path& p) { return namnc::detail::read_text(p); }

  static std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::ifstream in(dir / "config.txt");
    return cli::parse_config_text(in, "config.txt");
  }

  fs::path dir_;
};

// Small enough to train in well under a second per run.
const std::vector<std::string> kQuick = {"--data", "synthetic:240", "--tau", "2", "--max-epochs", "2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string last_line(const std::string& s) {
  std::istringstream in(s);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

}  // namespace

TEST_F(CliTest, ParamsMatchesKnownCounts) {
  EXPECT_EQ(last_line(run({"params", "--tau", "8", "-k", "7", "--sharing", "none"}).out), "192591");
  EXPECT_EQ(last_line(run({"params", "--tau", "8", "-k", "10", "--sharing", "time"}).out), "35130");
  EXPECT_EQ(last_line(run({"params", "--tau", "8", "-k", "10", "--sharing", "feature"}).out), "28266");
  EXPECT_EQ(last_line(run({"params"}).out), "192591");
}

TEST_F(CliTest, ParamsSnapshotOnlyWithExplicitOut) {
  ASSERT_EQ(run({"params", "-k", "10", "--sharing", "time", "--out", path("p")}).code, 0);
  const auto snap = snapshot(dir_ / "p");
  EXPECT_EQ(snap.at("series"), "10");
  EXPECT_EQ(snap.at("sharing"), "time");
  std::ofstream(path("p.cfg")) << slurp(dir_ / "p" / "config.txt");
  EXPECT_EQ(last_line(run({"params", "--config", path("p.cfg")}).out), "35130");
}

TEST_F(CliTest, PrintsSeedFirst) {
  const auto r = run({"params", "--seed", "42"});
  EXPECT_EQ(r.out.rfind("seed: 42\n", 0), 0u) << r.out;
}

TEST_F(CliTest, BadFlagsAreConfigErrors) {
  EXPECT_EQ(run({"params", "--sharing", "both"}).code, cli::kConfigError);
  EXPECT_EQ(run({"params", "--no-such-flag"}).code, cli::kConfigError);
  EXPECT_EQ(run({"params", "--tau", "x"}).code, cli::kConfigError);
  EXPECT_EQ(run({"params", "--tau", "0"}).code, cli::kConfigError);
  EXPECT_EQ(run({"params", "--folds", "1"}).code, cli::kConfigError);
  EXPECT_EQ(run({"params", "--format", "xml"}).code, cli::kConfigError);
  EXPECT_EQ(run({}).code, cli::kConfigError);
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kOk);
  EXPECT_NE(r.out.find("synth"), std::string::npos);
}

TEST_F(CliTest, MissingCsvIsIoError) {
  const auto r = run({"train", "--data", path("missing.csv"), "--out", path("o")});
  EXPECT_EQ(r.code, cli::kIoError);
  EXPECT_NE(r.err.find("missing.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingConfigFileIsIoError) {
  EXPECT_EQ(run({"params", "--config", path("nope.cfg")}).code, cli::kIoError);
}

TEST_F(CliTest, MalformedCsvIsRuntimeError) {
  std::ofstream(path("bad.csv")) << "a,b\n1,2\n3,x\n";
  const auto r = run({"train", "--data", path("bad.csv"), "--out", path("o")});
  EXPECT_EQ(r.code, cli::kRuntimeError);
  EXPECT_NE(r.err.find("row 3"), std::string::npos) << r.err;
}

TEST_F(CliTest, SynthWritesEightColumnsDeterministically) {
  ASSERT_EQ(run({"synth", "--seed", "3", "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"synth", "--seed", "3", "--out", path("b")}).code, 0);
  const std::string a = slurp(dir_ / "a" / "synthetic.csv");
  EXPECT_EQ(a, slurp(dir_ / "b" / "synthetic.csv"));
  const TimeSeriesDataset ds = load_csv(dir_ / "a" / "synthetic.csv");
  EXPECT_EQ(ds.length(), 4000u);
  EXPECT_EQ(ds.names, synthetic_series_names());
  for (std::size_t t = 0; t < ds.length(); ++t) EXPECT_EQ(ds.values(t, 3), 0.5 * ds.values(t, 0));
  ASSERT_EQ(run({"synth", "--seed", "4", "--out", path("c")}).code, 0);
  EXPECT_NE(a, slurp(dir_ / "c" / "synthetic.csv"));
}

TEST_F(CliTest, ConfigPrecedenceFlagsOverFileOverDefaults) {
  std::ofstream(path("run.cfg")) << "# comment\ntau = 5\nsharing=time\nseed=9\n";
  ASSERT_EQ(run({"synth", "--data", "synthetic:100", "--config", path("run.cfg"), "--seed", "11", "--out", path("o")}).code, 0);
  const auto snap = snapshot(dir_ / "o");
  EXPECT_EQ(snap.at("tau"), "5");
  EXPECT_EQ(snap.at("sharing"), "time");
  EXPECT_EQ(snap.at("seed"), "11");
  EXPECT_EQ(snap.at("folds"), "10");
  EXPECT_EQ(snap.at("data"), "synthetic:100");
}

TEST_F(CliTest, UnknownConfigKeyIsConfigError) {
  std::ofstream(path("run.cfg")) << "taw=5\n";
  EXPECT_EQ(run({"params", "--config", path("run.cfg")}).code, cli::kConfigError);
  std::ofstream(path("run2.cfg")) << "no equals sign\n";
  EXPECT_EQ(run({"params", "--config", path("run2.cfg")}).code, cli::kConfigError);
}

TEST_F(CliTest, EnvironmentSetsDefaultOutputRoot) {
  ::setenv(cli::kOutRootEnv, dir_.c_str(), 1);
  const auto r = run({"synth", "--data", "synthetic:100"});
  ::unsetenv(cli::kOutRootEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "synth" / "synthetic.csv"));
  EXPECT_EQ(snapshot(dir_ / "synth").at("out"), (dir_ / "synth").string());
}

TEST_F(CliTest, SnapshotReproducesRun) {
  ASSERT_EQ(run({"synth", "--data", "synthetic:150", "--seed", "5", "--out", path("a")}).code, 0);
  std::string cfg = slurp(dir_ / "a" / "config.txt");
  std::ofstream(path("replay.cfg")) << cfg;
  ASSERT_EQ(run({"synth", "--config", path("replay.cfg"), "--out", path("b")}).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "synthetic.csv"), slurp(dir_ / "b" / "synthetic.csv"));
}

TEST_F(CliTest, TrainThenExplain) {
  const auto t =
      run(with({"train", "--seed", "2", "--repetitions", "2", "--jobs", "2", "--out", path("train")}, kQuick));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("params: "), std::string::npos);
  for (const char* f : {"model.ckpt", "model_1.ckpt", "run.json", "metrics.csv", "config.txt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "train" / f)) << f;
  }
  const Checkpoint ck = load_checkpoint(dir_ / "train" / "model.ckpt");
  EXPECT_EQ(ck.model.tau(), 2u);
  EXPECT_EQ(ck.series_names, synthetic_series_names());
  EXPECT_TRUE(ck.norm_stats.has_value());
  EXPECT_EQ(ck.seed, 2u);
  EXPECT_EQ(load_checkpoint(dir_ / "train" / "model_1.ckpt").seed, 3u);

  const auto run_json = nlohmann::json::parse(slurp(dir_ / "train" / "run.json"));
  EXPECT_EQ(run_json.at("runs").size(), 2u);
  EXPECT_TRUE(run_json.contains("aggregate"));

  const auto e = run({"explain", "--data", "synthetic:240", "--seed", "2", "--checkpoint", path("train"),
                      "--targets", "ts1,2", "--format", "json", "--out", path("explain")});
  ASSERT_EQ(e.code, 0) << e.err;
  const ExplanationSet set = read_explanations(dir_ / "explain");
  EXPECT_EQ(set.grids.size(), 2u * 2u);
  EXPECT_EQ(set.sweeps.size(), 2u * 2u * 8u * 2u);
  EXPECT_NE(set.checkpoint_hash.find(','), std::string::npos);
  EXPECT_EQ(set.config.at("targets"), "ts1,2");
}

TEST_F(CliTest, ExplainErrors) {
  EXPECT_EQ(run({"explain", "--data", "synthetic:100", "--out", path("o")}).code, cli::kConfigError);
  EXPECT_EQ(run({"explain", "--data", "synthetic:100", "--checkpoint", path("none.ckpt"), "--out", path("o")}).code,
            cli::kIoError);
  ASSERT_EQ(run(with({"train", "--out", path("t")}, kQuick)).code, 0);
  EXPECT_EQ(run({"explain", "--data", "synthetic:240", "--checkpoint", path("t/model.ckpt"), "--targets", "nope",
                 "--out", path("o")})
                .code,
            cli::kConfigError);
}

TEST_F(CliTest, CvWritesNineFoldsReproducibly) {
  const auto args = with({"cv", "--folds", "10", "--seed", "1"}, kQuick);
  const auto a = run(with(args, {"--out", path("a"), "--jobs", "3"}));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto doc = nlohmann::json::parse(slurp(dir_ / "a" / "cv.json"));
  EXPECT_EQ(doc.at("folds").size(), 9u);
  ASSERT_EQ(run(with(args, {"--out", path("b"), "--jobs", "1"})).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
  const std::string metrics = slurp(dir_ / "a" / "metrics.csv");
  EXPECT_EQ(metrics.rfind(std::string(kMetricsHeader) + "\n", 0), 0u);
  EXPECT_NE(metrics.find("aggregate,"), std::string::npos);
}
