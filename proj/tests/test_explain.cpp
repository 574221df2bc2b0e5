#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "namnc/explain.hpp"
#include "namnc/training.hpp"
#include "oracles.hpp"

using namespace namnc;

namespace {

TimeSeriesDataset random_dataset(std::size_t length, std::size_t kk, RngStream& rng) {
  TimeSeriesDataset ds;
  for (std::size_t k = 0; k < kk; ++k) ds.names.push_back("s" + std::to_string(k));
  ds.values = Matrix(length, kk);
  for (double& v : ds.values.values()) v = rng.normal();
  return ds;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("namnc_explain_" + std::to_string(std::random_device{}()) + "_" + std::to_string(counter++) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void expect_same_sets(const ExplanationSet& a, const ExplanationSet& b) {
  EXPECT_EQ(a.series_names, b.series_names);
  EXPECT_EQ(a.checkpoint_hash, b.checkpoint_hash);
  EXPECT_EQ(a.config, b.config);
  ASSERT_EQ(a.sweeps.size(), b.sweeps.size());
  for (std::size_t i = 0; i < a.sweeps.size(); ++i) {
    const SweepResult &x = a.sweeps[i], &y = b.sweeps[i];
    EXPECT_EQ(x.target, y.target);
    EXPECT_EQ(x.t, y.t);
    EXPECT_EQ(x.series, y.series);
    EXPECT_EQ(x.seed, y.seed);
    EXPECT_EQ(x.inputs, y.inputs);
    EXPECT_EQ(x.outputs_f, y.outputs_f);
    EXPECT_EQ(x.outputs_c, y.outputs_c);
  }
  ASSERT_EQ(a.grids.size(), b.grids.size());
  for (std::size_t i = 0; i < a.grids.size(); ++i) {
    EXPECT_EQ(a.grids[i].target, b.grids[i].target);
    EXPECT_EQ(a.grids[i].seed, b.grids[i].seed);
    EXPECT_EQ(a.grids[i].grid, b.grids[i].grid);
  }
}

ExplanationSet sample_set(std::size_t seeds) {
  ExplanationSet set;
  set.series_names = {"a", "b", "c"};
  set.checkpoint_hash = "0123456789abcdef";
  set.config = {{"tau", "3"}, {"sharing", "none"}};
  RngStream data_rng(5);
  const TimeSeriesDataset ds = random_dataset(60, 3, data_rng);
  const auto samples = make_windows(ds, {0, ds.length()}, 3);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    RngStream rng(100 + s);
    NamNcModel m = init_model(3, 3, Sharing::none, rng);
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 3; ++k) {
        for (auto& r : sweep(m, ds, k, j, {}, s)) set.sweeps.push_back(std::move(r));
      }
      set.grids.push_back(importance(m, samples, j, s));
    }
  }
  std::stable_sort(set.sweeps.begin(), set.sweeps.end(), [](const SweepResult& a, const SweepResult& b) {
    return std::tie(a.target, a.series, a.t) < std::tie(b.target, b.series, b.t);
  });
  return set;
}

}  // namespace

TEST(UniqueInputs, SortsAndDeduplicates) {
  const std::vector<double> v = {3.0, 1.0, 2.0, 1.0, 3.0};
  EXPECT_EQ(unique_inputs(v), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(UniqueInputs, ThinsToEvenlySpacedOrderStatistics) {
  std::vector<double> v(1001);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(1000 - i);
  SweepOptions opts;
  opts.max_points = 11;
  const auto u = unique_inputs(v, opts);
  ASSERT_EQ(u.size(), 11u);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(u[i], 100.0 * static_cast<double>(i));
  opts.full_resolution = true;
  EXPECT_EQ(unique_inputs(v, opts).size(), 1001u);
}

TEST(Sweep, ConstantSeriesGivesSinglePointCurves) {
  RngStream rng(1);
  TimeSeriesDataset ds = random_dataset(40, 3, rng);
  for (std::size_t t = 0; t < ds.length(); ++t) ds.values(t, 1) = 0.25;
  const NamNcModel m = init_model(4, 3, Sharing::none, rng);
  const auto curves = sweep(m, ds, 1, 0);
  ASSERT_EQ(curves.size(), 4u);
  for (const auto& c : curves) {
    EXPECT_EQ(c.inputs, std::vector<double>{0.25});
    EXPECT_EQ(c.outputs_f.size(), 1u);
    EXPECT_EQ(c.centered_c(), std::vector<double>{0.0});
  }
}

TEST(Sweep, MatchesIndependentFeatureEvaluation) {
  RngStream rng(2);
  const TimeSeriesDataset ds = random_dataset(50, 3, rng);
  const NamNcModel m = init_model(3, 3, Sharing::none, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& c : sweep(m, ds, k, 2)) {
      EXPECT_EQ(c.series, k);
      EXPECT_EQ(c.target, 2u);
      ASSERT_EQ(c.inputs.size(), 50u);
      EXPECT_TRUE(std::is_sorted(c.inputs.begin(), c.inputs.end()));
      for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        const double f = oracle::feature(oracle::net_at(m, c.t, k), c.inputs[i]);
        EXPECT_NEAR(c.outputs_f[i], f, 1e-12);
        EXPECT_NEAR(c.outputs_c[i], m.mix(2, c.t, k) * f, 1e-12);
      }
    }
  }
}

TEST(Sweep, TimeSharedCurvesAgreeAcrossOffsets) {
  RngStream rng(3);
  const TimeSeriesDataset ds = random_dataset(30, 2, rng);
  const NamNcModel m = init_model(5, 2, Sharing::time, rng);
  const auto curves = sweep(m, ds, 1, 0);
  for (const auto& c : curves) EXPECT_EQ(c.outputs_f, curves.front().outputs_f);
}

TEST(Sweep, IndexErrors) {
  RngStream rng(4);
  const TimeSeriesDataset ds = random_dataset(30, 2, rng);
  const NamNcModel m = init_model(2, 2, Sharing::none, rng);
  EXPECT_THROW(sweep(m, ds, 2, 0), DataError);
  EXPECT_THROW(sweep(m, ds, 0, 2), DataError);
  EXPECT_THROW(sweep(m, random_dataset(30, 3, rng), 0, 0), DataError);
}

TEST(Importance, ZeroMixGivesZeroGrid) {
  RngStream rng(5);
  const TimeSeriesDataset ds = random_dataset(30, 3, rng);
  NamNcModel m = init_model(3, 3, Sharing::none, rng);
  for (double& w : m.mix_weights().values()) w = 0.0;
  const auto g = importance(m, make_windows(ds, {0, 30}, 3), 1);
  for (double v : g.grid.values()) EXPECT_EQ(v, 0.0);
}

TEST(Importance, SingleSampleIsAbsoluteContribution) {
  RngStream rng(6);
  const TimeSeriesDataset ds = random_dataset(4, 2, rng);
  const NamNcModel m = init_model(3, 2, Sharing::none, rng);
  const auto samples = make_windows(ds, {0, 4}, 3);
  ASSERT_EQ(samples.size(), 1u);
  const auto g = importance(m, samples, 0);
  const ContributionTensor c = contributions(m, samples[0].x);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(g.grid(t, k), std::fabs(c(0, t, k)), 1e-15);
  }
}

TEST(Importance, InvariantToSampleOrder) {
  RngStream rng(7);
  const TimeSeriesDataset ds = random_dataset(80, 3, rng);
  const NamNcModel m = init_model(4, 3, Sharing::feature, rng);
  auto samples = make_windows(ds, {0, 80}, 4);
  const auto a = importance(m, samples, 2);
  std::reverse(samples.begin(), samples.end());
  const auto b = importance(m, samples, 2);
  for (std::size_t i = 0; i < a.grid.values().size(); ++i) {
    EXPECT_NEAR(a.grid.values()[i], b.grid.values()[i], 1e-12);
  }
}

TEST(Importance, ZeroedMixEntryZeroesOnlyThatCell) {
  RngStream rng(8);
  const TimeSeriesDataset ds = random_dataset(40, 3, rng);
  NamNcModel m = init_model(3, 3, Sharing::none, rng);
  const auto samples = make_windows(ds, {0, 40}, 3);
  const auto before = importance(m, samples, 1);
  m.mix_weights()(1, 2 * 3 + 0) = 0.0;
  const auto after = importance(m, samples, 1);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (t == 2 && k == 0) {
        EXPECT_EQ(after.grid(t, k), 0.0);
      } else {
        EXPECT_EQ(after.grid(t, k), before.grid(t, k));
      }
    }
  }
}

TEST(Importance, Errors) {
  RngStream rng(9);
  const NamNcModel m = init_model(2, 2, Sharing::none, rng);
  EXPECT_THROW(importance(m, {}, 0), DataError);
  const TimeSeriesDataset ds = random_dataset(10, 2, rng);
  EXPECT_THROW(importance(m, make_windows(ds, {0, 10}, 2), 2), DataError);
}

TEST(Export, ParseFormat) {
  EXPECT_EQ(parse_export_format("csv"), ExportFormat::csv);
  EXPECT_EQ(parse_export_format("json"), ExportFormat::json);
  EXPECT_THROW(parse_export_format("xml"), ConfigError);
}

TEST(Export, EmptySetWritesManifestOnly) {
  TempDir dir;
  ExplanationSet set;
  set.checkpoint_hash = "abc";
  for (auto fmt : {ExportFormat::csv, ExportFormat::json}) {
    const Manifest m = export_explanations(set, dir.path, fmt);
    EXPECT_TRUE(m.entries.empty());
    EXPECT_TRUE(std::filesystem::exists(dir.path / "manifest.json"));
    const ExplanationSet back = read_explanations(dir.path);
    EXPECT_TRUE(back.sweeps.empty());
    EXPECT_TRUE(back.grids.empty());
    EXPECT_EQ(back.checkpoint_hash, "abc");
    std::filesystem::remove_all(dir.path);
  }
}

TEST(Export, CsvAndJsonRoundTripExactly) {
  const ExplanationSet set = sample_set(2);
  for (auto fmt : {ExportFormat::csv, ExportFormat::json}) {
    TempDir dir;
    export_explanations(set, dir.path, fmt);
    expect_same_sets(set, read_explanations(dir.path));
  }
}

TEST(Export, CsvAndJsonReadBackIdentically) {
  const ExplanationSet set = sample_set(3);
  TempDir a, b;
  std::filesystem::create_directories(a.path);
  export_explanations(set, a.path / "csv", ExportFormat::csv);
  export_explanations(set, a.path / "json", ExportFormat::json);
  expect_same_sets(read_explanations(a.path / "csv"), read_explanations(a.path / "json"));
}

TEST(Export, FiveSeedsGiveFiveCurvesPerKey) {
  TempDir dir;
  const ExplanationSet set = sample_set(5);
  const Manifest m = export_explanations(set, dir.path, ExportFormat::csv);
  std::size_t sweep_files = 0;
  for (const auto& e : m.entries) {
    if (e.kind != "sweep") continue;
    ++sweep_files;
    std::ifstream in(dir.path / e.file);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "target,t,k,x,f_x,c_x,seed,c_x_centered");
    std::set<std::string> seeds;
    while (std::getline(in, line)) {
      const auto cells = detail::split_csv_line(line);
      seeds.emplace(cells.at(6));
    }
    EXPECT_EQ(seeds.size(), 5u) << e.file;
  }
  EXPECT_EQ(sweep_files, 3u * 3u * 3u);
  const ExplanationSet back = read_explanations(dir.path);
  EXPECT_EQ(back.sweeps.size(), 5u * 27u);
  EXPECT_EQ(back.grids.size(), 15u);
}

TEST(Export, ExportIsByteDeterministic) {
  const ExplanationSet set = sample_set(1);
  TempDir a, b;
  export_explanations(set, a.path, ExportFormat::json);
  export_explanations(set, b.path, ExportFormat::json);
  for (const char* f : {"manifest.json", "sweeps.json", "importance.json"}) {
    EXPECT_EQ(detail::read_text(a.path / f), detail::read_text(b.path / f)) << f;
  }
}

TEST(Export, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_explanations("/nonexistent/namnc/explain"), IoError);
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
