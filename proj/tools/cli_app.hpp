#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "namnc/namnc.hpp"

namespace namnc::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3, kIoError = 4 };

inline constexpr const char* kOutRootEnv = "NAMNC_OUT_ROOT";
inline constexpr std::uint64_t kDataStream = 3;

/// Fully resolved run settings. Every field has a default, so a snapshot
/// written by to_map() reproduces the run on its own.
struct ExperimentConfig {
  std::string command;
  std::string data = "synthetic:4000";
  std::string na_policy = "drop";
  std::size_t tau = 8;
  Sharing sharing = Sharing::none;
  std::size_t folds = 10;
  double val_fraction = 0.1;
  double train_fraction = 0.9;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
  std::string out;
  ExportFormat format = ExportFormat::csv;
  std::string checkpoint;
  std::string targets = "all";
  std::size_t max_points = 2000;
  std::size_t series = 7;  // params only
  bool out_given = false;
  TrainConfig train;

  std::map<std::string, std::string> to_map() const {
    return {
        {"data", data},
        {"na_policy", na_policy},
        {"tau", std::to_string(tau)},
        {"sharing", std::string(to_string(sharing))},
        {"folds", std::to_string(folds)},
        {"val_fraction", format_double(val_fraction)},
        {"train_fraction", format_double(train_fraction)},
        {"repetitions", std::to_string(repetitions)},
        {"seed", std::to_string(seed)},
        {"jobs", std::to_string(jobs)},
        {"out", out},
        {"format", format == ExportFormat::csv ? "csv" : "json"},
        {"checkpoint", checkpoint},
        {"targets", targets},
        {"max_points", std::to_string(max_points)},
        {"series", std::to_string(series)},
        {"batch_size", std::to_string(train.batch_size)},
        {"lr", format_double(train.lr)},
        {"dropout", format_double(train.dropout)},
        {"early_stop_rounds", std::to_string(train.early_stop_rounds)},
        {"max_epochs", std::to_string(train.max_epochs)},
        {"beta1", format_double(train.beta1)},
        {"beta2", format_double(train.beta2)},
        {"eps", format_double(train.eps)},
    };
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  const auto d = namnc::detail::parse_number(v);
  if (!d) throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  return *d;
}

}  // namespace detail

/// Flat key=value text. Blank lines and lines starting with '#' are skipped.
inline std::map<std::string, std::string> parse_config_text(std::istream& in, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    }
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  return parse_config_text(in, path.string());
}

inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_real;
  using detail::parse_unsigned;
  if (key == "data") c.data = v;
  else if (key == "na_policy") c.na_policy = (parse_na_policy(v), v);
  else if (key == "tau") c.tau = parse_unsigned<std::size_t>(key, v);
  else if (key == "sharing") c.sharing = parse_sharing(v);
  else if (key == "folds") c.folds = parse_unsigned<std::size_t>(key, v);
  else if (key == "val_fraction") c.val_fraction = parse_real(key, v);
  else if (key == "train_fraction") c.train_fraction = parse_real(key, v);
  else if (key == "repetitions") c.repetitions = parse_unsigned<std::size_t>(key, v);
  else if (key == "seed") c.seed = parse_unsigned<std::uint64_t>(key, v);
  else if (key == "jobs") c.jobs = parse_unsigned<std::size_t>(key, v);
  else if (key == "out") c.out = v;
  else if (key == "format") c.format = parse_export_format(v);
  else if (key == "checkpoint") c.checkpoint = v;
  else if (key == "targets") c.targets = v;
  else if (key == "max_points") c.max_points = parse_unsigned<std::size_t>(key, v);
  else if (key == "series") c.series = parse_unsigned<std::size_t>(key, v);
  else if (key == "batch_size") c.train.batch_size = parse_unsigned<std::size_t>(key, v);
  else if (key == "lr") c.train.lr = parse_real(key, v);
  else if (key == "dropout") c.train.dropout = parse_real(key, v);
  else if (key == "early_stop_rounds") c.train.early_stop_rounds = parse_unsigned<std::size_t>(key, v);
  else if (key == "max_epochs") c.train.max_epochs = parse_unsigned<std::size_t>(key, v);
  else if (key == "beta1") c.train.beta1 = parse_real(key, v);
  else if (key == "beta2") c.train.beta2 = parse_real(key, v);
  else if (key == "eps") c.train.eps = parse_real(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void validate(const ExperimentConfig& c) {
  if (c.tau < 1) throw ConfigError("tau must be >= 1");
  if (c.folds < 2) throw ConfigError("folds must be >= 2");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (c.repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (c.max_points < 2) throw ConfigError("max_points must be >= 2");
  if (c.series < 1) throw ConfigError("series must be >= 1");
  c.train.validate();
}

/// Layers defaults, then the config file, then explicit flags.
inline ExperimentConfig resolve_config(const std::string& command, const std::map<std::string, std::string>& file,
                                       const std::map<std::string, std::string>& flags) {
  ExperimentConfig c;
  c.command = command;
  for (const auto& [k, v] : file) apply_setting(c, k, v);
  for (const auto& [k, v] : flags) apply_setting(c, k, v);
  c.out_given = !c.out.empty();
  if (c.out.empty()) {
    const char* root = std::getenv(kOutRootEnv);
    c.out = (std::filesystem::path(root && *root ? root : "runs") / command).string();
  }
  validate(c);
  return c;
}

inline void write_snapshot(const ExperimentConfig& c, const std::filesystem::path& dir) {
  std::ostringstream os;
  os << "# namnc " << c.command << '\n';
  for (const auto& [k, v] : c.to_map()) os << k << '=' << v << '\n';
  namnc::detail::write_text(dir / "config.txt", os.str());
}

/// `synthetic` or `synthetic:T` generates the benchmark from the root seed;
/// anything else is read as a CSV path.
inline TimeSeriesDataset load_dataset(const ExperimentConfig& c, std::ostream& log) {
  const std::string prefix = "synthetic";
  if (c.data == prefix || c.data.rfind(prefix + ":", 0) == 0) {
    std::size_t length = 4000;
    if (c.data.size() > prefix.size()) {
      length = detail::parse_unsigned<std::size_t>("data", c.data.substr(prefix.size() + 1));
    }
    if (length < 64) throw ConfigError("synthetic length must be >= 64");
    RngStream rng(derive_seed(c.seed, kDataStream));
    return generate_synthetic(length, rng);
  }
  CsvOptions opts;
  opts.na_policy = parse_na_policy(c.na_policy);
  LoadReport report;
  TimeSeriesDataset ds = load_csv(c.data, opts, &report);
  log << "loaded " << c.data << ": " << ds.length() << " rows x " << ds.series_count() << " series";
  if (report.rows_dropped) log << ", " << report.rows_dropped << " rows dropped";
  if (report.rows_filled) log << ", " << report.rows_filled << " rows filled";
  log << '\n';
  return ds;
}

inline std::filesystem::path prepare_out(const ExperimentConfig& c) {
  std::filesystem::path dir(c.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_snapshot(c, dir);
  return dir;
}

inline std::string r2_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

inline void print_summary(std::ostream& out, const Evaluation& e, const std::vector<std::string>& names) {
  const MetricsReport& m = e.preferred();
  out << "  r2=" << r2_text(m.r2) << " rmse=" << m.rmse << " mae=" << m.mae << " (" << to_string(m.units) << ")\n";
  for (std::size_t k = 0; k < m.per_series.size(); ++k) {
    out << "    " << names[k] << ": r2=" << r2_text(m.per_series[k].r2) << " rmse=" << m.per_series[k].rmse << '\n';
  }
}

inline int cmd_synth(const ExperimentConfig& c, std::ostream& out) {
  const TimeSeriesDataset ds = load_dataset(c, out);
  const auto dir = prepare_out(c);
  write_csv(ds, dir / "synthetic.csv");
  out << "wrote " << (dir / "synthetic.csv").string() << " (" << ds.length() << " rows)\n";
  return kOk;
}

inline std::string checkpoint_name(std::size_t rep) {
  return rep == 0 ? "model.ckpt" : "model_" + std::to_string(rep) + ".ckpt";
}

inline int cmd_train(const ExperimentConfig& c, std::ostream& out) {
  const TimeSeriesDataset raw = load_dataset(c, out);
  const ModelConfig mc{c.tau, c.sharing};
  out << "params: " << count_params(c.tau, raw.series_count(), c.sharing) << '\n';
  const PreparedSplit split = prepare_holdout(raw, c.tau, c.train_fraction);
  const auto dir = prepare_out(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const RepetitionResult res = run_repetitions(split, mc, tc, {c.repetitions, c.jobs, {}, {}});

  nlohmann::json runs = nlohmann::json::array();
  std::ostringstream metrics;
  metrics << kMetricsHeader << '\n';
  std::vector<Evaluation> evals;
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    const TrainedRun& run = res.runs[i];
    Checkpoint ck{run.model, raw.names, split.data.norm_stats, run.record.config.seed};
    save_checkpoint(ck, dir / checkpoint_name(i));
    runs.push_back(to_json(run.record, raw.names));
    if (run.record.metrics) {
      write_metrics_rows(metrics, "run" + std::to_string(i), *run.record.metrics, raw.names);
      evals.push_back(*run.record.metrics);
    }
    out << "run " << i << " (seed " << run.record.config.seed << "): best epoch " << run.record.best_epoch << " of "
        << run.record.last_epoch << '\n';
  }
  nlohmann::json doc{{"runs", runs}};
  if (!evals.empty()) {
    const Evaluation agg = mean_evaluation(evals);
    write_metrics_rows(metrics, "aggregate", agg, raw.names);
    doc["aggregate"] = to_json(agg, raw.names);
    print_summary(out, agg, raw.names);
  }
  namnc::detail::write_text(dir / "run.json", doc.dump(2) + "\n");
  namnc::detail::write_text(dir / "metrics.csv", metrics.str());
  out << "wrote " << dir.string() << '\n';
  return kOk;
}

inline int cmd_cv(const ExperimentConfig& c, std::ostream& out) {
  const TimeSeriesDataset raw = load_dataset(c, out);
  const ModelConfig mc{c.tau, c.sharing};
  out << "params: " << count_params(c.tau, raw.series_count(), c.sharing) << '\n';
  const auto dir = prepare_out(c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const CvResult res = run_cv(raw, mc, tc, {c.folds, c.val_fraction, c.jobs});

  nlohmann::json folds = nlohmann::json::array();
  std::ostringstream metrics;
  metrics << kMetricsHeader << '\n';
  for (const RunRecord& r : res.runs) {
    folds.push_back(to_json(r, raw.names));
    if (r.metrics) write_metrics_rows(metrics, "fold" + std::to_string(*r.fold), *r.metrics, raw.names);
  }
  write_metrics_rows(metrics, "aggregate", res.aggregate, raw.names);
  namnc::detail::write_text(dir / "cv.json",
                            nlohmann::json{{"folds", folds}, {"aggregate", to_json(res.aggregate, raw.names)}}.dump(2) + "\n");
  namnc::detail::write_text(dir / "metrics.csv", metrics.str());
  out << res.runs.size() << " folds\n";
  print_summary(out, res.aggregate, raw.names);
  out << "wrote " << dir.string() << '\n';
  return kOk;
}

/// `all`, or a comma-separated list of series names or indices.
inline std::vector<std::size_t> resolve_targets(const std::string& spec, const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  if (spec == "all") {
    for (std::size_t k = 0; k < names.size(); ++k) out.push_back(k);
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    const auto it = std::find(names.begin(), names.end(), item);
    if (it != names.end()) {
      out.push_back(static_cast<std::size_t>(it - names.begin()));
      continue;
    }
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), idx);
    if (ec != std::errc() || ptr != item.data() + item.size() || idx >= names.size()) {
      throw ConfigError("unknown target '" + item + "'");
    }
    out.push_back(idx);
  }
  if (out.empty()) throw ConfigError("no targets selected");
  return out;
}

/// A file, a comma-separated list of files, or a directory of *.ckpt files.
inline std::vector<std::filesystem::path> resolve_checkpoints(const ExperimentConfig& c) {
  if (c.checkpoint.empty()) throw ConfigError("explain needs --checkpoint");
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(c.checkpoint)) {
    for (const auto& e : std::filesystem::directory_iterator(c.checkpoint)) {
      if (e.path().extension() == ".ckpt") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no .ckpt files in '" + c.checkpoint + "'");
    return out;
  }
  std::stringstream ss(c.checkpoint);
  std::string item;
  while (std::getline(ss, item, ',')) out.emplace_back(detail::trim(item));
  return out;
}

inline int cmd_explain(const ExperimentConfig& c, std::ostream& out) {
  const TimeSeriesDataset raw = load_dataset(c, out);
  const auto paths = resolve_checkpoints(c);
  ExplanationSet set;
  set.series_names = raw.names;
  set.config = c.to_map();
  std::string hashes;
  for (const auto& path : paths) {
    const std::string bytes = namnc::detail::read_text(path);
    std::istringstream in(bytes);
    const Checkpoint ck = read_checkpoint(in);
    if (ck.series_names != raw.names) throw DataError("dataset columns do not match checkpoint '" + path.string() + "'");
    if (ck.model.tau() >= raw.length()) throw DataError("dataset is shorter than the model window");
    const TimeSeriesDataset ds = ck.norm_stats ? apply_standardization(raw, *ck.norm_stats) : raw;
    const auto windows = make_windows(ds, {0, ds.length()}, ck.model.tau());
    SweepOptions so;
    so.max_points = c.max_points;
    for (std::size_t target : resolve_targets(c.targets, raw.names)) {
      for (std::size_t k = 0; k < ds.series_count(); ++k) {
        auto s = sweep(ck.model, ds, k, target, so, ck.seed);
        set.sweeps.insert(set.sweeps.end(), s.begin(), s.end());
      }
      set.grids.push_back(importance(ck.model, windows, target, ck.seed));
    }
    hashes += (hashes.empty() ? "" : ",") + fnv1a_hex(bytes);
  }
  set.checkpoint_hash = hashes;
  const auto dir = prepare_out(c);
  const Manifest m = export_explanations(set, dir, c.format);
  out << "wrote " << m.entries.size() << " files to " << dir.string() << '\n';
  return kOk;
}

/// A pure query: writes a snapshot only when --out is given explicitly.
inline int cmd_params(const ExperimentConfig& c, std::ostream& out) {
  if (c.out_given) prepare_out(c);
  out << count_params(c.tau, c.series, c.sharing) << '\n';
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural additive nowcasting models", "namnc"};
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, std::string> flags;
  std::vector<std::pair<std::string, CLI::Option*>> opts;
  std::map<std::string, std::string> values;
  const auto add = [&](const std::string& flag, const std::string& key, const std::string& help) {
    opts.emplace_back(key, app.add_option(flag, values[key], help));
  };
  add("--data", "data", "CSV path, or synthetic[:T]");
  add("--tau", "tau", "window length (default 8)");
  add("--sharing", "sharing", "none|time|feature");
  add("--folds", "folds", "cross-validation folds (default 10)");
  add("--val-fraction", "val_fraction", "validation block as a fraction of T");
  add("--train-fraction", "train_fraction", "holdout split used by train");
  add("--seed", "seed", "root seed");
  add("--jobs", "jobs", "worker threads for folds and repetitions");
  add("--out", "out", "output directory (default $NAMNC_OUT_ROOT/<command>)");
  add("--format", "format", "csv|json");
  add("--repetitions", "repetitions", "independent training runs");
  add("--checkpoint", "checkpoint", "checkpoint file(s) or directory for explain");
  add("--targets", "targets", "explain targets: all or names/indices");
  add("--max-points", "max_points", "sweep resolution cap");
  add("--na-policy", "na_policy", "drop|ffill");
  add("--batch-size", "batch_size", "minibatch size");
  add("--lr", "lr", "Adam learning rate");
  add("--dropout", "dropout", "dropout on ExU outputs");
  add("--max-epochs", "max_epochs", "epoch cap");
  add("--early-stop", "early_stop_rounds", "epochs without improvement before stopping");
  std::string config_path;
  app.add_option("--config", config_path, "key=value config file");

  app.add_subcommand("synth", "write the synthetic benchmark as CSV");
  app.add_subcommand("train", "train on a holdout split");
  app.add_subcommand("cv", "expanding-window cross-validation");
  app.add_subcommand("explain", "export sweeps and importance grids");
  auto* params = app.add_subcommand("params", "print the trainable parameter count");
  opts.emplace_back("series", params->add_option("-k,--series", values["series"], "number of series (default 7)"));

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    for (const auto& [key, opt] : opts) {
      if (opt->count() > 0) flags[key] = values[key];
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const auto file = config_path.empty() ? std::map<std::string, std::string>{} : load_config_file(config_path);
    const ExperimentConfig c = resolve_config(command, file, flags);
    out << "seed: " << c.seed << '\n';
    if (command == "synth") return cmd_synth(c, out);
    if (command == "train") return cmd_train(c, out);
    if (command == "cv") return cmd_cv(c, out);
    if (command == "explain") return cmd_explain(c, out);
    return cmd_params(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace namnc::cli
