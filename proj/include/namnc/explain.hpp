#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "namnc/data.hpp"
#include "namnc/error.hpp"
#include "namnc/model.hpp"

namespace namnc {

/// Response curve of the feature net at (t, series) over the unique values of
/// that series, together with its weighted contribution to `target`.
struct SweepResult {
  std::size_t target = 0;
  std::size_t t = 0;
  std::size_t series = 0;
  std::uint64_t seed = 0;
  std::vector<double> inputs;
  std::vector<double> outputs_f;
  std::vector<double> outputs_c;

  /// outputs_c minus its mean over the sweep inputs.
  std::vector<double> centered_c() const {
    if (outputs_c.empty()) return {};
    double mean = 0.0;
    for (double c : outputs_c) mean += c;
    mean /= static_cast<double>(outputs_c.size());
    std::vector<double> out(outputs_c.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = outputs_c[i] - mean;
    return out;
  }
};

/// Mean absolute contribution of every (t, k) point to one target.
struct ImportanceGrid {
  std::size_t target = 0;
  std::uint64_t seed = 0;
  Matrix grid;  // tau x K

  double column_sum(std::size_t k) const {
    double s = 0.0;
    for (std::size_t t = 0; t < grid.rows(); ++t) s += grid(t, k);
    return s;
  }
};

struct SweepOptions {
  std::size_t max_points = 2000;
  bool full_resolution = false;
};

/// Sorted unique values; above `max_points` they are thinned to evenly spaced
/// order statistics (always keeping the minimum and maximum).
inline std::vector<double> unique_inputs(std::span<const double> values, const SweepOptions& opts = {}) {
  std::vector<double> u(values.begin(), values.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (opts.full_resolution || opts.max_points < 2 || u.size() <= opts.max_points) return u;
  std::vector<double> thinned(opts.max_points);
  const double step = static_cast<double>(u.size() - 1) / static_cast<double>(opts.max_points - 1);
  for (std::size_t i = 0; i < opts.max_points; ++i) {
    thinned[i] = u[static_cast<std::size_t>(std::llround(static_cast<double>(i) * step))];
  }
  return thinned;
}

/// One SweepResult per time offset t for (series, target). `ds` must be in the
/// model's input units.
inline std::vector<SweepResult> sweep(const NamNcModel& model, const TimeSeriesDataset& ds, std::size_t series,
                                      std::size_t target, const SweepOptions& opts = {},
                                      std::uint64_t seed = 0) {
  if (series >= model.series() || target >= model.series() || ds.series_count() != model.series()) {
    throw DataError("sweep: series/target index out of range");
  }
  if (ds.length() == 0) throw DataError("sweep: series is empty");
  const std::vector<double> inputs = unique_inputs(ds.column(series), opts);

  std::vector<SweepResult> out;
  out.reserve(model.tau());
  std::vector<std::vector<double>> cached(model.nets().size());
  for (std::size_t t = 0; t < model.tau(); ++t) {
    const std::size_t idx = model.net_index(t, series);
    if (cached[idx].empty()) {
      const FeatureNet& net = model.nets()[idx];
      cached[idx].reserve(inputs.size());
      for (double x : inputs) cached[idx].push_back(feature_net_forward(net, x));
    }
    SweepResult r;
    r.target = target;
    r.t = t;
    r.series = series;
    r.seed = seed;
    r.inputs = inputs;
    r.outputs_f = cached[idx];
    const double w = model.mix(target, t, series);
    r.outputs_c.reserve(inputs.size());
    for (double f : r.outputs_f) r.outputs_c.push_back(w * f);
    out.push_back(std::move(r));
  }
  return out;
}

inline ImportanceGrid importance(const NamNcModel& model, std::span<const WindowSample> samples, std::size_t target,
                                 std::uint64_t seed = 0) {
  if (samples.empty()) throw DataError("importance: no samples");
  if (target >= model.series()) throw DataError("importance: target out of range");
  ImportanceGrid g;
  g.target = target;
  g.seed = seed;
  g.grid = Matrix(model.tau(), model.series());
  for (const WindowSample& s : samples) {
    const Matrix f = feature_values(model, s.x);
    for (std::size_t t = 0; t < model.tau(); ++t) {
      for (std::size_t k = 0; k < model.series(); ++k) {
        g.grid(t, k) += std::abs(model.mix(target, t, k) * f(t, k));
      }
    }
  }
  for (double& v : g.grid.values()) v /= static_cast<double>(samples.size());
  return g;
}

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { csv, json };

inline ExportFormat parse_export_format(std::string_view s) {
  if (s == "csv") return ExportFormat::csv;
  if (s == "json") return ExportFormat::json;
  throw ConfigError("unknown export format '" + std::string(s) + "' (expected csv|json)");
}

struct ExplanationSet {
  std::vector<std::string> series_names;
  std::vector<SweepResult> sweeps;
  std::vector<ImportanceGrid> grids;
  std::string checkpoint_hash;
  std::map<std::string, std::string> config;
};

struct ManifestEntry {
  std::string file;
  std::string kind;  // "sweep" | "importance"
  std::size_t target = 0;
  std::size_t t = 0;
  std::size_t series = 0;
};

struct Manifest {
  ExportFormat format = ExportFormat::csv;
  std::vector<ManifestEntry> entries;
  std::string checkpoint_hash;
  std::map<std::string, std::string> config;
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string series_label(const ExplanationSet& set, std::size_t k) {
  return k < set.series_names.size() ? set.series_names[k] : std::to_string(k);
}

}  // namespace detail

/// Writes every sweep and importance grid under `out_dir` plus manifest.json.
///
/// csv:  one file per (target, t, series) holding every seed's curve with
///       columns target,t,k,x,f_x,c_x,seed,c_x_centered; one file per grid
///       with columns target,t,k,importance,seed.
/// json: sweeps.json nested target -> series -> t -> [curves], and
///       importance.json with one entry per grid.
/// Numbers are written in shortest round-trip form.
inline Manifest export_explanations(const ExplanationSet& set, const std::filesystem::path& out_dir,
                                    ExportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir.string() + "': " + ec.message());

  Manifest manifest;
  manifest.format = format;
  manifest.checkpoint_hash = set.checkpoint_hash;
  manifest.config = set.config;

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<const SweepResult*>> by_key;
  for (const SweepResult& s : set.sweeps) by_key[{s.target, s.series, s.t}].push_back(&s);

  if (format == ExportFormat::csv) {
    for (const auto& [key, curves] : by_key) {
      const auto [target, series, t] = key;
      std::ostringstream os;
      os << "target,t,k,x,f_x,c_x,seed,c_x_centered\n";
      for (const SweepResult* s : curves) {
        const auto centered = s->centered_c();
        for (std::size_t i = 0; i < s->inputs.size(); ++i) {
          os << target << ',' << t << ',' << series << ',' << format_double(s->inputs[i]) << ','
             << format_double(s->outputs_f[i]) << ',' << format_double(s->outputs_c[i]) << ',' << s->seed
             << ',' << format_double(centered[i]) << '\n';
        }
      }
      const std::string file =
          "sweep_j" + std::to_string(target) + "_k" + std::to_string(series) + "_t" + std::to_string(t) + ".csv";
      detail::write_text(out_dir / file, os.str());
      manifest.entries.push_back({file, "sweep", target, t, series});
    }
    std::size_t n = 0;
    for (const ImportanceGrid& g : set.grids) {
      std::ostringstream os;
      os << "target,t,k,importance,seed\n";
      for (std::size_t t = 0; t < g.grid.rows(); ++t) {
        for (std::size_t k = 0; k < g.grid.cols(); ++k) {
          os << g.target << ',' << t << ',' << k << ',' << format_double(g.grid(t, k)) << ',' << g.seed << '\n';
        }
      }
      const std::string file = "importance_j" + std::to_string(g.target) + "_" + std::to_string(n++) + ".csv";
      detail::write_text(out_dir / file, os.str());
      manifest.entries.push_back({file, "importance", g.target, 0, 0});
    }
  } else {
    using nlohmann::json;
    json sweeps = json::object();
    for (const auto& [key, curves] : by_key) {
      const auto [target, series, t] = key;
      json& slot = sweeps[detail::series_label(set, target)][detail::series_label(set, series)][std::to_string(t)];
      for (const SweepResult* s : curves) {
        slot.push_back({{"target", target}, {"t", t}, {"k", series}, {"seed", s->seed}, {"x", s->inputs},
                        {"f_x", s->outputs_f}, {"c_x", s->outputs_c}, {"c_x_centered", s->centered_c()}});
      }
    }
    if (!by_key.empty()) {
      detail::write_text(out_dir / "sweeps.json", sweeps.dump(1));
      for (const auto& [key, curves] : by_key) {
        const auto [target, series, t] = key;
        manifest.entries.push_back({"sweeps.json", "sweep", target, t, series});
      }
    }
    json grids = json::array();
    for (const ImportanceGrid& g : set.grids) {
      json rows = json::array();
      for (std::size_t t = 0; t < g.grid.rows(); ++t) {
        const auto r = g.grid.row(t);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
      }
      grids.push_back({{"target", g.target}, {"seed", g.seed}, {"grid", rows}});
      manifest.entries.push_back({"importance.json", "importance", g.target, 0, 0});
    }
    if (!set.grids.empty()) detail::write_text(out_dir / "importance.json", grids.dump(1));
  }

  nlohmann::json m;
  m["format"] = format == ExportFormat::csv ? "csv" : "json";
  m["checkpoint_hash"] = manifest.checkpoint_hash;
  m["config"] = manifest.config;
  m["series_names"] = set.series_names;
  m["files"] = nlohmann::json::array();
  for (const ManifestEntry& e : manifest.entries) {
    m["files"].push_back({{"file", e.file}, {"kind", e.kind}, {"target", e.target}, {"t", e.t}, {"k", e.series}});
  }
  detail::write_text(out_dir / "manifest.json", m.dump(2));
  return manifest;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto c : split_csv_line(line)) cells.emplace_back(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double cell_number(const std::string& s, const std::filesystem::path& path) {
  const auto v = parse_number(s);
  if (!v) throw DataError(path.string() + ": cannot parse '" + s + "'");
  return *v;
}

}  // namespace detail

/// Reads back a directory written by export_explanations.
inline ExplanationSet read_explanations(const std::filesystem::path& out_dir) {
  using nlohmann::json;
  json m;
  try {
    m = json::parse(detail::read_text(out_dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw DataError((out_dir / "manifest.json").string() + ": " + e.what());
  }
  ExplanationSet set;
  set.checkpoint_hash = m.at("checkpoint_hash").get<std::string>();
  set.config = m.at("config").get<std::map<std::string, std::string>>();
  set.series_names = m.at("series_names").get<std::vector<std::string>>();
  const bool csv = m.at("format") == "csv";

  if (csv) {
    for (const auto& e : m.at("files")) {
      const auto path = out_dir / e.at("file").get<std::string>();
      const auto rows = detail::read_csv_rows(path);
      if (e.at("kind") == "sweep") {
        std::map<std::uint64_t, SweepResult> by_seed;
        std::vector<std::uint64_t> order;
        for (const auto& r : rows) {
          const auto seed = std::stoull(r.at(6));
          auto [it, inserted] = by_seed.try_emplace(seed);
          if (inserted) order.push_back(seed);
          SweepResult& s = it->second;
          s.target = std::stoul(r.at(0));
          s.t = std::stoul(r.at(1));
          s.series = std::stoul(r.at(2));
          s.seed = seed;
          s.inputs.push_back(detail::cell_number(r.at(3), path));
          s.outputs_f.push_back(detail::cell_number(r.at(4), path));
          s.outputs_c.push_back(detail::cell_number(r.at(5), path));
        }
        for (auto seed : order) set.sweeps.push_back(std::move(by_seed[seed]));
      } else {
        ImportanceGrid g;
        std::size_t tau = 0, kk = 0;
        for (const auto& r : rows) {
          tau = std::max<std::size_t>(tau, std::stoul(r.at(1)) + 1);
          kk = std::max<std::size_t>(kk, std::stoul(r.at(2)) + 1);
        }
        g.grid = Matrix(tau, kk);
        for (const auto& r : rows) {
          g.target = std::stoul(r.at(0));
          g.seed = std::stoull(r.at(4));
          g.grid(std::stoul(r.at(1)), std::stoul(r.at(2))) = detail::cell_number(r.at(3), path);
        }
        set.grids.push_back(std::move(g));
      }
    }
    return set;
  }

  if (std::filesystem::exists(out_dir / "sweeps.json")) {
    const json sweeps = json::parse(detail::read_text(out_dir / "sweeps.json"));
    std::vector<SweepResult> all;
    for (const auto& [target_name, by_series] : sweeps.items()) {
      for (const auto& [series_name, by_t] : by_series.items()) {
        for (const auto& [t_name, curves] : by_t.items()) {
          for (const auto& c : curves) {
            SweepResult s;
            s.target = c.at("target");
            s.t = c.at("t");
            s.series = c.at("k");
            s.seed = c.at("seed");
            s.inputs = c.at("x").get<std::vector<double>>();
            s.outputs_f = c.at("f_x").get<std::vector<double>>();
            s.outputs_c = c.at("c_x").get<std::vector<double>>();
            all.push_back(std::move(s));
          }
        }
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const SweepResult& a, const SweepResult& b) {
      return std::tie(a.target, a.series, a.t) < std::tie(b.target, b.series, b.t);
    });
    set.sweeps = std::move(all);
  }
  if (std::filesystem::exists(out_dir / "importance.json")) {
    const json grids = json::parse(detail::read_text(out_dir / "importance.json"));
    for (const auto& g : grids) {
      ImportanceGrid out;
      out.target = g.at("target");
      out.seed = g.at("seed");
      const auto rows = g.at("grid").get<std::vector<std::vector<double>>>();
      out.grid = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
      for (std::size_t t = 0; t < rows.size(); ++t) {
        std::copy(rows[t].begin(), rows[t].end(), out.grid.row(t).begin());
      }
      set.grids.push_back(std::move(out));
    }
  }
  return set;
}

}  // namespace namnc
