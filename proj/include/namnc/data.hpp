#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "namnc/error.hpp"
#include "namnc/numeric.hpp"

namespace namnc {

/// Half-open step range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  double to_original(double z, std::size_t k) const { return z * stddev[k] + mean[k]; }
  double to_normalized(double x, std::size_t k) const { return (x - mean[k]) / stddev[k]; }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// K named series of equal length T, stored as a T x K matrix.
struct TimeSeriesDataset {
  std::vector<std::string> names;
  Matrix values;
  /// Set once the values have been standardized; maps them back to original units.
  std::optional<NormStats> norm_stats;

  std::size_t length() const noexcept { return values.rows(); }
  std::size_t series_count() const noexcept { return values.cols(); }

  std::vector<double> column(std::size_t k) const {
    std::vector<double> out(length());
    for (std::size_t t = 0; t < length(); ++t) out[t] = values(t, k);
    return out;
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (names[k] == name) return k;
    }
    throw DataError("no series named '" + std::string(name) + "'");
  }
};

/// One nowcasting example: x holds tau consecutive rows (oldest first), y the row after.
struct WindowSample {
  Matrix x;
  std::vector<double> y;
  std::size_t target_index = 0;
};

struct FoldSpec {
  std::size_t fold_index = 0;
  IndexRange train;
  IndexRange val;
};

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Periods are in steps. TS1's half-amplitude and phase-shifted copies are
/// derived from the same TS1 values.
struct SyntheticConfig {
  double ts1_sin_period = 24.0, ts1_cos_period = 8.0;
  double ts1_sin_amp = 1.0, ts1_cos_amp = 0.5;
  double ts2_sin_period = 17.0, ts2_cos_period = 5.0;
  double ts2_sin_amp = 0.8, ts2_cos_amp = 0.3;
  double ts3_cos_period = 31.0, ts3_sin_period = 11.0;
  double ts3_cos_amp = 1.2, ts3_sin_amp = 0.4;
  std::size_t shift = 6;
};

inline const std::vector<std::string>& synthetic_series_names() {
  static const std::vector<std::string> names = {"ts1",         "ts2",    "ts3",    "half_ts1",
                                                 "shifted_ts1", "noise1", "noise2", "noise3"};
  return names;
}

inline TimeSeriesDataset generate_synthetic(std::size_t length, RngStream& rng,
                                            const SyntheticConfig& cfg = {}) {
  if (length < 64) throw ConfigError("synthetic series need at least 64 steps");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const auto ts1 = [&](double t) {
    return cfg.ts1_sin_amp * std::sin(two_pi * t / cfg.ts1_sin_period) +
           cfg.ts1_cos_amp * std::cos(two_pi * t / cfg.ts1_cos_period);
  };

  TimeSeriesDataset ds;
  ds.names = synthetic_series_names();
  ds.values = Matrix(length, ds.names.size());
  Matrix& v = ds.values;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i);
    v(i, 0) = ts1(t);
    v(i, 1) = cfg.ts2_sin_amp * std::sin(two_pi * t / cfg.ts2_sin_period) +
              cfg.ts2_cos_amp * std::cos(two_pi * t / cfg.ts2_cos_period);
    v(i, 2) = cfg.ts3_cos_amp * std::cos(two_pi * t / cfg.ts3_cos_period) +
              cfg.ts3_sin_amp * std::sin(two_pi * t / cfg.ts3_sin_period);
    v(i, 3) = 0.5 * v(i, 0);
    v(i, 4) = ts1(static_cast<double>(i + cfg.shift));
  }
  for (std::size_t k = 5; k < 8; ++k) {
    for (std::size_t i = 0; i < length; ++i) v(i, k) = rng.normal();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

enum class NaPolicy { drop, ffill };
enum class TimestampColumn { auto_detect, present, absent };

inline NaPolicy parse_na_policy(std::string_view s) {
  if (s == "drop") return NaPolicy::drop;
  if (s == "ffill") return NaPolicy::ffill;
  throw ConfigError("unknown na policy '" + std::string(s) + "' (expected drop|ffill)");
}

struct CsvOptions {
  NaPolicy na_policy = NaPolicy::drop;
  TimestampColumn timestamp = TimestampColumn::auto_detect;
  /// When non-empty, only these columns are loaded, in this order.
  std::vector<std::string> columns;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::size_t rows_filled = 0;
  std::optional<std::string> timestamp_column;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == ',' && !quoted) {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  cells.push_back(trim(line.substr(start)));
  return cells;
}

inline bool is_na(std::string_view s) {
  return s.empty() || s == "NA" || s == "N/A" || s == "na" || s == "NaN" || s == "nan" ||
         s == "null" || s == "NULL";
}

inline std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses a header + comma-separated numeric table. Missing cells (empty, NA,
/// NaN, null) are dropped or forward-filled per `na_policy`; rows that cannot
/// be forward-filled (leading gaps) are dropped.
inline TimeSeriesDataset parse_csv(std::istream& in, const CsvOptions& opts = {},
                                   LoadReport* report = nullptr) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw DataError("CSV input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto cell : detail::split_csv_line(line)) header.emplace_back(cell);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("CSV row " + std::to_string(rows.size() + 2) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    rows.emplace_back(cells.begin(), cells.end());
  }
  if (rows.empty()) throw DataError("CSV has a header but no data rows");

  bool has_timestamp = opts.timestamp == TimestampColumn::present;
  if (opts.timestamp == TimestampColumn::auto_detect) {
    const std::string& first = rows.front().front();
    has_timestamp = !detail::is_na(first) && !detail::parse_number(first).has_value();
  }

  std::vector<std::size_t> selected;
  if (opts.columns.empty()) {
    for (std::size_t c = has_timestamp ? 1 : 0; c < header.size(); ++c) selected.push_back(c);
  } else {
    for (const auto& name : opts.columns) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw DataError("CSV has no column named '" + name + "'");
      selected.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }
  if (selected.size() < 2) throw DataError("CSV needs at least 2 numeric columns");

  const std::size_t kk = selected.size();
  std::vector<double> kept;
  kept.reserve(rows.size() * kk);
  std::vector<double> last(kk, 0.0);
  bool have_last = false;
  LoadReport rep;
  rep.rows_read = rows.size();
  if (has_timestamp) rep.timestamp_column = header.front();

  std::vector<double> current(kk);
  std::vector<bool> missing(kk);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    bool any_missing = false;
    for (std::size_t c = 0; c < kk; ++c) {
      const std::string& cell = rows[r][selected[c]];
      missing[c] = detail::is_na(cell);
      if (missing[c]) {
        any_missing = true;
        continue;
      }
      const auto value = detail::parse_number(cell);
      if (!value) {
        throw DataError("CSV row " + std::to_string(r + 2) + ", column '" + header[selected[c]] +
                        "': cannot parse '" + cell + "' as a number");
      }
      current[c] = *value;
    }
    if (any_missing) {
      if (opts.na_policy == NaPolicy::drop || !have_last) {
        ++rep.rows_dropped;
        continue;
      }
      for (std::size_t c = 0; c < kk; ++c) {
        if (missing[c]) current[c] = last[c];
      }
      ++rep.rows_filled;
    }
    kept.insert(kept.end(), current.begin(), current.end());
    last = current;
    have_last = true;
  }

  TimeSeriesDataset ds;
  for (std::size_t c : selected) ds.names.push_back(header[c]);
  ds.values = Matrix(kept.size() / kk, kk);
  std::copy(kept.begin(), kept.end(), ds.values.values().begin());
  if (report != nullptr) *report = rep;
  return ds;
}

inline TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvOptions& opts = {},
                                  LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return parse_csv(in, opts, report);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_csv(const TimeSeriesDataset& ds, std::ostream& out) {
  for (std::size_t k = 0; k < ds.names.size(); ++k) out << (k ? "," : "") << ds.names[k];
  out << '\n';
  for (std::size_t t = 0; t < ds.length(); ++t) {
    for (std::size_t k = 0; k < ds.series_count(); ++k) {
      out << (k ? "," : "") << format_double(ds.values(t, k));
    }
    out << '\n';
  }
}

inline void write_csv(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(ds, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-series mean and population standard deviation over `range`.
inline NormStats compute_stats(const TimeSeriesDataset& ds, IndexRange range) {
  if (range.end > ds.length() || range.size() == 0) throw DataError("invalid statistics range");
  const std::size_t kk = ds.series_count();
  NormStats stats{std::vector<double>(kk, 0.0), std::vector<double>(kk, 0.0)};
  const double n = static_cast<double>(range.size());
  for (std::size_t k = 0; k < kk; ++k) {
    double sum = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t) sum += ds.values(t, k);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t) {
      const double d = ds.values(t, k) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw DataError("series '" + ds.names[k] + "' has zero variance over the statistics range");
    }
    stats.mean[k] = mean;
    stats.stddev[k] = sd;
  }
  return stats;
}

inline TimeSeriesDataset apply_standardization(const TimeSeriesDataset& ds, const NormStats& stats) {
  if (stats.mean.size() != ds.series_count()) throw DataError("statistics do not match dataset");
  TimeSeriesDataset out = ds;
  for (std::size_t t = 0; t < out.length(); ++t) {
    for (std::size_t k = 0; k < out.series_count(); ++k) {
      out.values(t, k) = stats.to_normalized(ds.values(t, k), k);
    }
  }
  out.norm_stats = stats;
  return out;
}

/// z-scores every series with statistics taken from `stat_range` only.
inline TimeSeriesDataset standardize(const TimeSeriesDataset& ds, IndexRange stat_range) {
  return apply_standardization(ds, compute_stats(ds, stat_range));
}

inline TimeSeriesDataset inverse_standardize(const TimeSeriesDataset& ds) {
  if (!ds.norm_stats) throw DataError("dataset carries no normalization statistics");
  TimeSeriesDataset out = ds;
  for (std::size_t t = 0; t < out.length(); ++t) {
    for (std::size_t k = 0; k < out.series_count(); ++k) {
      out.values(t, k) = ds.norm_stats->to_original(ds.values(t, k), k);
    }
  }
  out.norm_stats.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Windowing and folds

namespace detail {

inline WindowSample window_ending_before(const TimeSeriesDataset& ds, std::size_t target, std::size_t tau) {
  WindowSample s;
  s.x = Matrix(tau, ds.series_count());
  for (std::size_t r = 0; r < tau; ++r) {
    const auto src = ds.values.row(target - tau + r);
    std::copy(src.begin(), src.end(), s.x.row(r).begin());
  }
  const auto y = ds.values.row(target);
  s.y.assign(y.begin(), y.end());
  s.target_index = target;
  return s;
}

}  // namespace detail

/// All windows lying entirely inside `range`: (end - begin) - tau samples.
inline std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, IndexRange range, std::size_t tau) {
  if (tau == 0) throw ConfigError("tau must be at least 1");
  if (range.end > ds.length()) throw DataError("window range exceeds dataset length");
  if (range.size() < tau + 1) {
    throw DataError("range of " + std::to_string(range.size()) + " steps is too short for tau=" +
                    std::to_string(tau));
  }
  std::vector<WindowSample> out;
  out.reserve(range.size() - tau);
  for (std::size_t target = range.begin + tau; target < range.end; ++target) {
    out.push_back(detail::window_ending_before(ds, target, tau));
  }
  return out;
}

/// One window per target step in `targets`; inputs may reach back before targets.begin.
inline std::vector<WindowSample> make_target_windows(const TimeSeriesDataset& ds, IndexRange targets,
                                                     std::size_t tau) {
  if (tau == 0) throw ConfigError("tau must be at least 1");
  if (targets.end > ds.length()) throw DataError("target range exceeds dataset length");
  const std::size_t first = std::max(targets.begin, tau);
  if (first >= targets.end) throw DataError("target range yields no windows");
  std::vector<WindowSample> out;
  out.reserve(targets.end - first);
  for (std::size_t target = first; target < targets.end; ++target) {
    out.push_back(detail::window_ending_before(ds, target, tau));
  }
  return out;
}

/// Expanding-window folds: the series is cut into `folds` equal blocks; fold i
/// trains on the first i blocks and validates on the next floor(val_fraction*T)
/// steps (clamped to T). Yields folds-1 folds.
inline std::vector<FoldSpec> ts_kfold(std::size_t length, std::size_t folds = 10, double val_fraction = 0.1,
                                      std::size_t min_train = 2) {
  if (folds < 2) throw ConfigError("ts_kfold needs at least 2 folds");
  if (!(val_fraction > 0.0 && val_fraction <= 1.0)) throw ConfigError("val_fraction must lie in (0, 1]");
  const std::size_t block = length / folds;
  // The small epsilon keeps e.g. 0.1 * 1000 from flooring to 99.
  const auto val_len = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(length) + 1e-9));
  if (block < min_train || val_len == 0) {
    throw DataError("series of length " + std::to_string(length) + " is too short for " +
                    std::to_string(folds) + " folds");
  }
  std::vector<FoldSpec> out;
  for (std::size_t i = 1; i < folds; ++i) {
    const std::size_t split = i * block;
    out.push_back({i, {0, split}, {split, std::min(length, split + val_len)}});
  }
  return out;
}

}  // namespace namnc
