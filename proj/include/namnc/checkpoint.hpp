#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "namnc/data.hpp"
#include "namnc/error.hpp"
#include "namnc/model.hpp"

namespace namnc {

inline constexpr std::string_view kCheckpointMagic = "NAMNC-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

/// A trained model plus what is needed to feed it raw data again.
struct Checkpoint {
  NamNcModel model;
  std::vector<std::string> series_names;
  std::optional<NormStats> norm_stats;
  std::uint64_t seed = 0;  // training seed, carried into explanation exports

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void write_array(std::ostream& out, std::string_view key, std::span<const double> values) {
  out << key << ' ' << values.size();
  for (double v : values) out << ' ' << format_double(v);
  out << '\n';
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::istream& in) : in_(in) {}

  // Next non-empty line, split into key and remainder.
  std::pair<std::string, std::string> line(std::string_view expected_key) {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_no_;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      if (!text.empty()) break;
    }
    if (text.empty()) fail("unexpected end of file, expected '" + std::string(expected_key) + "'");
    const auto space = text.find(' ');
    std::string key = text.substr(0, space);
    std::string rest = space == std::string::npos ? "" : text.substr(space + 1);
    if (key != expected_key) fail("expected '" + std::string(expected_key) + "', found '" + key + "'");
    return {std::move(key), std::move(rest)};
  }

  std::uint64_t count(std::string_view key) { return parse_count(line(key).second); }

  std::string text(std::string_view key) { return line(key).second; }

  void array(std::string_view key, std::span<double> dest) {
    std::istringstream fields(line(key).second);
    std::string tok;
    if (!(fields >> tok) || parse_count(tok) != dest.size()) {
      fail("'" + std::string(key) + "' should hold " + std::to_string(dest.size()) + " values");
    }
    for (double& d : dest) {
      if (!(fields >> tok)) fail("'" + std::string(key) + "' is truncated");
      const auto v = parse_number(tok);
      if (!v) fail("bad number '" + tok + "' in '" + std::string(key) + "'");
      d = *v;
    }
    if (fields >> tok) fail("'" + std::string(key) + "' has trailing values");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::uint64_t parse_count(const std::string& s) const {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad count '" + s + "'");
    return v;
  }

  std::istream& in_;
  std::size_t line_no_ = 0;
};

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  const NamNcModel& m = ck.model;
  if (ck.series_names.size() != m.series()) throw DataError("checkpoint: series name count does not match model");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "tau " << m.tau() << '\n';
  out << "series " << m.series() << '\n';
  out << "sharing " << to_string(m.sharing()) << '\n';
  out << "exu_units " << kExuUnits << '\n';
  out << "hidden_units " << kHiddenUnits << '\n';
  out << "seed " << ck.seed << '\n';
  for (const std::string& n : ck.series_names) out << "name " << n << '\n';
  out << "norm_stats " << (ck.norm_stats ? 1 : 0) << '\n';
  if (ck.norm_stats) {
    detail::write_array(out, "mean", ck.norm_stats->mean);
    detail::write_array(out, "stddev", ck.norm_stats->stddev);
  }
  out << "nets " << m.nets().size() << '\n';
  for (const FeatureNet& n : m.nets()) {
    detail::write_array(out, "log_scale", n.exu.log_scale);
    detail::write_array(out, "center", n.exu.center);
    detail::write_array(out, "hidden", n.hidden.values());
    detail::write_array(out, "out", n.out);
  }
  detail::write_array(out, "mix", m.mix_weights().values());
  detail::write_array(out, "bias", m.bias());
  out << "end\n";
}

inline std::string checkpoint_string(const Checkpoint& ck) {
  std::ostringstream out;
  write_checkpoint(ck, out);
  return out.str();
}

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::CheckpointReader r(in);
  const std::string version = r.text(kCheckpointMagic);
  if (version != std::to_string(kCheckpointVersion)) r.fail("unsupported version '" + version + "'");
  const std::size_t tau = r.count("tau");
  const std::size_t kk = r.count("series");
  const std::string sharing_text = r.text("sharing");
  Sharing sharing{};
  try {
    sharing = parse_sharing(sharing_text);
  } catch (const ConfigError&) {
    r.fail("unknown sharing '" + sharing_text + "'");
  }
  if (r.count("exu_units") != kExuUnits || r.count("hidden_units") != kHiddenUnits) {
    r.fail("feature net shape differs from this build");
  }
  if (tau == 0 || kk == 0) r.fail("tau and series must be positive");

  Checkpoint ck;
  ck.seed = r.count("seed");
  ck.model = NamNcModel(tau, kk, sharing);
  for (std::size_t k = 0; k < kk; ++k) ck.series_names.push_back(r.text("name"));
  const std::size_t has_stats = r.count("norm_stats");
  if (has_stats > 1) r.fail("norm_stats must be 0 or 1");
  if (has_stats == 1) {
    NormStats s{std::vector<double>(kk), std::vector<double>(kk)};
    r.array("mean", s.mean);
    r.array("stddev", s.stddev);
    ck.norm_stats = std::move(s);
  }
  if (r.count("nets") != ck.model.nets().size()) r.fail("net count does not match tau/series/sharing");
  for (FeatureNet& n : ck.model.nets()) {
    r.array("log_scale", n.exu.log_scale);
    r.array("center", n.exu.center);
    r.array("hidden", n.hidden.values());
    r.array("out", n.out);
  }
  r.array("mix", ck.model.mix_weights().values());
  r.array("bias", ck.model.bias());
  r.line("end");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(ck, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace namnc
