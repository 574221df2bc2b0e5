#pragma once

#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "namnc/data.hpp"
#include "namnc/training.hpp"

namespace namnc {

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace detail

inline nlohmann::json to_json(const MetricsReport& m, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["units"] = std::string(to_string(m.units));
  j["samples"] = m.samples;
  j["r2"] = detail::opt_json(m.r2);
  j["r2_pooled"] = detail::opt_json(m.r2_pooled);
  j["rmse"] = m.rmse;
  j["mae"] = m.mae;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t k = 0; k < m.per_series.size(); ++k) {
    const std::string name = k < names.size() ? names[k] : std::to_string(k);
    per[name] = {{"r2", detail::opt_json(m.per_series[k].r2)},
                 {"rmse", m.per_series[k].rmse},
                 {"mae", m.per_series[k].mae}};
  }
  j["per_series"] = std::move(per);
  return j;
}

inline nlohmann::json to_json(const Evaluation& e, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["normalized"] = to_json(e.normalized, names);
  j["original"] = e.original ? to_json(*e.original, names) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const RunRecord& r, const std::vector<std::string>& names) {
  nlohmann::json j;
  const TrainConfig& c = r.config;
  j["config"] = {{"batch_size", c.batch_size}, {"lr", c.lr},
                 {"dropout", c.dropout}, {"early_stop_rounds", c.early_stop_rounds},
                 {"max_epochs", c.max_epochs}, {"seed", c.seed},
                 {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
  j["tau"] = r.model.tau;
  j["sharing"] = std::string(to_string(r.model.sharing));
  j["series"] = r.k_series;
  j["param_count"] = r.param_count;
  j["fold"] = r.fold ? nlohmann::json(*r.fold) : nlohmann::json(nullptr);
  const auto range = [](const std::optional<IndexRange>& ir) {
    return ir ? nlohmann::json{{"begin", ir->begin}, {"end", ir->end}} : nlohmann::json(nullptr);
  };
  j["train_range"] = range(r.train_range);
  j["val_range"] = range(r.val_range);
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochLoss& e : r.history) {
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  j["history"] = std::move(hist);
  j["best_epoch"] = r.best_epoch;
  j["last_epoch"] = r.last_epoch;
  j["early_stopped"] = r.early_stopped;
  j["metrics"] = r.metrics ? to_json(*r.metrics, names) : nlohmann::json(nullptr);
  j["seconds"] = r.seconds;
  return j;
}

/// Header of the metrics table written by write_metrics_rows().
inline constexpr std::string_view kMetricsHeader = "scope,units,series,r2,r2_pooled,rmse,mae";

/// One row per series plus an "overall" row; r2 cells are empty where undefined.
inline void write_metrics_rows(std::ostream& out, std::string_view scope, const MetricsReport& m,
                               const std::vector<std::string>& names) {
  const std::string units(to_string(m.units));
  for (std::size_t k = 0; k < m.per_series.size(); ++k) {
    const SeriesMetrics& s = m.per_series[k];
    out << scope << ',' << units << ',' << (k < names.size() ? names[k] : std::to_string(k)) << ','
        << detail::opt_cell(s.r2) << ",," << format_double(s.rmse) << ',' << format_double(s.mae) << '\n';
  }
  out << scope << ',' << units << ",overall," << detail::opt_cell(m.r2) << ',' << detail::opt_cell(m.r2_pooled)
      << ',' << format_double(m.rmse) << ',' << format_double(m.mae) << '\n';
}

inline void write_metrics_rows(std::ostream& out, std::string_view scope, const Evaluation& e,
                               const std::vector<std::string>& names) {
  write_metrics_rows(out, scope, e.normalized, names);
  if (e.original) write_metrics_rows(out, scope, *e.original, names);
}

}  // namespace namnc
