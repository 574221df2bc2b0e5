#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "namnc/data.hpp"
#include "namnc/error.hpp"
#include "namnc/explain.hpp"
#include "namnc/model.hpp"
#include "namnc/numeric.hpp"
#include "namnc/parallel.hpp"

namespace namnc {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double dropout = 0.1;
  std::size_t early_stop_rounds = 10;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (early_stop_rounds < 1) throw ConfigError("early_stop_rounds must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }
};

// Child streams of a run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;

/// Thrown when the loss becomes non-finite.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, std::size_t epoch) : NumericError(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// ---------------------------------------------------------------------------
// Metrics

enum class Units { normalized, original };

inline std::string_view to_string(Units u) noexcept {
  return u == Units::normalized ? "normalized" : "original";
}

struct SeriesMetrics {
  std::optional<double> r2;  // nullopt when the target has no variance
  double rmse = 0.0;
  double mae = 0.0;
};

struct MetricsReport {
  Units units = Units::normalized;
  std::size_t samples = 0;
  std::vector<SeriesMetrics> per_series;
  std::optional<double> r2;         // unweighted mean of the defined per-series values
  std::optional<double> r2_pooled;  // 1 - sum SS_res / sum SS_tot over the defined series
  double rmse = 0.0;                // pooled over all series and samples
  double mae = 0.0;
};

/// Metrics of predictions against targets, both N x K.
inline MetricsReport compute_metrics(const Matrix& pred, const Matrix& target, Units units = Units::normalized) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw NumericError("compute_metrics: shape mismatch");
  }
  if (target.rows() < 2) throw DataError("metrics need at least 2 samples");
  const std::size_t n = target.rows();
  const std::size_t kk = target.cols();
  const double dn = static_cast<double>(n);
  MetricsReport rep;
  rep.units = units;
  rep.samples = n;
  rep.per_series.resize(kk);
  double total_sq = 0.0, total_abs = 0.0, pooled_res = 0.0, pooled_tot = 0.0, r2_sum = 0.0;
  std::size_t r2_count = 0;
  for (std::size_t k = 0; k < kk; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += target(i, k);
    mean /= dn;
    double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = pred(i, k) - target(i, k);
      const double d = target(i, k) - mean;
      ss_res += e * e;
      ss_tot += d * d;
      abs_sum += std::abs(e);
    }
    SeriesMetrics& s = rep.per_series[k];
    s.rmse = std::sqrt(ss_res / dn);
    s.mae = abs_sum / dn;
    const double tol = 1e-12 * std::max(1.0, std::abs(mean));
    if (ss_tot / dn > tol * tol) {
      s.r2 = 1.0 - ss_res / ss_tot;
      r2_sum += *s.r2;
      ++r2_count;
      pooled_res += ss_res;
      pooled_tot += ss_tot;
    }
    total_sq += ss_res;
    total_abs += abs_sum;
  }
  rep.rmse = std::sqrt(total_sq / (dn * static_cast<double>(kk)));
  rep.mae = total_abs / (dn * static_cast<double>(kk));
  if (r2_count > 0) {
    rep.r2 = r2_sum / static_cast<double>(r2_count);
    rep.r2_pooled = 1.0 - pooled_res / pooled_tot;
  }
  return rep;
}

/// Metrics in model units, plus original units when statistics are known.
struct Evaluation {
  MetricsReport normalized;
  std::optional<MetricsReport> original;

  const MetricsReport& preferred() const noexcept { return original ? *original : normalized; }
};

namespace detail {

inline Evaluation evaluate_predictions(const Matrix& pred, const Matrix& target, const NormStats* stats) {
  Evaluation ev;
  ev.normalized = compute_metrics(pred, target, Units::normalized);
  if (stats != nullptr) {
    Matrix p = pred, y = target;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      for (std::size_t k = 0; k < p.cols(); ++k) {
        p(i, k) = stats->to_original(pred(i, k), k);
        y(i, k) = stats->to_original(target(i, k), k);
      }
    }
    ev.original = compute_metrics(p, y, Units::original);
  }
  return ev;
}

inline Matrix stack_targets(std::span<const WindowSample> samples) {
  Matrix y(samples.size(), samples.empty() ? 0 : samples.front().y.size());
  for (std::size_t i = 0; i < samples.size(); ++i) std::copy(samples[i].y.begin(), samples[i].y.end(), y.row(i).begin());
  return y;
}

}  // namespace detail

namespace detail {

struct BatchView {
  std::vector<const Matrix*> windows;
  std::vector<const double*> targets;

  void assign(std::span<const WindowSample> pool, std::span<const std::size_t> indices) {
    windows.clear();
    targets.clear();
    for (std::size_t i : indices) {
      windows.push_back(&pool[i].x);
      targets.push_back(pool[i].y.data());
    }
  }

  void assign(std::span<const WindowSample> pool) {
    windows.clear();
    targets.clear();
    for (const WindowSample& s : pool) {
      windows.push_back(&s.x);
      targets.push_back(s.y.data());
    }
  }
};

}  // namespace detail

inline Matrix predict(const NamNcModel& model, std::span<const WindowSample> samples) {
  detail::BatchView view;
  view.assign(samples);
  return BatchEngine(model).predict(view.windows);
}

inline Evaluation evaluate(const NamNcModel& model, std::span<const WindowSample> samples,
                           const NormStats* stats = nullptr) {
  if (samples.size() < 2) throw DataError("evaluate needs at least 2 samples");
  return detail::evaluate_predictions(predict(model, samples), detail::stack_targets(samples), stats);
}

/// Predicts every series' next value as its last observed value.
inline Evaluation persistence_baseline(std::span<const WindowSample> samples, const NormStats* stats = nullptr) {
  if (samples.size() < 2) throw DataError("persistence baseline needs at least 2 samples");
  Matrix pred(samples.size(), samples.front().y.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto last = samples[i].x.row(samples[i].x.rows() - 1);
    std::copy(last.begin(), last.end(), pred.row(i).begin());
  }
  return detail::evaluate_predictions(pred, detail::stack_targets(samples), stats);
}

/// Mean squared error over samples and targets, evaluation mode.
inline double mean_squared_error(const NamNcModel& model, std::span<const WindowSample> samples) {
  if (samples.empty()) return 0.0;
  const Matrix pred = predict(model, samples);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < model.series(); ++j) {
      const double r = pred(i, j) - samples[i].y[j];
      sum += r * r;
    }
  }
  return sum / static_cast<double>(samples.size() * model.series());
}

/// Mean squared error of `samples` and its gradient (added into `grad`).
inline double loss_and_gradient(const NamNcModel& model, std::span<const WindowSample> samples, NamNcModel& grad,
                                double dropout = 0.0, RngStream* rng = nullptr) {
  detail::BatchView view;
  view.assign(samples);
  const double weight = 1.0 / static_cast<double>(samples.size() * model.series());
  return BatchEngine(model).accumulate(view.windows, view.targets, weight, grad, dropout, rng) * weight;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLoss {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // epoch 0: loss at initialization; later: mean minibatch loss
  double val_loss = 0.0;
};

struct RunRecord {
  TrainConfig config;
  ModelConfig model;
  std::size_t k_series = 0;
  std::size_t param_count = 0;
  std::optional<std::size_t> fold;
  std::optional<IndexRange> train_range;
  std::optional<IndexRange> val_range;
  std::vector<EpochLoss> history;
  std::size_t best_epoch = 0;
  std::size_t last_epoch = 0;
  bool early_stopped = false;
  std::optional<Evaluation> metrics;
  double seconds = 0.0;
};

/// Adam on minibatch MSE with early stopping on the validation loss. On return
/// `model` holds the parameters of the epoch with the lowest validation loss.
inline RunRecord train(NamNcModel& model, std::span<const WindowSample> train_samples,
                       std::span<const WindowSample> val_samples, const TrainConfig& cfg,
                       const NormStats* stats = nullptr) {
  cfg.validate();
  if (train_samples.empty() || val_samples.empty()) throw DataError("train needs at least 1 train and 1 val sample");
  const auto start = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.config = cfg;
  rec.model = model.config();
  rec.k_series = model.series();
  rec.param_count = model.parameter_count();

  RngStream rng(derive_seed(cfg.seed, kTrainStream));
  const AdamOptions adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
  std::vector<AdamState> states;
  model.visit_parameters([&](std::span<double> s) { states.emplace_back(s.size(), adam); });

  rec.history.push_back({0, mean_squared_error(model, train_samples), mean_squared_error(model, val_samples)});

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  detail::BatchView view;
  NamNcModel grad = model.zeros_like();
  std::vector<std::span<double>> grad_spans;
  grad.visit_parameters([&](std::span<double> s) { grad_spans.push_back(s); });

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      for (auto& s : grad_spans) std::fill(s.begin(), s.end(), 0.0);
      view.assign(train_samples, std::span<const std::size_t>(order).subspan(b0, b1 - b0));
      const double weight = 1.0 / static_cast<double>((b1 - b0) * model.series());
      const double sum = BatchEngine(model).accumulate(view.windows, view.targets, weight, grad, cfg.dropout, &rng);
      if (!std::isfinite(sum)) {
        throw TrainingError("training diverged: non-finite loss in epoch " + std::to_string(epoch), epoch);
      }
      epoch_sum += sum / static_cast<double>(model.series());
      std::size_t g = 0;
      try {
        model.visit_parameters([&](std::span<double> p) {
          adam_step(p, grad_spans[g], states[g]);
          ++g;
        });
      } catch (const NumericError& e) {
        throw TrainingError(std::string(e.what()) + " in epoch " + std::to_string(epoch), epoch);
      }
    }
    const double train_loss = epoch_sum / static_cast<double>(order.size());
    const double val_loss = mean_squared_error(model, val_samples);
    if (!std::isfinite(val_loss)) {
      throw TrainingError("training diverged: non-finite validation loss in epoch " + std::to_string(epoch), epoch);
    }
    rec.history.push_back({epoch, train_loss, val_loss});
    rec.last_epoch = epoch;
    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = model.flatten();
      rec.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_rounds) {
      rec.early_stopped = true;
      break;
    }
  }
  model.assign(best_params);
  if (val_samples.size() >= 2) rec.metrics = evaluate(model, val_samples, stats);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

struct TrainedRun {
  NamNcModel model;
  RunRecord record;
};

/// Standardized dataset with train and validation windows for one split.
struct PreparedSplit {
  TimeSeriesDataset data;  // standardized with train-range statistics
  IndexRange train;
  IndexRange val;
  std::vector<WindowSample> train_samples;
  std::vector<WindowSample> val_samples;
};

/// Trains on [0, train_end) and validates on targets in [val.begin, val.end);
/// validation windows may reach back into the training range for their inputs.
inline PreparedSplit prepare_split(const TimeSeriesDataset& raw, IndexRange train, IndexRange val, std::size_t tau) {
  PreparedSplit s;
  s.data = standardize(raw, train);
  s.train = train;
  s.val = val;
  s.train_samples = make_windows(s.data, train, tau);
  s.val_samples = make_target_windows(s.data, val, tau);
  return s;
}

/// Leading `train_fraction` of the series for training, the rest for validation.
inline PreparedSplit prepare_holdout(const TimeSeriesDataset& raw, std::size_t tau, double train_fraction = 0.9) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  const auto split = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(raw.length())));
  return prepare_split(raw, {0, split}, {split, raw.length()}, tau);
}

/// Initializes a model from derive_seed(cfg.seed, kInitStream) and trains it.
inline TrainedRun run_single(const PreparedSplit& split, const ModelConfig& mc, const TrainConfig& cfg) {
  RngStream init_rng(derive_seed(cfg.seed, kInitStream));
  TrainedRun run{init_model(mc, split.data.series_count(), init_rng), {}};
  const NormStats* stats = split.data.norm_stats ? &*split.data.norm_stats : nullptr;
  run.record = train(run.model, split.train_samples, split.val_samples, cfg, stats);
  run.record.train_range = split.train;
  run.record.val_range = split.val;
  return run;
}

/// Element-wise mean of several evaluations (R² averaged over the runs where it is defined).
inline Evaluation mean_evaluation(std::span<const Evaluation> evals) {
  if (evals.empty()) throw DataError("mean_evaluation: nothing to average");
  const auto average = [](std::span<const MetricsReport* const> reps) {
    MetricsReport out;
    out.units = reps.front()->units;
    const std::size_t kk = reps.front()->per_series.size();
    out.per_series.resize(kk);
    const auto mean_opt = [](auto&& getter, std::span<const MetricsReport* const> rs) -> std::optional<double> {
      double sum = 0.0;
      std::size_t n = 0;
      for (const MetricsReport* r : rs) {
        if (auto v = getter(*r)) {
          sum += *v;
          ++n;
        }
      }
      if (n == 0) return std::nullopt;
      return sum / static_cast<double>(n);
    };
    const double n = static_cast<double>(reps.size());
    for (const MetricsReport* r : reps) {
      out.samples += r->samples;
      out.rmse += r->rmse / n;
      out.mae += r->mae / n;
      for (std::size_t k = 0; k < kk; ++k) {
        out.per_series[k].rmse += r->per_series[k].rmse / n;
        out.per_series[k].mae += r->per_series[k].mae / n;
      }
    }
    for (std::size_t k = 0; k < kk; ++k) {
      out.per_series[k].r2 = mean_opt([k](const MetricsReport& r) { return r.per_series[k].r2; }, reps);
    }
    out.r2 = mean_opt([](const MetricsReport& r) { return r.r2; }, reps);
    out.r2_pooled = mean_opt([](const MetricsReport& r) { return r.r2_pooled; }, reps);
    return out;
  };

  std::vector<const MetricsReport*> norm, orig;
  for (const Evaluation& e : evals) {
    norm.push_back(&e.normalized);
    if (e.original) orig.push_back(&*e.original);
  }
  Evaluation out;
  out.normalized = average(norm);
  if (orig.size() == evals.size()) out.original = average(orig);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation and repetitions

struct CvConfig {
  std::size_t folds = 10;
  double val_fraction = 0.1;
  std::size_t jobs = 1;
};

struct CvResult {
  std::vector<FoldSpec> folds;
  std::vector<RunRecord> runs;
  Evaluation aggregate;
};

/// Seed of fold i (1-based) under root seed `seed`.
constexpr std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) noexcept {
  return derive_seed(seed, 1000 + fold);
}

/// Expanding-window cross-validation: an independent model per fold, each
/// standardized with its own training-range statistics.
inline CvResult run_cv(const TimeSeriesDataset& raw, const ModelConfig& mc, const TrainConfig& cfg,
                       const CvConfig& cv = {}) {
  CvResult result;
  result.folds = ts_kfold(raw.length(), cv.folds, cv.val_fraction, mc.tau + 1);
  result.runs.resize(result.folds.size());
  parallel_for(result.folds.size(), cv.jobs, [&](std::size_t i) {
    const FoldSpec& f = result.folds[i];
    const PreparedSplit split = prepare_split(raw, f.train, f.val, mc.tau);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed(cfg.seed, f.fold_index);
    TrainedRun run = run_single(split, mc, fold_cfg);
    run.record.fold = f.fold_index;
    result.runs[i] = std::move(run.record);
  });
  std::vector<Evaluation> evals;
  for (const RunRecord& r : result.runs) {
    if (r.metrics) evals.push_back(*r.metrics);
  }
  result.aggregate = mean_evaluation(evals);
  return result;
}

struct RepetitionConfig {
  std::size_t repetitions = 1;
  std::size_t jobs = 1;
  /// Targets whose sweeps and importance grids are collected for every run.
  std::vector<std::size_t> explain_targets;
  SweepOptions sweep;
};

struct RepetitionResult {
  std::vector<TrainedRun> runs;
  std::vector<SweepResult> sweeps;  // tagged with the run seed
  std::vector<ImportanceGrid> grids;
};

/// Trains `repetitions` independent models on the same split; run i uses seed cfg.seed + i.
/// Importance grids are computed over the validation windows.
inline RepetitionResult run_repetitions(const PreparedSplit& split, const ModelConfig& mc, const TrainConfig& cfg,
                                        const RepetitionConfig& rc) {
  if (rc.repetitions < 1) throw ConfigError("repetitions must be >= 1");
  RepetitionResult result;
  result.runs.resize(rc.repetitions);
  std::vector<std::vector<SweepResult>> sweeps(rc.repetitions);
  std::vector<std::vector<ImportanceGrid>> grids(rc.repetitions);
  parallel_for(rc.repetitions, rc.jobs, [&](std::size_t i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + i;
    result.runs[i] = run_single(split, mc, c);
    const NamNcModel& model = result.runs[i].model;
    for (std::size_t target : rc.explain_targets) {
      for (std::size_t k = 0; k < model.series(); ++k) {
        auto s = sweep(model, split.data, k, target, rc.sweep, c.seed);
        sweeps[i].insert(sweeps[i].end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
      }
      grids[i].push_back(importance(model, split.val_samples, target, c.seed));
    }
  });
  for (std::size_t i = 0; i < rc.repetitions; ++i) {
    result.sweeps.insert(result.sweeps.end(), std::make_move_iterator(sweeps[i].begin()),
                         std::make_move_iterator(sweeps[i].end()));
    result.grids.insert(result.grids.end(), grids[i].begin(), grids[i].end());
  }
  return result;
}

}  // namespace namnc
