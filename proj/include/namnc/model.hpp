#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "namnc/error.hpp"
#include "namnc/numeric.hpp"

namespace namnc {

inline constexpr std::size_t kExuUnits = 100;
inline constexpr std::size_t kHiddenUnits = 32;

/// Trainable parameters of one feature net.
inline constexpr std::size_t kFeatureNetParams =
    2 * kExuUnits + kExuUnits * kHiddenUnits + kHiddenUnits;

/// Which axis the feature nets are tied along.
///   none    : one net per (t, k) point
///   time    : f_{:,k}, one net per series shared over all time offsets
///   feature : f_{t,:}, one net per time offset shared over all series
enum class Sharing { none, time, feature };

inline std::string_view to_string(Sharing s) noexcept {
  switch (s) {
    case Sharing::none: return "none";
    case Sharing::time: return "time";
    case Sharing::feature: return "feature";
  }
  return "none";
}

inline Sharing parse_sharing(std::string_view text) {
  if (text == "none") return Sharing::none;
  if (text == "time") return Sharing::time;
  if (text == "feature") return Sharing::feature;
  throw ConfigError("unknown sharing mode '" + std::string(text) + "' (expected none|time|feature)");
}

constexpr std::size_t distinct_net_count(std::size_t tau, std::size_t k_series, Sharing s) noexcept {
  switch (s) {
    case Sharing::none: return tau * k_series;
    case Sharing::time: return k_series;
    case Sharing::feature: return tau;
  }
  return 0;
}

/// Closed-form trainable parameter count.
constexpr std::size_t count_params(std::size_t tau, std::size_t k_series, Sharing s) noexcept {
  return distinct_net_count(tau, k_series, s) * kFeatureNetParams + k_series * (tau * k_series + 1);
}

/// Exp-centred units: unit i maps x to leaky_relu(exp(log_scale[i]) * (x - center[i])).
struct ExuLayer {
  std::vector<double> log_scale = std::vector<double>(kExuUnits, 0.0);
  std::vector<double> center = std::vector<double>(kExuUnits, 0.0);

  friend bool operator==(const ExuLayer&, const ExuLayer&) = default;
};

/// Scalar-to-scalar net: ExU(100) -> leaky ReLU -> linear 100x32 -> leaky ReLU -> linear 32x1.
/// Neither linear layer has a bias. `hidden` is stored input-major (row i = ExU unit i).
struct FeatureNet {
  ExuLayer exu;
  Matrix hidden = Matrix(kExuUnits, kHiddenUnits);
  std::vector<double> out = std::vector<double>(kHiddenUnits, 0.0);

  template <typename F>
  void visit_parameters(F&& f) {
    f(std::span<double>(exu.log_scale));
    f(std::span<double>(exu.center));
    f(hidden.values());
    f(std::span<double>(out));
  }

  friend bool operator==(const FeatureNet&, const FeatureNet&) = default;
};

struct ModelConfig {
  std::size_t tau = 8;
  Sharing sharing = Sharing::none;
};

/// Neural additive nowcasting model. For target j:
///   y_hat[j] = beta[j] + sum_{t,k} mix_w(j, t*K + k) * f_{t,k}(x[t][k])
/// where f_{t,k} is routed to a distinct or shared net depending on `sharing`.
///
/// The same type doubles as the gradient container (see zeros_like()).
class NamNcModel {
 public:
  NamNcModel() = default;
  NamNcModel(std::size_t tau, std::size_t k_series, Sharing sharing)
      : tau_(tau),
        k_(k_series),
        sharing_(sharing),
        nets_(distinct_net_count(tau, k_series, sharing)),
        mix_w_(k_series, tau * k_series),
        beta_(k_series, 0.0) {
    if (tau == 0 || k_series == 0) throw ConfigError("model needs tau >= 1 and k_series >= 1");
  }

  std::size_t tau() const noexcept { return tau_; }
  std::size_t series() const noexcept { return k_; }
  Sharing sharing() const noexcept { return sharing_; }
  ModelConfig config() const noexcept { return {tau_, sharing_}; }

  std::size_t net_index(std::size_t t, std::size_t k) const noexcept {
    switch (sharing_) {
      case Sharing::none: return t * k_ + k;
      case Sharing::time: return k;
      case Sharing::feature: return t;
    }
    return 0;
  }

  const FeatureNet& net(std::size_t t, std::size_t k) const { return nets_[net_index(t, k)]; }
  FeatureNet& net(std::size_t t, std::size_t k) { return nets_[net_index(t, k)]; }

  std::vector<FeatureNet>& nets() noexcept { return nets_; }
  const std::vector<FeatureNet>& nets() const noexcept { return nets_; }

  /// K x (tau*K); column index t*K + k.
  Matrix& mix_weights() noexcept { return mix_w_; }
  const Matrix& mix_weights() const noexcept { return mix_w_; }
  double mix(std::size_t target, std::size_t t, std::size_t k) const noexcept {
    return mix_w_(target, t * k_ + k);
  }

  std::vector<double>& bias() noexcept { return beta_; }
  const std::vector<double>& bias() const noexcept { return beta_; }

  NamNcModel zeros_like() const { return NamNcModel(tau_, k_, sharing_); }

  /// Calls f(std::span<double>) once per parameter array, in a fixed order.
  template <typename F>
  void visit_parameters(F&& f) {
    for (FeatureNet& n : nets_) n.visit_parameters(f);
    f(mix_w_.values());
    f(std::span<double>(beta_));
  }

  template <typename F>
  void visit_parameters(F&& f) const {
    const_cast<NamNcModel*>(this)->visit_parameters([&](std::span<double> s) {
      f(std::span<const double>(s.data(), s.size()));
    });
  }

  /// Number of trainable scalars, counted by walking the parameter arrays.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit_parameters([&](std::span<const double> s) { n += s.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    visit_parameters([&](std::span<const double> s) { flat.insert(flat.end(), s.begin(), s.end()); });
    return flat;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw NumericError("assign: parameter count mismatch");
    std::size_t pos = 0;
    visit_parameters([&](std::span<double> s) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                flat.begin() + static_cast<std::ptrdiff_t>(pos + s.size()), s.begin());
      pos += s.size();
    });
  }

  friend bool operator==(const NamNcModel&, const NamNcModel&) = default;

 private:
  std::size_t tau_ = 0;
  std::size_t k_ = 0;
  Sharing sharing_ = Sharing::none;
  std::vector<FeatureNet> nets_;
  Matrix mix_w_;
  std::vector<double> beta_;
};

/// ExU weights and centres ~ N(0,1); linear and mixing weights ~ N(0,1)/sqrt(fan_in); beta = 0.
inline NamNcModel init_model(std::size_t tau, std::size_t k_series, Sharing sharing, RngStream& rng) {
  NamNcModel model(tau, k_series, sharing);
  const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(kExuUnits));
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(kHiddenUnits));
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(tau * k_series));
  for (FeatureNet& net : model.nets()) {
    for (double& w : net.exu.log_scale) w = rng.normal();
    for (double& b : net.exu.center) b = rng.normal();
    for (double& w : net.hidden.values()) w = rng.normal() * hidden_scale;
    for (double& w : net.out) w = rng.normal() * out_scale;
  }
  for (double& w : model.mix_weights().values()) w = rng.normal() * mix_scale;
  return model;
}

inline NamNcModel init_model(const ModelConfig& cfg, std::size_t k_series, RngStream& rng) {
  return init_model(cfg.tau, k_series, cfg.sharing, rng);
}

namespace detail {

inline std::vector<double> exu_scales(const FeatureNet& net) {
  std::vector<double> s(kExuUnits);
  for (std::size_t i = 0; i < kExuUnits; ++i) s[i] = std::exp(net.exu.log_scale[i]);
  return s;
}

/// One forward pass of a feature net. `exu_act` (kExuUnits) and `hidden_pre`
/// (kHiddenUnits) receive the intermediate activations; `keep` (kExuUnits,
/// may be null) receives the dropout multipliers drawn from `rng`.
inline double feature_forward(const FeatureNet& net, const double* exu_scale, double x, double* exu_act,
                              double* hidden_pre, double* keep = nullptr, double dropout = 0.0,
                              RngStream* rng = nullptr) {
  const bool drop = rng != nullptr && dropout > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout) : 1.0;
  const double* center = net.exu.center.data();
  for (std::size_t i = 0; i < kExuUnits; ++i) {
    double k = 1.0;
    if (drop) k = rng->uniform() < dropout ? 0.0 : keep_scale;
    if (keep != nullptr) keep[i] = k;
    exu_act[i] = leaky_relu(exu_scale[i] * (x - center[i])) * k;
  }
  std::fill(hidden_pre, hidden_pre + kHiddenUnits, 0.0);
  for (std::size_t i = 0; i < kExuUnits; ++i) {
    const double a = exu_act[i];
    if (a == 0.0) continue;
    const double* w = net.hidden.row(i).data();
    for (std::size_t j = 0; j < kHiddenUnits; ++j) hidden_pre[j] += a * w[j];
  }
  double y = 0.0;
  for (std::size_t j = 0; j < kHiddenUnits; ++j) y += net.out[j] * leaky_relu(hidden_pre[j]);
  return y;
}

inline void check_window(const NamNcModel& model, const Matrix& window) {
  if (window.rows() != model.tau() || window.cols() != model.series()) {
    throw NumericError("window shape " + std::to_string(window.rows()) + "x" +
                       std::to_string(window.cols()) + " does not match model " +
                       std::to_string(model.tau()) + "x" + std::to_string(model.series()));
  }
  if (!window.all_finite()) throw NumericError("window contains non-finite values");
}

}  // namespace detail

inline double feature_net_forward(const FeatureNet& net, double x) {
  if (!std::isfinite(x)) throw NumericError("feature_net_forward: non-finite input");
  const auto scale = detail::exu_scales(net);
  std::array<double, kExuUnits> act;
  std::array<double, kHiddenUnits> hidden;
  return detail::feature_forward(net, scale.data(), x, act.data(), hidden.data());
}

/// Feature scalars f_{t,k}(window[t][k]) for every point of the window (tau x K).
inline Matrix feature_values(const NamNcModel& model, const Matrix& window) {
  detail::check_window(model, window);
  std::vector<std::vector<double>> scales;
  scales.reserve(model.nets().size());
  for (const FeatureNet& n : model.nets()) scales.push_back(detail::exu_scales(n));
  Matrix f(model.tau(), model.series());
  std::array<double, kExuUnits> act;
  std::array<double, kHiddenUnits> hidden;
  for (std::size_t t = 0; t < model.tau(); ++t) {
    for (std::size_t k = 0; k < model.series(); ++k) {
      const std::size_t idx = model.net_index(t, k);
      f(t, k) = detail::feature_forward(model.nets()[idx], scales[idx].data(), window(t, k), act.data(),
                                        hidden.data());
    }
  }
  return f;
}

/// Per-target additive decomposition of one prediction.
struct ContributionTensor {
  std::size_t tau = 0;
  std::size_t k_series = 0;
  std::vector<double> c;  // [target][t][k]
  std::vector<double> beta;
  std::vector<double> prediction;

  double operator()(std::size_t target, std::size_t t, std::size_t k) const noexcept {
    return c[(target * tau + t) * k_series + k];
  }
};

namespace detail {

/// y_hat[j] = beta[j] + sum over (t, k) in row-major order of mix * f.
/// `f` is indexed [t*K + k]; `terms`, when given, receives every product.
inline void combine(const NamNcModel& model, const double* f, double* pred, double* terms = nullptr) {
  const std::size_t points = model.tau() * model.series();
  const Matrix& mix = model.mix_weights();
  for (std::size_t j = 0; j < model.series(); ++j) {
    double sum = model.bias()[j];
    const auto w = mix.row(j);
    for (std::size_t p = 0; p < points; ++p) {
      const double term = w[p] * f[p];
      if (terms != nullptr) terms[j * points + p] = term;
      sum += term;
    }
    pred[j] = sum;
  }
}

}  // namespace detail

/// Next-step prediction for all K series.
inline std::vector<double> forward(const NamNcModel& model, const Matrix& window) {
  const Matrix f = feature_values(model, window);
  std::vector<double> pred(model.series());
  detail::combine(model, f.values().data(), pred.data());
  return pred;
}

inline ContributionTensor contributions(const NamNcModel& model, const Matrix& window) {
  const Matrix f = feature_values(model, window);
  ContributionTensor out;
  out.tau = model.tau();
  out.k_series = model.series();
  out.beta = model.bias();
  out.prediction.resize(model.series());
  out.c.resize(model.series() * model.tau() * model.series());
  detail::combine(model, f.values().data(), out.prediction.data(), out.c.data());
  return out;
}

/// Batched squared-error loss, predictions and parameter gradients for one
/// model snapshot. exp(log_scale) is cached at construction, so the model
/// must not change while an instance is alive.
///
/// Work is ordered point-major: all windows of a batch go through one feature
/// net together, and the two linear layers become small dense products.
class BatchEngine {
 public:
  explicit BatchEngine(const NamNcModel& model) : model_(model) {
    scales_.reserve(model.nets().size());
    for (const FeatureNet& n : model.nets()) scales_.push_back(detail::exu_scales(n));
  }

  /// Predictions for the given windows, one row per window.
  Matrix predict(std::span<const Matrix* const> windows) {
    Matrix pred(windows.size(), model_.series());
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += kChunk) {
      const std::size_t n = std::min(kChunk, windows.size() - b0);
      run_forward(windows.subspan(b0, n), 0.0, nullptr);
      for (std::size_t b = 0; b < n; ++b) {
        detail::combine(model_, features_.data() + b * points(), pred.row(b0 + b).data());
      }
    }
    return pred;
  }

  /// Returns sum over windows and targets of (y_hat - y)^2 and adds
  /// weight * its gradient into `grad`. `targets[b]` must hold K values.
  /// With a non-null `rng`, dropout at rate `dropout` is sampled on the ExU outputs.
  double accumulate(std::span<const Matrix* const> windows, std::span<const double* const> targets, double weight,
                    NamNcModel& grad, double dropout = 0.0, RngStream* rng = nullptr) {
    if (windows.size() != targets.size()) throw NumericError("accumulate: windows/targets size mismatch");
    const std::size_t kk = model_.series();
    const std::size_t np = points();
    const std::size_t nb = windows.size();
    const auto rows = static_cast<Eigen::Index>(nb);
    run_forward(windows, dropout, rng);

    double loss = 0.0;
    std::vector<double> d_pred(nb * kk);
    std::vector<double> pred(kk);
    for (std::size_t b = 0; b < nb; ++b) {
      detail::combine(model_, features_.data() + b * np, pred.data());
      for (std::size_t j = 0; j < kk; ++j) {
        const double r = pred[j] - targets[b][j];
        loss += r * r;
        d_pred[b * kk + j] = 2.0 * r * weight;
        grad.bias()[j] += d_pred[b * kk + j];
      }
    }

    const Matrix& mix = model_.mix_weights();
    Matrix& gmix = grad.mix_weights();
    std::vector<double> d_f(nb);
    RowMajor d_hidden(rows, static_cast<Eigen::Index>(kHiddenUnits));
    RowMajor d_act(rows, static_cast<Eigen::Index>(kExuUnits));
    for (std::size_t p = 0; p < np; ++p) {
      const std::size_t t = p / kk, k = p % kk;
      const std::size_t idx = model_.net_index(t, k);
      const FeatureNet& net = model_.nets()[idx];
      FeatureNet& gnet = grad.nets()[idx];
      const double* scale = scales_[idx].data();
      for (std::size_t b = 0; b < nb; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < kk; ++j) {
          gmix(j, p) += d_pred[b * kk + j] * features_[b * np + p];
          s += d_pred[b * kk + j] * mix(j, p);
        }
        d_f[b] = s;
      }

      const ConstMap act(act_.data() + p * nb * kExuUnits, rows, kExuUnits);
      const ConstMap keep(keep_.data() + p * nb * kExuUnits, rows, kExuUnits);
      const ConstMap hidden(hidden_.data() + p * nb * kHiddenUnits, rows, kHiddenUnits);
      for (Eigen::Index b = 0; b < rows; ++b) {
        const double upstream = d_f[static_cast<std::size_t>(b)];
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kHiddenUnits); ++j) {
          const double h = hidden(b, j);
          gnet.out[static_cast<std::size_t>(j)] += upstream * leaky_relu(h);
          d_hidden(b, j) = upstream * net.out[static_cast<std::size_t>(j)] * leaky_relu_grad(h);
        }
      }
      const ConstMap w(net.hidden.values().data(), kExuUnits, kHiddenUnits);
      Map gw(gnet.hidden.values().data(), kExuUnits, kHiddenUnits);
      gw.noalias() += act.transpose() * d_hidden;
      d_act.noalias() = d_hidden * w.transpose();

      for (std::size_t b = 0; b < nb; ++b) {
        const double x = (*windows[b])(t, k);
        const auto bi = static_cast<Eigen::Index>(b);
        for (std::size_t i = 0; i < kExuUnits; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          const double kp = keep(bi, ii);
          if (kp == 0.0) continue;
          // pre = exp(w) * (x - b):  d/dw = pre,  d/db = -exp(w)
          const double pre = scale[i] * (x - net.exu.center[i]);
          const double d_pre = d_act(bi, ii) * kp * leaky_relu_grad(pre);
          gnet.exu.log_scale[i] += d_pre * pre;
          gnet.exu.center[i] -= d_pre * scale[i];
        }
      }
    }
    return loss;
  }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<RowMajor>;
  using ConstMap = Eigen::Map<const RowMajor>;
  static constexpr std::size_t kChunk = 256;

  std::size_t points() const noexcept { return model_.tau() * model_.series(); }

  // Fills features_ [b][p] and the per-point activations used by backprop.
  void run_forward(std::span<const Matrix* const> windows, double dropout, RngStream* rng) {
    const std::size_t np = points();
    const std::size_t nb = windows.size();
    const auto rows = static_cast<Eigen::Index>(nb);
    for (const Matrix* w : windows) detail::check_window(model_, *w);
    features_.assign(nb * np, 0.0);
    act_.resize(np * nb * kExuUnits);
    keep_.resize(np * nb * kExuUnits);
    hidden_.resize(np * nb * kHiddenUnits);
    const bool drop = rng != nullptr && dropout > 0.0;
    const double keep_scale = drop ? 1.0 / (1.0 - dropout) : 1.0;

    for (std::size_t p = 0; p < np; ++p) {
      const std::size_t t = p / model_.series(), k = p % model_.series();
      const std::size_t idx = model_.net_index(t, k);
      const FeatureNet& net = model_.nets()[idx];
      const double* scale = scales_[idx].data();
      double* act = act_.data() + p * nb * kExuUnits;
      double* keep = keep_.data() + p * nb * kExuUnits;
      for (std::size_t b = 0; b < nb; ++b) {
        const double x = (*windows[b])(t, k);
        for (std::size_t i = 0; i < kExuUnits; ++i) {
          double kp = 1.0;
          if (drop) kp = rng->uniform() < dropout ? 0.0 : keep_scale;
          keep[b * kExuUnits + i] = kp;
          act[b * kExuUnits + i] = leaky_relu(scale[i] * (x - net.exu.center[i])) * kp;
        }
      }
      const ConstMap act_m(act, rows, kExuUnits);
      const ConstMap w(net.hidden.values().data(), kExuUnits, kHiddenUnits);
      Map hidden(hidden_.data() + p * nb * kHiddenUnits, rows, kHiddenUnits);
      hidden.noalias() = act_m * w;
      for (std::size_t b = 0; b < nb; ++b) {
        double y = 0.0;
        for (std::size_t j = 0; j < kHiddenUnits; ++j) {
          y += net.out[j] * leaky_relu(hidden(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)));
        }
        features_[b * np + p] = y;
      }
    }
  }

  const NamNcModel& model_;
  std::vector<std::vector<double>> scales_;
  std::vector<double> features_;  // [b][p]
  std::vector<double> act_;       // [p][b][unit]
  std::vector<double> keep_;      // [p][b][unit]
  std::vector<double> hidden_;    // [p][b][unit], pre-activation
};

}  // namespace namnc
