#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "namnc/error.hpp"

namespace namnc {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw NumericError("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// SplitMix64 finalizer. Used to derive independent child seeds from a root seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(root) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

/// Deterministic random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here instead of using the
/// <random> distribution classes, whose algorithms are implementation-defined:
///  - uniform():  top 53 bits of one engine draw, scaled to [0, 1)
///  - normal():   Box-Muller on two uniform() draws, both outputs used
///  - index(n):   rejection sampling on raw draws, unbiased in [0, n)
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::size_t index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return static_cast<std::size_t>(r % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr double kLeakySlope = 0.01;

constexpr double leaky_relu(double x, double slope = kLeakySlope) noexcept {
  return x >= 0.0 ? x : slope * x;
}

constexpr double leaky_relu_grad(double x, double slope = kLeakySlope) noexcept {
  return x >= 0.0 ? 1.0 : slope;
}

inline Matrix leaky_relu(const Matrix& m, double slope = kLeakySlope) {
  Matrix out = m;
  for (double& v : out.values()) v = leaky_relu(v, slope);
  return out;
}

/// Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).
inline std::vector<double> dropout_mask(std::size_t n, double p, RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw NumericError("dropout_mask: p must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n, keep_scale);
  if (p == 0.0) return mask;
  for (double& m : mask) {
    if (rng.uniform() < p) m = 0.0;
  }
  return mask;
}

enum class Mode { training, evaluation };

/// Applies dropout in place. Evaluation mode leaves the values untouched.
inline void apply_dropout(std::span<double> values, double p, Mode mode, RngStream& rng) {
  if (mode == Mode::evaluation || p == 0.0) return;
  const std::vector<double> mask = dropout_mask(values.size(), p, rng);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] *= mask[i];
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t n, AdamOptions opts) : options(opts), m(n, 0.0), v(n, 0.0) {}

  AdamOptions options;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update (no weight decay). Throws before touching
/// anything if shapes disagree or a gradient is non-finite.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw NumericError("adam_step: shape mismatch (params " + std::to_string(params.size()) +
                       ", grads " + std::to_string(grads.size()) + ", state " +
                       std::to_string(state.m.size()) + ")");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
  }
}

inline void adam_step(Matrix& params, const Matrix& grads, AdamState& state) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw NumericError("adam_step: matrix shape mismatch");
  }
  adam_step(params.values(), grads.values(), state);
}

/// Central-difference gradient of a scalar function of `params`.
template <typename F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_grad: step must be positive");
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(std::span<const double>(point));
    point[i] = saved - h;
    const double down = f(std::span<const double>(point));
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace namnc
