#pragma once

// Training: weighted multi-step Chamfer loss over an autoregressive rollout,
// its exact gradient, Adam, and a finite-difference gradient check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tpnet/datagen.hpp"
#include "tpnet/metrics.hpp"
#include "tpnet/model.hpp"
#include "tpnet/random.hpp"

namespace tpnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t rollout_horizon = kRolloutHorizon;
  std::vector<double> loss_weights{9, 1, 1, 1, 1, 1, 1, 1};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;
  double validation_fraction = 0.1;
  double ortho_weight = 0.0;
  bool truncate_rollout = false;  // stop gradients at fed-back predictions
  unsigned jobs = 1;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (epochs == 0) fail("epochs must be >= 1");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (rollout_horizon == 0) fail("rollout_horizon must be >= 1");
    if (loss_weights.size() != rollout_horizon) fail("loss_weights length must equal rollout_horizon");
    for (double w : loss_weights)
      if (!(w > 0.0)) fail("loss weights must be > 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) fail("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) fail("grad_clip must be positive");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) fail("validation_fraction must be in [0, 1)");
    if (ortho_weight < 0.0) fail("ortho_weight must be >= 0");
  }
};

struct GradBuffer {
  std::vector<double> values;

  GradBuffer() = default;
  explicit GradBuffer(std::size_t n) : values(n, 0.0) {}
  std::size_t size() const noexcept { return values.size(); }
  double* data() noexcept { return values.data(); }
  const double* data() const noexcept { return values.data(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::size_t index, const std::string& block)
      : std::runtime_error("non-finite gradient at parameter " + std::to_string(index) + " (" + block + ")"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, const std::string& detail)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           ": " + detail),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

namespace detail {

inline void check_sample(const ModelParams& params, const TrainSample& sample, std::span<const double> weights) {
  check_frames(params, sample.inputs, "loss");
  if (sample.targets.size() != weights.size())
    throw std::invalid_argument("loss: sample horizon " + std::to_string(sample.targets.size()) +
                                " does not match " + std::to_string(weights.size()) + " loss weights");
  for (const auto& t : sample.targets)
    if (t.empty()) throw std::invalid_argument("loss: empty target frame");
}

/// Forward rollout over the sample horizon with every intermediate kept.
struct RolloutTape {
  std::vector<FeatureTrace> features;  // frame f: inputs are 0..m-1, prediction s is frame m+s
  std::vector<GlobalFeatures> globals;
  std::vector<PredictTrace> predictions;
  std::vector<PointSet> outputs;
};

inline void record_rollout(const ModelParams& params, std::span<const PointSet> inputs, std::size_t steps,
                           RolloutTape& tape) {
  const std::size_t m = params.config.m_frames;
  tape.features.assign(m + steps - 1, {});
  tape.globals.assign(m + steps - 1, {});
  tape.predictions.assign(steps, {});
  tape.outputs.assign(steps, {});
  for (std::size_t f = 0; f < m; ++f) tape.globals[f] = extract_features(params, inputs[f], tape.features[f]);
  for (std::size_t s = 0; s < steps; ++s) {
    tape.outputs[s] = predict_next(params, std::span<const GlobalFeatures>(tape.globals).subspan(s, m),
                                   tape.predictions[s]);
    if (s + 1 < steps) tape.globals[m + s] = extract_features(params, tape.outputs[s], tape.features[m + s]);
  }
}

}  // namespace detail

/// Weighted sum of unnormalized Chamfer distances between each rollout step
/// and its target. Weights must be non-negative; TrainConfig enforces > 0.
inline double loss(const ModelParams& params, const TrainSample& sample, std::span<const double> weights,
                   double ortho_weight = 0.0) {
  detail::check_sample(params, sample, weights);
  detail::RolloutTape tape;
  detail::record_rollout(params, sample.inputs, weights.size(), tape);
  double total = 0.0;
  for (std::size_t s = 0; s < weights.size(); ++s) total += weights[s] * chamfer(tape.outputs[s], sample.targets[s]);
  for (const auto& ft : tape.features) total += feature_transform_penalty(ft, ortho_weight);
  return total;
}

inline double loss(const ModelParams& params, const TrainSample& sample, const TrainConfig& config) {
  return loss(params, sample, config.loss_weights, config.ortho_weight);
}

struct LossAndGrad {
  double loss = 0.0;
  GradBuffer grad;
};

struct BackwardOptions {
  double ortho_weight = 0.0;
  bool truncate_rollout = false;
  bool check_finite = true;
};

/// Adds the gradient of the sample loss into `grad` and returns the loss.
inline double accumulate_gradient(const ModelParams& params, const TrainSample& sample, std::span<const double> weights,
                                  double* grad, const BackwardOptions& opt = {}) {
  detail::check_sample(params, sample, weights);
  const std::size_t m = params.config.m_frames;
  const std::size_t steps = weights.size();
  detail::RolloutTape tape;
  detail::record_rollout(params, sample.inputs, steps, tape);

  double total = 0.0;
  std::vector<PointSet> d_out(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    auto cg = chamfer_with_gradient(tape.outputs[s], sample.targets[s]);
    total += weights[s] * cg.value;
    d_out[s] = std::move(cg.d_p);
    for (auto& v : d_out[s]) v = weights[s] * v;
  }

  const std::size_t frames = tape.features.size();
  std::vector<RowVector> d_global(frames, RowVector::Zero(static_cast<Eigen::Index>(params.config.k_global)));
  double penalty = 0.0;
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t produced = m + s;
    if (produced < frames) {
      // Every prediction that consumed this frame has already been processed.
      const PointSet dx =
          extract_features_backward(params, tape.features[produced], d_global[produced], grad, opt.ortho_weight, &penalty);
      if (!opt.truncate_rollout)
        for (std::size_t i = 0; i < dx.size(); ++i) d_out[s][i] += dx[i];
    }
    auto dg = predict_next_backward(params, tape.predictions[s], d_out[s], grad);
    for (std::size_t t = 0; t < m; ++t) d_global[s + t] += dg[t];
  }
  for (std::size_t f = 0; f < m; ++f)
    extract_features_backward(params, tape.features[f], d_global[f], grad, opt.ortho_weight, &penalty);
  total += penalty;

  if (opt.check_finite)
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!std::isfinite(grad[i])) throw NonFiniteGradient(i, params.layout.block_name(i));
  return total;
}

inline LossAndGrad backward(const ModelParams& params, const TrainSample& sample, std::span<const double> weights,
                            const BackwardOptions& opt = {}) {
  LossAndGrad r;
  r.grad = GradBuffer(params.size());
  r.loss = accumulate_gradient(params, sample, weights, r.grad.data(), opt);
  return r;
}

inline LossAndGrad backward(const ModelParams& params, const TrainSample& sample, const TrainConfig& config) {
  return backward(params, sample, config.loss_weights, {config.ortho_weight, config.truncate_rollout, true});
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(ModelParams& params, const GradBuffer& grad, AdamState& state, const TrainConfig& config) {
  const std::size_t n = params.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("adam_step: parameter, gradient and state lengths differ");
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  double* theta = params.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    theta[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_eps);
  }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(GradBuffer& grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad.values) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad.values) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when there is no validation split
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
};

using ProgressSink = std::function<void(const EpochStats&)>;

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded partition: floor(fraction * n) samples go to validation, always
/// leaving at least one training sample.
inline SplitIndices split_samples(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(derive_seed(seed, 0x5b1d)));
  seeded_shuffle(order, rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  SplitIndices s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

namespace detail {

/// Runs `work(i, slot)` for i in [0, count) over `jobs` threads. Item i is
/// always handled by slot i % jobs, so per-slot results are reproducible.
template <class Work>
void parallel_slots(std::size_t count, unsigned jobs, Work&& work) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) work(i, 0u);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned slot = 0; slot < jobs; ++slot) {
    pool.emplace_back([&, slot] {
      try {
        for (std::size_t i = slot; i < count; i += jobs) work(i, slot);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Mean loss over `indices` (forward only).
inline double mean_loss(const ModelParams& params, std::span<const TrainSample> samples,
                        std::span<const std::size_t> indices, const TrainConfig& config) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> values(indices.size());
  detail::parallel_slots(indices.size(), config.jobs,
                         [&](std::size_t i, unsigned) { values[i] = loss(params, samples[indices[i]], config); });
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(indices.size());
}

inline TrainResult train(const TrainConfig& config, std::span<const TrainSample> samples,
                         const ModelConfig& model_config, const ProgressSink& progress = {}) {
  config.validate();
  model_config.validate();
  if (samples.empty()) throw std::invalid_argument("train: no samples");

  TrainResult result;
  ModelParams params = init_params(model_config);
  for (const auto& s : samples) detail::check_sample(params, s, config.loss_weights);
  const SplitIndices split = split_samples(samples.size(), config.validation_fraction, config.seed);
  result.train_count = split.train.size();
  result.validation_count = split.validation.size();

  AdamState adam(params.size());
  const unsigned jobs = std::max(1u, config.jobs);
  std::vector<GradBuffer> slot_grads(jobs, GradBuffer(params.size()));
  std::vector<double> sample_losses;
  GradBuffer grad(params.size());
  const BackwardOptions opt{config.ortho_weight, config.truncate_rollout, true};

  double best = std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order = split.train;
  std::mt19937_64 rng(mix_seed(derive_seed(config.seed, 0xe90c)));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size, ++batch_index) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const std::size_t count = b1 - b0;
      for (auto& g : slot_grads) std::fill(g.values.begin(), g.values.end(), 0.0);
      sample_losses.assign(count, 0.0);
      try {
        detail::parallel_slots(count, jobs, [&](std::size_t i, unsigned slot) {
          sample_losses[i] = accumulate_gradient(params, samples[order[b0 + i]], config.loss_weights,
                                                 slot_grads[slot].data(), {opt.ortho_weight, opt.truncate_rollout, false});
        });
      } catch (const std::exception& e) {
        throw TrainingDiverged(epoch, batch_index, e.what());
      }
      double batch_loss = 0.0;
      for (double l : sample_losses) batch_loss += l;
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(epoch, batch_index, "non-finite loss");

      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        double sum = 0.0;
        for (const auto& g : slot_grads) sum += g[i];
        grad[i] = sum * inv;
        if (!std::isfinite(grad[i]))
          throw TrainingDiverged(epoch, batch_index,
                                 "non-finite gradient at parameter " + std::to_string(i) + " (" +
                                     params.layout.block_name(i) + ")");
      }
      if (config.grad_clip) clip_global_norm(grad, *config.grad_clip);
      adam_step(params, grad, adam, config);
      epoch_loss += batch_loss;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(order.size());
    stats.val_loss = mean_loss(params, samples, split.validation, config);
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double score = split.validation.empty() ? stats.train_loss : stats.val_loss;
    if (!std::isfinite(score)) throw TrainingDiverged(epoch, batch_index, "non-finite epoch loss");
    if (score < best) {
      best = score;
      result.params = params;
      result.best_epoch = epoch;
    }
    result.history.push_back(stats);
    if (progress) progress(stats);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckConfig {
  ModelConfig model = ModelConfig::tiny();
  std::size_t parameters = 1000;  // 0 checks every parameter
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  double denominator_floor = 1e-8;
  double perturbation = 0.3;  // moves T-net outputs away from the identity
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t total_parameters = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> failing;
  std::vector<std::string> failing_blocks;  // one entry per distinct block, in index order
  bool passed = true;
};

/// Hook applied to the analytic gradient before comparison (fault injection).
using GradCorruption = std::function<void(const ModelParams&, GradBuffer&)>;

/// Random parameters and a random sample in the unit square for `config`.
inline std::pair<ModelParams, TrainSample> grad_check_fixture(const ModelConfig& config, double perturbation,
                                                              std::uint64_t seed, std::size_t horizon = kRolloutHorizon) {
  ModelConfig c = config;
  c.seed = seed;
  ModelParams params = init_params(c);
  std::mt19937_64 rng(mix_seed(derive_seed(seed, 0x9c)));
  for (auto& v : params.values) v += uniform_real(rng, -perturbation, perturbation);
  TrainSample sample;
  auto frame = [&] {
    PointSet f(c.n_points);
    for (auto& p : f) p = {uniform_real(rng), uniform_real(rng)};
    return f;
  };
  for (std::size_t t = 0; t < c.m_frames; ++t) sample.inputs.push_back(frame());
  for (std::size_t t = 0; t < horizon; ++t) sample.targets.push_back(frame());
  return {std::move(params), std::move(sample)};
}

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport grad_check(const GradCheckConfig& gc, const GradCorruption& corrupt = {}) {
  const TrainConfig tc;
  auto [params, sample] = grad_check_fixture(gc.model, gc.perturbation, gc.seed, tc.rollout_horizon);
  GradBuffer grad = backward(params, sample, tc.loss_weights).grad;
  if (corrupt) corrupt(params, grad);

  GradCheckReport r;
  r.total_parameters = params.size();
  std::vector<std::size_t> indices(params.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (gc.parameters != 0 && gc.parameters < indices.size()) {
    std::mt19937_64 rng(mix_seed(derive_seed(gc.seed, 0x6c)));
    seeded_shuffle(indices, rng);
    indices.resize(gc.parameters);
    std::sort(indices.begin(), indices.end());
  }
  double sum = 0.0;
  for (std::size_t i : indices) {
    const double saved = params.values[i];
    params.values[i] = saved + gc.epsilon;
    const double up = loss(params, sample, tc.loss_weights);
    params.values[i] = saved - gc.epsilon;
    const double down = loss(params, sample, tc.loss_weights);
    params.values[i] = saved;
    const double numeric = (up - down) / (2.0 * gc.epsilon);
    const double err = relative_error(grad[i], numeric, gc.denominator_floor);
    sum += err;
    if (err > r.max_rel_error || r.checked == 0) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
    if (!(err < gc.tolerance)) {
      r.failing.push_back(i);
      const std::string block = params.layout.block_name(i);
      if (r.failing_blocks.empty() || r.failing_blocks.back() != block) r.failing_blocks.push_back(block);
    }
    ++r.checked;
  }
  r.mean_rel_error = r.checked ? sum / static_cast<double>(r.checked) : 0.0;
  r.passed = r.failing.empty();
  return r;
}

}  // namespace tpnet
