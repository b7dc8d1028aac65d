#pragma once

// Evaluation protocol: rollout errors at fixed horizons, a constant-velocity
// rigid baseline, timing probes, and per-step export for inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpnet/corpus_io.hpp"
#include "tpnet/datagen.hpp"
#include "tpnet/learn.hpp"
#include "tpnet/metrics.hpp"
#include "tpnet/model.hpp"

namespace tpnet {

struct HorizonErrors {
  std::size_t horizon = 0;
  double position = 0.0;
  double shape = 0.0;
};

struct ErrorReport {
  std::string model;
  std::string ordering;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  std::size_t trajectories = 0;
  std::size_t skipped = 0;
  std::vector<HorizonErrors> horizons;

  const HorizonErrors& at(std::size_t horizon) const {
    for (const auto& h : horizons)
      if (h.horizon == horizon) return h;
    throw std::out_of_range("ErrorReport: no horizon " + std::to_string(horizon));
  }
};

inline void to_json(nlohmann::json& j, const HorizonErrors& h) {
  j = {{"horizon", h.horizon}, {"position_error", h.position}, {"shape_error", h.shape}};
}
inline void from_json(const nlohmann::json& j, HorizonErrors& h) {
  j.at("horizon").get_to(h.horizon);
  j.at("position_error").get_to(h.position);
  j.at("shape_error").get_to(h.shape);
}
inline void to_json(nlohmann::json& j, const ErrorReport& r) {
  j = {{"model", r.model},           {"ordering", r.ordering}, {"seed", r.seed},         {"m", r.m},
       {"trajectories", r.trajectories}, {"skipped", r.skipped}, {"horizons", r.horizons}};
}
inline void from_json(const nlohmann::json& j, ErrorReport& r) {
  j.at("model").get_to(r.model);
  j.at("ordering").get_to(r.ordering);
  j.at("seed").get_to(r.seed);
  j.at("m").get_to(r.m);
  j.at("trajectories").get_to(r.trajectories);
  j.at("skipped").get_to(r.skipped);
  j.at("horizons").get_to(r.horizons);
}

/// (trajectory index, m input frames, steps) -> `steps` predicted frames.
using RolloutFn = std::function<std::vector<PointSet>(std::size_t, std::span<const PointSet>, std::size_t)>;

/// Inputs and ground truth for one trajectory, in normalized coordinates.
/// Each input frame is reordered independently (per-frame shuffle seeds).
inline std::vector<PointSet> evaluation_inputs(const Trajectory& traj, std::size_t trajectory_index, std::size_t m,
                                               const OrderingMethod& ordering) {
  const auto& cfg = traj.meta.config;
  const OrderingMethod per_traj = ordering.child(trajectory_index);
  std::vector<PointSet> inputs;
  for (std::size_t t = 0; t < m; ++t) {
    const PointSet p = normalize(traj.frames[t], cfg.box_min, cfg.box_max).points;
    inputs.push_back(apply_ordering(p, per_traj.child(t)));
  }
  return inputs;
}

inline ErrorReport evaluate_with(const RolloutFn& rollout_fn, std::span<const Trajectory> corpus, std::size_t m,
                                 std::span<const std::size_t> horizons, const OrderingMethod& ordering,
                                 unsigned jobs = 1) {
  if (horizons.empty()) throw std::invalid_argument("evaluate: no horizons");
  if (m == 0) throw std::invalid_argument("evaluate: m must be >= 1");
  for (auto h : horizons)
    if (h == 0) throw std::invalid_argument("evaluate: horizons must be >= 1");
  const std::size_t max_h = *std::max_element(horizons.begin(), horizons.end());

  ErrorReport report;
  report.ordering = to_string(ordering.kind);
  report.seed = ordering.seed;
  report.m = m;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].frames.size() >= m + max_h)
      usable.push_back(i);
    else
      ++report.skipped;
  }
  report.trajectories = usable.size();

  // per_traj[u][h] = {E_p, E_s}
  std::vector<std::vector<std::pair<double, double>>> per_traj(usable.size());
  detail::parallel_slots(usable.size(), jobs, [&](std::size_t u, unsigned) {
    const std::size_t i = usable[u];
    const Trajectory& traj = corpus[i];
    const auto& cfg = traj.meta.config;
    const auto inputs = evaluation_inputs(traj, i, m, ordering);
    const auto pred = rollout_fn(i, inputs, max_h);
    if (pred.size() < max_h) throw std::runtime_error("evaluate: rollout returned too few frames");
    for (auto h : horizons) {
      const PointSet truth = normalize(traj.frames[m + h - 1], cfg.box_min, cfg.box_max).points;
      per_traj[u].emplace_back(position_error(pred[h - 1], truth), shape_error(pred[h - 1], truth));
    }
  });

  for (std::size_t k = 0; k < horizons.size(); ++k) {
    HorizonErrors e;
    e.horizon = horizons[k];
    for (const auto& row : per_traj) {
      e.position += row[k].first;
      e.shape += row[k].second;
    }
    if (!per_traj.empty()) {
      e.position /= static_cast<double>(per_traj.size());
      e.shape /= static_cast<double>(per_traj.size());
    } else {
      e.position = e.shape = std::numeric_limits<double>::quiet_NaN();
    }
    report.horizons.push_back(e);
  }
  return report;
}

inline ErrorReport evaluate(const ModelParams& params, std::span<const Trajectory> corpus,
                            std::span<const std::size_t> horizons, const OrderingMethod& ordering, unsigned jobs = 1) {
  auto fn = [&](std::size_t, std::span<const PointSet> inputs, std::size_t steps) {
    return rollout(params, inputs, steps);
  };
  auto r = evaluate_with(fn, corpus, params.config.m_frames, horizons, ordering, jobs);
  r.model = "tpnet";
  return r;
}

/// Constant-velocity rigid translation of the last input frame, using the
/// centroid displacement between the last two frames, clamped to [0,1]^2.
inline std::vector<PointSet> baseline_rigid(std::span<const PointSet> frames, std::size_t steps) {
  if (frames.size() < 2) throw std::invalid_argument("baseline_rigid: needs at least 2 frames");
  const PointSet& last = frames.back();
  const Vec2 velocity = centroid(last) - centroid(frames[frames.size() - 2]);
  std::vector<PointSet> out;
  out.reserve(steps);
  for (std::size_t s = 1; s <= steps; ++s) {
    const Vec2 offset = static_cast<double>(s) * velocity;
    PointSet p;
    p.reserve(last.size());
    for (const auto& q : last)
      p.push_back({std::clamp(q.x + offset.x, 0.0, 1.0), std::clamp(q.y + offset.y, 0.0, 1.0)});
    out.push_back(std::move(p));
  }
  return out;
}

inline ErrorReport evaluate_baseline_rigid(std::span<const Trajectory> corpus, std::size_t m,
                                           std::span<const std::size_t> horizons, const OrderingMethod& ordering) {
  auto fn = [](std::size_t, std::span<const PointSet> inputs, std::size_t steps) {
    return baseline_rigid(inputs, steps);
  };
  auto r = evaluate_with(fn, corpus, m, horizons, ordering);
  r.model = "baseline_rigid";
  return r;
}

// ---------------------------------------------------------------------------
// Probes

struct ScalingRow {
  std::size_t n = 0;
  double median_seconds = 0.0;
  double mean_seconds = 0.0;
  std::size_t memory_bytes = 0;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();
};

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxx > 0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

/// Parameters plus the largest per-frame activations of one forward pass.
inline std::size_t forward_memory_estimate(const ModelConfig& c) {
  std::size_t per_point = 2;
  for (auto w : c.point_mlp1) per_point += w;
  for (auto w : c.point_mlp2) per_point += w;
  for (auto w : c.tnet_mlp) per_point += 2 * w;
  const std::size_t lstm = c.k_global * c.m_frames * 2 * c.lstm_hidden * (c.lstm_layers + 4);
  return sizeof(double) * (param_count(c) + c.m_frames * c.n_points * per_point + lstm);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::vector<PointSet> random_frames(std::size_t m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed));
  std::vector<PointSet> frames(m, PointSet(n));
  for (auto& f : frames)
    for (auto& p : f) p = {uniform_real(rng), uniform_real(rng)};
  return frames;
}

/// Forward-pass wall time over N with every other width fixed. Each
/// repetition times every N once, in order, so slow periods on a shared
/// machine affect all sizes alike; each timing averages enough calls to last
/// at least `min_seconds`. Rows report the median over repetitions.
inline ScalingTable scaling_probe(const ModelConfig& base, std::span<const std::size_t> sizes,
                                  std::size_t repetitions, std::size_t warmup = 2, double min_seconds = 0.02) {
  ScalingTable table;
  if (repetitions == 0 || sizes.empty()) return table;
  using clock = std::chrono::steady_clock;
  struct Entry {
    ModelConfig config;
    ModelParams params;
    std::vector<PointSet> frames;
    std::size_t inner = 1;
    std::vector<double> times;
  };
  std::vector<Entry> entries;
  for (auto n : sizes) {
    Entry e;
    e.config = base;
    e.config.n_points = n;
    e.params = init_params(e.config);
    e.frames = random_frames(e.config.m_frames, n, derive_seed(e.config.seed, n));
    for (std::size_t w = 0; w < warmup; ++w) (void)forward(e.params, e.frames);
    const auto t0 = clock::now();
    (void)forward(e.params, e.frames);
    const double once = std::chrono::duration<double>(clock::now() - t0).count();
    e.inner = static_cast<std::size_t>(std::ceil(min_seconds / std::max(once, 1e-9)));
    e.inner = std::clamp<std::size_t>(e.inner, 1, 10000);
    entries.push_back(std::move(e));
  }
  for (std::size_t r = 0; r < repetitions; ++r) {
    for (auto& e : entries) {
      const auto t0 = clock::now();
      for (std::size_t i = 0; i < e.inner; ++i) (void)forward(e.params, e.frames);
      e.times.push_back(std::chrono::duration<double>(clock::now() - t0).count() / static_cast<double>(e.inner));
    }
  }
  std::vector<double> xs, ys;
  for (const auto& e : entries) {
    ScalingRow row;
    row.n = e.config.n_points;
    row.median_seconds = median(e.times);
    for (double t : e.times) row.mean_seconds += t;
    row.mean_seconds /= static_cast<double>(e.times.size());
    row.memory_bytes = forward_memory_estimate(e.config);
    table.rows.push_back(row);
    xs.push_back(static_cast<double>(row.n));
    ys.push_back(row.median_seconds);
  }
  table.slope = log_log_slope(xs, ys);
  return table;
}

inline const std::vector<std::size_t>& default_scaling_sizes() {
  static const std::vector<std::size_t> sizes{30, 60, 120, 240, 480};
  return sizes;
}

/// Predictions per second of back-to-back rollouts for about `seconds`.
inline double throughput_probe(const ModelParams& params, std::span<const PointSet> frames, double seconds,
                               std::size_t chunk = 40) {
  if (!(seconds > 0.0)) throw std::invalid_argument("throughput_probe: seconds must be positive");
  (void)rollout(params, frames, 1);
  std::size_t predictions = 0;
  const auto t0 = std::chrono::steady_clock::now();
  double elapsed = 0.0;
  do {
    predictions += rollout(params, frames, chunk).size();
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } while (elapsed < seconds);
  return static_cast<double>(predictions) / elapsed;
}

// ---------------------------------------------------------------------------
// Export

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string svg_frame(std::span<const Vec2> truth, std::span<const Vec2> pred, std::size_t step) {
  constexpr double size = 400.0;
  auto px = [&](Vec2 p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f", p.x * size, (1.0 - p.y) * size);
    return std::string(buf);
  };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"400\" height=\"400\" fill=\"white\" stroke=\"black\"/>\n";
  s += "<polygon fill=\"#1f77b4\" fill-opacity=\"0.25\" stroke=\"#1f77b4\" points=\"";
  for (const auto& p : truth) s += px(p) + " ";
  s += "\"/>\n";
  for (const auto& p : truth) {
    const auto c = px(p);
    const auto comma = c.find(',');
    s += "<circle cx=\"" + c.substr(0, comma) + "\" cy=\"" + c.substr(comma + 1) + "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  for (const auto& p : pred) {
    const auto c = px(p);
    const auto comma = c.find(',');
    s += "<circle cx=\"" + c.substr(0, comma) + "\" cy=\"" + c.substr(comma + 1) + "\" r=\"3\" fill=\"#d62728\"/>\n";
  }
  s += "<text x=\"8\" y=\"20\" font-family=\"monospace\" font-size=\"14\">step " + std::to_string(step) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace detail

struct ExportRow {
  std::size_t step = 0;
  double position = 0.0;
  double shape = 0.0;
};

/// Writes step_0001.svg ... (truth in blue, predictions in red), errors.csv
/// with per-step E_p/E_s, and rollout.jsonl with the raw frames.
inline std::vector<ExportRow> export_rollout(std::span<const PointSet> truth, std::span<const PointSet> predicted,
                                             const std::filesystem::path& dir) {
  if (predicted.empty()) throw std::invalid_argument("export_rollout: no predictions");
  if (truth.size() != predicted.size())
    throw std::invalid_argument("export_rollout: ground truth and predictions differ in length");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("export_rollout: cannot create '" + dir.string() + "': " + ec.message());

  std::vector<ExportRow> rows;
  std::ofstream csv(dir / "errors.csv", std::ios::trunc);
  std::ofstream raw(dir / "rollout.jsonl", std::ios::trunc);
  if (!csv || !raw) throw std::runtime_error("export_rollout: cannot write into '" + dir.string() + "'");
  csv << "step,position_error,shape_error\n";
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    ExportRow row{s + 1, position_error(predicted[s], truth[s]), shape_error(predicted[s], truth[s])};
    rows.push_back(row);
    csv << row.step << ',' << detail::fmt_double(row.position) << ',' << detail::fmt_double(row.shape) << '\n';
    raw << nlohmann::json{{"step", row.step}, {"truth", truth[s]}, {"pred", predicted[s]}}.dump() << '\n';
    char name[32];
    std::snprintf(name, sizeof name, "step_%04zu.svg", row.step);
    std::ofstream svg(dir / name, std::ios::trunc);
    svg << detail::svg_frame(truth[s], predicted[s], row.step);
    if (!svg) throw std::runtime_error("export_rollout: cannot write '" + (dir / name).string() + "'");
  }
  if (!csv || !raw) throw std::runtime_error("export_rollout: write failed in '" + dir.string() + "'");
  return rows;
}

}  // namespace tpnet
