#pragma once

// Command-line front end: gen-data, train, eval, rollout, gradcheck, probe.
//
// Exit codes
//   0  success
//   1  I/O or corpus format error
//   2  bad flags or arguments
//   3  simulator divergence
//   4  non-finite loss or gradient during training
//   5  checkpoint unreadable, or checkpoint/data config mismatch
//   6  gradient check failed

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tpnet/checkpoint.hpp"
#include "tpnet/corpus_io.hpp"
#include "tpnet/datagen.hpp"
#include "tpnet/evalsuite.hpp"
#include "tpnet/learn.hpp"
#include "tpnet/manifest.hpp"
#include "tpnet/model.hpp"

namespace tpnet::cli {

enum ExitCode : int {
  kOk = 0,
  kIoError = 1,
  kBadFlags = 2,
  kDivergence = 3,
  kNonFinite = 4,
  kConfigMismatch = 5,
  kCheckFailed = 6,
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::filesystem::path sidecar(const std::string& file) { return file + ".manifest.json"; }

inline ModelConfig preset(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "default") return ModelConfig{};
  if (name == "tiny") return ModelConfig::tiny();
  throw UsageError("unknown preset '" + name + "'");
}

inline OrderingMethod ordering(const std::string& name, std::uint64_t seed) {
  return {parse_ordering(name), seed};
}

/// Every trajectory must carry the particle count the model was built for.
inline void check_compatible(const ModelParams& params, const Trajectory& traj, const std::string& where) {
  if (traj.meta.config.n == params.config.n_points) return;
  throw ConfigMismatch("checkpoint config " + nlohmann::json(params.config).dump() + " expects " +
                       std::to_string(params.config.n_points) + " points, but " + where + " has config " +
                       nlohmann::json(traj.meta.config).dump() + " with n=" + std::to_string(traj.meta.config.n));
}

inline ModelParams load_model(const std::string& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("'" + path + "' does not exist");
  return load_checkpoint(path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  std::size_t trajectories = 0;
  std::size_t steps = 300;
  std::uint64_t seed = 0;
  std::string out;
  bool paper_grid = false;
  std::string config;
  std::size_t skip = 0;
  unsigned jobs = 1;
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.subcommand = "gen-data";
  manifest.flags = {{"trajectories", o.trajectories}, {"steps", o.steps}, {"seed", o.seed},  {"out", o.out},
                    {"paper_grid", o.config.empty()}, {"config", o.config}, {"skip", o.skip}, {"jobs", o.jobs}};
  manifest.seeds = {{"master", o.seed}};

  WorldConfig world;
  InitGrid grid = InitGrid::paper();
  if (!o.config.empty()) {
    const auto j = detail::read_json_file(o.config);
    try {
      if (j.contains("world")) j.at("world").get_to(world);
      if (j.contains("grid")) j.at("grid").get_to(grid);
    } catch (const std::exception& e) {
      throw UsageError("--config " + o.config + ": " + e.what());
    }
    manifest.inputs.push_back(o.config);
  }
  manifest.flags["world"] = world;
  manifest.flags["grid"] = grid;

  const auto corpus = generate_corpus(world, grid, o.trajectories, o.steps, o.seed, o.skip, o.jobs);
  for (const auto& p : write_corpus(o.out, corpus)) manifest.outputs.push_back(p.string());
  write_manifest(std::filesystem::path(o.out) / "manifest.json", manifest);
  out << "wrote " << corpus.size() << " trajectories of " << o.steps << " frames to " << o.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data;
  std::size_t m = 5;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string out;
  std::string preset = "desk";
  std::string model_config;
  unsigned jobs = 1;
  double grad_clip = 0.0;  // 0 disables clipping
  double ortho_weight = 0.0;
  double validation = 0.1;
  std::size_t collision = 15;
  std::size_t normal = 5;
  bool truncate_rollout = false;
  std::string log;
};

/// Windows from every trajectory; trajectory i draws with derive_seed(seed, i).
inline std::vector<TrainSample> collect_samples(std::span<const Trajectory> corpus, const SubsequenceSpec& spec,
                                                std::uint64_t seed, std::size_t* shortfall = nullptr) {
  std::vector<TrainSample> samples;
  std::size_t missing = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto set = sample_subsequences(corpus[i], i, spec, derive_seed(seed, i));
    missing += set.collision_shortfall + set.normal_shortfall;
    for (auto& s : set.samples) samples.push_back(std::move(s));
  }
  if (shortfall) *shortfall = missing;
  return samples;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  RunManifest manifest;
  manifest.subcommand = "train";
  const std::string log_path = o.log.empty() ? o.out + ".log.csv" : o.log;
  manifest.flags = {{"data", o.data},
                    {"m", o.m},
                    {"epochs", o.epochs},
                    {"batch", o.batch},
                    {"lr", o.lr},
                    {"seed", o.seed},
                    {"out", o.out},
                    {"preset", o.preset},
                    {"model_config", o.model_config},
                    {"jobs", o.jobs},
                    {"grad_clip", o.grad_clip},
                    {"ortho_weight", o.ortho_weight},
                    {"validation", o.validation},
                    {"collision", o.collision},
                    {"normal", o.normal},
                    {"truncate_rollout", o.truncate_rollout},
                    {"log", log_path}};
  manifest.seeds = {{"master", o.seed}};
  manifest.inputs.push_back(o.data);

  const auto corpus = read_corpus(o.data);
  if (corpus.empty()) throw IoError("no trajectory files in '" + o.data + "'");
  const std::size_t n = corpus.front().meta.config.n;
  for (std::size_t i = 1; i < corpus.size(); ++i)
    if (corpus[i].meta.config.n != n)
      throw ConfigMismatch("trajectory " + std::to_string(i) + " has " + std::to_string(corpus[i].meta.config.n) +
                           " particles but trajectory 0 has " + std::to_string(n));

  ModelConfig mc = detail::preset(o.preset);
  if (!o.model_config.empty()) {
    const auto j = detail::read_json_file(o.model_config);
    try {
      j.get_to(mc);
    } catch (const std::exception& e) {
      throw UsageError("--model-config " + o.model_config + ": " + e.what());
    }
    manifest.inputs.push_back(o.model_config);
  }
  mc.n_points = n;
  mc.m_frames = o.m;
  mc.seed = o.seed;
  mc.validate();
  manifest.flags["model"] = mc;

  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.seed = o.seed;
  if (o.grad_clip > 0.0) tc.grad_clip = o.grad_clip;
  tc.ortho_weight = o.ortho_weight;
  tc.validation_fraction = o.validation;
  tc.truncate_rollout = o.truncate_rollout;
  tc.jobs = o.jobs;
  tc.validate();

  SubsequenceSpec spec;
  spec.m = o.m;
  spec.horizon = tc.rollout_horizon;
  spec.n_collision = o.collision;
  spec.n_normal = o.normal;
  std::size_t shortfall = 0;
  const auto samples = collect_samples(corpus, spec, o.seed, &shortfall);
  if (samples.empty()) throw UsageError("no trajectory in '" + o.data + "' is long enough for a training window");
  out << samples.size() << " windows of length " << spec.window() << " from " << corpus.size() << " trajectories";
  if (shortfall) out << " (" << shortfall << " short of the requested count)";
  out << '\n';

  detail::write_text(log_path, "epoch,train_loss,val_loss\n");
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write '" + log_path + "'");
  auto progress = [&](const EpochStats& s) {
    log << s.epoch << ',' << tpnet::detail::fmt_double(s.train_loss) << ',' << tpnet::detail::fmt_double(s.val_loss)
        << '\n'
        << std::flush;
    err << "epoch " << s.epoch + 1 << '/' << o.epochs << "  train " << s.train_loss << "  val " << s.val_loss << "  ("
        << std::fixed << std::setprecision(1) << s.wall_seconds << " s)" << std::defaultfloat << std::setprecision(6)
        << '\n';
  };
  const TrainResult result = train(tc, samples, mc, progress);
  if (!log) throw IoError("write failed for '" + log_path + "'");

  if (std::filesystem::path(o.out).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(o.out).parent_path());
  save_checkpoint(o.out, result.params);
  manifest.outputs = {o.out, log_path};
  manifest.results = {{"best_epoch", result.best_epoch},
                      {"train_samples", result.train_count},
                      {"validation_samples", result.validation_count},
                      {"parameters", result.params.size()},
                      {"wall_seconds", result.history.empty() ? 0.0 : result.history.back().wall_seconds}};
  write_manifest(detail::sidecar(o.out), manifest);
  out << "saved epoch " << result.best_epoch + 1 << " parameters to " << o.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string model;
  std::string data;
  std::vector<std::size_t> horizons{40, 80};
  std::string ordering = "identity";
  std::uint64_t seed = 0;
  std::string report;
  std::string baseline_report;
  unsigned jobs = 1;
};

inline void print_report(std::ostream& out, const ErrorReport& r) {
  out << r.model << " (" << r.ordering << ", " << r.trajectories << " trajectories";
  if (r.skipped) out << ", " << r.skipped << " too short";
  out << ")\n";
  for (const auto& h : r.horizons)
    out << "  horizon " << h.horizon << ": position_error " << h.position << "  shape_error " << h.shape << '\n';
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.subcommand = "eval";
  manifest.flags = {{"model", o.model},   {"data", o.data},       {"horizons", o.horizons},
                    {"ordering", o.ordering}, {"seed", o.seed},   {"report", o.report},
                    {"baseline", o.baseline_report}, {"jobs", o.jobs}};
  manifest.seeds = {{"ordering", o.seed}};
  manifest.inputs = {o.model, o.data};

  const ModelParams params = detail::load_model(o.model);
  const auto corpus = read_corpus(o.data);
  if (corpus.empty()) throw IoError("no trajectory files in '" + o.data + "'");
  for (std::size_t i = 0; i < corpus.size(); ++i)
    detail::check_compatible(params, corpus[i], "trajectory " + std::to_string(i) + " of '" + o.data + "'");

  const OrderingMethod ordering = detail::ordering(o.ordering, o.seed);
  const ErrorReport report = evaluate(params, corpus, o.horizons, ordering, o.jobs);
  detail::write_text(o.report, nlohmann::json(report).dump(2) + "\n");
  manifest.outputs.push_back(o.report);
  print_report(out, report);

  if (!o.baseline_report.empty()) {
    const ErrorReport base = evaluate_baseline_rigid(corpus, params.config.m_frames, o.horizons, ordering);
    detail::write_text(o.baseline_report, nlohmann::json(base).dump(2) + "\n");
    manifest.outputs.push_back(o.baseline_report);
    print_report(out, base);
  }
  write_manifest(detail::sidecar(o.report), manifest);
  return kOk;
}

// ---------------------------------------------------------------------------
// rollout

struct RolloutOptions {
  std::string model;
  std::string traj;
  std::size_t start = 0;
  std::size_t steps = 80;
  std::string out;
  std::string ordering = "identity";
  std::uint64_t seed = 0;
};

inline int cmd_rollout(const RolloutOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.subcommand = "rollout";
  manifest.flags = {{"model", o.model}, {"traj", o.traj},         {"start", o.start}, {"steps", o.steps},
                    {"out", o.out},     {"ordering", o.ordering}, {"seed", o.seed}};
  manifest.seeds = {{"ordering", o.seed}};
  manifest.inputs = {o.model, o.traj};

  const ModelParams params = detail::load_model(o.model);
  const Trajectory traj = read_trajectory(o.traj);
  detail::check_compatible(params, traj, "'" + o.traj + "'");
  const std::size_t m = params.config.m_frames;
  if (o.start + m + o.steps > traj.size())
    throw UsageError("--start " + std::to_string(o.start) + " with --steps " + std::to_string(o.steps) + " needs " +
                     std::to_string(o.start + m + o.steps) + " frames but '" + o.traj + "' has " +
                     std::to_string(traj.size()));

  const auto& cfg = traj.meta.config;
  const OrderingMethod ordering = detail::ordering(o.ordering, o.seed);
  std::vector<PointSet> inputs, truth;
  for (std::size_t t = 0; t < m; ++t)
    inputs.push_back(apply_ordering(normalize(traj.frames[o.start + t], cfg.box_min, cfg.box_max).points,
                                    ordering.child(t)));
  for (std::size_t s = 0; s < o.steps; ++s)
    truth.push_back(normalize(traj.frames[o.start + m + s], cfg.box_min, cfg.box_max).points);
  const auto predicted = rollout(params, inputs, o.steps);
  const auto rows = export_rollout(truth, predicted, o.out);

  manifest.outputs = {(std::filesystem::path(o.out) / "errors.csv").string(),
                      (std::filesystem::path(o.out) / "rollout.jsonl").string()};
  write_manifest(std::filesystem::path(o.out) / "manifest.json", manifest);
  out << "wrote " << rows.size() << " frames to " << o.out << "; final step position_error " << rows.back().position
      << " shape_error " << rows.back().shape << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckOptions {
  double tolerance = 1e-4;
  std::size_t params = 1000;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  std::string report;
};

inline int cmd_gradcheck(const GradCheckOptions& o, std::ostream& out) {
  GradCheckConfig gc;
  gc.tolerance = o.tolerance;
  gc.parameters = o.params;
  gc.seed = o.seed;
  gc.epsilon = o.epsilon;
  const GradCheckReport r = grad_check(gc);
  out << "checked " << r.checked << " of " << r.total_parameters << " parameters\n"
      << "max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error << " (mean "
      << r.mean_rel_error << ", tolerance " << o.tolerance << ")\n"
      << std::defaultfloat << std::setprecision(6);
  if (r.passed) {
    out << "PASS\n";
  } else {
    out << "FAIL: " << r.failing.size() << " parameters above tolerance in";
    for (const auto& b : r.failing_blocks) out << ' ' << b;
    out << '\n';
  }
  if (!o.report.empty()) {
    RunManifest manifest;
    manifest.subcommand = "gradcheck";
    manifest.flags = {{"tolerance", o.tolerance}, {"params", o.params}, {"seed", o.seed}, {"epsilon", o.epsilon},
                      {"report", o.report}};
    manifest.seeds = {{"fixture", o.seed}};
    const nlohmann::json j = {{"checked", r.checked},
                              {"total_parameters", r.total_parameters},
                              {"max_rel_error", r.max_rel_error},
                              {"mean_rel_error", r.mean_rel_error},
                              {"worst_index", r.worst_index},
                              {"failing", r.failing},
                              {"failing_blocks", r.failing_blocks},
                              {"passed", r.passed}};
    detail::write_text(o.report, j.dump(2) + "\n");
    manifest.outputs.push_back(o.report);
    write_manifest(detail::sidecar(o.report), manifest);
  }
  return r.passed ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOptions {
  bool scaling = false;
  bool throughput = false;
  std::string preset = "desk";
  std::size_t reps = 9;
  double seconds = 0.1;
  std::vector<std::size_t> sizes = default_scaling_sizes();
  std::size_t n = 30;
  std::string model;
  std::uint64_t seed = 0;
  std::string out;
};

inline int cmd_probe(const ProbeOptions& o, std::ostream& out) {
  if (o.scaling == o.throughput) throw UsageError("probe needs exactly one of --scaling or --throughput");
  RunManifest manifest;
  manifest.subcommand = "probe";
  manifest.flags = {{"scaling", o.scaling}, {"throughput", o.throughput}, {"preset", o.preset},
                    {"reps", o.reps},       {"seconds", o.seconds},       {"sizes", o.sizes},
                    {"n", o.n},             {"model", o.model},           {"seed", o.seed},
                    {"out", o.out}};
  manifest.seeds = {{"frames", o.seed}};
  nlohmann::json result;

  if (o.scaling) {
    ModelConfig base = detail::preset(o.preset);
    base.seed = o.seed;
    base.validate();
    const ScalingTable table = scaling_probe(base, o.sizes, o.reps, 2, o.seconds);
    out << std::setw(6) << "n" << std::setw(16) << "median_s" << std::setw(16) << "mean_s" << std::setw(14)
        << "memory_bytes" << '\n';
    result["rows"] = nlohmann::json::array();
    for (const auto& row : table.rows) {
      out << std::setw(6) << row.n << std::setw(16) << row.median_seconds << std::setw(16) << row.mean_seconds
          << std::setw(14) << row.memory_bytes << '\n';
      result["rows"].push_back({{"n", row.n},
                                {"median_seconds", row.median_seconds},
                                {"mean_seconds", row.mean_seconds},
                                {"memory_bytes", row.memory_bytes}});
    }
    out << "slope " << table.slope << '\n';
    result["slope"] = table.slope;
  } else {
    ModelParams params;
    if (!o.model.empty()) {
      params = detail::load_model(o.model);
      manifest.inputs.push_back(o.model);
    } else {
      ModelConfig c = detail::preset(o.preset);
      c.n_points = o.n;
      c.seed = o.seed;
      c.validate();
      params = init_params(c);
    }
    const auto frames = random_frames(params.config.m_frames, params.config.n_points, o.seed);
    const double rate = throughput_probe(params, frames, o.seconds);
    out << "predictions_per_second " << rate << '\n';
    result = {{"n", params.config.n_points}, {"predictions_per_second", rate}};
  }
  if (!o.out.empty()) {
    detail::write_text(o.out, result.dump(2) + "\n");
    manifest.outputs.push_back(o.out);
    write_manifest(detail::sidecar(o.out), manifest);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// entry point

/// Runs `body`, mapping library exceptions onto the documented exit codes.
template <class Body>
int guarded(Body&& body, std::ostream& err) {
  auto fail = [&](int code, const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return code;
  };
  try {
    return body();
  } catch (const CorpusGenerationError& e) {
    return fail(kDivergence, e);
  } catch (const SimulationDivergence& e) {
    return fail(kDivergence, e);
  } catch (const TrainingDiverged& e) {
    return fail(kNonFinite, e);
  } catch (const NonFiniteGradient& e) {
    return fail(kNonFinite, e);
  } catch (const CheckpointError& e) {
    return fail(kConfigMismatch, e);
  } catch (const ConfigMismatch& e) {
    return fail(kConfigMismatch, e);
  } catch (const CorpusFormatError& e) {
    return fail(kIoError, e);
  } catch (const IoError& e) {
    return fail(kIoError, e);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(kIoError, e);
  } catch (const std::invalid_argument& e) {
    return fail(kBadFlags, e);
  } catch (const std::out_of_range& e) {
    return fail(kBadFlags, e);
  } catch (const std::exception& e) {
    return fail(kIoError, e);
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-set trajectory prediction toolkit", "tpnet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.footer(
      "Exit codes: 0 ok, 1 I/O error, 2 bad flags, 3 simulator divergence, 4 non-finite loss,\n"
      "            5 checkpoint or config mismatch, 6 gradient check failed");
  const std::vector<std::string> orderings{"identity", "asc-x", "desc-y", "shuffle"};
  const std::vector<std::string> presets{"desk", "default", "tiny"};
  const auto size_range = CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max());

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Simulate a corpus of soft-body trajectories");
  gen_cmd->add_option("--trajectories", gen.trajectories, "Number of trajectories")->required()->check(size_range);
  gen_cmd->add_option("--steps", gen.steps, "Frames per trajectory")->capture_default_str()->check(size_range);
  gen_cmd->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  auto* paper_flag = gen_cmd->add_flag("--paper-grid", gen.paper_grid, "Use the built-in launch grid (default)");
  gen_cmd->add_option("--config", gen.config, "JSON file with optional \"world\" and \"grid\" objects")
      ->check(CLI::ExistingFile)
      ->excludes(paper_flag);
  gen_cmd->add_option("--skip", gen.skip, "Grid permutation offset")->capture_default_str();
  gen_cmd->add_option("--jobs", gen.jobs, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a corpus");
  train_cmd->add_option("--data", tr.data, "Corpus directory")->required();
  train_cmd->add_option("--m", tr.m, "Input frames")->capture_default_str()->check(CLI::Range(std::size_t{3}, std::size_t{5}));
  train_cmd->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str()->check(size_range);
  train_cmd->add_option("--batch", tr.batch, "Batch size")->capture_default_str()->check(size_range);
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "Seed for init, sampling and shuffling")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--preset", tr.preset, "Architecture preset")->capture_default_str()->check(CLI::IsMember(presets));
  train_cmd->add_option("--model-config", tr.model_config, "JSON overrides for the architecture")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--jobs", tr.jobs, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
  train_cmd->add_option("--grad-clip", tr.grad_clip, "Global gradient-norm clip (0 = off)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--ortho-weight", tr.ortho_weight, "Feature-transform orthogonality weight")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--validation", tr.validation, "Held-out fraction of windows")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.99));
  train_cmd->add_option("--collision-windows", tr.collision, "Contact windows per trajectory")->capture_default_str();
  train_cmd->add_option("--normal-windows", tr.normal, "Contact-free windows per trajectory")->capture_default_str();
  train_cmd->add_flag("--truncate-rollout", tr.truncate_rollout, "Stop gradients through fed-back predictions");
  train_cmd->add_option("--log", tr.log, "CSV log path (default <out>.log.csv)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Rollout errors on a corpus");
  eval_cmd->add_option("--model", ev.model, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Corpus directory")->required();
  eval_cmd->add_option("--horizons", ev.horizons, "Comma-separated horizons")
      ->delimiter(',')
      ->capture_default_str()
      ->check(size_range);
  eval_cmd->add_option("--ordering", ev.ordering, "Input point ordering")
      ->capture_default_str()
      ->check(CLI::IsMember(orderings));
  eval_cmd->add_option("--seed", ev.seed, "Shuffle seed")->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "Report JSON path")->required();
  eval_cmd->add_option("--baseline", ev.baseline_report, "Also write the rigid-translation baseline report here");
  eval_cmd->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));

  RolloutOptions ro;
  auto* rollout_cmd = app.add_subcommand("rollout", "Export one predicted rollout as SVG frames and CSV");
  rollout_cmd->add_option("--model", ro.model, "Checkpoint")->required();
  rollout_cmd->add_option("--traj", ro.traj, "Trajectory file")->required();
  rollout_cmd->add_option("--start", ro.start, "First input frame")->capture_default_str();
  rollout_cmd->add_option("--steps", ro.steps, "Predicted frames")->capture_default_str()->check(size_range);
  rollout_cmd->add_option("--out", ro.out, "Output directory")->required();
  rollout_cmd->add_option("--ordering", ro.ordering, "Input point ordering")
      ->capture_default_str()
      ->check(CLI::IsMember(orderings));
  rollout_cmd->add_option("--seed", ro.seed, "Shuffle seed")->capture_default_str();

  GradCheckOptions gcopt;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradient");
  gc_cmd->add_option("--tolerance", gcopt.tolerance, "Maximum relative error")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gc_cmd->add_option("--params", gcopt.params, "Parameters to sample (0 = all)")->capture_default_str();
  gc_cmd->add_option("--seed", gcopt.seed, "Fixture seed")->capture_default_str();
  gc_cmd->add_option("--epsilon", gcopt.epsilon, "Central-difference step")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gc_cmd->add_option("--report", gcopt.report, "Report JSON path");

  ProbeOptions pr;
  auto* probe_cmd = app.add_subcommand("probe", "Timing probes");
  probe_cmd->add_flag("--scaling", pr.scaling, "Forward time over point counts");
  probe_cmd->add_flag("--throughput", pr.throughput, "Predictions per second");
  probe_cmd->add_option("--preset", pr.preset, "Architecture preset")
      ->capture_default_str()
      ->check(CLI::IsMember(presets));
  probe_cmd->add_option("--reps", pr.reps, "Repetitions per size")->capture_default_str()->check(size_range);
  probe_cmd->add_option("--seconds", pr.seconds, "Minimum seconds per timing, or probe duration")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  probe_cmd->add_option("--sizes", pr.sizes, "Point counts for --scaling")
      ->delimiter(',')
      ->capture_default_str()
      ->check(size_range);
  probe_cmd->add_option("--n", pr.n, "Point count for --throughput without --model")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  probe_cmd->add_option("--model", pr.model, "Checkpoint for --throughput");
  probe_cmd->add_option("--seed", pr.seed, "Seed for weights and frames")->capture_default_str();
  probe_cmd->add_option("--out", pr.out, "Result JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kBadFlags;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kBadFlags;
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err) == 0 ? kOk : kBadFlags;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* usage = &app;
    for (const auto* sub : app.get_subcommands()) usage = sub;
    err << usage->help();
    return kBadFlags;
  }

  return guarded(
      [&]() -> int {
        if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
        if (train_cmd->parsed()) return cmd_train(tr, out, err);
        if (eval_cmd->parsed()) return cmd_eval(ev, out);
        if (rollout_cmd->parsed()) return cmd_rollout(ro, out);
        if (gc_cmd->parsed()) return cmd_gradcheck(gcopt, out);
        if (probe_cmd->parsed()) return cmd_probe(pr, out);
        throw UsageError("no subcommand");
      },
      err);
}

}  // namespace tpnet::cli
