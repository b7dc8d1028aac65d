#pragma once

// Trajectory corpus on disk: one JSON Lines file per trajectory.
//
//   line 1:  {"format":"tpnet-trajectory","version":1,"n":30,"frames":T,
//             "dt":...,"seed":...,"config":{...},"init":{...}}
//   line 2+: {"t":k,"pos":[[x,y],...],"contact":bool}
//
// Doubles are written in shortest round-trip form, so a write/read cycle is
// bit-exact.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpnet/datagen.hpp"
#include "tpnet/geometry.hpp"
#include "tpnet/sim.hpp"

namespace tpnet {

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("expected [x, y]");
  v.x = j.at(0).get<double>();
  v.y = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = {{"n", c.n},
       {"radius", c.radius},
       {"gravity", c.gravity},
       {"wall_restitution", c.wall_restitution},
       {"particle_restitution", c.particle_restitution},
       {"friction", c.friction},
       {"spring_frequency_hz", c.spring_frequency_hz},
       {"spring_damping_ratio", c.spring_damping_ratio},
       {"dt", c.dt},
       {"substeps", c.substeps},
       {"box_min", c.box_min},
       {"box_max", c.box_max},
       {"particle_mass", c.particle_mass},
       {"velocity_scale", c.velocity_scale},
       {"restitution_threshold", c.restitution_threshold}};
}

/// Missing keys keep their defaults, so partial config files are accepted.
inline void from_json(const nlohmann::json& j, WorldConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n", c.n);
  get("radius", c.radius);
  get("gravity", c.gravity);
  get("wall_restitution", c.wall_restitution);
  get("particle_restitution", c.particle_restitution);
  get("friction", c.friction);
  get("spring_frequency_hz", c.spring_frequency_hz);
  get("spring_damping_ratio", c.spring_damping_ratio);
  get("dt", c.dt);
  get("substeps", c.substeps);
  get("box_min", c.box_min);
  get("box_max", c.box_max);
  get("particle_mass", c.particle_mass);
  get("velocity_scale", c.velocity_scale);
  get("restitution_threshold", c.restitution_threshold);
}

inline void to_json(nlohmann::json& j, const InitCondition& i) {
  j = {{"center", i.center}, {"force_magnitude", i.force_magnitude}, {"direction_deg", i.direction_deg}};
}
inline void from_json(const nlohmann::json& j, InitCondition& i) {
  j.at("center").get_to(i.center);
  j.at("force_magnitude").get_to(i.force_magnitude);
  j.at("direction_deg").get_to(i.direction_deg);
}

inline void to_json(nlohmann::json& j, const InitGrid& g) {
  j = {{"center_min", g.center_min},
       {"center_max", g.center_max},
       {"center_steps", g.center_steps},
       {"magnitudes", g.magnitudes},
       {"directions_deg", g.directions_deg}};
}
inline void from_json(const nlohmann::json& j, InitGrid& g) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("center_min", g.center_min);
  get("center_max", g.center_max);
  get("center_steps", g.center_steps);
  get("magnitudes", g.magnitudes);
  get("directions_deg", g.directions_deg);
}

class CorpusFormatError : public std::runtime_error {
 public:
  enum class Kind { io, malformed, version, truncated, particle_count };

  CorpusFormatError(Kind kind, const std::string& path, const std::string& detail, long frame = -1)
      : std::runtime_error(describe(kind) + " in '" + path + "'" +
                           (frame >= 0 ? " at frame " + std::to_string(frame) : std::string{}) + ": " + detail),
        kind_(kind),
        frame_(frame) {}

  Kind kind() const noexcept { return kind_; }
  long frame() const noexcept { return frame_; }

 private:
  static std::string describe(Kind k) {
    switch (k) {
      case Kind::io: return "I/O error";
      case Kind::malformed: return "malformed record";
      case Kind::version: return "unsupported format version";
      case Kind::truncated: return "truncated file";
      case Kind::particle_count: return "particle-count mismatch";
    }
    return "corpus error";
  }

  Kind kind_;
  long frame_;
};

inline constexpr const char* kTrajectoryFormat = "tpnet-trajectory";

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  if (traj.frames.size() != traj.contact.size())
    throw std::invalid_argument("write_trajectory: frames and contact flags differ in length");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusFormatError(CorpusFormatError::Kind::io, path.string(), "cannot open for writing");
  const auto& meta = traj.meta;
  nlohmann::json header = {{"format", kTrajectoryFormat},
                           {"version", meta.format_version},
                           {"n", meta.config.n},
                           {"frames", traj.frames.size()},
                           {"dt", meta.config.dt},
                           {"seed", meta.seed},
                           {"config", meta.config},
                           {"init", meta.init}};
  out << header.dump() << '\n';
  for (std::size_t t = 0; t < traj.frames.size(); ++t) {
    if (traj.frames[t].size() != meta.config.n)
      throw std::invalid_argument("write_trajectory: frame " + std::to_string(t) + " has wrong particle count");
    nlohmann::json rec = {{"t", t}, {"pos", traj.frames[t]}, {"contact", static_cast<bool>(traj.contact[t])}};
    out << rec.dump() << '\n';
  }
  if (!out) throw CorpusFormatError(CorpusFormatError::Kind::io, path.string(), "write failed");
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  using Kind = CorpusFormatError::Kind;
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusFormatError(Kind::io, name, "cannot open for reading");

  std::string line;
  if (!std::getline(in, line)) throw CorpusFormatError(Kind::truncated, name, "missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CorpusFormatError(Kind::malformed, name, std::string("header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", std::string{}) != kTrajectoryFormat)
    throw CorpusFormatError(Kind::malformed, name, "not a trajectory file");
  const int version = header.value("version", -1);
  if (version != TrajectoryMeta::kFormatVersion)
    throw CorpusFormatError(Kind::version, name,
                            "found version " + std::to_string(version) + ", expected " +
                                std::to_string(TrajectoryMeta::kFormatVersion));

  Trajectory traj;
  std::size_t expected_frames = 0;
  try {
    header.at("config").get_to(traj.meta.config);
    header.at("init").get_to(traj.meta.init);
    traj.meta.seed = header.at("seed").get<std::uint64_t>();
    traj.meta.format_version = version;
    expected_frames = header.at("frames").get<std::size_t>();
    if (header.at("n").get<std::size_t>() != traj.meta.config.n)
      throw CorpusFormatError(Kind::particle_count, name, "header n disagrees with config.n");
  } catch (const nlohmann::json::exception& e) {
    throw CorpusFormatError(Kind::malformed, name, std::string("header: ") + e.what());
  }
  const std::size_t n = traj.meta.config.n;

  traj.frames.reserve(expected_frames);
  traj.contact.reserve(expected_frames);
  for (std::size_t t = 0; t < expected_frames; ++t) {
    const long frame = static_cast<long>(t);
    if (!std::getline(in, line))
      throw CorpusFormatError(Kind::truncated, name,
                              "expected " + std::to_string(expected_frames) + " frames, found " + std::to_string(t),
                              frame);
    const bool complete_line = !in.eof();
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      // A partial final line is a truncation, anything else is corruption.
      throw CorpusFormatError(complete_line ? Kind::malformed : Kind::truncated, name, e.what(), frame);
    }
    try {
      if (rec.at("t").get<std::size_t>() != t)
        throw CorpusFormatError(Kind::malformed, name, "frame index out of sequence", frame);
      auto pos = rec.at("pos").get<PointSet>();
      if (pos.size() != n)
        throw CorpusFormatError(Kind::particle_count, name,
                                "expected " + std::to_string(n) + " particles, found " + std::to_string(pos.size()),
                                frame);
      traj.frames.push_back(std::move(pos));
      traj.contact.push_back(rec.at("contact").get<bool>());
    } catch (const nlohmann::json::exception& e) {
      throw CorpusFormatError(Kind::malformed, name, e.what(), frame);
    } catch (const std::invalid_argument& e) {
      throw CorpusFormatError(Kind::malformed, name, e.what(), frame);
    }
  }
  return traj;
}

inline std::string trajectory_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%05zu.jsonl", index);
  return buf;
}

/// Writes traj_00000.jsonl, traj_00001.jsonl, ... into `dir` (created if needed).
inline std::vector<std::filesystem::path> write_corpus(const std::filesystem::path& dir,
                                                       std::span<const Trajectory> corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CorpusFormatError(CorpusFormatError::Kind::io, dir.string(), ec.message());
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    paths.push_back(dir / trajectory_filename(i));
    write_trajectory(paths.back(), corpus[i]);
  }
  return paths;
}

/// Reads every *.jsonl file in `dir`, in lexicographic filename order.
inline std::vector<Trajectory> read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw CorpusFormatError(CorpusFormatError::Kind::io, dir.string(), "not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Trajectory> corpus;
  corpus.reserve(files.size());
  for (const auto& f : files) corpus.push_back(read_trajectory(f));
  return corpus;
}

}  // namespace tpnet
