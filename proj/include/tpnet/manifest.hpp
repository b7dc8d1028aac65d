#pragma once

// Run manifest written next to every CLI output: enough to rerun the command.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tpnet {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now()) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string subcommand;
  nlohmann::json flags = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
  std::string started_at = utc_timestamp();
  std::string finished_at;
  nlohmann::json results = nlohmann::json::object();
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"subcommand", m.subcommand}, {"flags", m.flags},         {"seeds", m.seeds},
       {"inputs", m.inputs},         {"outputs", m.outputs},     {"tool_version", m.tool_version},
       {"started_at", m.started_at}, {"finished_at", m.finished_at}, {"results", m.results}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("subcommand").get_to(m.subcommand);
  j.at("flags").get_to(m.flags);
  j.at("seeds").get_to(m.seeds);
  j.at("inputs").get_to(m.inputs);
  j.at("outputs").get_to(m.outputs);
  j.at("tool_version").get_to(m.tool_version);
  j.at("started_at").get_to(m.started_at);
  j.at("finished_at").get_to(m.finished_at);
  if (j.contains("results")) j.at("results").get_to(m.results);
}

/// Stamps the finish time and writes the manifest as indented JSON.
inline void write_manifest(const std::filesystem::path& path, RunManifest manifest) {
  manifest.finished_at = utc_timestamp();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  out << nlohmann::json(manifest).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for manifest '" + path.string() + "'");
}

}  // namespace tpnet
