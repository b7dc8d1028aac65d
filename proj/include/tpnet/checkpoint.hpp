#pragma once

// Model checkpoint:
//
//   TPNETCKPT 1\n
//   {"n_points":30,...}\n          full ModelConfig as one JSON line
//   <parameter count>\n
//   raw little-endian IEEE-754 doubles in flat-vector order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "tpnet/model.hpp"

namespace tpnet {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_points", c.n_points},
       {"m_frames", c.m_frames},
       {"point_mlp1", c.point_mlp1},
       {"point_mlp2", c.point_mlp2},
       {"k_global", c.k_global},
       {"lstm_hidden", c.lstm_hidden},
       {"lstm_layers", c.lstm_layers},
       {"use_input_transform", c.use_input_transform},
       {"use_feature_transform", c.use_feature_transform},
       {"tnet_mlp", c.tnet_mlp},
       {"tnet_fc", c.tnet_fc},
       {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_points", c.n_points);
  get("m_frames", c.m_frames);
  get("point_mlp1", c.point_mlp1);
  get("point_mlp2", c.point_mlp2);
  get("k_global", c.k_global);
  get("lstm_hidden", c.lstm_hidden);
  get("lstm_layers", c.lstm_layers);
  get("use_input_transform", c.use_input_transform);
  get("use_feature_transform", c.use_feature_transform);
  get("tnet_mlp", c.tnet_mlp);
  get("tnet_fc", c.tnet_fc);
  get("seed", c.seed);
}

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error("checkpoint: " + what) {}
};

inline constexpr const char* kCheckpointMagic = "TPNETCKPT";
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  if (params.values.size() != param_count(params.config))
    throw CheckpointError("parameter vector length does not match its config");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << nlohmann::json(params.config).dump() << '\n';
  out << params.values.size() << '\n';
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!out) throw CheckpointError("write to '" + path.string() + "' failed");
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion))
    throw CheckpointError("'" + path.string() + "' is not a version " + std::to_string(kCheckpointVersion) +
                          " checkpoint");
  ModelParams params;
  try {
    if (!std::getline(in, line)) throw CheckpointError("missing config line");
    params.config = nlohmann::json::parse(line).get<ModelConfig>();
    params.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad config: ") + e.what());
  }
  if (!std::getline(in, line)) throw CheckpointError("missing parameter count");
  std::size_t count = 0;
  try {
    std::size_t used = 0;
    count = std::stoull(line, &used);
    if (used != line.size()) throw std::invalid_argument(line);
  } catch (const std::exception&) {
    throw CheckpointError("bad parameter count '" + line + "'");
  }
  const std::size_t expected = param_count(params.config);
  if (count != expected)
    throw CheckpointError("stored " + std::to_string(count) + " parameters but the config needs " +
                          std::to_string(expected));
  params.layout = ParamLayout::build(params.config);
  params.values.resize(count);
  in.read(reinterpret_cast<char*>(params.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) throw CheckpointError("truncated parameter data");
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after parameter data");
  return params;
}

}  // namespace tpnet
