#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/error.hpp"
#include "star/tensor.hpp"
#include "star/tensor_io.hpp"

namespace star {

struct CheckpointMeta {
  int64_t epoch = 0;
  uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json config;  // resolved run configuration, stored for rebuilds
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParameterStore<T>& store,
                     const CheckpointMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(detail::msg("cannot create ", dir.string(), ": ", ec.message()));
  std::vector<std::string> names;
  names.reserve(store.size());
  for (const auto& p : store.all()) {
    save_tensor(dir / (p.name + ".stnsr"), p.value);
    names.push_back(p.name);
  }
  std::sort(names.begin(), names.end());
  nlohmann::json j = {{"epoch", meta.epoch},
                      {"seed", meta.seed},
                      {"config_hash", meta.config_hash},
                      {"config", meta.config},
                      {"params", names}};
  const auto path = dir / "checkpoint.json";
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << j.dump(2) << "\n";
  if (!out) throw IoError(detail::msg("write failure at ", path.string()));
}

inline CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir) {
  const auto path = dir / "checkpoint.json";
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open ", path.string()));
  nlohmann::json j;
  try {
    in >> j;
    CheckpointMeta meta;
    meta.epoch = j.at("epoch").get<int64_t>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.config_hash = j.at("config_hash").get<std::string>();
    meta.config = j.at("config");
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("malformed checkpoint at ", path.string(), ": ", e.what()));
  }
}

// Loads parameter tensors into an existing store. The stored and expected
// parameter sets must agree exactly, as must every shape.
template <typename T>
void load_checkpoint_params(const std::filesystem::path& dir, ParameterStore<T>& store) {
  const auto path = dir / "checkpoint.json";
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open ", path.string()));
  nlohmann::json j;
  std::vector<std::string> stored;
  try {
    in >> j;
    stored = j.at("params").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("malformed checkpoint at ", path.string(), ": ", e.what()));
  }
  std::vector<std::string> expected;
  expected.reserve(store.size());
  for (const auto& p : store.all()) expected.push_back(p.name);
  std::sort(expected.begin(), expected.end());
  std::sort(stored.begin(), stored.end());
  if (stored != expected) {
    throw CompatibilityError(detail::msg("checkpoint at ", dir.string(), " stores ",
                                         stored.size(), " parameters, model expects ",
                                         expected.size(),
                                         " (or the names differ)"));
  }
  for (auto& p : store.all()) {
    auto loaded = load_tensor<T>(dir / (p.name + ".stnsr"));
    if (loaded.shape() != p.value.shape()) {
      throw CompatibilityError(detail::msg("parameter '", p.name, "' has shape ",
                                           shape_str(loaded.shape()),
                                           " in the checkpoint but the model expects ",
                                           shape_str(p.value.shape())));
    }
    auto dst = p.value.mutable_data();
    std::copy(loaded.data().begin(), loaded.data().end(), dst.begin());
  }
}

}  // namespace star
