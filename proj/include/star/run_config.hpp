#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/error.hpp"
#include "star/model.hpp"
#include "star/rng.hpp"
#include "star/train.hpp"

namespace star {

// Flat run configuration: one document describes a whole experiment, every
// key can be overridden by a command-line flag, and the resolved document is
// echoed into the output directory.
struct RunConfig {
  std::string dataset;
  std::string out = "star_out";
  std::string side_info;
  std::string provider = "files";
  std::string checkpoint;
  std::string resume;

  std::string layout = "ntu25";
  std::string partition = "six";
  int64_t frames = 32;
  int64_t persons = 1;
  int64_t channels = 64;
  int64_t stride = 4;
  int64_t heads = 8;
  int64_t prompt_count = 100;
  int64_t d_lat = 32;
  int64_t d_sem = 32;
  int64_t ffn_hidden = 64;
  int64_t semantic_hidden = 64;
  bool visual_proj_per_part = false;
  bool semantic_proj_per_part = false;

  bool use_attention = true;
  bool use_visual_prompts = true;
  bool use_semantic_prompts = true;
  bool use_part_loss = true;
  bool use_semantic_loss = true;
  bool use_global_loss = true;

  double alpha = 0.1;
  double beta = 0.1;
  int64_t epochs = 40;
  int64_t batch_size = 32;
  double lr = 1e-3;
  std::vector<int64_t> lr_decay_epochs{20, 30};
  double lr_decay_factor = 0.1;
  double weight_decay = 5e-4;
  uint64_t seed = 1;
  std::string encoder_mode = "pretrained";
  int64_t pretrain_epochs = 30;
  double pretrain_lr = 0.1;

  std::string mode = "zsl";
  double gamma = 0.0;
  std::vector<double> gamma_list = default_gamma_list();
  int64_t eval_batch = 32;

  static std::vector<double> default_gamma_list() {
    std::vector<double> g;
    for (int i = 0; i <= 60; ++i) g.push_back(static_cast<double>(i) * 0.01);
    return g;
  }

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "dataset",        "out",
        "side_info",      "provider",
        "checkpoint",     "resume",
        "layout",         "partition",
        "frames",         "persons",
        "channels",       "stride",
        "heads",          "prompt_count",
        "d_lat",          "d_sem",
        "ffn_hidden",     "semantic_hidden",
        "visual_proj_per_part", "semantic_proj_per_part",
        "use_attention",  "use_visual_prompts",
        "use_semantic_prompts", "use_part_loss",
        "use_semantic_loss", "use_global_loss",
        "alpha",          "beta",
        "epochs",         "batch_size",
        "lr",             "lr_decay_epochs",
        "lr_decay_factor", "weight_decay",
        "seed",           "encoder_mode",
        "pretrain_epochs", "pretrain_lr",
        "mode",           "gamma",
        "gamma_list",     "eval_batch"};
    return keys;
  }

  void apply(const nlohmann::json& doc, bool& seed_given) {
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (!known_keys().count(key)) {
        throw ConfigError(detail::msg("unknown config key '", key, "'"));
      }
      try {
        if (key == "dataset") dataset = value.get<std::string>();
        else if (key == "out") out = value.get<std::string>();
        else if (key == "side_info") side_info = value.get<std::string>();
        else if (key == "provider") provider = value.get<std::string>();
        else if (key == "checkpoint") checkpoint = value.get<std::string>();
        else if (key == "resume") resume = value.get<std::string>();
        else if (key == "layout") layout = value.get<std::string>();
        else if (key == "partition") partition = value.get<std::string>();
        else if (key == "frames") frames = value.get<int64_t>();
        else if (key == "persons") persons = value.get<int64_t>();
        else if (key == "channels") channels = value.get<int64_t>();
        else if (key == "stride") stride = value.get<int64_t>();
        else if (key == "heads") heads = value.get<int64_t>();
        else if (key == "prompt_count") prompt_count = value.get<int64_t>();
        else if (key == "d_lat") d_lat = value.get<int64_t>();
        else if (key == "d_sem") d_sem = value.get<int64_t>();
        else if (key == "ffn_hidden") ffn_hidden = value.get<int64_t>();
        else if (key == "semantic_hidden") semantic_hidden = value.get<int64_t>();
        else if (key == "visual_proj_per_part") visual_proj_per_part = value.get<bool>();
        else if (key == "semantic_proj_per_part") semantic_proj_per_part = value.get<bool>();
        else if (key == "use_attention") use_attention = value.get<bool>();
        else if (key == "use_visual_prompts") use_visual_prompts = value.get<bool>();
        else if (key == "use_semantic_prompts") use_semantic_prompts = value.get<bool>();
        else if (key == "use_part_loss") use_part_loss = value.get<bool>();
        else if (key == "use_semantic_loss") use_semantic_loss = value.get<bool>();
        else if (key == "use_global_loss") use_global_loss = value.get<bool>();
        else if (key == "alpha") alpha = value.get<double>();
        else if (key == "beta") beta = value.get<double>();
        else if (key == "epochs") epochs = value.get<int64_t>();
        else if (key == "batch_size") batch_size = value.get<int64_t>();
        else if (key == "lr") lr = value.get<double>();
        else if (key == "lr_decay_epochs") lr_decay_epochs = value.get<std::vector<int64_t>>();
        else if (key == "lr_decay_factor") lr_decay_factor = value.get<double>();
        else if (key == "weight_decay") weight_decay = value.get<double>();
        else if (key == "seed") { seed = value.get<uint64_t>(); seed_given = true; }
        else if (key == "encoder_mode") encoder_mode = value.get<std::string>();
        else if (key == "pretrain_epochs") pretrain_epochs = value.get<int64_t>();
        else if (key == "pretrain_lr") pretrain_lr = value.get<double>();
        else if (key == "mode") mode = value.get<std::string>();
        else if (key == "gamma") gamma = value.get<double>();
        else if (key == "gamma_list") gamma_list = value.get<std::vector<double>>();
        else if (key == "eval_batch") eval_batch = value.get<int64_t>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(detail::msg("config key '", key, "' has the wrong type: ", e.what()));
      }
    }
  }

  // defaults <- file <- flags, with STAR_SEED filling in only when neither
  // source named a seed.
  static RunConfig resolve(const std::optional<nlohmann::json>& file,
                           const nlohmann::json& overrides,
                           const std::optional<uint64_t>& env_seed) {
    RunConfig rc;
    bool seed_given = false;
    if (file) rc.apply(*file, seed_given);
    rc.apply(overrides, seed_given);
    if (!seed_given && env_seed) rc.seed = *env_seed;
    return rc;
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"out", out},
            {"side_info", side_info},
            {"provider", provider},
            {"checkpoint", checkpoint},
            {"resume", resume},
            {"layout", layout},
            {"partition", partition},
            {"frames", frames},
            {"persons", persons},
            {"channels", channels},
            {"stride", stride},
            {"heads", heads},
            {"prompt_count", prompt_count},
            {"d_lat", d_lat},
            {"d_sem", d_sem},
            {"ffn_hidden", ffn_hidden},
            {"semantic_hidden", semantic_hidden},
            {"visual_proj_per_part", visual_proj_per_part},
            {"semantic_proj_per_part", semantic_proj_per_part},
            {"use_attention", use_attention},
            {"use_visual_prompts", use_visual_prompts},
            {"use_semantic_prompts", use_semantic_prompts},
            {"use_part_loss", use_part_loss},
            {"use_semantic_loss", use_semantic_loss},
            {"use_global_loss", use_global_loss},
            {"alpha", alpha},
            {"beta", beta},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"lr_decay_epochs", lr_decay_epochs},
            {"lr_decay_factor", lr_decay_factor},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"encoder_mode", encoder_mode},
            {"pretrain_epochs", pretrain_epochs},
            {"pretrain_lr", pretrain_lr},
            {"mode", mode},
            {"gamma", gamma},
            {"gamma_list", gamma_list},
            {"eval_batch", eval_batch}};
  }

  // The subset that must agree between a checkpoint and the run using it.
  // Paths, epoch horizon, and evaluation knobs are deliberately excluded:
  // moving a dataset or extending training is compatible; a different
  // architecture, schedule, or seed is not.
  nlohmann::json identity_json() const {
    return {{"layout", layout},
            {"partition", partition},
            {"frames", frames},
            {"persons", persons},
            {"channels", channels},
            {"stride", stride},
            {"heads", heads},
            {"prompt_count", prompt_count},
            {"d_lat", d_lat},
            {"d_sem", d_sem},
            {"ffn_hidden", ffn_hidden},
            {"semantic_hidden", semantic_hidden},
            {"visual_proj_per_part", visual_proj_per_part},
            {"semantic_proj_per_part", semantic_proj_per_part},
            {"use_attention", use_attention},
            {"use_visual_prompts", use_visual_prompts},
            {"use_semantic_prompts", use_semantic_prompts},
            {"use_part_loss", use_part_loss},
            {"use_semantic_loss", use_semantic_loss},
            {"use_global_loss", use_global_loss},
            {"alpha", alpha},
            {"beta", beta},
            {"batch_size", batch_size},
            {"lr", lr},
            {"lr_decay_epochs", lr_decay_epochs},
            {"lr_decay_factor", lr_decay_factor},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"encoder_mode", encoder_mode},
            {"pretrain_epochs", pretrain_epochs},
            {"pretrain_lr", pretrain_lr},
            {"provider", provider}};
  }

  std::string config_hash() const {
    return detail::msg("0x", std::hex, fnv1a64(identity_json().dump()));
  }

  template <typename T>
  ModelConfig<T> model_config() const {
    ModelConfig<T> mc;
    mc.layout = layout;
    mc.partition = partition;
    mc.target_frames = frames;
    mc.max_persons = persons;
    mc.visual.channels = channels;
    mc.visual.temporal_stride = stride;
    mc.visual.heads = heads;
    mc.visual.prompt_count = prompt_count;
    mc.visual.d_lat = d_lat;
    mc.visual.ffn_hidden = ffn_hidden;
    mc.visual.use_attention = use_attention;
    mc.visual.use_prompts = use_visual_prompts;
    mc.visual.per_part_projection = visual_proj_per_part;
    mc.semantic.d_sem = d_sem;
    mc.semantic.d_lat = d_lat;
    mc.semantic.hidden = semantic_hidden;
    mc.semantic.per_part_projector = semantic_proj_per_part;
    mc.semantic.use_part_prompts = use_semantic_prompts;
    mc.objective.alpha = static_cast<T>(alpha);
    mc.objective.beta = static_cast<T>(beta);
    mc.objective.use_part_alignment = use_part_loss;
    mc.objective.use_semantic_alignment = use_semantic_loss;
    mc.objective.use_global_alignment = use_global_loss;
    return mc;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.lr = lr;
    tc.lr_decay_epochs = lr_decay_epochs;
    tc.lr_decay_factor = lr_decay_factor;
    tc.weight_decay = weight_decay;
    tc.seed = seed;
    tc.encoder_mode = encoder_mode;
    tc.pretrain_epochs = pretrain_epochs;
    tc.pretrain_lr = pretrain_lr;
    return tc;
  }
};

inline nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open config ", path.string()));
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(detail::msg("config parse failure at ", path.string(), ": ", e.what()));
  }
}

inline void echo_config(const std::filesystem::path& out_dir, const RunConfig& rc) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(detail::msg("cannot create ", out_dir.string(), ": ", ec.message()));
  const auto path = out_dir / "config.json";
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << rc.to_json().dump(2) << "\n";
}

}  // namespace star
