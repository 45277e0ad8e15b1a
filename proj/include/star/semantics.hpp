#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/dataset.hpp"
#include "star/layers.hpp"
#include "star/rng.hpp"
#include "star/skeleton.hpp"
#include "star/tensor_io.hpp"

namespace star {

struct SideInfoRecord {
  std::string name;
  std::map<std::string, std::string> parts;  // part name -> motion description
};

inline std::vector<SideInfoRecord> load_side_info(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open side-info file ", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("side-info parse failure at ", path.string(), ": ", e.what()));
  }
  std::vector<SideInfoRecord> records;
  std::unordered_set<std::string> seen;
  try {
    for (const auto& item : j) {
      SideInfoRecord r;
      r.name = item.at("name").get<std::string>();
      if (!seen.insert(r.name).second) {
        throw ValidationError(detail::msg("duplicate side-info category '", r.name, "'"));
      }
      for (const auto& [part, text] : item.at("parts").items()) {
        r.parts[part] = text.get<std::string>();
      }
      records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("malformed side-info file ", path.string(), ": ", e.what()));
  }
  return records;
}

// Every category must describe exactly the active strategy's parts.
inline void validate_side_info(const std::vector<SideInfoRecord>& records,
                               const PartitionStrategy& strategy) {
  std::unordered_set<std::string> wanted(strategy.part_names.begin(),
                                         strategy.part_names.end());
  for (const auto& r : records) {
    for (const auto& part : strategy.part_names) {
      auto it = r.parts.find(part);
      if (it == r.parts.end()) {
        throw ValidationError(detail::msg("category '", r.name, "' is missing part '", part,
                                          "'"));
      }
      if (it->second.empty()) {
        throw ValidationError(detail::msg("category '", r.name, "' has an empty description ",
                                          "for part '", part, "'"));
      }
    }
    for (const auto& [part, text] : r.parts) {
      if (!wanted.count(part)) {
        throw ValidationError(detail::msg("category '", r.name, "' describes part '", part,
                                          "' which is not in strategy '", strategy.name, "'"));
      }
    }
  }
}

// Deterministic stand-in for a text encoder: unit vector drawn from a
// splitmix64 stream keyed by the FNV-1a hash of the text.
template <typename T>
std::vector<T> pseudo_embed(const std::string& text, int64_t dim) {
  SplitMix64 rng(fnv1a64(text));
  std::vector<T> out(static_cast<size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : out) {
      const double d = rng.symmetric();
      v = static_cast<T>(d);
      norm += d * d;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-6);
  for (auto& v : out) v = static_cast<T>(static_cast<double>(v) / norm);
  return out;
}

template <typename T>
Tensor<T> pseudo_embed_matrix(const std::vector<std::string>& texts, int64_t dim) {
  std::vector<T> data;
  data.reserve(texts.size() * static_cast<size_t>(dim));
  for (const auto& text : texts) {
    auto row = pseudo_embed<T>(text, dim);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor<T>::from_data({static_cast<int64_t>(texts.size()), dim}, std::move(data));
}

enum class SemanticProvider { files, pseudo };

inline SemanticProvider provider_from_name(const std::string& s) {
  if (s == "files") return SemanticProvider::files;
  if (s == "pseudo") return SemanticProvider::pseudo;
  throw ConfigError(detail::msg("unknown semantic provider '", s, "'"));
}

// Raw (pre-projection) embeddings for every category: names plus per-part
// side information.
template <typename T>
struct SemanticEmbeddingSet {
  Tensor<T> f_cn;                // |A| x d_sem
  std::vector<Tensor<T>> f_si;   // K tensors, |A| x d_sem
  std::string provenance;

  int64_t d_sem() const { return f_cn.shape()[1]; }
  int64_t categories() const { return f_cn.shape()[0]; }
};

template <typename T>
SemanticEmbeddingSet<T> load_semantics_from_files(const std::filesystem::path& dir,
                                                  const DatasetManifest& manifest,
                                                  int64_t expected_parts) {
  if (manifest.semantics_names.empty()) {
    throw DataError("manifest carries no semantic embedding files");
  }
  if (static_cast<int64_t>(manifest.semantics_parts.size()) != expected_parts) {
    throw DataError(detail::msg("manifest has ", manifest.semantics_parts.size(),
                                " part embedding files, strategy needs ", expected_parts));
  }
  SemanticEmbeddingSet<T> set;
  set.provenance = "file-backed";
  set.f_cn = load_tensor<T>(dir / manifest.semantics_names);
  const int64_t a_count = static_cast<int64_t>(manifest.categories.size());
  if (set.f_cn.ndim() != 2 || set.f_cn.shape()[0] != a_count) {
    throw DataError(detail::msg("name embeddings are ", shape_str(set.f_cn.shape()),
                                ", expected ", a_count, " rows"));
  }
  for (const auto& path : manifest.semantics_parts) {
    auto part = load_tensor<T>(dir / path);
    if (part.shape() != set.f_cn.shape()) {
      throw DataError(detail::msg("part embeddings ", path, " are ", shape_str(part.shape()),
                                  ", expected ", shape_str(set.f_cn.shape())));
    }
    set.f_si.push_back(std::move(part));
  }
  return set;
}

template <typename T>
SemanticEmbeddingSet<T> build_pseudo_semantics(const DatasetManifest& manifest,
                                               const std::vector<SideInfoRecord>& records,
                                               const PartitionStrategy& strategy,
                                               int64_t d_sem) {
  validate_side_info(records, strategy);
  std::map<std::string, const SideInfoRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (const auto& cat : manifest.categories) {
    if (!by_name.count(cat)) {
      throw ValidationError(detail::msg("side info is missing category '", cat, "'"));
    }
  }
  SemanticEmbeddingSet<T> set;
  set.provenance = "pseudo";
  set.f_cn = pseudo_embed_matrix<T>(manifest.categories, d_sem);
  for (const auto& part : strategy.part_names) {
    std::vector<std::string> texts;
    for (const auto& cat : manifest.categories) {
      texts.push_back(by_name.at(cat)->parts.at(part));
    }
    set.f_si.push_back(pseudo_embed_matrix<T>(texts, d_sem));
  }
  return set;
}

// Eq-4-style additive augmentation.
template <typename T>
Tensor<T> augment_side_info(const Tensor<T>& f_si_part, const Tensor<T>& prompt) {
  if (f_si_part.shape() != prompt.shape()) {
    throw DimensionError(detail::msg("augment_side_info: ", shape_str(f_si_part.shape()),
                                     " vs prompt ", shape_str(prompt.shape())));
  }
  return add(f_si_part, prompt);
}

struct SemanticStreamConfig {
  int64_t d_sem = 32;
  int64_t d_lat = 32;
  int64_t hidden = 64;
  bool per_part_projector = false;
  bool use_part_prompts = true;  // false drops the learnable prompt bank
};

// Owns the semantic-part prompt bank and the two projectors; parameters are
// registered under "semantic.*".
template <typename T>
class SemanticStream {
 public:
  SemanticStream(ParameterStore<T>& store, const SemanticStreamConfig& config, int64_t parts,
                 int64_t categories, uint64_t seed)
      : config_(config), parts_(parts) {
    for (int64_t e = 0; e < parts; ++e) {
      const std::string name = "semantic.prompt." + std::to_string(e);
      Tensor<T> init = config.use_part_prompts
                           ? init_prompt<T>(seed, name, {categories, config.d_sem})
                           : Tensor<T>::zeros({categories, config.d_sem});
      auto p = store.add(name, std::move(init));
      if (!config.use_part_prompts) p.set_requires_grad(false);
      prompts_.push_back(std::move(p));
    }
    // Embedding rows arrive L2-normalized, so entries sit at RMS 1/sqrt(d_sem)
    // rather than the unit RMS fan-in scaling assumes. Boost the first-layer
    // gain by sqrt(d_sem) so hidden activations start at unit scale; without
    // it every semantic-side logit and gradient is suppressed by d_sem.
    const double l1_gain = kLinearGain * std::sqrt(static_cast<double>(config.d_sem));
    const int64_t proj_count = config.per_part_projector ? parts : 1;
    for (int64_t e = 0; e < proj_count; ++e) {
      const std::string name = config.per_part_projector
                                   ? "semantic.si_proj." + std::to_string(e)
                                   : "semantic.si_proj";
      si_proj_.push_back(Mlp2<T>::create(store, seed, name, config.d_sem, config.hidden,
                                         config.d_lat, l1_gain));
    }
    cn_proj_ = Mlp2<T>::create(store, seed, "semantic.cn_proj", config.d_sem, config.hidden,
                               config.d_lat, l1_gain);
  }

  const Tensor<T>& prompt(int64_t e) const { return prompts_.at(static_cast<size_t>(e)); }

  // F_si[e] = proj(f_si[e] + P_sp[e]), one |A| x d_lat matrix per part.
  std::vector<Tensor<T>> project_side_info(const std::vector<Tensor<T>>& f_si) const {
    if (static_cast<int64_t>(f_si.size()) != parts_) {
      throw ContractError(detail::msg("semantic stream built for ", parts_, " parts, got ",
                                      f_si.size()));
    }
    std::vector<Tensor<T>> out;
    out.reserve(f_si.size());
    for (int64_t e = 0; e < parts_; ++e) {
      const auto& proj = si_proj_[config_.per_part_projector ? static_cast<size_t>(e) : 0];
      out.push_back(proj(augment_side_info(f_si[static_cast<size_t>(e)],
                                           prompts_[static_cast<size_t>(e)])));
    }
    return out;
  }

  Tensor<T> project_names(const Tensor<T>& f_cn) const { return cn_proj_(f_cn); }

 private:
  SemanticStreamConfig config_;
  int64_t parts_;
  std::vector<Tensor<T>> prompts_;
  std::vector<Mlp2<T>> si_proj_;
  Mlp2<T> cn_proj_;
};

}  // namespace star
