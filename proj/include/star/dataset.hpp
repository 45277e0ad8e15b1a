#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/error.hpp"
#include "star/skeleton.hpp"
#include "star/tensor_io.hpp"

namespace star {

enum class SampleRole { train, test };

inline const char* role_name(SampleRole r) { return r == SampleRole::train ? "train" : "test"; }

inline SampleRole role_from_name(const std::string& s) {
  if (s == "train") return SampleRole::train;
  if (s == "test") return SampleRole::test;
  throw DataError(detail::msg("unknown sample role '", s, "'"));
}

struct SampleEntry {
  std::string id;
  int64_t label = -1;
  std::string path;  // relative to the dataset directory
  SampleRole role = SampleRole::train;
  // Optional precomputed per-part feature files (part name -> relative path)
  // consumed by the precomputed-features encoder mode.
  std::map<std::string, std::string> features;
};

struct CategorySplit {
  std::vector<std::string> known;
  std::vector<std::string> unknown;
};

struct DatasetManifest {
  std::string layout;
  std::vector<std::string> categories;
  CategorySplit split;
  std::vector<SampleEntry> samples;
  std::string semantics_names;            // optional STNSR1 path, |A| x d_sem
  std::vector<std::string> semantics_parts;  // optional, one per part
};

// Index form of a split: positions into the manifest's category table.
struct SplitIndices {
  std::vector<int64_t> known;
  std::vector<int64_t> unknown;

  std::vector<bool> known_mask(int64_t category_count) const {
    std::vector<bool> mask(static_cast<size_t>(category_count), false);
    for (int64_t k : known) mask[static_cast<size_t>(k)] = true;
    return mask;
  }
};

inline SplitIndices resolve_split(const std::vector<std::string>& categories,
                                  const CategorySplit& split) {
  std::unordered_map<std::string, int64_t> index;
  for (size_t i = 0; i < categories.size(); ++i) {
    index[categories[i]] = static_cast<int64_t>(i);
  }
  auto lookup = [&](const std::string& name, const char* side) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw ValidationError(detail::msg("split lists ", side, " category '", name,
                                        "' absent from the category table"));
    }
    return it->second;
  };
  SplitIndices out;
  std::unordered_set<int64_t> seen;
  for (const auto& name : split.known) {
    const int64_t i = lookup(name, "known");
    if (!seen.insert(i).second) {
      throw ValidationError(detail::msg("category '", name, "' appears twice in the split"));
    }
    out.known.push_back(i);
  }
  for (const auto& name : split.unknown) {
    const int64_t i = lookup(name, "unknown");
    if (!seen.insert(i).second) {
      throw ValidationError(detail::msg("category '", name, "' appears twice in the split"));
    }
    out.unknown.push_back(i);
  }
  if (out.known.empty()) throw ValidationError("split has no known categories");
  if (out.unknown.empty()) throw ValidationError("split has no unknown categories");
  if (seen.size() != categories.size()) {
    throw ValidationError(detail::msg("split covers ", seen.size(), " of ", categories.size(),
                                      " categories"));
  }
  return out;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json entry = {{"id", s.id}, {"label", s.label}, {"path", s.path},
                            {"role", role_name(s.role)}};
    if (!s.features.empty()) entry["features"] = s.features;
    samples.push_back(std::move(entry));
  }
  nlohmann::json j = {{"layout", m.layout},
                      {"categories", m.categories},
                      {"split", {{"known", m.split.known}, {"unknown", m.split.unknown}}},
                      {"samples", samples}};
  if (!m.semantics_names.empty()) {
    j["semantics"] = {{"names", m.semantics_names}, {"parts", m.semantics_parts}};
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.layout = j.at("layout").get<std::string>();
    m.categories = j.at("categories").get<std::vector<std::string>>();
    m.split.known = j.at("split").at("known").get<std::vector<std::string>>();
    m.split.unknown = j.at("split").at("unknown").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.id = s.at("id").get<std::string>();
      e.label = s.at("label").get<int64_t>();
      e.path = s.at("path").get<std::string>();
      e.role = role_from_name(s.at("role").get<std::string>());
      if (s.contains("features")) {
        e.features = s.at("features").get<std::map<std::string, std::string>>();
      }
      m.samples.push_back(std::move(e));
    }
    if (j.contains("semantics")) {
      m.semantics_names = j.at("semantics").at("names").get<std::string>();
      m.semantics_parts = j.at("semantics").at("parts").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("malformed manifest: ", e.what()));
  }
  return m;
}

// Structural validation; with a directory also checks referenced files exist.
inline void validate_manifest(const DatasetManifest& m,
                              const std::optional<std::filesystem::path>& dir = std::nullopt) {
  JointLayout::by_name(m.layout);
  if (m.categories.empty()) throw ValidationError("manifest has no categories");
  std::unordered_set<std::string> names(m.categories.begin(), m.categories.end());
  if (names.size() != m.categories.size()) {
    throw ValidationError("manifest category table has duplicates");
  }
  const SplitIndices split = resolve_split(m.categories, m.split);
  const auto known = split.known_mask(static_cast<int64_t>(m.categories.size()));
  std::unordered_set<std::string> ids;
  for (const auto& s : m.samples) {
    if (s.label < 0 || s.label >= static_cast<int64_t>(m.categories.size())) {
      throw ValidationError(detail::msg("sample '", s.id, "' has label ", s.label,
                                        " outside the category table"));
    }
    if (!ids.insert(s.id).second) {
      throw ValidationError(detail::msg("duplicate sample id '", s.id, "'"));
    }
    if (s.role == SampleRole::train && !known[static_cast<size_t>(s.label)]) {
      throw ValidationError(detail::msg("sample '", s.id,
                                        "' is an unknown-category sample in the training role"));
    }
    if (dir && !std::filesystem::exists(*dir / s.path)) {
      throw DataError(detail::msg("sample file missing: ", (*dir / s.path).string()));
    }
    if (dir) {
      for (const auto& [part, rel] : s.features) {
        if (!std::filesystem::exists(*dir / rel)) {
          throw DataError(detail::msg("feature file missing for sample '", s.id, "' part '",
                                      part, "': ", (*dir / rel).string()));
        }
      }
    }
  }
  if (dir && !m.semantics_names.empty()) {
    if (!std::filesystem::exists(*dir / m.semantics_names)) {
      throw DataError(detail::msg("semantics file missing: ",
                                  (*dir / m.semantics_names).string()));
    }
    for (const auto& p : m.semantics_parts) {
      if (!std::filesystem::exists(*dir / p)) {
        throw DataError(detail::msg("semantics file missing: ", (*dir / p).string()));
      }
    }
  }
}

inline void save_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError(detail::msg("cannot write ", (dir / "manifest.json").string()));
  out << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open ", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("manifest parse failure at ", path.string(), ": ", e.what()));
  }
  DatasetManifest m = manifest_from_json(j);
  validate_manifest(m, dir);
  return m;
}

template <typename T>
SkeletonSequence<T> load_sample(const std::filesystem::path& dir, const SampleEntry& entry) {
  SkeletonSequence<T> seq;
  seq.x = load_tensor<T>(dir / entry.path);
  validate_sequence(seq.x);
  seq.label = entry.label;
  return seq;
}

struct SplitFile {
  CategorySplit split;
};

inline void save_split(const std::filesystem::path& path, const CategorySplit& split) {
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  nlohmann::json j = {{"known", split.known}, {"unknown", split.unknown}};
  out << j.dump(2) << "\n";
}

inline CategorySplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::msg("cannot open ", path.string()));
  nlohmann::json j;
  try {
    in >> j;
    CategorySplit s;
    s.known = j.at("known").get<std::vector<std::string>>();
    s.unknown = j.at("unknown").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(detail::msg("malformed split file ", path.string(), ": ", e.what()));
  }
}

}  // namespace star
