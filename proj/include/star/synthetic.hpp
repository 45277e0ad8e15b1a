#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "star/dataset.hpp"
#include "star/rng.hpp"
#include "star/skeleton.hpp"
#include "star/tensor_io.hpp"

namespace star {

struct SynthConfig {
  int64_t categories = 12;
  int64_t known = 9;
  int64_t train_per_category = 40;
  int64_t test_per_category = 20;
  int64_t frames = 32;
  int64_t persons = 1;
  double noise = 0.05;
  int64_t d_sem = 32;
  std::string layout = "ntu25";
  std::string strategy = "six";

  void validate() const {
    if (categories < 2) throw ConfigError("synthetic: need at least 2 categories");
    if (known < 1) throw ConfigError("synthetic: need at least 1 known category");
    if (known >= categories) throw ConfigError("synthetic: unknown set empty");
    if (train_per_category < 1 || test_per_category < 1) {
      throw ConfigError("synthetic: need at least 1 train and 1 test sample per category");
    }
    if (frames < 2) throw ConfigError("synthetic: frames must be >= 2");
    if (persons < 1) throw ConfigError("synthetic: persons must be >= 1");
    if (noise < 0.0) throw ConfigError("synthetic: noise must be >= 0");
    if (d_sem < 4) throw ConfigError("synthetic: d_sem must be >= 4");
  }
};

// Per-category, per-part motion block: a sustained postural offset plus one
// oscillation mode, shared by all joints of the part.  The offset keeps the
// categories separable under temporal pooling (a pure oscillation averages
// out over whole cycles), the oscillation carries the dynamic signature.
struct MotionParams {
  double freq = 0.0;
  double amplitude = 0.0;
  std::array<double, 3> direction{};
  double phase = 0.0;
  std::array<double, 3> offset{};

  std::array<double, 9> flat() const {
    return {freq,  amplitude, direction[0], direction[1], direction[2],
            phase, offset[0], offset[1],    offset[2]};
  }
};

inline std::vector<std::array<double, 3>> rest_pose(const JointLayout& layout) {
  if (layout.name == "ntu25") {
    return {{0.00, 0.90, 0.00},  {0.00, 1.15, 0.00},  {0.00, 1.45, 0.00},
            {0.00, 1.60, 0.00},  {-0.20, 1.40, 0.00}, {-0.25, 1.15, 0.00},
            {-0.28, 0.95, 0.00}, {-0.30, 0.88, 0.00}, {0.20, 1.40, 0.00},
            {0.25, 1.15, 0.00},  {0.28, 0.95, 0.00},  {0.30, 0.88, 0.00},
            {-0.10, 0.85, 0.00}, {-0.12, 0.50, 0.00}, {-0.13, 0.10, 0.00},
            {-0.13, 0.02, 0.08}, {0.10, 0.85, 0.00},  {0.12, 0.50, 0.00},
            {0.13, 0.10, 0.00},  {0.13, 0.02, 0.08},  {0.00, 1.38, 0.00},
            {-0.31, 0.84, 0.00}, {-0.27, 0.86, 0.03}, {0.31, 0.84, 0.00},
            {0.27, 0.86, 0.03}};
  }
  if (layout.name == "toy4") {
    return {{0.00, 1.60, 0.00}, {0.30, 0.90, 0.00}, {0.00, 0.90, 0.00}, {0.00, 0.00, 0.05}};
  }
  throw ConfigError(detail::msg("no rest pose for layout '", layout.name, "'"));
}

inline MotionParams draw_motion_params(SplitMix64& rng) {
  MotionParams p;
  p.freq = rng.uniform(0.5, 2.0);
  p.amplitude = rng.uniform(0.08, 0.25);
  double norm = 0.0;
  for (auto& d : p.direction) {
    d = rng.gaussian();
    norm += d * d;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    p.direction = {1.0, 0.0, 0.0};
  } else {
    for (auto& d : p.direction) d /= norm;
  }
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double shift = rng.uniform(0.1, 0.35);
  std::array<double, 3> axis{};
  norm = 0.0;
  for (auto& d : axis) {
    d = rng.gaussian();
    norm += d * d;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    axis = {0.0, 1.0, 0.0};
    norm = 1.0;
  }
  for (size_t i = 0; i < 3; ++i) p.offset[i] = shift * axis[i] / norm;
  return p;
}

// Category-conditioned motion table: theta[a][e].
inline std::vector<std::vector<MotionParams>> draw_motion_table(uint64_t seed, int64_t categories,
                                                                int64_t parts) {
  std::vector<std::vector<MotionParams>> theta(static_cast<size_t>(categories));
  for (int64_t a = 0; a < categories; ++a) {
    for (int64_t e = 0; e < parts; ++e) {
      SplitMix64 rng = substream(seed, "theta", static_cast<uint64_t>(a * parts + e));
      theta[static_cast<size_t>(a)].push_back(draw_motion_params(rng));
    }
  }
  return theta;
}

// One sample: joints of part e swing along theta[e].direction with the
// part's frequency/phase around the rest pose, plus N(0, sigma^2) noise.
template <typename T>
Tensor<T> synth_sample(const JointLayout& layout, const PartitionStrategy& strategy,
                       const std::vector<MotionParams>& theta, int64_t frames, int64_t persons,
                       double sigma, SplitMix64& noise_rng) {
  const int64_t v = layout.joint_count();
  const auto rest = rest_pose(layout);
  std::vector<int64_t> part_of(static_cast<size_t>(v), -1);
  for (size_t e = 0; e < strategy.part_joints.size(); ++e) {
    for (int64_t j : strategy.part_joints[e]) part_of[static_cast<size_t>(j)] = static_cast<int64_t>(e);
  }
  std::vector<T> out(static_cast<size_t>(3 * frames * v * persons));
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t t = 0; t < frames; ++t) {
      for (int64_t j = 0; j < v; ++j) {
        const MotionParams& p = theta[static_cast<size_t>(part_of[static_cast<size_t>(j)])];
        const double swing =
            p.amplitude *
            std::sin(2.0 * std::numbers::pi * p.freq * static_cast<double>(t) /
                         static_cast<double>(frames) +
                     p.phase) *
            p.direction[static_cast<size_t>(c)];
        const double base = rest[static_cast<size_t>(j)][static_cast<size_t>(c)] +
                            p.offset[static_cast<size_t>(c)] + swing;
        for (int64_t m = 0; m < persons; ++m) {
          const double noise = sigma > 0.0 ? sigma * noise_rng.gaussian() : 0.0;
          out[static_cast<size_t>(((c * frames + t) * v + j) * persons + m)] =
              static_cast<T>(base + noise);
        }
      }
    }
  }
  return Tensor<T>::from_data({3, frames, v, persons}, std::move(out));
}

// Semantics are a fixed random projection of the motion parameters, so the
// mapping from motion to embedding is deterministic and invertible enough
// for cross-modal transfer to be learnable.
inline std::vector<double> project_and_normalize(const std::vector<double>& matrix,
                                                 int64_t rows, int64_t cols,
                                                 const std::vector<double>& vec) {
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      acc += matrix[static_cast<size_t>(r * cols + c)] * vec[static_cast<size_t>(c)];
    }
    out[static_cast<size_t>(r)] = acc;
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-12) throw NumericError("synthetic semantics: zero-norm embedding");
  for (double& v : out) v /= norm;
  return out;
}

inline std::vector<double> draw_matrix(uint64_t seed, const std::string& tag, int64_t rows,
                                       int64_t cols) {
  SplitMix64 rng = substream(seed, tag);
  std::vector<double> m(static_cast<size_t>(rows * cols));
  for (auto& v : m) v = rng.gaussian();
  return m;
}

// Writes the full dataset tree: manifest.json, split.json, samples/,
// semantics/names.stnsr and semantics/part_<e>.stnsr.
inline DatasetManifest generate_synthetic(const SynthConfig& config, uint64_t seed,
                                          const std::filesystem::path& out_dir) {
  config.validate();
  const JointLayout layout = JointLayout::by_name(config.layout);
  const PartitionStrategy strategy = PartitionStrategy::by_name(layout, config.strategy);
  const int64_t k = strategy.part_count();
  const int64_t a_count = config.categories;

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "samples");
  fs::create_directories(out_dir / "semantics");

  DatasetManifest manifest;
  manifest.layout = config.layout;
  for (int64_t a = 0; a < a_count; ++a) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "action_%02d", static_cast<int>(a));
    manifest.categories.emplace_back(buf);
  }

  // Seeded known/unknown selection.
  {
    std::vector<int64_t> order(static_cast<size_t>(a_count));
    for (int64_t a = 0; a < a_count; ++a) order[static_cast<size_t>(a)] = a;
    SplitMix64 rng = substream(seed, "split");
    for (int64_t i = a_count - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    std::vector<int64_t> known(order.begin(), order.begin() + config.known);
    std::vector<int64_t> unknown(order.begin() + config.known, order.end());
    std::sort(known.begin(), known.end());
    std::sort(unknown.begin(), unknown.end());
    for (int64_t a : known) manifest.split.known.push_back(manifest.categories[static_cast<size_t>(a)]);
    for (int64_t a : unknown) {
      manifest.split.unknown.push_back(manifest.categories[static_cast<size_t>(a)]);
    }
  }

  const auto theta = draw_motion_table(seed, a_count, k);

  const auto known_mask =
      resolve_split(manifest.categories, manifest.split).known_mask(a_count);
  for (int64_t a = 0; a < a_count; ++a) {
    const auto& name = manifest.categories[static_cast<size_t>(a)];
    const int64_t train_n = known_mask[static_cast<size_t>(a)] ? config.train_per_category : 0;
    for (int64_t s = 0; s < train_n + config.test_per_category; ++s) {
      const bool is_train = s < train_n;
      const int64_t idx = is_train ? s : s - train_n;
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s_%s_%03d", name.c_str(),
                    is_train ? "train" : "test", static_cast<int>(idx));
      SampleEntry entry;
      entry.id = buf;
      entry.label = a;
      entry.path = "samples/" + entry.id + ".stnsr";
      entry.role = is_train ? SampleRole::train : SampleRole::test;
      SplitMix64 noise_rng = substream(seed, "noise:" + entry.id);
      auto x = synth_sample<float>(layout, strategy, theta[static_cast<size_t>(a)],
                                   config.frames, config.persons, config.noise, noise_rng);
      save_tensor(out_dir / entry.path, x);
      manifest.samples.push_back(std::move(entry));
    }
  }

  // Semantic embeddings from the motion table.
  {
    const auto param_dim = static_cast<int64_t>(MotionParams{}.flat().size());
    const int64_t flat_dim = param_dim * k;
    const auto g_full = draw_matrix(seed, "semantics:names", config.d_sem, flat_dim);
    std::vector<float> names_mat(static_cast<size_t>(a_count * config.d_sem));
    for (int64_t a = 0; a < a_count; ++a) {
      std::vector<double> flat;
      flat.reserve(static_cast<size_t>(flat_dim));
      for (int64_t e = 0; e < k; ++e) {
        for (double v : theta[static_cast<size_t>(a)][static_cast<size_t>(e)].flat()) {
          flat.push_back(v);
        }
      }
      const auto row = project_and_normalize(g_full, config.d_sem, flat_dim, flat);
      for (int64_t d = 0; d < config.d_sem; ++d) {
        names_mat[static_cast<size_t>(a * config.d_sem + d)] =
            static_cast<float>(row[static_cast<size_t>(d)]);
      }
    }
    save_tensor(out_dir / "semantics/names.stnsr",
                Tensor<float>::from_data({a_count, config.d_sem}, std::move(names_mat)));
    manifest.semantics_names = "semantics/names.stnsr";

    for (int64_t e = 0; e < k; ++e) {
      const auto g_part =
          draw_matrix(seed, "semantics:part:" + std::to_string(e), config.d_sem, param_dim);
      std::vector<float> part_mat(static_cast<size_t>(a_count * config.d_sem));
      for (int64_t a = 0; a < a_count; ++a) {
        const auto pf = theta[static_cast<size_t>(a)][static_cast<size_t>(e)].flat();
        const auto row = project_and_normalize(g_part, config.d_sem, param_dim,
                                               {pf.begin(), pf.end()});
        for (int64_t d = 0; d < config.d_sem; ++d) {
          part_mat[static_cast<size_t>(a * config.d_sem + d)] =
              static_cast<float>(row[static_cast<size_t>(d)]);
        }
      }
      const auto path = "semantics/part_" + std::to_string(e) + ".stnsr";
      save_tensor(out_dir / path,
                  Tensor<float>::from_data({a_count, config.d_sem}, std::move(part_mat)));
      manifest.semantics_parts.push_back(path);
    }
  }

  save_manifest(out_dir, manifest);
  save_split(out_dir / "split.json", manifest.split);
  validate_manifest(manifest, out_dir);
  return manifest;
}

}  // namespace star
