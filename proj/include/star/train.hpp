#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/checkpoint.hpp"
#include "star/dataset.hpp"
#include "star/model.hpp"
#include "star/rng.hpp"
#include "star/semantics.hpp"

namespace star {

struct TrainConfig {
  int64_t epochs = 40;
  int64_t batch_size = 32;
  double lr = 1e-3;
  std::vector<int64_t> lr_decay_epochs{20, 30};
  double lr_decay_factor = 0.1;
  double weight_decay = 5e-4;
  uint64_t seed = 1;
  std::string encoder_mode = "pretrained";  // pretrained | joint | features
  int64_t pretrain_epochs = 30;
  double pretrain_lr = 0.1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!std::is_sorted(lr_decay_epochs.begin(), lr_decay_epochs.end())) {
      throw ConfigError("lr_decay_epochs must be ascending");
    }
    for (int64_t e : lr_decay_epochs) {
      if (e < 1) throw ConfigError("lr decay epochs must be >= 1");
    }
    if (encoder_mode != "pretrained" && encoder_mode != "joint" &&
        encoder_mode != "features") {
      throw ConfigError(detail::msg("unknown encoder_mode '", encoder_mode, "'"));
    }
    if (encoder_mode == "pretrained") {
      if (pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be >= 1");
      if (!(pretrain_lr > 0.0)) throw ConfigError("pretrain_lr must be positive");
    }
  }
};

// Learning rate for a 1-based epoch: the configured rate decays by the factor
// after each listed epoch completes (epoch 20 still runs at the base rate; 21
// runs decayed).
inline double lr_at_epoch(const TrainConfig& config, int64_t epoch) {
  double lr = config.lr;
  for (int64_t d : config.lr_decay_epochs) {
    if (epoch > d) lr *= config.lr_decay_factor;
  }
  return lr;
}

struct EpochLoss {
  int64_t epoch = 0;
  double part_alignment = 0.0;
  double semantic_alignment = 0.0;
  double global_alignment = 0.0;
  double total = 0.0;
};

// Everything a run needs in memory: preprocessed sequences, labels, roles,
// optional precomputed per-part features, and the semantic embedding set.
template <typename T>
struct RunData {
  DatasetManifest manifest;
  SplitIndices split;
  JointLayout layout;
  PartitionStrategy partition;

  std::vector<Tensor<T>> train_x;
  std::vector<int64_t> train_y;
  std::vector<std::vector<Tensor<T>>> train_features;  // per sample, K maps

  std::vector<Tensor<T>> test_x;
  std::vector<int64_t> test_y;
  std::vector<std::string> test_ids;
  std::vector<std::vector<Tensor<T>>> test_features;

  SemanticEmbeddingSet<T> semantics;

  int64_t categories() const { return static_cast<int64_t>(manifest.categories.size()); }
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> load_sample_features(const std::filesystem::path& dir,
                                            const SampleEntry& entry,
                                            const PartitionStrategy& partition,
                                            int64_t channels) {
  std::vector<Tensor<T>> feats;
  for (const auto& part : partition.part_names) {
    auto it = entry.features.find(part);
    if (it == entry.features.end()) {
      throw DataError(detail::msg("sample '", entry.id, "' carries no feature file for part '",
                                  part, "'"));
    }
    auto f = load_tensor<T>(dir / it->second);
    if (f.shape().size() != 2 || f.shape()[1] != channels) {
      throw DataError(detail::msg("feature map for sample '", entry.id, "' part '", part,
                                  "' must be rank-2 with width ", channels));
    }
    feats.push_back(std::move(f));
  }
  return feats;
}

}  // namespace detail

// Loads and preprocesses a dataset directory for training/evaluation.
// `side_info` selects the pseudo-text provider; otherwise the manifest's
// embedding files are used.
template <typename T>
RunData<T> load_run_data(const std::filesystem::path& dir, const ModelConfig<T>& config,
                         SemanticProvider provider,
                         const std::optional<std::filesystem::path>& side_info = {},
                         bool with_features = false) {
  RunData<T> data;
  data.manifest = load_manifest(dir);
  validate_manifest(data.manifest, dir);
  data.split = resolve_split(data.manifest.categories, data.manifest.split);
  data.layout = JointLayout::by_name(data.manifest.layout);
  if (data.manifest.layout != config.layout) {
    throw ConfigError(detail::msg("dataset uses layout '", data.manifest.layout,
                                  "', run is configured for '", config.layout, "'"));
  }
  data.partition = PartitionStrategy::by_name(data.layout, config.partition);

  for (const auto& entry : data.manifest.samples) {
    auto seq = load_sample<T>(dir, entry);
    auto x = preprocess(seq.x, config.target_frames, config.max_persons, data.layout.root);
    if (entry.role == SampleRole::train) {
      data.train_x.push_back(std::move(x));
      data.train_y.push_back(entry.label);
      if (with_features) {
        data.train_features.push_back(detail::load_sample_features<T>(
            dir, entry, data.partition, config.visual.channels));
      }
    } else {
      data.test_x.push_back(std::move(x));
      data.test_y.push_back(entry.label);
      data.test_ids.push_back(entry.id);
      if (with_features) {
        data.test_features.push_back(detail::load_sample_features<T>(
            dir, entry, data.partition, config.visual.channels));
      }
    }
  }

  const int64_t parts = static_cast<int64_t>(data.partition.part_count());
  if (provider == SemanticProvider::files) {
    data.semantics = load_semantics_from_files<T>(dir, data.manifest, parts);
  } else {
    if (!side_info) throw ConfigError("pseudo semantics require a side_info file");
    auto records = load_side_info(*side_info);
    data.semantics =
        build_pseudo_semantics<T>(data.manifest, records, data.partition, config.semantic.d_sem);
  }
  return data;
}

inline std::vector<int64_t> shuffled_indices(int64_t n, SplitMix64& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i) + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

// Trains the shared token encoder as a plain classifier over the known
// categories (mean-pooled whole-body features, affine head), then copies the
// learned lift into the model and freezes it.
template <typename T>
void pretrain_encoder(StarModel<T>& model, const RunData<T>& data, const TrainConfig& config) {
  const auto& mc = model.config();
  const std::vector<int64_t>& known = data.split.known;
  std::unordered_map<int64_t, int64_t> position;
  for (size_t i = 0; i < known.size(); ++i) position[known[i]] = static_cast<int64_t>(i);

  ParameterStore<T> scratch;
  ToyEncoder<T> encoder(scratch, substream(config.seed, "pretrain-encoder").next_u64(),
                        mc.visual.channels, mc.visual.temporal_stride);
  const PartitionStrategy& partition = model.partition();
  const int64_t k = static_cast<int64_t>(partition.part_count());
  auto head = Affine<T>::create(scratch, substream(config.seed, "pretrain-head").next_u64(),
                                "pretrain.head", k * mc.visual.channels,
                                static_cast<int64_t>(known.size()));

  const int64_t n = static_cast<int64_t>(data.train_x.size());
  if (n == 0) throw DataError("no training samples to pretrain on");
  const int64_t frames = data.train_x.front().shape()[1];
  const int64_t persons = data.train_x.front().shape()[3];

  // The head reads the concatenation of per-part mean features, so the lift
  // has to make every part separable on its own, matching how the recognizer
  // consumes the features later.
  std::vector<std::vector<Tensor<T>>> parts_of;
  parts_of.reserve(static_cast<size_t>(n));
  for (const auto& x : data.train_x) parts_of.push_back(decompose_parts(x, partition));

  for (int64_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    auto rng = substream(config.seed, "pretrain-epoch", static_cast<uint64_t>(epoch));
    const auto order = shuffled_indices(n, rng);
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const int64_t stop = std::min(n, start + config.batch_size);
      std::vector<int64_t> targets;
      for (int64_t i = start; i < stop; ++i) {
        targets.push_back(position.at(data.train_y[static_cast<size_t>(
            order[static_cast<size_t>(i)])]));
      }
      std::vector<Tensor<T>> pooled;
      pooled.reserve(static_cast<size_t>(k));
      for (int64_t e = 0; e < k; ++e) {
        std::vector<const Tensor<T>*> ptrs;
        ptrs.reserve(static_cast<size_t>(stop - start));
        for (int64_t i = start; i < stop; ++i) {
          ptrs.push_back(
              &parts_of[static_cast<size_t>(order[static_cast<size_t>(i)])][static_cast<size_t>(e)]);
        }
        const int64_t joints = ptrs.front()->shape()[2];
        Tensor<T> feats;
        for (int64_t person = 0; person < persons; ++person) {
          auto f = encoder.encode(batch_token_inputs<T>(ptrs, person), frames, joints);
          feats = person == 0 ? f : add(feats, f);
        }
        pooled.push_back(mean_axis(feats, 1));
      }
      auto logits = head(concat_lastdim(pooled));
      auto loss = cross_entropy_from_logits(logits, targets);
      loss.backward();
      sgd_step(scratch, config.pretrain_lr, config.weight_decay);
    }
  }

  for (const char* suffix : {".w", ".b"}) {
    auto* src = scratch.find(std::string("encoder.lift") + suffix);
    auto* dst = model.store().find(std::string("encoder.lift") + suffix);
    if (!src || !dst) throw ContractError("encoder parameters missing during pretraining");
    auto out = dst->mutable_data();
    std::copy(src->data().begin(), src->data().end(), out.begin());
  }
  model.encoder().set_trainable(false);
}

template <typename T>
struct FitResult {
  std::vector<EpochLoss> log;
  std::filesystem::path last_checkpoint;
  int64_t start_epoch = 1;  // first epoch actually run (resume skips earlier ones)
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> batch_part_features(const StarModel<T>& model, const RunData<T>& data,
                                           const std::vector<int64_t>& order, int64_t start,
                                           int64_t stop,
                                           const std::vector<std::vector<Tensor<T>>>* cache) {
  if (cache) {
    const int64_t k = static_cast<int64_t>(model.partition().part_count());
    std::vector<Tensor<T>> feats;
    feats.reserve(static_cast<size_t>(k));
    for (int64_t e = 0; e < k; ++e) {
      std::vector<const Tensor<T>*> rows;
      for (int64_t i = start; i < stop; ++i) {
        const auto idx = static_cast<size_t>(order[static_cast<size_t>(i)]);
        rows.push_back(&(*cache)[idx][static_cast<size_t>(e)]);
      }
      feats.push_back(stack_features(rows));
    }
    return feats;
  }
  std::vector<const Tensor<T>*> batch;
  for (int64_t i = start; i < stop; ++i) {
    batch.push_back(&data.train_x[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  }
  return model.encode_part_features(batch);
}

// With the encoder frozen its outputs are constants; precompute them once per
// sample so training steps skip the token lift entirely.
template <typename T>
std::vector<std::vector<Tensor<T>>> freeze_features(const StarModel<T>& model,
                                                    const std::vector<Tensor<T>>& xs) {
  std::vector<std::vector<Tensor<T>>> cache;
  cache.reserve(xs.size());
  for (const auto& x : xs) {
    auto feats = model.encode_part_features({&x});
    std::vector<Tensor<T>> maps;
    maps.reserve(feats.size());
    for (auto& f : feats) {
      const Shape s{f.shape()[1], f.shape()[2]};
      std::vector<T> values(f.data().begin(), f.data().end());
      maps.push_back(Tensor<T>::from_data(s, std::move(values)));
    }
    cache.push_back(std::move(maps));
  }
  return cache;
}

inline void append_loss_line(const std::filesystem::path& out_dir, const EpochLoss& row) {
  const auto path = out_dir / "losses.jsonl";
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  nlohmann::json j = {{"epoch", row.epoch},
                      {"l_mpce", row.part_alignment},
                      {"l_sce", row.semantic_alignment},
                      {"l_gce", row.global_alignment},
                      {"l_total", row.total}};
  out << j.dump() << "\n";
}

}  // namespace detail

// Full training: optional encoder pretraining, per-epoch seeded shuffles,
// stepped learning rate, one checkpoint directory per epoch. Deterministic
// given (data, config, seed) on one platform. `config_echo` is embedded in
// every checkpoint so evaluation can rebuild the model; `config_hash` covers
// only the keys a resumed run must agree on.
template <typename T>
FitResult<T> fit(StarModel<T>& model, const RunData<T>& data, const TrainConfig& config,
                 const std::filesystem::path& out_dir, const nlohmann::json& config_echo,
                 const std::string& config_hash,
                 const std::optional<std::filesystem::path>& resume = {}) {
  config.validate();
  model.check_semantics(data.semantics);

  // Training-data hygiene: every consumed sample must belong to a known
  // category.
  const auto known_mask = data.split.known_mask(data.categories());
  for (size_t i = 0; i < data.train_y.size(); ++i) {
    if (!known_mask[static_cast<size_t>(data.train_y[i])]) {
      throw ContractError(detail::msg("training sample ", i,
                                      " carries unknown-category label ", data.train_y[i]));
    }
  }
  if (data.train_x.empty()) throw DataError("no training samples");
  if (config.encoder_mode == "features" && data.train_features.empty()) {
    throw ConfigError("encoder_mode 'features' needs precomputed feature files in the manifest");
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(detail::msg("cannot create ", out_dir.string(), ": ", ec.message()));

  FitResult<T> result;
  int64_t first_epoch = 1;
  if (resume) {
    const auto meta = load_checkpoint_meta(*resume);
    if (meta.config_hash != config_hash) {
      throw CompatibilityError(detail::msg("checkpoint at ", resume->string(),
                                           " was written under a different configuration"));
    }
    if (meta.seed != config.seed) {
      throw CompatibilityError(detail::msg("checkpoint seed ", meta.seed,
                                           " differs from configured seed ", config.seed));
    }
    load_checkpoint_params(*resume, model.store());
    if (config.encoder_mode == "pretrained") model.encoder().set_trainable(false);
    first_epoch = meta.epoch + 1;
    result.last_checkpoint = *resume;
  } else if (config.encoder_mode == "pretrained") {
    pretrain_encoder(model, data, config);
  }
  result.start_epoch = first_epoch;
  if (!resume) {
    // A fresh run owns its loss log; only resumed runs append.
    std::filesystem::remove(out_dir / "losses.jsonl", ec);
  }

  const std::vector<std::vector<Tensor<T>>>* cache = nullptr;
  std::vector<std::vector<Tensor<T>>> frozen;
  if (config.encoder_mode == "features") {
    cache = &data.train_features;
  } else if (config.encoder_mode == "pretrained") {
    frozen = detail::freeze_features(model, data.train_x);
    cache = &frozen;
  }

  const int64_t n = static_cast<int64_t>(data.train_x.size());
  // Component toggles can leave parameters outside the objective graph
  // entirely; after the first backward pass, anything without a gradient is
  // frozen for the rest of the run so the optimizer contract stays intact.
  bool censused = false;
  for (int64_t epoch = first_epoch; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    auto rng = substream(config.seed, "epoch", static_cast<uint64_t>(epoch));
    const auto order = shuffled_indices(n, rng);

    EpochLoss row;
    row.epoch = epoch;
    int64_t steps = 0;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const int64_t stop = std::min(n, start + config.batch_size);
      std::vector<int64_t> labels;
      for (int64_t i = start; i < stop; ++i) {
        labels.push_back(data.train_y[static_cast<size_t>(order[static_cast<size_t>(i)])]);
      }
      try {
        auto feats = detail::batch_part_features(model, data, order, start, stop, cache);
        auto fwd = model.forward(feats, data.semantics);
        auto terms = compute_objective(model.config().objective, fwd.visual.parts,
                                       fwd.side_info, fwd.names, fwd.visual.global,
                                       data.split.known, labels);
        terms.total.backward();
        if (!censused) {
          for (auto& p : model.store().all()) {
            if (p.value.requires_grad() && !p.value.has_grad()) {
              p.value.set_requires_grad(false);
            }
          }
          censused = true;
        }
        sgd_step(model.store(), lr, config.weight_decay);
        row.part_alignment += terms.part_alignment.item();
        row.semantic_alignment += terms.semantic_alignment.item();
        row.global_alignment += terms.global_alignment.item();
        row.total += terms.total.item();
      } catch (const NumericError& e) {
        throw NumericError(detail::msg("epoch ", epoch, " step ", steps, ": ", e.what()));
      }
      ++steps;
    }
    row.part_alignment /= static_cast<double>(steps);
    row.semantic_alignment /= static_cast<double>(steps);
    row.global_alignment /= static_cast<double>(steps);
    row.total /= static_cast<double>(steps);
    result.log.push_back(row);
    detail::append_loss_line(out_dir, row);

    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.seed = config.seed;
    meta.config_hash = config_hash;
    meta.config = config_echo;
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03lld", static_cast<long long>(epoch));
    const auto dir = out_dir / "checkpoints" / name;
    save_checkpoint(dir, model.store(), meta);
    result.last_checkpoint = dir;
  }
  return result;
}

}  // namespace star
