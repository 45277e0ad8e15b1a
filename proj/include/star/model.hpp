#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "star/error.hpp"
#include "star/objectives.hpp"
#include "star/semantics.hpp"
#include "star/skeleton.hpp"
#include "star/tensor.hpp"
#include "star/visual.hpp"

namespace star {

template <typename T>
struct ModelConfig {
  std::string layout = "ntu25";
  std::string partition = "six";
  int64_t target_frames = 32;
  int64_t max_persons = 1;
  VisualConfig visual;
  SemanticStreamConfig semantic;
  ObjectiveConfig<T> objective;

  void validate() const {
    JointLayout::by_name(layout);
    visual.validate();
    objective.validate();
    if (semantic.d_sem <= 0 || semantic.d_lat <= 0 || semantic.hidden <= 0) {
      throw ConfigError("semantic stream dimensions must be positive");
    }
    if (visual.d_lat != semantic.d_lat) {
      throw ConfigError(detail::msg("latent widths differ: visual ", visual.d_lat,
                                    " vs semantic ", semantic.d_lat));
    }
    if (target_frames <= 0) throw ConfigError("target_frames must be positive");
    if (max_persons <= 0) throw ConfigError("max_persons must be positive");
    if (target_frames % visual.temporal_stride != 0) {
      throw ConfigError(detail::msg("target_frames ", target_frames,
                                    " not divisible by temporal stride ",
                                    visual.temporal_stride));
    }
  }
};

// Stacks B single-sample feature maps [N, C] into one [B, N, C] constant.
template <typename T>
Tensor<T> stack_features(const std::vector<const Tensor<T>*>& feats) {
  if (feats.empty()) throw ContractError("stack_features: empty batch");
  const Shape base = feats.front()->shape();
  if (base.size() != 2) {
    throw DimensionError(detail::msg("stack_features expects rank-2 maps, got rank ",
                                     base.size()));
  }
  std::vector<T> data;
  data.reserve(static_cast<size_t>(feats.size()) * static_cast<size_t>(base[0] * base[1]));
  for (const auto* f : feats) {
    if (f->shape() != base) throw DimensionError("stack_features: ragged feature shapes");
    data.insert(data.end(), f->data().begin(), f->data().end());
  }
  return Tensor<T>::from_data({static_cast<int64_t>(feats.size()), base[0], base[1]},
                              std::move(data));
}

// Full recognizer: shared toy encoder, per-part visual stream, semantic
// stream, and the alignment objective over a common latent space.
template <typename T>
class StarModel {
 public:
  StarModel(const ModelConfig<T>& config, int64_t categories, uint64_t seed)
      : config_((config.validate(), config)),
        layout_(JointLayout::by_name(config.layout)),
        partition_(PartitionStrategy::by_name(layout_, config.partition)),
        categories_(categories),
        encoder_(store_, substream(seed, "encoder").next_u64(), config.visual.channels,
                 config.visual.temporal_stride),
        visual_(store_, config.visual, partition_, substream(seed, "visual").next_u64()),
        semantic_(store_, config.semantic, static_cast<int64_t>(partition_.part_count()),
                  categories, substream(seed, "semantic").next_u64()) {
    if (categories < 2) {
      throw ConfigError(detail::msg("need at least 2 categories, got ", categories));
    }
  }

  // Per-part feature maps for a batch of preprocessed sequences [3, F, V, M]:
  // tokens are encoded per person and person maps are summed.
  std::vector<Tensor<T>> encode_part_features(
      const std::vector<const Tensor<T>*>& batch) const {
    if (batch.empty()) throw ContractError("encode_part_features: empty batch");
    const int64_t frames = batch.front()->shape()[1];
    const int64_t persons = batch.front()->shape()[3];
    std::vector<std::vector<Tensor<T>>> parts;
    parts.reserve(batch.size());
    for (const auto* x : batch) {
      if (x->shape() != batch.front()->shape()) {
        throw DimensionError("encode_part_features: ragged batch shapes");
      }
      parts.push_back(decompose_parts(*x, partition_));
    }
    std::vector<Tensor<T>> out;
    const int64_t k = static_cast<int64_t>(partition_.part_count());
    for (int64_t e = 0; e < k; ++e) {
      std::vector<const Tensor<T>*> ptrs;
      ptrs.reserve(parts.size());
      for (const auto& p : parts) ptrs.push_back(&p[static_cast<size_t>(e)]);
      const int64_t joints = ptrs.front()->shape()[2];
      Tensor<T> summed;
      for (int64_t person = 0; person < persons; ++person) {
        auto feats = encoder_.encode(batch_token_inputs<T>(ptrs, person), frames, joints);
        summed = person == 0 ? feats : add(summed, feats);
      }
      out.push_back(summed);
    }
    return out;
  }

  struct Forward {
    typename VisualStream<T>::Output visual;  // parts K x [B, d_lat]; global [B, d_lat]
    std::vector<Tensor<T>> side_info;         // K x [A, d_lat]
    Tensor<T> names;                          // [A, d_lat]
  };

  Forward forward(const std::vector<Tensor<T>>& part_features,
                  const SemanticEmbeddingSet<T>& semantics) const {
    check_semantics(semantics);
    Forward f;
    f.visual = visual_.forward(part_features);
    f.side_info = semantic_.project_side_info(semantics.f_si);
    f.names = semantic_.project_names(semantics.f_cn);
    return f;
  }

  void check_semantics(const SemanticEmbeddingSet<T>& semantics) const {
    if (semantics.d_sem() != config_.semantic.d_sem) {
      throw CompatibilityError(detail::msg("semantic width ", semantics.d_sem(),
                                           " does not match the configured ",
                                           config_.semantic.d_sem));
    }
    if (semantics.categories() != categories_) {
      throw CompatibilityError(detail::msg("semantics cover ", semantics.categories(),
                                           " categories, model expects ", categories_));
    }
    if (static_cast<int64_t>(semantics.f_si.size()) !=
        static_cast<int64_t>(partition_.part_count())) {
      throw CompatibilityError(detail::msg("semantics carry ", semantics.f_si.size(),
                                           " parts, partition has ",
                                           partition_.part_count()));
    }
  }

  const ModelConfig<T>& config() const { return config_; }
  const JointLayout& layout() const { return layout_; }
  const PartitionStrategy& partition() const { return partition_; }
  int64_t categories() const { return categories_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  ToyEncoder<T>& encoder() { return encoder_; }
  const ToyEncoder<T>& encoder() const { return encoder_; }
  VisualStream<T>& visual() { return visual_; }
  const VisualStream<T>& visual() const { return visual_; }
  SemanticStream<T>& semantic() { return semantic_; }
  const SemanticStream<T>& semantic() const { return semantic_; }

 private:
  ModelConfig<T> config_;
  JointLayout layout_;
  PartitionStrategy partition_;
  int64_t categories_ = 0;
  ParameterStore<T> store_;
  ToyEncoder<T> encoder_;
  VisualStream<T> visual_;
  SemanticStream<T> semantic_;
};

}  // namespace star
