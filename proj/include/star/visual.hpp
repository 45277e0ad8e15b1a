#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "star/layers.hpp"
#include "star/rng.hpp"
#include "star/skeleton.hpp"
#include "star/tensor.hpp"

namespace star {

struct VisualConfig {
  int64_t channels = 64;  // token width, also the attention width
  int64_t temporal_stride = 4;
  int64_t heads = 8;
  int64_t prompt_count = 100;  // attribute prompts per part
  int64_t d_lat = 32;
  int64_t ffn_hidden = 64;
  bool use_attention = true;     // false: replace attention by a token-mean broadcast
  bool use_prompts = true;       // false: prompts pinned to zero
  bool per_part_projection = false;

  void validate() const {
    if (channels < 1 || heads < 1 || channels % heads != 0) {
      throw ConfigError(detail::msg("attention width ", channels,
                                    " must be a positive multiple of ", heads, " heads"));
    }
    if (temporal_stride < 1) throw ConfigError("temporal_stride must be >= 1");
    if (prompt_count < 1) throw ConfigError("prompt_count must be >= 1");
    if (d_lat < 1 || ffn_hidden < 1) throw ConfigError("latent/hidden widths must be >= 1");
  }
};

// Raw joint coordinates of one person flattened to per-token features
// (x, y, z, dx, dy, dz); the temporal difference is zero at t = 0.
template <typename T>
std::vector<T> person_token_input(const Tensor<T>& part, int64_t person) {
  validate_sequence(part);
  const Shape& s = part.shape();
  const int64_t frames = s[1], joints = s[2], persons = s[3];
  if (person < 0 || person >= persons) {
    throw IndexError(detail::msg("person ", person, " out of range for ", persons));
  }
  auto pd = part.data();
  auto at = [&](int64_t c, int64_t t, int64_t j) {
    return pd[((c * frames + t) * joints + j) * persons + person];
  };
  std::vector<T> out(static_cast<size_t>(frames * joints * 6));
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t j = 0; j < joints; ++j) {
      T* row = out.data() + (t * joints + j) * 6;
      for (int64_t c = 0; c < 3; ++c) {
        row[c] = at(c, t, j);
        row[3 + c] = t == 0 ? T{0} : at(c, t, j) - at(c, t - 1, j);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> batch_token_inputs(const std::vector<const Tensor<T>*>& parts, int64_t person) {
  if (parts.empty()) throw ContractError("batch_token_inputs: empty batch");
  const Shape& first = parts.front()->shape();
  const int64_t frames = first[1], joints = first[2];
  std::vector<T> data;
  data.reserve(parts.size() * static_cast<size_t>(frames * joints * 6));
  for (const Tensor<T>* p : parts) {
    if (p->shape()[1] != frames || p->shape()[2] != joints) {
      throw DimensionError(detail::msg("batch_token_inputs: mixed shapes ",
                                       shape_str(p->shape()), " vs ", shape_str(first)));
    }
    auto row = person_token_input(*p, person);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor<T>::from_data({static_cast<int64_t>(parts.size()), frames * joints, 6},
                              std::move(data));
}

// Affine lift of per-token inputs to C channels, relu, then non-overlapping
// temporal mean pooling. One lift is shared by every part.
template <typename T>
class ToyEncoder {
 public:
  ToyEncoder() = default;

  ToyEncoder(ParameterStore<T>& store, uint64_t seed, int64_t channels, int64_t stride)
      : channels_(channels), stride_(stride) {
    lift_ = Affine<T>::create(store, seed, "encoder.lift", 6, channels);
  }

  // token_inputs: [B, T*Ve, 6] -> [B, (T/stride)*Ve, C]
  Tensor<T> encode(const Tensor<T>& token_inputs, int64_t frames, int64_t joints) const {
    const Shape& s = token_inputs.shape();
    if (s.size() != 3 || s[2] != 6 || s[1] != frames * joints) {
      throw DimensionError(detail::msg("encode: token inputs ", shape_str(s),
                                       " do not match T=", frames, ", V=", joints));
    }
    if (frames % stride_ != 0) {
      throw ConfigError(detail::msg("encode: ", frames, " frames not divisible by stride ",
                                    stride_));
    }
    const int64_t batch = s[0];
    auto lifted = relu(lift_(token_inputs));  // [B, T*Ve, C]
    auto grid = reshape(lifted, {batch, frames, joints * channels_});
    auto pooled = mean_pool_axis(grid, 1, stride_);
    return reshape(pooled, {batch, (frames / stride_) * joints, channels_});
  }

  int64_t channels() const { return channels_; }
  int64_t stride() const { return stride_; }

  void set_trainable(bool trainable) {
    lift_.w.set_requires_grad(trainable);
    lift_.b.set_requires_grad(trainable);
  }

 private:
  int64_t channels_ = 0;
  int64_t stride_ = 1;
  Affine<T> lift_;
};

// Prompt-queried multi-head scaled-dot-product attention. Queries come from
// the prompt bank only, so the output row count is always m.
template <typename T>
Tensor<T> cross_attend(const Tensor<T>& tokens, const Tensor<T>& prompt, const Tensor<T>& wq,
                       const Tensor<T>& wk, const Tensor<T>& wv, const Tensor<T>& wo,
                       int64_t heads) {
  const Shape& ts = tokens.shape();
  const Shape& ps = prompt.shape();
  if (ts.size() < 2 || ps.size() != 2) {
    throw DimensionError(detail::msg("cross_attend: tokens ", shape_str(ts), ", prompt ",
                                     shape_str(ps)));
  }
  const int64_t width = ps[1];
  if (ts.back() != width) {
    throw DimensionError(detail::msg("cross_attend: token width ", ts.back(),
                                     " differs from prompt width ", width));
  }
  if (heads < 1 || width % heads != 0) {
    throw DimensionError(detail::msg("cross_attend: width ", width, " not divisible by ",
                                     heads, " heads"));
  }
  const int64_t head_dim = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

  auto q = matmul(prompt, wq);  // [m, C]
  auto k = matmul(tokens, wk);  // [.., N, C]
  auto v = matmul(tokens, wv);
  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    auto qh = slice_lastdim(q, h * head_dim, head_dim);
    auto kh = slice_lastdim(k, h * head_dim, head_dim);
    auto vh = slice_lastdim(v, h * head_dim, head_dim);
    auto scores = scale(matmul(qh, transpose_last2(kh)), scale_factor);  // [.., m, N]
    auto weights = softmax_lastdim(scores);
    head_outputs.push_back(matmul(weights, vh));  // [.., m, head_dim]
  }
  return matmul(concat_lastdim(head_outputs), wo);
}

// FFN residual with the prompt, attribute-mean pooling, projection to the
// shared latent width.
template <typename T>
Tensor<T> part_latent(const Tensor<T>& attended, const Tensor<T>& prompt, const Mlp2<T>& ffn,
                      const Tensor<T>& projection) {
  const Shape& s = attended.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError(detail::msg("part_latent: expected [m,C] or [B,m,C], got ",
                                     shape_str(s)));
  }
  if (prompt.shape() != Shape{s[s.size() - 2], s.back()}) {
    throw DimensionError(detail::msg("part_latent: prompt ", shape_str(prompt.shape()),
                                     " does not match attended ", shape_str(s)));
  }
  auto residual = add(ffn(attended), prompt);
  auto pooled = mean_axis(residual, static_cast<int64_t>(s.size()) - 2);
  if (s.size() == 2) pooled = reshape(pooled, {1, s.back()});
  auto out = matmul(pooled, projection);
  return s.size() == 2 ? reshape(out, {out.shape().back()}) : out;
}

template <typename T>
Tensor<T> global_representation(const std::vector<Tensor<T>>& part_latents) {
  if (part_latents.empty()) throw ContractError("global_representation: no parts");
  Tensor<T> acc = part_latents.front();
  for (size_t e = 1; e < part_latents.size(); ++e) acc = add(acc, part_latents[e]);
  return acc;
}

// Per-part attention blocks, prompts, FFNs, plus the shared projection.
// Parameters live under "visual.<part>.*" and "visual.proj*".
template <typename T>
class VisualStream {
 public:
  struct Output {
    std::vector<Tensor<T>> parts;  // K tensors [B, d_lat]
    Tensor<T> global;              // [B, d_lat]
  };

  VisualStream(ParameterStore<T>& store, const VisualConfig& config,
               const PartitionStrategy& strategy, uint64_t seed)
      : config_(config), part_names_(strategy.part_names) {
    config.validate();
    const int64_t c = config.channels;
    for (const auto& part : part_names_) {
      const std::string base = "visual." + part;
      PartBlock block;
      block.prompt = store.add(base + ".prompt",
                               config.use_prompts
                                   ? init_prompt<T>(seed, base + ".prompt",
                                                    {config.prompt_count, c})
                                   : Tensor<T>::zeros({config.prompt_count, c}));
      if (!config.use_prompts) block.prompt.set_requires_grad(false);
      block.wq = store.add(base + ".wq", init_uniform_fan_in<T>(seed, base + ".wq", {c, c}, c));
      block.wk = store.add(base + ".wk", init_uniform_fan_in<T>(seed, base + ".wk", {c, c}, c));
      block.wv = store.add(base + ".wv", init_uniform_fan_in<T>(seed, base + ".wv", {c, c}, c));
      block.wo = store.add(base + ".wo", init_uniform_fan_in<T>(seed, base + ".wo", {c, c}, c));
      block.ffn = Mlp2<T>::create(store, seed, base + ".ffn", c, config.ffn_hidden, c);
      if (config.per_part_projection) {
        block.projection = store.add(base + ".proj",
                                     init_uniform_fan_in<T>(seed, base + ".proj",
                                                            {c, config.d_lat}, c));
      }
      blocks_.push_back(std::move(block));
    }
    if (!config.per_part_projection) {
      shared_projection_ = store.add(
          "visual.proj", init_uniform_fan_in<T>(seed, "visual.proj", {c, config.d_lat}, c));
    }
  }

  int64_t part_count() const { return static_cast<int64_t>(blocks_.size()); }
  const Tensor<T>& prompt(int64_t e) const { return blocks_.at(static_cast<size_t>(e)).prompt; }

  // Attention (or its mean-broadcast replacement) for one part.
  Tensor<T> attend(int64_t e, const Tensor<T>& tokens) const {
    const auto& block = blocks_.at(static_cast<size_t>(e));
    if (config_.use_attention) {
      return cross_attend(tokens, block.prompt, block.wq, block.wk, block.wv, block.wo,
                          config_.heads);
    }
    // Token-mean broadcast to m rows keeps shapes (and the prompt residual)
    // intact while removing the attention mechanism.
    const Shape& s = tokens.shape();
    auto mean = mean_axis(tokens, static_cast<int64_t>(s.size()) - 2);
    auto ones = Tensor<T>::full({config_.prompt_count, 1}, T{1});
    if (s.size() == 2) return matmul(ones, reshape(mean, {1, s.back()}));
    return matmul(ones, reshape(mean, {s[0], 1, s.back()}));
  }

  Tensor<T> latent(int64_t e, const Tensor<T>& attended) const {
    const auto& block = blocks_.at(static_cast<size_t>(e));
    const Tensor<T>& proj =
        config_.per_part_projection ? block.projection : shared_projection_;
    return part_latent(attended, block.prompt, block.ffn, proj);
  }

  // features[e]: [B, N_e, C] token matrices per part.
  Output forward(const std::vector<Tensor<T>>& features) const {
    if (features.size() != blocks_.size()) {
      throw ContractError(detail::msg("visual stream built for ", blocks_.size(),
                                      " parts, got ", features.size()));
    }
    Output out;
    for (int64_t e = 0; e < part_count(); ++e) {
      out.parts.push_back(latent(e, attend(e, features[static_cast<size_t>(e)])));
    }
    out.global = global_representation(out.parts);
    return out;
  }

 private:
  struct PartBlock {
    Tensor<T> prompt;
    Tensor<T> wq, wk, wv, wo;
    Mlp2<T> ffn;
    Tensor<T> projection;  // only when per-part projection is on
  };

  VisualConfig config_;
  std::vector<std::string> part_names_;
  std::vector<PartBlock> blocks_;
  Tensor<T> shared_projection_;
};

}  // namespace star
