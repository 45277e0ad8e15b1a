#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "star/error.hpp"
#include "star/tensor.hpp"

namespace star {

template <typename T>
struct ObjectiveConfig {
  T alpha = static_cast<T>(0.1);
  T beta = static_cast<T>(0.1);
  bool use_part_alignment = true;   // part latent vs part side-info over known cats
  bool use_semantic_alignment = true;  // part side-info vs category names, all cats
  bool use_global_alignment = true;    // global latent vs category names over known cats

  void validate() const {
    if (alpha < T(0) || beta < T(0)) {
      throw ConfigError(detail::msg("objective weights must be nonnegative, got alpha=",
                                    alpha, " beta=", beta));
    }
    if (!use_part_alignment && !use_semantic_alignment && !use_global_alignment) {
      throw ConfigError("at least one objective term must be enabled");
    }
  }
};

namespace detail {

inline std::vector<int64_t> known_positions(const std::vector<int64_t>& known,
                                            const std::vector<int64_t>& labels) {
  std::unordered_map<int64_t, int64_t> pos;
  for (size_t i = 0; i < known.size(); ++i) pos[known[i]] = static_cast<int64_t>(i);
  std::vector<int64_t> out;
  out.reserve(labels.size());
  for (int64_t label : labels) {
    auto it = pos.find(label);
    if (it == pos.end()) {
      throw ContractError(detail::msg("label ", label, " is not a known category"));
    }
    out.push_back(it->second);
  }
  return out;
}

template <typename T>
Tensor<T> logits_against(const Tensor<T>& queries, const Tensor<T>& references) {
  return matmul(queries, transpose_last2(references));
}

}  // namespace detail

// Mean over parts of the cross entropy between each part latent and the known
// categories' part side-info embeddings.
template <typename T>
Tensor<T> part_alignment_loss(const std::vector<Tensor<T>>& part_latents,
                              const std::vector<Tensor<T>>& part_side_info,
                              const std::vector<int64_t>& known,
                              const std::vector<int64_t>& labels) {
  if (part_latents.empty() || part_latents.size() != part_side_info.size()) {
    throw ContractError(detail::msg("part latent/side-info count mismatch: ",
                                    part_latents.size(), " vs ", part_side_info.size()));
  }
  if (known.empty()) throw ContractError("known category list is empty");
  const auto targets = detail::known_positions(known, labels);
  Tensor<T> acc;
  bool first = true;
  for (size_t e = 0; e < part_latents.size(); ++e) {
    auto gathered = gather_rows(part_side_info[e], known);
    auto loss = cross_entropy_from_logits(
        detail::logits_against(part_latents[e], gathered), targets);
    acc = first ? loss : add(acc, loss);
    first = false;
  }
  return scale(acc, T(1) / static_cast<T>(part_latents.size()));
}

// Mean over parts of the cross entropy that ties each category's part
// side-info embedding to its own name embedding. Uses every category, so it
// is independent of the batch.
template <typename T>
Tensor<T> semantic_alignment_loss(const std::vector<Tensor<T>>& part_side_info,
                                  const Tensor<T>& category_names) {
  if (part_side_info.empty()) throw ContractError("no part side-info embeddings");
  const int64_t categories = category_names.shape()[0];
  for (const auto& f : part_side_info) {
    if (f.shape()[0] != categories) {
      throw ContractError(detail::msg("side-info rows ", f.shape()[0],
                                      " vs category names rows ", categories));
    }
  }
  std::vector<int64_t> diag(static_cast<size_t>(categories));
  for (int64_t i = 0; i < categories; ++i) diag[static_cast<size_t>(i)] = i;
  Tensor<T> acc;
  bool first = true;
  for (const auto& f : part_side_info) {
    auto loss =
        cross_entropy_from_logits(detail::logits_against(f, category_names), diag);
    acc = first ? loss : add(acc, loss);
    first = false;
  }
  return scale(acc, T(1) / static_cast<T>(part_side_info.size()));
}

// Cross entropy between the global latent and the known categories' name
// embeddings.
template <typename T>
Tensor<T> global_alignment_loss(const Tensor<T>& global_latent,
                                const Tensor<T>& category_names,
                                const std::vector<int64_t>& known,
                                const std::vector<int64_t>& labels) {
  if (known.empty()) throw ContractError("known category list is empty");
  const auto targets = detail::known_positions(known, labels);
  auto gathered = gather_rows(category_names, known);
  return cross_entropy_from_logits(detail::logits_against(global_latent, gathered),
                                   targets);
}

template <typename T>
struct ObjectiveTerms {
  Tensor<T> part_alignment;
  Tensor<T> semantic_alignment;
  Tensor<T> global_alignment;
  Tensor<T> total;
};

template <typename T>
ObjectiveTerms<T> compute_objective(const ObjectiveConfig<T>& config,
                                    const std::vector<Tensor<T>>& part_latents,
                                    const std::vector<Tensor<T>>& part_side_info,
                                    const Tensor<T>& category_names,
                                    const Tensor<T>& global_latent,
                                    const std::vector<int64_t>& known,
                                    const std::vector<int64_t>& labels) {
  config.validate();
  ObjectiveTerms<T> terms;
  terms.part_alignment = Tensor<T>::scalar(T(0));
  terms.semantic_alignment = Tensor<T>::scalar(T(0));
  terms.global_alignment = Tensor<T>::scalar(T(0));
  Tensor<T> total;
  bool first = true;
  auto accumulate = [&](const Tensor<T>& term) {
    total = first ? term : add(total, term);
    first = false;
  };
  if (config.use_part_alignment) {
    terms.part_alignment = part_alignment_loss(part_latents, part_side_info, known, labels);
    accumulate(terms.part_alignment);
  }
  if (config.use_semantic_alignment) {
    terms.semantic_alignment = semantic_alignment_loss(part_side_info, category_names);
    accumulate(scale(terms.semantic_alignment, config.alpha));
  }
  if (config.use_global_alignment) {
    terms.global_alignment =
        global_alignment_loss(global_latent, category_names, known, labels);
    accumulate(scale(terms.global_alignment, config.beta));
  }
  terms.total = total;
  return terms;
}

}  // namespace star
