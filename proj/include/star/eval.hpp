#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/model.hpp"
#include "star/train.hpp"

namespace star {

enum class EvalMode { zsl, gzsl };

inline EvalMode eval_mode_from_name(const std::string& s) {
  if (s == "zsl") return EvalMode::zsl;
  if (s == "gzsl") return EvalMode::gzsl;
  throw ConfigError(detail::msg("unknown eval mode '", s, "'"));
}

inline const char* eval_mode_name(EvalMode m) { return m == EvalMode::zsl ? "zsl" : "gzsl"; }

// Raw scores for every (test sample, category) pair. Calibration enters
// additively at prediction time, so these are computed exactly once.
struct ScoreTable {
  int64_t categories = 0;
  std::vector<std::string> category_names;
  std::vector<int64_t> labels;
  std::vector<std::string> ids;
  std::vector<double> scores;  // N x categories, row-major

  int64_t samples() const { return static_cast<int64_t>(labels.size()); }
  const double* row(int64_t i) const { return scores.data() + i * categories; }
};

template <typename T>
struct EvalOutputs {
  ScoreTable table;
  Tensor<T> f_v;                 // [N_test, d_lat]
  std::vector<Tensor<T>> f_si;   // K x [A, d_lat]
  Tensor<T> f_cn;                // [A, d_lat]
};

// Scores every test sample against every category name embedding.
template <typename T>
EvalOutputs<T> compute_eval_outputs(const StarModel<T>& model, const RunData<T>& data,
                                    bool use_feature_cache, int64_t batch_size = 32) {
  if (data.test_x.empty()) throw DataError("dataset has no test samples");
  if (use_feature_cache && data.test_features.empty()) {
    throw ConfigError("feature-cache evaluation needs precomputed feature files");
  }
  model.check_semantics(data.semantics);

  EvalOutputs<T> out;
  out.f_si = model.semantic().project_side_info(data.semantics.f_si);
  out.f_cn = model.semantic().project_names(data.semantics.f_cn);

  const int64_t n = static_cast<int64_t>(data.test_x.size());
  const int64_t cats = data.categories();
  const int64_t d_lat = out.f_cn.shape()[1];
  out.table.categories = cats;
  out.table.category_names = data.manifest.categories;
  out.table.labels = data.test_y;
  out.table.ids = data.test_ids;
  out.table.scores.resize(static_cast<size_t>(n * cats));
  std::vector<T> f_v_rows(static_cast<size_t>(n * d_lat));

  const int64_t k = static_cast<int64_t>(model.partition().part_count());
  auto names_t = transpose_last2(out.f_cn);
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<Tensor<T>> feats;
    if (use_feature_cache) {
      for (int64_t e = 0; e < k; ++e) {
        std::vector<const Tensor<T>*> rows;
        for (int64_t i = start; i < stop; ++i) {
          rows.push_back(&data.test_features[static_cast<size_t>(i)][static_cast<size_t>(e)]);
        }
        feats.push_back(stack_features(rows));
      }
    } else {
      std::vector<const Tensor<T>*> batch;
      for (int64_t i = start; i < stop; ++i) {
        batch.push_back(&data.test_x[static_cast<size_t>(i)]);
      }
      feats = model.encode_part_features(batch);
    }
    auto visual = model.visual().forward(feats);
    auto scores = matmul(visual.global, names_t);  // [B, A]
    for (int64_t i = start; i < stop; ++i) {
      for (int64_t a = 0; a < cats; ++a) {
        out.table.scores[static_cast<size_t>(i * cats + a)] =
            static_cast<double>(scores.data()[(i - start) * cats + a]);
      }
      for (int64_t x = 0; x < d_lat; ++x) {
        f_v_rows[static_cast<size_t>(i * d_lat + x)] =
            visual.global.data()[(i - start) * d_lat + x];
      }
    }
  }
  out.f_v = Tensor<T>::from_data({n, d_lat}, std::move(f_v_rows));
  return out;
}

// Calibrated prediction over one score row. In gzsl mode gamma is subtracted
// from every known category's score; zsl restricts candidates to the unknown
// categories and ignores gamma. Ties go to the lowest category index.
inline int64_t predict_row(const double* scores, int64_t categories,
                           const std::vector<bool>& known_mask, EvalMode mode, double gamma) {
  int64_t best = -1;
  double best_score = 0.0;
  for (int64_t a = 0; a < categories; ++a) {
    const bool known = known_mask[static_cast<size_t>(a)];
    if (mode == EvalMode::zsl && known) continue;
    const double s = scores[a] - (mode == EvalMode::gzsl && known ? gamma : 0.0);
    if (best < 0 || s > best_score) {
      best = a;
      best_score = s;
    }
  }
  if (best < 0) throw ContractError("prediction over an empty candidate set");
  return best;
}

inline std::vector<int64_t> predict_all(const ScoreTable& table,
                                        const std::vector<bool>& known_mask, EvalMode mode,
                                        double gamma) {
  std::vector<int64_t> preds(static_cast<size_t>(table.samples()));
  for (int64_t i = 0; i < table.samples(); ++i) {
    preds[static_cast<size_t>(i)] = predict_row(table.row(i), table.categories, known_mask,
                                                mode, gamma);
  }
  return preds;
}

struct MetricsReport {
  std::string mode;
  double gamma = 0.0;
  double acc = 0.0;              // zsl top-1 over unseen-category test samples
  double s = 0.0, u = 0.0, h = 0.0;  // gzsl
  int64_t samples = 0;
  std::vector<std::string> category_names;
  std::map<std::string, double> per_category;
  std::vector<int64_t> confusion;  // categories x categories; rows true, cols predicted
};

inline double harmonic_mean(double s, double u) {
  return s + u > 0.0 ? 2.0 * s * u / (s + u) : 0.0;
}

inline MetricsReport metrics_from_predictions(const ScoreTable& table,
                                              const SplitIndices& split, EvalMode mode,
                                              double gamma,
                                              const std::vector<int64_t>& preds) {
  const auto known_mask = split.known_mask(table.categories);
  MetricsReport report;
  report.mode = eval_mode_name(mode);
  report.gamma = mode == EvalMode::gzsl ? gamma : 0.0;
  report.category_names = table.category_names;
  report.confusion.assign(static_cast<size_t>(table.categories * table.categories), 0);

  std::map<int64_t, std::pair<int64_t, int64_t>> per_cat;  // label -> (correct, total)
  int64_t seen_total = 0, seen_correct = 0, unseen_total = 0, unseen_correct = 0;
  for (int64_t i = 0; i < table.samples(); ++i) {
    const int64_t label = table.labels[static_cast<size_t>(i)];
    const bool seen = known_mask[static_cast<size_t>(label)];
    if (mode == EvalMode::zsl && seen) continue;
    const int64_t pred = preds[static_cast<size_t>(i)];
    report.confusion[static_cast<size_t>(label * table.categories + pred)] += 1;
    auto& [correct, total] = per_cat[label];
    total += 1;
    correct += pred == label ? 1 : 0;
    (seen ? seen_total : unseen_total) += 1;
    if (pred == label) (seen ? seen_correct : unseen_correct) += 1;
    report.samples += 1;
  }
  if (mode == EvalMode::zsl) {
    if (unseen_total == 0) throw DataError("no unseen-category test samples to evaluate");
    report.acc = static_cast<double>(unseen_correct) / static_cast<double>(unseen_total);
  } else {
    if (seen_total == 0) throw DataError("no known-category test samples to evaluate");
    if (unseen_total == 0) throw DataError("no unseen-category test samples to evaluate");
    report.s = static_cast<double>(seen_correct) / static_cast<double>(seen_total);
    report.u = static_cast<double>(unseen_correct) / static_cast<double>(unseen_total);
    report.h = harmonic_mean(report.s, report.u);
  }
  for (const auto& [label, counts] : per_cat) {
    report.per_category[table.category_names[static_cast<size_t>(label)]] =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return report;
}

inline MetricsReport evaluate_scores(const ScoreTable& table, const SplitIndices& split,
                                     EvalMode mode, double gamma) {
  const auto known_mask = split.known_mask(table.categories);
  return metrics_from_predictions(table, split, mode, gamma,
                                  predict_all(table, known_mask, mode, gamma));
}

struct GammaSweepEntry {
  double gamma = 0.0;
  double s = 0.0, u = 0.0, h = 0.0;
};

struct GammaSweepResult {
  std::vector<GammaSweepEntry> entries;
  size_t best_index = 0;  // first gamma attaining the highest H

  const GammaSweepEntry& best() const { return entries[best_index]; }
};

// Evaluates the cached scores at every gamma and asserts the calibration
// guarantees: once a sample is predicted as an unseen category it keeps that
// exact prediction for every larger gamma, so the predicted-unseen count only
// grows, U never drops and S never rises.
inline GammaSweepResult gamma_sweep(const ScoreTable& table, const SplitIndices& split,
                                    const std::vector<double>& gammas) {
  if (gammas.empty()) throw ContractError("gamma sweep needs at least one value");
  for (size_t i = 1; i < gammas.size(); ++i) {
    if (!(gammas[i] > gammas[i - 1])) {
      throw ContractError(detail::msg("gamma list must be strictly ascending; entry ", i,
                                      " is ", gammas[i], " after ", gammas[i - 1]));
    }
  }
  const auto known_mask = split.known_mask(table.categories);
  GammaSweepResult result;
  std::vector<int64_t> prev;
  int64_t prev_unseen = 0;
  for (size_t g = 0; g < gammas.size(); ++g) {
    auto preds = predict_all(table, known_mask, EvalMode::gzsl, gammas[g]);
    int64_t unseen_now = 0;
    for (int64_t i = 0; i < table.samples(); ++i) {
      const int64_t p = preds[static_cast<size_t>(i)];
      if (!known_mask[static_cast<size_t>(p)]) ++unseen_now;
      if (!prev.empty()) {
        const int64_t q = prev[static_cast<size_t>(i)];
        if (!known_mask[static_cast<size_t>(q)] && p != q) {
          throw ContractError(detail::msg("calibration broke monotonicity on sample ", i));
        }
      }
    }
    if (unseen_now < prev_unseen) {
      throw ContractError("predicted-unseen count decreased along the sweep");
    }
    auto report = metrics_from_predictions(table, split, EvalMode::gzsl, gammas[g], preds);
    if (!result.entries.empty()) {
      if (report.s > result.entries.back().s + 1e-15 ||
          report.u < result.entries.back().u - 1e-15) {
        throw ContractError("S/U monotonicity violated along the sweep");
      }
    }
    result.entries.push_back({gammas[g], report.s, report.u, report.h});
    if (report.h > result.entries[result.best_index].h) result.best_index = g;
    prev = std::move(preds);
    prev_unseen = unseen_now;
  }
  return result;
}

inline nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j = {{"mode", report.mode}, {"samples", report.samples}};
  if (report.mode == "zsl") {
    j["acc"] = report.acc;
  } else {
    j["gamma"] = report.gamma;
    j["S"] = report.s;
    j["U"] = report.u;
    j["H"] = report.h;
  }
  j["per_category"] = report.per_category;
  return j;
}

inline void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << report_to_json(report).dump(2) << "\n";
}

inline void write_confusion_csv(const std::filesystem::path& path,
                                const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << "true\\pred";
  for (const auto& name : report.category_names) out << "," << name;
  out << "\n";
  const auto n = static_cast<int64_t>(report.category_names.size());
  for (int64_t r = 0; r < n; ++r) {
    out << report.category_names[static_cast<size_t>(r)];
    for (int64_t c = 0; c < n; ++c) {
      out << "," << report.confusion[static_cast<size_t>(r * n + c)];
    }
    out << "\n";
  }
}

inline void write_sweep_csv(const std::filesystem::path& path, const GammaSweepResult& sweep) {
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << "gamma,S,U,H\n";
  char line[128];
  for (const auto& e : sweep.entries) {
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f", e.gamma, e.s, e.u, e.h);
    out << line << "\n";
  }
}

// Writes the latent-space snapshot: one row per test sample plus the
// per-category embeddings, with an index tying rows to sample ids.
template <typename T>
void dump_embeddings(const EvalOutputs<T>& outputs, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(detail::msg("cannot create ", out_dir.string(), ": ", ec.message()));
  save_tensor(out_dir / "f_v.stnsr", outputs.f_v);
  save_tensor(out_dir / "f_cn.stnsr", outputs.f_cn);
  for (size_t e = 0; e < outputs.f_si.size(); ++e) {
    save_tensor(out_dir / ("f_si_part_" + std::to_string(e) + ".stnsr"), outputs.f_si[e]);
  }
  nlohmann::json samples = nlohmann::json::array();
  for (int64_t i = 0; i < outputs.table.samples(); ++i) {
    samples.push_back(
        {{"row", i},
         {"id", outputs.table.ids[static_cast<size_t>(i)]},
         {"label", outputs.table.labels[static_cast<size_t>(i)]},
         {"category",
          outputs.table.category_names[static_cast<size_t>(
              outputs.table.labels[static_cast<size_t>(i)])]}});
  }
  nlohmann::json index = {{"samples", samples},
                          {"categories", outputs.table.category_names},
                          {"parts", outputs.f_si.size()}};
  const auto path = out_dir / "index.json";
  std::ofstream out(path);
  if (!out) throw IoError(detail::msg("cannot write ", path.string()));
  out << index.dump(2) << "\n";
}

}  // namespace star
