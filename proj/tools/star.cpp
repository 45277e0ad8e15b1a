#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "star/checkpoint.hpp"
#include "star/eval.hpp"
#include "star/run_config.hpp"
#include "star/synthetic.hpp"
#include "star/train.hpp"

namespace {

using star::RunConfig;

std::optional<uint64_t> env_seed() {
  const char* v = std::getenv("STAR_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(v, &end, 10);
  if (!end || *end != '\0') {
    throw star::ConfigError(star::detail::msg("STAR_SEED is not an integer: '", v, "'"));
  }
  return static_cast<uint64_t>(parsed);
}

// Collects only the flags the user actually set, so file values survive
// unset flags and flags beat the file.
struct Overrides {
  nlohmann::json doc = nlohmann::json::object();
  std::vector<std::function<void()>> collectors;

  void collect() {
    for (auto& f : collectors) f();
  }
};

template <typename V>
void bind_option(CLI::App* cmd, Overrides& bag, const std::string& flag,
                 const std::string& key, V& holder, const std::string& desc) {
  auto* opt = cmd->add_option(flag, holder, desc);
  bag.collectors.push_back([opt, key, &bag, &holder] {
    if (opt->count() > 0) bag.doc[key] = holder;
  });
}

void bind_list(CLI::App* cmd, Overrides& bag, const std::string& flag, const std::string& key,
               std::vector<double>& holder, const std::string& desc) {
  auto* opt = cmd->add_option(flag, holder, desc)->delimiter(',');
  bag.collectors.push_back([opt, key, &bag, &holder] {
    if (opt->count() > 0) bag.doc[key] = holder;
  });
}

void bind_int_list(CLI::App* cmd, Overrides& bag, const std::string& flag,
                   const std::string& key, std::vector<int64_t>& holder,
                   const std::string& desc) {
  auto* opt = cmd->add_option(flag, holder, desc)->delimiter(',');
  bag.collectors.push_back([opt, key, &bag, &holder] {
    if (opt->count() > 0) bag.doc[key] = holder;
  });
}

// Holders for every overridable config key, shared by train/eval/sweep/dump.
struct ConfigFlags {
  std::string config_path;
  std::string dataset, out, side_info, provider, checkpoint, resume;
  std::string layout, partition, encoder_mode, mode;
  int64_t frames = 0, persons = 0, channels = 0, stride = 0, heads = 0, prompt_count = 0;
  int64_t d_lat = 0, d_sem = 0, ffn_hidden = 0, semantic_hidden = 0;
  int64_t epochs = 0, batch_size = 0, pretrain_epochs = 0, eval_batch = 0;
  double alpha = 0, beta = 0, lr = 0, lr_decay_factor = 0, weight_decay = 0;
  double pretrain_lr = 0, gamma = 0;
  uint64_t seed = 0;
  bool use_attention = true, use_visual_prompts = true, use_semantic_prompts = true;
  bool use_part_loss = true, use_semantic_loss = true, use_global_loss = true;
  bool visual_proj_per_part = false, semantic_proj_per_part = false;
  std::vector<int64_t> lr_decay_epochs;
  std::vector<double> gamma_list;
};

void bind_common(CLI::App* cmd, Overrides& bag, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  bind_option(cmd, bag, "--dataset", "dataset", f.dataset, "dataset directory");
  bind_option(cmd, bag, "--out", "out", f.out, "output directory");
  bind_option(cmd, bag, "--side-info", "side_info", f.side_info,
              "side-information JSON (pseudo provider)");
  bind_option(cmd, bag, "--provider", "provider", f.provider,
              "semantic embedding provider: files|pseudo");
  bind_option(cmd, bag, "--seed", "seed", f.seed, "run seed");
  bind_option(cmd, bag, "--layout", "layout", f.layout, "joint layout name");
  bind_option(cmd, bag, "--partition", "partition", f.partition,
              "body partition: two|four|six");
  bind_option(cmd, bag, "--frames", "frames", f.frames, "resampled frame count");
  bind_option(cmd, bag, "--persons", "persons", f.persons, "person slots");
  bind_option(cmd, bag, "--channels", "channels", f.channels, "encoder channels");
  bind_option(cmd, bag, "--stride", "stride", f.stride, "temporal pooling stride");
  bind_option(cmd, bag, "--heads", "heads", f.heads, "attention heads");
  bind_option(cmd, bag, "--prompt-count", "prompt_count", f.prompt_count,
              "attribute prompts per part");
  bind_option(cmd, bag, "--d-lat", "d_lat", f.d_lat, "shared latent width");
  bind_option(cmd, bag, "--d-sem", "d_sem", f.d_sem, "semantic embedding width");
  bind_option(cmd, bag, "--ffn-hidden", "ffn_hidden", f.ffn_hidden, "visual FFN hidden width");
  bind_option(cmd, bag, "--semantic-hidden", "semantic_hidden", f.semantic_hidden,
              "semantic projector hidden width");
  bind_option(cmd, bag, "--visual-proj-per-part", "visual_proj_per_part",
              f.visual_proj_per_part, "per-part visual projection (true|false)");
  bind_option(cmd, bag, "--semantic-proj-per-part", "semantic_proj_per_part",
              f.semantic_proj_per_part, "per-part semantic projector (true|false)");
  bind_option(cmd, bag, "--use-attention", "use_attention", f.use_attention,
              "attention block toggle (true|false)");
  bind_option(cmd, bag, "--use-visual-prompts", "use_visual_prompts", f.use_visual_prompts,
              "visual attribute prompt toggle");
  bind_option(cmd, bag, "--use-semantic-prompts", "use_semantic_prompts",
              f.use_semantic_prompts, "semantic part prompt toggle");
  bind_option(cmd, bag, "--use-part-loss", "use_part_loss", f.use_part_loss,
              "part alignment loss toggle");
  bind_option(cmd, bag, "--use-semantic-loss", "use_semantic_loss", f.use_semantic_loss,
              "semantic alignment loss toggle");
  bind_option(cmd, bag, "--use-global-loss", "use_global_loss", f.use_global_loss,
              "global alignment loss toggle");
  bind_option(cmd, bag, "--alpha", "alpha", f.alpha, "semantic alignment weight");
  bind_option(cmd, bag, "--beta", "beta", f.beta, "global alignment weight");
  bind_option(cmd, bag, "--epochs", "epochs", f.epochs, "training epochs");
  bind_option(cmd, bag, "--batch-size", "batch_size", f.batch_size, "mini-batch size");
  bind_option(cmd, bag, "--lr", "lr", f.lr, "learning rate");
  bind_int_list(cmd, bag, "--lr-decay-epochs", "lr_decay_epochs", f.lr_decay_epochs,
                "epochs after which the rate decays (comma list)");
  bind_option(cmd, bag, "--lr-decay-factor", "lr_decay_factor", f.lr_decay_factor,
              "multiplicative decay factor");
  bind_option(cmd, bag, "--weight-decay", "weight_decay", f.weight_decay, "weight decay");
  bind_option(cmd, bag, "--encoder-mode", "encoder_mode", f.encoder_mode,
              "pretrained|joint|features");
  bind_option(cmd, bag, "--pretrain-epochs", "pretrain_epochs", f.pretrain_epochs,
              "encoder pretraining epochs");
  bind_option(cmd, bag, "--pretrain-lr", "pretrain_lr", f.pretrain_lr,
              "encoder pretraining rate");
  bind_option(cmd, bag, "--mode", "mode", f.mode, "evaluation mode: zsl|gzsl");
  bind_option(cmd, bag, "--gamma", "gamma", f.gamma, "calibration constant");
  bind_list(cmd, bag, "--gamma-list", "gamma_list", f.gamma_list,
            "ascending calibration constants (comma list)");
  bind_option(cmd, bag, "--eval-batch", "eval_batch", f.eval_batch, "evaluation batch size");
}

RunConfig resolve_from(const std::string& config_path, Overrides& bag) {
  bag.collect();
  std::optional<nlohmann::json> file;
  if (!config_path.empty()) file = star::load_config_file(config_path);
  return RunConfig::resolve(file, bag.doc, env_seed());
}

star::SemanticProvider provider_of(const RunConfig& rc) {
  return star::provider_from_name(rc.provider);
}

std::optional<std::filesystem::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

template <typename T>
star::RunData<T> load_data(const RunConfig& rc, const star::ModelConfig<T>& mc) {
  if (rc.dataset.empty()) throw star::ConfigError("config key 'dataset' is required");
  return star::load_run_data<T>(rc.dataset, mc, provider_of(rc), optional_path(rc.side_info),
                                rc.encoder_mode == "features");
}

int run_gen_data(const star::SynthConfig& config, uint64_t seed, const std::string& out) {
  if (out.empty()) throw star::ConfigError("config key 'out' is required");
  const auto manifest = star::generate_synthetic(config, seed, out);
  int64_t train = 0, test = 0;
  for (const auto& s : manifest.samples) {
    (s.role == star::SampleRole::train ? train : test) += 1;
  }
  std::printf("generated %zu categories (%zu known / %zu unknown), %lld train / %lld test at %s\n",
              manifest.categories.size(), manifest.split.known.size(),
              manifest.split.unknown.size(), static_cast<long long>(train),
              static_cast<long long>(test), out.c_str());
  return 0;
}

int run_train(const std::string& config_path, Overrides& bag) {
  RunConfig rc = resolve_from(config_path, bag);
  auto mc = rc.model_config<float>();
  mc.validate();
  auto tc = rc.train_config();
  tc.validate();
  auto data = load_data<float>(rc, mc);
  star::StarModel<float> model(mc, data.categories(), rc.seed);
  star::echo_config(rc.out, rc);
  auto result = star::fit(model, data, tc, rc.out, rc.to_json(), rc.config_hash(),
                          optional_path(rc.resume));
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::printf("epoch %lld losses: part=%.6f semantic=%.6f global=%.6f total=%.6f\n",
                static_cast<long long>(last.epoch), last.part_alignment,
                last.semantic_alignment, last.global_alignment, last.total);
  }
  std::printf("checkpoint: %s\n", result.last_checkpoint.string().c_str());
  return 0;
}

// Rebuilds the model a checkpoint was trained with, honoring flag overrides
// for the non-identity keys. An explicit --config must agree with the
// checkpoint's identity hash.
struct LoadedCheckpoint {
  RunConfig rc;
  star::CheckpointMeta meta;
};

LoadedCheckpoint resolve_checkpoint(const std::string& checkpoint,
                                    const std::string& config_path, Overrides& bag) {
  if (checkpoint.empty()) throw star::ConfigError("config key 'checkpoint' is required");
  LoadedCheckpoint lc;
  lc.meta = star::load_checkpoint_meta(checkpoint);
  bag.collect();
  bool ignored = false;
  if (!config_path.empty()) {
    RunConfig from_file;
    from_file.apply(star::load_config_file(config_path), ignored);
    if (from_file.config_hash() != lc.meta.config_hash) {
      throw star::CompatibilityError(star::detail::msg(
          "config ", config_path, " does not match the checkpoint at ", checkpoint));
    }
  }
  RunConfig rc;
  rc.apply(lc.meta.config, ignored);
  rc.apply(bag.doc, ignored);
  rc.checkpoint = checkpoint;
  if (!bag.doc.contains("out")) {
    rc.out = (std::filesystem::path(lc.meta.config.value("out", "star_out"))).string();
  }
  lc.rc = rc;
  return lc;
}

template <typename T>
star::EvalOutputs<T> checkpoint_outputs(const LoadedCheckpoint& lc, star::RunData<T>& data_out,
                                        std::unique_ptr<star::StarModel<T>>& model_out) {
  auto mc = lc.rc.model_config<T>();
  mc.validate();
  data_out = load_data<T>(lc.rc, mc);
  model_out = std::make_unique<star::StarModel<T>>(mc, data_out.categories(), lc.rc.seed);
  star::load_checkpoint_params(lc.rc.checkpoint, model_out->store());
  return star::compute_eval_outputs(*model_out, data_out, lc.rc.encoder_mode == "features",
                                    lc.rc.eval_batch);
}

int run_eval(const std::string& checkpoint, const std::string& config_path, Overrides& bag,
             const std::string& out_suffix) {
  auto lc = resolve_checkpoint(checkpoint, config_path, bag);
  if (!bag.doc.contains("out")) {
    lc.rc.out = (std::filesystem::path(lc.rc.out) / out_suffix).string();
  }
  const auto mode = star::eval_mode_from_name(lc.rc.mode);
  if (mode == star::EvalMode::zsl && bag.doc.contains("gamma")) {
    std::fprintf(stderr, "warning: --gamma is ignored in zsl mode\n");
  }
  star::RunData<float> data;
  std::unique_ptr<star::StarModel<float>> model;
  auto outputs = checkpoint_outputs<float>(lc, data, model);
  auto report = star::evaluate_scores(outputs.table, data.split, mode, lc.rc.gamma);
  star::echo_config(lc.rc.out, lc.rc);
  star::write_report(std::filesystem::path(lc.rc.out) / "report.json", report);
  star::write_confusion_csv(std::filesystem::path(lc.rc.out) / "confusion.csv", report);
  if (mode == star::EvalMode::zsl) {
    std::printf("zsl acc=%.6f over %lld samples\n", report.acc,
                static_cast<long long>(report.samples));
  } else {
    std::printf("gzsl gamma=%.6f S=%.6f U=%.6f H=%.6f over %lld samples\n", report.gamma,
                report.s, report.u, report.h, static_cast<long long>(report.samples));
  }
  std::printf("report: %s\n",
              (std::filesystem::path(lc.rc.out) / "report.json").string().c_str());
  return 0;
}

int run_sweep(const std::string& checkpoint, const std::string& config_path, Overrides& bag) {
  auto lc = resolve_checkpoint(checkpoint, config_path, bag);
  if (!bag.doc.contains("out")) {
    lc.rc.out = (std::filesystem::path(lc.rc.out) / "sweep").string();
  }
  star::RunData<float> data;
  std::unique_ptr<star::StarModel<float>> model;
  auto outputs = checkpoint_outputs<float>(lc, data, model);
  auto sweep = star::gamma_sweep(outputs.table, data.split, lc.rc.gamma_list);
  star::echo_config(lc.rc.out, lc.rc);
  star::write_sweep_csv(std::filesystem::path(lc.rc.out) / "sweep.csv", sweep);
  const auto& best = sweep.best();
  std::printf("sweep over %zu gammas: best gamma=%.6f S=%.6f U=%.6f H=%.6f\n",
              sweep.entries.size(), best.gamma, best.s, best.u, best.h);
  std::printf("curve: %s\n",
              (std::filesystem::path(lc.rc.out) / "sweep.csv").string().c_str());
  return 0;
}

int run_dump(const std::string& checkpoint, const std::string& config_path, Overrides& bag) {
  auto lc = resolve_checkpoint(checkpoint, config_path, bag);
  if (!bag.doc.contains("out")) {
    lc.rc.out = (std::filesystem::path(lc.rc.out) / "embeddings").string();
  }
  star::RunData<float> data;
  std::unique_ptr<star::StarModel<float>> model;
  auto outputs = checkpoint_outputs<float>(lc, data, model);
  star::echo_config(lc.rc.out, lc.rc);
  star::dump_embeddings(outputs, lc.rc.out);
  std::printf("wrote %lld sample embeddings and %zu part banks to %s\n",
              static_cast<long long>(outputs.table.samples()), outputs.f_si.size(),
              lc.rc.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot skeleton action recognition toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic skeleton dataset");
  star::SynthConfig synth;
  uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--categories", synth.categories, "total categories");
  gen->add_option("--known", synth.known, "known (training) categories");
  gen->add_option("--train-per-category", synth.train_per_category,
                  "training samples per known category");
  gen->add_option("--test-per-category", synth.test_per_category,
                  "test samples per category");
  gen->add_option("--frames", synth.frames, "frames per sample");
  gen->add_option("--persons", synth.persons, "person slots");
  gen->add_option("--noise", synth.noise, "coordinate noise sigma");
  gen->add_option("--d-sem", synth.d_sem, "semantic embedding width");
  gen->add_option("--layout", synth.layout, "joint layout: ntu25|toy4");
  gen->add_option("--partition", synth.strategy, "body partition: two|four|six");

  ConfigFlags tf, ef, sf, df;
  Overrides t_bag, e_bag, s_bag, d_bag;

  auto* train = app.add_subcommand("train", "train a recognizer");
  bind_common(train, t_bag, tf);
  bind_option(train, t_bag, "--resume", "resume", tf.resume,
              "checkpoint directory to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ef.checkpoint, "checkpoint directory")->required();
  bind_common(eval, e_bag, ef);

  auto* sweep = app.add_subcommand("sweep", "sweep the calibration constant");
  sweep->add_option("--checkpoint", sf.checkpoint, "checkpoint directory")->required();
  bind_common(sweep, s_bag, sf);

  auto* dump = app.add_subcommand("dump", "dump latent embeddings for a checkpoint");
  dump->add_option("--checkpoint", df.checkpoint, "checkpoint directory")->required();
  bind_common(dump, d_bag, df);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(synth, gen_seed, gen_out);
    if (train->parsed()) return run_train(tf.config_path, t_bag);
    if (eval->parsed()) return run_eval(ef.checkpoint, ef.config_path, e_bag, "eval");
    if (sweep->parsed()) return run_sweep(sf.checkpoint, sf.config_path, s_bag);
    if (dump->parsed()) return run_dump(df.checkpoint, df.config_path, d_bag);
  } catch (const star::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const star::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const star::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const star::CompatibilityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const star::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const star::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
