// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands: train, evaluate, predict, ablate,
// synth, gradcheck, dump-attention. Run configuration is a flat-key JSON
// file; every key can be overridden with a --key flag. All commands honor
// --seed / the config seed and are reproducible. TMLGA_LOG in
// {quiet, info, debug} controls stderr diagnostics and never affects results.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tmlga/eval.hpp"
#include "tmlga/gradcheck_suite.hpp"
#include "tmlga/synthdata.hpp"
#include "tmlga/training.hpp"

namespace tmlga {

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TMLGA_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string v(env);
    if (v == "quiet") return LogLevel::kQuiet;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[tmlga] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << "[tmlga] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Run configuration (flat JSON keys)

struct RunConfig {
  std::string manifest_train;
  std::string manifest_test;
  std::string embeddings;
  std::string output_dir;
  TrainConfig train;
  std::vector<double> alphas{0.3, 0.5, 0.7};
  bool strict_inverted_zero = false;
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"manifest_train", c.manifest_train},
      {"manifest_test", c.manifest_test},
      {"embeddings", c.embeddings},
      {"output_dir", c.output_dir},
      {"learning_rate", c.train.learning_rate},
      {"weight_decay", c.train.weight_decay},
      {"epochs", c.train.epochs},
      {"accum", c.train.accum},
      {"loss_mode", c.train.loss_mode == LossMode::kKl ? "KL" : "NLL"},
      {"use_attention_loss", c.train.use_attention_loss},
      {"sigma", c.train.sigma},
      {"seed", c.train.seed},
      {"augment", c.train.augment},
      {"u", c.train.u},
      {"d", c.train.d},
      {"kl_direction",
       c.train.kl_direction == KlDirection::kPredTarget ? "pred_target" : "target_pred"},
      {"max_len", c.train.max_len},
      {"min_freq", c.train.min_freq},
      {"alphas", c.alphas},
      {"strict_inverted_zero", c.strict_inverted_zero},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("manifest_train", c.manifest_train);
    get("manifest_test", c.manifest_test);
    get("embeddings", c.embeddings);
    get("output_dir", c.output_dir);
    get("learning_rate", c.train.learning_rate);
    get("weight_decay", c.train.weight_decay);
    get("epochs", c.train.epochs);
    get("accum", c.train.accum);
    get("sigma", c.train.sigma);
    get("seed", c.train.seed);
    get("use_attention_loss", c.train.use_attention_loss);
    get("augment", c.train.augment);
    get("u", c.train.u);
    get("d", c.train.d);
    get("max_len", c.train.max_len);
    get("min_freq", c.train.min_freq);
    get("alphas", c.alphas);
    get("strict_inverted_zero", c.strict_inverted_zero);
    if (j.contains("loss_mode")) {
      const std::string mode = j.at("loss_mode").get<std::string>();
      if (mode == "KL") {
        c.train.loss_mode = LossMode::kKl;
      } else if (mode == "NLL") {
        c.train.loss_mode = LossMode::kNll;
      } else {
        throw config_error("config: loss_mode must be \"KL\" or \"NLL\", got \"" + mode + "\"");
      }
    }
    if (j.contains("kl_direction")) {
      const std::string dir = j.at("kl_direction").get<std::string>();
      if (dir == "pred_target") {
        c.train.kl_direction = KlDirection::kPredTarget;
      } else if (dir == "target_pred") {
        c.train.kl_direction = KlDirection::kTargetPred;
      } else {
        throw config_error("config: kl_direction must be \"pred_target\" or \"target_pred\"");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("config: " + path + ": " + e.what());
  }
}

namespace cli_detail {

// One --key flag per config key; values parsed after the config file so
// explicit flags win.
struct ConfigFlags {
  std::optional<std::string> manifest_train, manifest_test, embeddings, output_dir;
  std::optional<double> learning_rate, weight_decay, sigma;
  std::optional<std::uint32_t> epochs, accum;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss_mode, kl_direction;
  std::optional<bool> use_attention_loss, augment, strict_inverted_zero;
  std::optional<std::size_t> u, d, max_len, min_freq;
  std::optional<std::vector<double>> alphas;

  void attach(CLI::App& app) {
    app.add_option("--manifest_train", manifest_train, "training manifest path");
    app.add_option("--manifest_test", manifest_test, "test manifest path");
    app.add_option("--embeddings", embeddings, "embedding table path");
    app.add_option("--output_dir", output_dir, "output directory");
    app.add_option("--learning_rate", learning_rate, "Adam learning rate");
    app.add_option("--weight_decay", weight_decay, "coupled L2 weight decay");
    app.add_option("--sigma", sigma, "soft-label standard deviation (index units)");
    app.add_option("--epochs", epochs, "training epochs");
    app.add_option("--accum", accum, "samples per optimizer step");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--loss_mode", loss_mode, "KL or NLL");
    app.add_option("--kl_direction", kl_direction, "pred_target or target_pred");
    app.add_option("--use_attention_loss", use_attention_loss, "add the attention loss term");
    app.add_option("--augment", augment, "random-crop augmentation");
    app.add_option("--u", u, "GRU hidden size");
    app.add_option("--d", d, "shared attention dimension");
    app.add_option("--max_len", max_len, "query truncation length");
    app.add_option("--min_freq", min_freq, "vocabulary frequency threshold");
    app.add_option("--alphas", alphas, "tIoU thresholds")->delimiter(',');
    app.add_option("--strict_inverted_zero", strict_inverted_zero,
                   "score inverted predictions as 0 instead of swapping");
  }

  void apply(nlohmann::json& j) const {
    auto set = [&](const char* key, const auto& opt) {
      if (opt.has_value()) j[key] = *opt;
    };
    set("manifest_train", manifest_train);
    set("manifest_test", manifest_test);
    set("embeddings", embeddings);
    set("output_dir", output_dir);
    set("learning_rate", learning_rate);
    set("weight_decay", weight_decay);
    set("sigma", sigma);
    set("epochs", epochs);
    set("accum", accum);
    set("seed", seed);
    set("loss_mode", loss_mode);
    set("kl_direction", kl_direction);
    set("use_attention_loss", use_attention_loss);
    set("augment", augment);
    set("u", u);
    set("d", d);
    set("max_len", max_len);
    set("min_freq", min_freq);
    set("alphas", alphas);
    set("strict_inverted_zero", strict_inverted_zero);
  }
};

struct LoadedDataset {
  Vocabulary vocab;
  EmbeddingTable table;
  std::vector<Sample> samples;
};

inline LoadedDataset load_training_data(const RunConfig& cfg) {
  if (cfg.manifest_train.empty()) throw config_error("config: manifest_train is required");
  if (cfg.embeddings.empty()) throw config_error("config: embeddings is required");
  const DatasetManifest manifest = load_manifest(cfg.manifest_train);
  LoadedDataset ds;
  ds.vocab = build_vocabulary(collect_queries(manifest), cfg.train.min_freq);
  ds.table = load_embeddings(cfg.embeddings, ds.vocab, fork(cfg.train.seed, kRngKeyEmbeddings));
  ds.samples = build_samples(manifest, cfg.manifest_train, ds.vocab, cfg.train.max_len);
  log_info("loaded " + std::to_string(ds.samples.size()) + " training samples, vocab size " +
           std::to_string(ds.vocab.size()));
  return ds;
}

// Rebuilds the vocabulary and embedding table a checkpoint was trained with,
// from the config embedded in the checkpoint, and verifies the vocabulary
// hash before returning.
inline LoadedDataset reload_checkpoint_data(const Checkpoint& ckpt) {
  const RunConfig cfg = run_config_from_json(ckpt.config);
  if (cfg.manifest_train.empty() || cfg.embeddings.empty()) {
    throw config_error(
        "checkpoint: embedded config lacks manifest_train/embeddings paths; cannot rebuild the "
        "vocabulary");
  }
  const DatasetManifest manifest = load_manifest(cfg.manifest_train);
  LoadedDataset ds;
  ds.vocab = build_vocabulary(collect_queries(manifest), cfg.train.min_freq);
  if (ds.vocab.hash() != ckpt.vocab_hash) {
    throw config_error("checkpoint: vocabulary rebuilt from " + cfg.manifest_train +
                       " does not match the checkpoint's vocabulary hash; the checkpoint cannot "
                       "be used with this corpus");
  }
  ds.table = load_embeddings(cfg.embeddings, ds.vocab, fork(cfg.train.seed, kRngKeyEmbeddings));
  return ds;
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommand bodies

inline int cmd_train(const std::string& config_path, const cli_detail::ConfigFlags& flags,
                     const std::string& out_dir_arg, const std::string& resume_path) {
  nlohmann::json j = config_path.empty() ? nlohmann::json::object() : load_config_json(config_path);
  flags.apply(j);
  RunConfig cfg = run_config_from_json(j);
  if (!out_dir_arg.empty()) cfg.output_dir = out_dir_arg;
  if (cfg.output_dir.empty()) throw config_error("train: --out (or output_dir) is required");
  std::filesystem::create_directories(cfg.output_dir);

  cli_detail::LoadedDataset ds = cli_detail::load_training_data(cfg);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
    log_info("resuming from epoch " + std::to_string(resume.epoch));
  }

  const std::filesystem::path out(cfg.output_dir);
  TrainResult result = train(ds.samples, ds.table, ds.vocab.hash(), cfg.train,
                             out / "checkpoint.tmlc", run_config_to_json(cfg), resume_ptr);
  write_loss_csv(out / "loss.csv", result.log);
  if (!result.log.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", result.log.back().mean_total);
    log_info("trained " + std::to_string(result.epoch) + " epochs, final mean loss " + buf);
  }
  std::cout << (out / "checkpoint.tmlc").string() << "\n";
  return 0;
}

inline int cmd_predict(const std::string& checkpoint_path, const std::string& manifest_path,
                       const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  cli_detail::LoadedDataset ds = cli_detail::reload_checkpoint_data(ckpt);
  const RunConfig cfg = run_config_from_json(ckpt.config);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::vector<Sample> samples =
      build_samples(manifest, manifest_path, ds.vocab, cfg.train.max_len);
  const std::vector<PredictionRecord> records = predict_samples(ckpt.params, samples, ds.table);
  write_predictions(out_path, records);
  log_info("wrote " + std::to_string(records.size()) + " predictions to " + out_path);
  return 0;
}

inline int cmd_evaluate(const std::string& predictions_path, const std::string& manifest_path,
                        const std::vector<double>& alphas, bool strict_inverted_zero,
                        const std::string& report_path) {
  std::vector<PredictionRecord> records = read_predictions(predictions_path);
  attach_ground_truth(records, load_manifest(manifest_path));
  EvalOptions opt;
  if (!alphas.empty()) opt.alphas = alphas;
  opt.strict_inverted_zero = strict_inverted_zero;
  const EvalReport report = evaluate(records, opt);
  std::cout << report_table(report);
  std::cout << report_to_json(report).dump() << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw config_error("evaluate: cannot write " + report_path);
    out << report_to_json(report).dump(2) << "\n";
  }
  return 0;
}

inline int cmd_ablate(const std::string& config_path, const cli_detail::ConfigFlags& flags,
                      const std::string& out_dir_arg, const std::vector<std::uint64_t>& seeds,
                      bool parallel) {
  nlohmann::json j = config_path.empty() ? nlohmann::json::object() : load_config_json(config_path);
  flags.apply(j);
  RunConfig cfg = run_config_from_json(j);
  if (!out_dir_arg.empty()) cfg.output_dir = out_dir_arg;
  if (cfg.output_dir.empty()) throw config_error("ablate: --out (or output_dir) is required");
  if (cfg.manifest_train.empty() || cfg.manifest_test.empty() || cfg.embeddings.empty()) {
    throw config_error("ablate: manifest_train, manifest_test and embeddings are required");
  }
  if (seeds.empty()) throw config_error("ablate: --seeds is required");
  std::filesystem::create_directories(cfg.output_dir);

  EvalOptions eval_opt;
  eval_opt.alphas = cfg.alphas;
  eval_opt.strict_inverted_zero = cfg.strict_inverted_zero;
  const AblationResult result = run_ablation(cfg.manifest_train, cfg.manifest_test,
                                             cfg.embeddings, cfg.train, seeds, eval_opt, parallel);

  const std::filesystem::path out(cfg.output_dir);
  {
    std::ofstream f(out / "ablation.json", std::ios::binary);
    f << ablation_to_json(result).dump(2) << "\n";
  }
  const std::string table = ablation_table(result);
  {
    std::ofstream f(out / "ablation.txt", std::ios::binary);
    f << table;
  }
  std::cout << table;
  return 0;
}

inline int cmd_synth(const SynthSpec& spec, std::size_t test_videos, const std::string& out_dir) {
  const SynthOutput train_out = generate(spec, out_dir, "train");
  std::cout << train_out.manifest_path.string() << "\n";
  if (test_videos > 0) {
    SynthSpec test_spec = spec;
    test_spec.num_videos = test_videos;
    const SynthOutput test_out = generate(test_spec, out_dir, "test");
    std::cout << test_out.manifest_path.string() << "\n";
  }
  std::cout << train_out.embeddings_path.string() << "\n";
  return 0;
}

inline int cmd_gradcheck(int instances, std::uint64_t seed) {
  bool all_ok = true;
  for (const GradCheckCase& c : gradcheck_suite()) {
    const double err = run_gradcheck_case(c, instances, seed);
    const bool ok = err <= 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-36s max rel err %.3e  %s\n", c.name.c_str(), err, ok ? "ok" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

inline int cmd_dump_attention(const std::string& checkpoint_path, const std::string& manifest_path,
                              const std::string& video_id, const std::string& query,
                              const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  cli_detail::LoadedDataset ds = cli_detail::reload_checkpoint_data(ckpt);
  const RunConfig cfg = run_config_from_json(ckpt.config);
  const DatasetManifest manifest = load_manifest(manifest_path);

  const VideoEntry* entry = nullptr;
  for (const VideoEntry& e : manifest.entries) {
    if (e.video_id == video_id) {
      entry = &e;
      break;
    }
  }
  if (entry == nullptr) {
    throw config_error("dump-attention: video \"" + video_id + "\" not found in " +
                       manifest_path);
  }
  const FeatureSequence fs =
      load_features(resolve_feature_path(manifest_path, entry->feature_path));
  const std::vector<int> tokens = encode_query(query, ds.vocab, cfg.train.max_len);

  Tape tape;
  ModelVars vars = bind_model(tape, ckpt.params, /*requires_grad=*/false);
  RngState unused;
  SampleForward fwd = forward_sample(tape, vars, to_tensor(fs), tokens, ds.table, 0, 0,
                                     LossOptions{}, unused, /*training=*/false);
  const Tensor& attention = tape.value(fwd.attention);
  const auto [tau_s_hat, tau_e_hat] = predict_span(distributions_of(tape, fwd));

  std::ostringstream csv;
  csv << "index,a_i\n";
  char buf[64];
  for (std::size_t i = 0; i < attention.numel(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, attention[i]);
    csv << buf;
  }
  std::snprintf(buf, sizeof(buf), "# tau_s_pred=%zu tau_e_pred=%zu", tau_s_hat, tau_e_hat);
  csv << buf;
  std::snprintf(buf, sizeof(buf), " t_s_pred=%.6f t_e_pred=%.6f\n",
                index_to_time(tau_s_hat, fs.n, entry->fps, entry->l),
                index_to_time(tau_e_hat, fs.n, entry->fps, entry->l));
  csv << buf;

  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw config_error("dump-attention: cannot write " + out_path);
    out << csv.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"proposal-free temporal moment localization"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_config, train_out, train_resume;
  cli_detail::ConfigFlags train_flags;
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
  train_flags.attach(*train_cmd);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "predict spans for a manifest");
  std::string pred_ckpt, pred_manifest, pred_out;
  predict_cmd->add_option("--checkpoint", pred_ckpt, "trained checkpoint")->required();
  predict_cmd->add_option("--manifest", pred_manifest, "manifest to predict on")->required();
  predict_cmd->add_option("--out", pred_out, "output JSONL path")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against a manifest");
  std::string eval_preds, eval_manifest, eval_report;
  std::vector<double> eval_alphas;
  bool eval_strict = false;
  eval_cmd->add_option("--predictions", eval_preds, "predictions JSONL")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "manifest with ground truth")->required();
  eval_cmd->add_option("--alphas", eval_alphas, "tIoU thresholds")->delimiter(',');
  eval_cmd->add_flag("--strict_inverted_zero", eval_strict,
                     "score inverted predictions as 0 instead of swapping");
  eval_cmd->add_option("--out", eval_report, "report JSON path");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the four-configuration ablation");
  std::string abl_config, abl_out;
  std::vector<std::uint64_t> abl_seeds;
  bool abl_parallel = false;
  cli_detail::ConfigFlags abl_flags;
  ablate_cmd->add_option("--config", abl_config, "JSON config file");
  ablate_cmd->add_option("--seeds", abl_seeds, "training seeds")->delimiter(',')->required();
  ablate_cmd->add_option("--out", abl_out, "output directory");
  ablate_cmd->add_flag("--parallel", abl_parallel, "run (config, seed) pairs concurrently");
  abl_flags.attach(*ablate_cmd);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic benchmark");
  SynthSpec spec;
  std::string synth_out;
  std::size_t synth_test_videos = 0;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", spec.seed, "generator seed");
  synth_cmd->add_option("--videos", spec.num_videos, "training videos");
  synth_cmd->add_option("--test-videos", synth_test_videos, "test videos (0 = none)");
  synth_cmd->add_option("--n", spec.n, "features per video");
  synth_cmd->add_option("--d-v", spec.d_v, "feature dimension");
  synth_cmd->add_option("--actions", spec.num_actions, "distinct actions");
  synth_cmd->add_option("--len-min", spec.moment_len_range.first, "min moment length");
  synth_cmd->add_option("--len-max", spec.moment_len_range.second, "max moment length");
  synth_cmd->add_option("--noise", spec.noise_sigma, "feature noise stddev");
  synth_cmd->add_option("--distractor-prob", spec.distractor_prob, "distractor probability");
  synth_cmd->add_option("--emb-dim", spec.emb_dim, "embedding dimension");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  int grad_instances = 100;
  std::uint64_t grad_seed = 42;
  grad_cmd->add_option("--instances", grad_instances, "random instances per case");
  grad_cmd->add_option("--seed", grad_seed, "base seed");

  // dump-attention
  auto* dump_cmd = app.add_subcommand("dump-attention", "export attention weights as CSV");
  std::string dump_ckpt, dump_manifest, dump_video, dump_query, dump_out;
  dump_cmd->add_option("--checkpoint", dump_ckpt, "trained checkpoint")->required();
  dump_cmd->add_option("--manifest", dump_manifest, "manifest containing the video")->required();
  dump_cmd->add_option("--video", dump_video, "video id")->required();
  dump_cmd->add_option("--query", dump_query, "natural-language query")->required();
  dump_cmd->add_option("--out", dump_out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_config, train_flags, train_out, train_resume);
    if (predict_cmd->parsed()) return cmd_predict(pred_ckpt, pred_manifest, pred_out);
    if (eval_cmd->parsed()) {
      return cmd_evaluate(eval_preds, eval_manifest, eval_alphas, eval_strict, eval_report);
    }
    if (ablate_cmd->parsed()) {
      return cmd_ablate(abl_config, abl_flags, abl_out, abl_seeds, abl_parallel);
    }
    if (synth_cmd->parsed()) return cmd_synth(spec, synth_test_videos, synth_out);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_instances, grad_seed);
    if (dump_cmd->parsed()) {
      return cmd_dump_attention(dump_ckpt, dump_manifest, dump_video, dump_query, dump_out);
    }
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace tmlga
