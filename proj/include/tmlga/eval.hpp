// SPDX-License-Identifier: Apache-2.0
//
// Temporal IoU metrics, prediction records (JSON lines), report output, and
// the four-configuration ablation runner (NLL, KL, NLL+AL, KL+AL).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tmlga/dataio.hpp"
#include "tmlga/localization.hpp"
#include "tmlga/model.hpp"
#include "tmlga/training.hpp"

namespace tmlga {

// ---------------------------------------------------------------------------
// Temporal IoU

struct Interval {
  double lo = 0;
  double hi = 0;
};

// |a n b| / |a u b| in seconds. The ground truth must be well-ordered; an
// inverted prediction is normalized by swapping (or scored 0 when
// strict_inverted_zero), a degenerate one has zero length. Returns 0 when the
// union has zero length.
inline double tiou(Interval a, Interval b, bool strict_inverted_zero = false) {
  if (!(b.lo <= b.hi)) {
    throw domain_error("tiou: ground-truth interval is inverted [" + std::to_string(b.lo) + ", " +
                       std::to_string(b.hi) + "]");
  }
  if (a.lo > a.hi) {
    if (strict_inverted_zero) return 0.0;
    std::swap(a.lo, a.hi);
  }
  const double inter = std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
  const double uni = (a.hi - a.lo) + (b.hi - b.lo) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// ---------------------------------------------------------------------------
// Prediction records

struct PredictionRecord {
  std::string video_id;
  std::string query;
  double t_s_pred = 0;  // predicted seconds
  double t_e_pred = 0;
  std::size_t tau_s = 0;  // ground-truth feature indices (provenance)
  std::size_t tau_e = 0;
  double t_s_gt = 0;  // ground-truth seconds; filled from the manifest
  double t_e_gt = 0;
};

inline double record_tiou(const PredictionRecord& r, bool strict_inverted_zero = false) {
  return tiou(Interval{r.t_s_pred, r.t_e_pred}, Interval{r.t_s_gt, r.t_e_gt},
              strict_inverted_zero);
}

inline void write_predictions(const std::filesystem::path& path,
                              const std::vector<PredictionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("predictions: cannot write " + path.string());
  for (const PredictionRecord& r : records) {
    nlohmann::json j{{"video_id", r.video_id}, {"query", r.query},
                     {"t_s_pred", r.t_s_pred}, {"t_e_pred", r.t_e_pred},
                     {"tau_s", r.tau_s},       {"tau_e", r.tau_e}};
    out << j.dump() << "\n";
  }
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("predictions: cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      PredictionRecord r;
      r.video_id = j.at("video_id").get<std::string>();
      r.query = j.at("query").get<std::string>();
      r.t_s_pred = j.at("t_s_pred").get<double>();
      r.t_e_pred = j.at("t_e_pred").get<double>();
      r.tau_s = j.at("tau_s").get<std::size_t>();
      r.tau_e = j.at("tau_e").get<std::size_t>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw format_error("predictions: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Prediction lines are emitted in manifest sample order (entry order, then
// annotation order); join them back by position and check identity to attach
// the ground-truth times.
inline void attach_ground_truth(std::vector<PredictionRecord>& records,
                                const DatasetManifest& manifest) {
  std::size_t i = 0;
  for (const VideoEntry& e : manifest.entries) {
    for (const Annotation& a : e.annotations) {
      if (i >= records.size()) {
        throw config_error("evaluate: fewer predictions than manifest annotations");
      }
      if (records[i].video_id != e.video_id || records[i].query != a.query) {
        throw config_error("evaluate: prediction " + std::to_string(i) + " (" +
                           records[i].video_id + ", \"" + records[i].query +
                           "\") does not match manifest annotation (" + e.video_id + ", \"" +
                           a.query + "\")");
      }
      records[i].t_s_gt = a.t_s;
      records[i].t_e_gt = a.t_e;
      ++i;
    }
  }
  if (i != records.size()) {
    throw config_error("evaluate: " + std::to_string(records.size()) + " predictions vs " +
                       std::to_string(i) + " manifest annotations");
  }
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalOptions {
  std::vector<double> alphas{0.3, 0.5, 0.7};
  bool strict_inverted_zero = false;
};

struct EvalReport {
  std::map<double, double> accuracy_at;  // alpha -> fraction
  double mean_tiou = 0;
  std::size_t count = 0;
};

// Fraction of records with tIoU >= alpha (inclusive threshold).
inline double accuracy_at(const std::vector<PredictionRecord>& records, double alpha,
                          bool strict_inverted_zero = false) {
  if (records.empty()) throw config_error("accuracy_at: no records");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw domain_error("accuracy_at: alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  std::size_t hits = 0;
  for (const PredictionRecord& r : records) {
    if (record_tiou(r, strict_inverted_zero) >= alpha) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

inline double mean_tiou(const std::vector<PredictionRecord>& records,
                        bool strict_inverted_zero = false) {
  if (records.empty()) throw config_error("mean_tiou: no records");
  double s = 0;
  for (const PredictionRecord& r : records) s += record_tiou(r, strict_inverted_zero);
  return s / static_cast<double>(records.size());
}

inline EvalReport evaluate(const std::vector<PredictionRecord>& records,
                           const EvalOptions& opt = {}) {
  EvalReport rep;
  rep.count = records.size();
  rep.mean_tiou = mean_tiou(records, opt.strict_inverted_zero);
  for (double a : opt.alphas) {
    rep.accuracy_at[a] = accuracy_at(records, a, opt.strict_inverted_zero);
  }
  return rep;
}

namespace detail {

inline std::string format_alpha(double a) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", a);
  return buf;
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [alpha, frac] : rep.accuracy_at) acc[detail::format_alpha(alpha)] = frac;
  return nlohmann::json{{"accuracy", acc}, {"miou", rep.mean_tiou}, {"count", rep.count}};
}

inline std::string report_table(const EvalReport& rep) {
  std::ostringstream ss;
  char buf[64];
  ss << "metric        value\n";
  for (const auto& [alpha, frac] : rep.accuracy_at) {
    std::snprintf(buf, sizeof(buf), "acc@%-8s  %.4f\n", detail::format_alpha(alpha).c_str(), frac);
    ss << buf;
  }
  std::snprintf(buf, sizeof(buf), "mIoU          %.4f\n", rep.mean_tiou);
  ss << buf;
  ss << "count         " << rep.count << "\n";
  return ss.str();
}

// ---------------------------------------------------------------------------
// Prediction

// Runs inference over samples with an immutable parameter snapshot and
// converts argmax indices back to seconds.
inline std::vector<PredictionRecord> predict_samples(const ModelParams& params,
                                                     const std::vector<Sample>& samples,
                                                     const EmbeddingTable& table) {
  std::vector<PredictionRecord> out;
  out.reserve(samples.size());
  RngState unused;  // inference runs without dropout
  for (const Sample& s : samples) {
    Tape tape;
    ModelVars vars = bind_model(tape, params, /*requires_grad=*/false);
    SampleForward fwd = forward_sample(tape, vars, to_tensor(*s.features), s.token_ids, table,
                                       /*tau_s=*/0, /*tau_e=*/0, LossOptions{}, unused,
                                       /*training=*/false);
    const auto [tau_s_hat, tau_e_hat] = predict_span(distributions_of(tape, fwd));
    PredictionRecord r;
    r.video_id = s.video_id;
    r.query = s.query;
    r.t_s_pred = index_to_time(tau_s_hat, s.features->n, s.fps, s.l);
    r.t_e_pred = index_to_time(tau_e_hat, s.features->n, s.fps, s.l);
    r.tau_s = s.tau_s;
    r.tau_e = s.tau_e;
    r.t_s_gt = s.t_s;
    r.t_e_gt = s.t_e;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation runner

struct AblationConfig {
  std::string name;
  LossMode mode;
  bool use_attention_loss;
};

inline const std::vector<AblationConfig>& ablation_configs() {
  static const std::vector<AblationConfig> configs{
      {"NLL", LossMode::kNll, false},
      {"KL", LossMode::kKl, false},
      {"NLL+AL", LossMode::kNll, true},
      {"KL+AL", LossMode::kKl, true},
  };
  return configs;
}

struct AblationRun {
  std::uint64_t seed = 0;
  EvalReport report;
};

struct AblationConfigResult {
  std::string name;
  std::vector<AblationRun> runs;
  EvalReport mean;  // accuracy and mIoU averaged over seeds
};

struct AblationResult {
  std::vector<AblationConfigResult> configs;
  std::vector<double> alphas;
};

// Trains every (configuration, seed) pair and evaluates on the test split.
// Runs are mutually independent; `parallel` relaxes wall-clock ordering only,
// results are identical either way.
inline AblationResult run_ablation(const std::filesystem::path& manifest_train_path,
                                   const std::filesystem::path& manifest_test_path,
                                   const std::filesystem::path& embeddings_path,
                                   const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   const EvalOptions& eval_opt = {}, bool parallel = false) {
  if (seeds.empty()) throw config_error("run_ablation: at least one seed required");

  const DatasetManifest train_manifest = load_manifest(manifest_train_path);
  const DatasetManifest test_manifest = load_manifest(manifest_test_path);
  const Vocabulary vocab = build_vocabulary(collect_queries(train_manifest), base.min_freq);
  const std::vector<Sample> train_samples =
      build_samples(train_manifest, manifest_train_path, vocab, base.max_len);
  const std::vector<Sample> test_samples =
      build_samples(test_manifest, manifest_test_path, vocab, base.max_len);

  auto one_run = [&](const AblationConfig& ac, std::uint64_t seed) {
    TrainConfig cfg = base;
    cfg.loss_mode = ac.mode;
    cfg.use_attention_loss = ac.use_attention_loss;
    cfg.seed = seed;
    const EmbeddingTable table =
        load_embeddings(embeddings_path, vocab, fork(seed, kRngKeyEmbeddings));
    TrainResult tr = train(train_samples, table, vocab.hash(), cfg);
    return evaluate(predict_samples(tr.params, test_samples, table), eval_opt);
  };

  AblationResult result;
  result.alphas = eval_opt.alphas;
  const auto& configs = ablation_configs();

  std::vector<std::future<EvalReport>> futures;
  if (parallel) {
    for (const AblationConfig& ac : configs)
      for (std::uint64_t seed : seeds)
        futures.push_back(std::async(std::launch::async, one_run, ac, seed));
  }

  std::size_t idx = 0;
  for (const AblationConfig& ac : configs) {
    AblationConfigResult cr;
    cr.name = ac.name;
    for (std::uint64_t seed : seeds) {
      AblationRun run;
      run.seed = seed;
      run.report = parallel ? futures[idx++].get() : one_run(ac, seed);
      cr.runs.push_back(std::move(run));
    }
    cr.mean.count = cr.runs.front().report.count;
    for (double a : eval_opt.alphas) cr.mean.accuracy_at[a] = 0;
    for (const AblationRun& run : cr.runs) {
      cr.mean.mean_tiou += run.report.mean_tiou;
      for (double a : eval_opt.alphas) cr.mean.accuracy_at[a] += run.report.accuracy_at.at(a);
    }
    const double inv = 1.0 / static_cast<double>(cr.runs.size());
    cr.mean.mean_tiou *= inv;
    for (double a : eval_opt.alphas) cr.mean.accuracy_at[a] *= inv;
    result.configs.push_back(std::move(cr));
  }
  return result;
}

inline nlohmann::json ablation_to_json(const AblationResult& res) {
  nlohmann::json configs = nlohmann::json::array();
  for (const AblationConfigResult& cr : res.configs) {
    nlohmann::json runs = nlohmann::json::array();
    for (const AblationRun& run : cr.runs) {
      nlohmann::json j = report_to_json(run.report);
      j["seed"] = run.seed;
      runs.push_back(std::move(j));
    }
    configs.push_back(
        {{"name", cr.name}, {"per_seed", runs}, {"mean", report_to_json(cr.mean)}});
  }
  return nlohmann::json{{"alphas", res.alphas}, {"configs", configs}};
}

inline std::string ablation_table(const AblationResult& res) {
  std::ostringstream ss;
  ss << "config    ";
  char buf[64];
  for (double a : res.alphas) {
    std::snprintf(buf, sizeof(buf), "  acc@%-6s", detail::format_alpha(a).c_str());
    ss << buf;
  }
  ss << "  mIoU\n";
  for (const AblationConfigResult& cr : res.configs) {
    std::snprintf(buf, sizeof(buf), "%-10s", cr.name.c_str());
    ss << buf;
    for (double a : res.alphas) {
      std::snprintf(buf, sizeof(buf), "  %-10.4f", cr.mean.accuracy_at.at(a));
      ss << buf;
    }
    std::snprintf(buf, sizeof(buf), "  %.4f\n", cr.mean.mean_tiou);
    ss << buf;
  }
  return ss.str();
}

}  // namespace tmlga
