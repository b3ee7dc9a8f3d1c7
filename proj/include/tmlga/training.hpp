// SPDX-License-Identifier: Apache-2.0
//
// End-to-end optimization: Adam with coupled L2 weight decay, per-sample
// updates (optional gradient accumulation), seeded shuffling, random-crop
// augmentation, and versioned binary checkpoints. The whole trajectory is a
// pure function of (seed, data, config): the master seed is forked into a
// parameter-init stream and a data stream (shuffles, crops, dropout), and the
// data stream's state is persisted at every epoch boundary so resumed runs
// continue bit-exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tmlga/dataio.hpp"
#include "tmlga/model.hpp"
#include "tmlga/rng.hpp"

namespace tmlga {

// Sub-stream keys off the master seed.
inline constexpr std::uint64_t kRngKeyInit = 0;
inline constexpr std::uint64_t kRngKeyData = 1;
inline constexpr std::uint64_t kRngKeyEmbeddings = 2;

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  std::uint32_t epochs = 1;
  std::uint32_t accum = 1;  // samples per Adam step; gradients are averaged
  LossMode loss_mode = LossMode::kKl;
  bool use_attention_loss = true;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t u = 256;
  std::size_t d = 256;
  KlDirection kl_direction = KlDirection::kPredTarget;
  std::size_t max_len = 30;
  std::size_t min_freq = 5;

  LossOptions loss_options() const {
    return LossOptions{loss_mode, use_attention_loss, sigma, kl_direction};
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m, v;  // parallel to the param_refs order
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState init_adam(const std::vector<ParamRef>& refs) {
  AdamState s;
  s.m.reserve(refs.size());
  s.v.reserve(refs.size());
  for (const ParamRef& r : refs) {
    s.m.emplace_back(r.tensor->numel(), 0.0);
    s.v.emplace_back(r.tensor->numel(), 0.0);
  }
  return s;
}

// g <- g + wd*w; m,v exponential moments; bias-corrected update
// w <- w - lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(const std::vector<ParamRef>& params,
                      const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
                      double weight_decay) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw shape_error("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p].tensor;
    const std::vector<double>& g_in = grads[p];
    std::vector<double>& m = state.m[p];
    std::vector<double>& v = state.v[p];
    if (g_in.size() != w.numel()) {
      throw shape_error("adam_step: gradient size mismatch for " + params[p].name);
    }
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (!std::isfinite(g_in[i])) {
        throw config_error("adam_step: non-finite gradient in parameter " + params[p].name);
      }
      const double g = g_in[i] + weight_decay * w[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation

// Drops a random prefix of c ~ uniform{0..tau_s-1} feature vectors and shifts
// the span down by c; the cropped prefix never overlaps the annotation. A
// sample with tau_s = 1 passes through without consuming a draw.
inline Sample augment_random_crop(const Sample& sample, RngState& rng) {
  if (sample.tau_s <= 1) return sample;
  const std::size_t c = static_cast<std::size_t>(next_below(rng, sample.tau_s));
  if (c == 0) return sample;
  const FeatureSequence& fs = *sample.features;
  auto cropped = std::make_shared<FeatureSequence>();
  cropped->n = fs.n - static_cast<std::uint32_t>(c);
  cropped->d_v = fs.d_v;
  cropped->data.assign(fs.data.begin() + static_cast<std::ptrdiff_t>(c * fs.d_v), fs.data.end());
  Sample out = sample;
  out.features = std::move(cropped);
  out.tau_s -= c;
  out.tau_e -= c;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints ("TMLC1")

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::uint32_t epoch = 0;  // completed epochs
  RngState rng;             // data stream at the epoch boundary
  std::uint64_t vocab_hash = 0;
  nlohmann::json config;  // provenance; flat keys
};

namespace detail {

inline constexpr char kCkptMagic[5] = {'T', 'M', 'L', 'C', '1'};

struct BinWriter {
  std::ofstream out;
  explicit BinWriter(const std::filesystem::path& p) : out(p, std::ios::binary) {
    if (!out) throw format_error("checkpoint: cannot write " + p.string());
  }
  void bytes(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(const std::vector<double>& v) { bytes(v.data(), v.size() * 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct BinReader {
  std::ifstream in;
  std::string path;
  explicit BinReader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p.string()) {
    if (!in) throw format_error("checkpoint: cannot open " + path);
  }
  void bytes(void* p, std::size_t n) {
    if (!in.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) {
      throw format_error("checkpoint: truncated file " + path);
    }
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  void f64s(std::vector<double>& v, std::size_t n) {
    v.resize(n);
    bytes(v.data(), n * 8);
  }
  std::string str(std::size_t max_len = 1u << 20) {
    const std::uint32_t n = u32();
    if (n > max_len) throw format_error("checkpoint: implausible string length in " + path);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Checkpoint& c = const_cast<Checkpoint&>(ckpt);  // param_refs needs mutable access
  std::vector<ParamRef> refs = param_refs(c.params);
  detail::BinWriter w(path);
  w.bytes(detail::kCkptMagic, 5);
  w.u64(ckpt.vocab_hash);
  w.u32(ckpt.epoch);
  w.u64(ckpt.rng.seed);
  w.u64(ckpt.rng.position);
  w.u64(ckpt.adam.t);
  w.f64(ckpt.adam.beta1);
  w.f64(ckpt.adam.beta2);
  w.f64(ckpt.adam.eps);
  w.str(ckpt.config.dump());
  w.u64(ckpt.params.dims.emb_dim);
  w.u64(ckpt.params.dims.d_v);
  w.u64(ckpt.params.dims.u);
  w.u64(ckpt.params.dims.d);
  w.u32(static_cast<std::uint32_t>(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    w.str(refs[i].name);
    const Tensor& t = *refs[i].tensor;
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) w.u64(dim);
    w.f64s(t.values());
    w.f64s(ckpt.adam.m[i]);
    w.f64s(ckpt.adam.v[i]);
  }
  w.out.flush();
  if (!w.out) throw format_error("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::BinReader r(path);
  char magic[5];
  r.bytes(magic, 5);
  if (std::memcmp(magic, detail::kCkptMagic, 5) != 0) {
    throw format_error("checkpoint: bad magic in " + path.string() +
                       " (expected TMLC1)");
  }
  Checkpoint c;
  c.vocab_hash = r.u64();
  c.epoch = r.u32();
  c.rng.seed = r.u64();
  c.rng.position = r.u64();
  c.adam.t = r.u64();
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.eps = r.f64();
  const std::string config_text = r.str();
  try {
    c.config = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("checkpoint: bad embedded config in " + path.string() + ": " + e.what());
  }
  ModelDims dims;
  dims.emb_dim = r.u64();
  dims.d_v = r.u64();
  dims.u = r.u64();
  dims.d = r.u64();
  RngState scratch;  // values are overwritten below
  c.params = init_model(dims, scratch);
  std::vector<ParamRef> refs = param_refs(c.params);
  const std::uint32_t count = r.u32();
  if (count != refs.size()) {
    throw format_error("checkpoint: parameter count " + std::to_string(count) + " != expected " +
                       std::to_string(refs.size()) + " in " + path.string());
  }
  c.adam.m.resize(refs.size());
  c.adam.v.resize(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::string name = r.str();
    if (name != refs[i].name) {
      throw format_error("checkpoint: parameter \"" + name + "\" where \"" + refs[i].name +
                         "\" expected in " + path.string());
    }
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != refs[i].tensor->shape()) {
      throw format_error("checkpoint: shape mismatch for " + name + " in " + path.string());
    }
    r.f64s(refs[i].tensor->values(), refs[i].tensor->numel());
    r.f64s(c.adam.m[i], refs[i].tensor->numel());
    r.f64s(c.adam.v[i], refs[i].tensor->numel());
  }
  char extra;
  if (r.in.read(&extra, 1)) {
    throw format_error("checkpoint: trailing bytes in " + path.string());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::uint32_t epoch = 0;  // 1-based
  std::size_t sample_count = 0;
  double mean_total = 0;
  double mean_main = 0;
  double mean_att = 0;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  RngState rng;  // data stream after the final epoch
  std::uint32_t epoch = 0;
  std::vector<EpochLog> log;
};

// CSV rows are printed with %.17g so equal runs produce identical bytes.
inline void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("loss log: cannot write " + path.string());
  out << "epoch,sample_count,mean_total,mean_main,mean_att\n";
  char buf[96];
  for (const EpochLog& e : log) {
    out << e.epoch << "," << e.sample_count;
    for (double v : {e.mean_total, e.mean_main, e.mean_att}) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out << buf;
    }
    out << "\n";
  }
}

// One pass over the dataset per epoch: shuffle, then for each sample
// optionally crop-augment, run forward/backward, and take an Adam step
// (accumulating `accum` sample gradients per step, averaged).
//
// `checkpoint_path`, when set, is rewritten after every epoch; on divergence
// the last written checkpoint is retained and a config_error is thrown.
// `resume` continues a previous run bit-exactly.
inline TrainResult train(const std::vector<Sample>& samples, const EmbeddingTable& table,
                         std::uint64_t vocab_hash, const TrainConfig& cfg,
                         const std::filesystem::path& checkpoint_path = {},
                         const nlohmann::json& config_json = nlohmann::json::object(),
                         const Checkpoint* resume = nullptr) {
  if (samples.empty()) throw config_error("train: no training samples");
  if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");
  if (!(cfg.learning_rate > 0)) throw config_error("train: learning_rate must be > 0");
  if (cfg.accum < 1) throw config_error("train: accum must be >= 1");

  const std::size_t d_v = samples[0].features->d_v;
  for (const Sample& s : samples) {
    if (s.features->d_v != d_v) {
      throw config_error("train: inconsistent feature dimension across samples (" +
                         std::to_string(s.features->d_v) + " vs " + std::to_string(d_v) + ")");
    }
  }

  TrainResult res;
  std::uint32_t start_epoch = 0;
  if (resume != nullptr) {
    if (resume->vocab_hash != vocab_hash) {
      throw config_error("train: checkpoint was built with a different vocabulary (hash " +
                         std::to_string(resume->vocab_hash) + " != " +
                         std::to_string(vocab_hash) + "); refusing to resume");
    }
    res.params = resume->params;
    res.adam = resume->adam;
    res.rng = resume->rng;
    start_epoch = resume->epoch;
  } else {
    ModelDims dims{table.dim, d_v, cfg.u, cfg.d};
    RngState rng_init = fork(cfg.seed, kRngKeyInit);
    res.params = init_model(dims, rng_init);
    std::vector<ParamRef> refs = param_refs(res.params);
    res.adam = init_adam(refs);
    res.rng = fork(cfg.seed, kRngKeyData);
  }

  std::vector<ParamRef> refs = param_refs(res.params);
  const LossOptions loss_opt = cfg.loss_options();

  std::vector<std::vector<double>> grad_accum(refs.size());
  for (std::size_t p = 0; p < refs.size(); ++p) grad_accum[p].assign(refs[p].tensor->numel(), 0.0);
  std::size_t accum_count = 0;

  auto flush_step = [&]() {
    if (accum_count == 0) return;
    if (accum_count > 1) {
      const double inv = 1.0 / static_cast<double>(accum_count);
      for (auto& g : grad_accum)
        for (double& x : g) x *= inv;
    }
    adam_step(refs, grad_accum, res.adam, cfg.learning_rate, cfg.weight_decay);
    for (auto& g : grad_accum) std::fill(g.begin(), g.end(), 0.0);
    accum_count = 0;
  };

  std::vector<std::size_t> order(samples.size());

  for (std::uint32_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates over the identity, so each epoch's order is a pure
    // function of the data stream's state (required for bit-exact resume).
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i-- > 1;) {
      const std::size_t j = static_cast<std::size_t>(next_below(res.rng, i + 1));
      std::swap(order[i], order[j]);
    }

    double sum_total = 0, sum_main = 0, sum_att = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Sample& base = samples[order[k]];
      Sample cropped;
      const Sample* s = &base;
      if (cfg.augment) {
        cropped = augment_random_crop(base, res.rng);
        s = &cropped;
      }

      Tape tape;
      ModelVars vars = bind_model(tape, res.params);
      SampleForward fwd = forward_sample(tape, vars, to_tensor(*s->features), s->token_ids, table,
                                         s->tau_s, s->tau_e, loss_opt, res.rng,
                                         /*training=*/true);
      const double total = tape.value(fwd.total)[0];
      if (!std::isfinite(total)) {
        throw config_error("train: loss diverged (non-finite) at epoch " +
                           std::to_string(epoch + 1) + ", sample " + std::to_string(k) +
                           (checkpoint_path.empty() ? "" : "; last checkpoint retained"));
      }
      sum_total += total;
      sum_main += tape.value(fwd.l_main)[0];
      sum_att += tape.value(fwd.l_att)[0];

      tape.backward(fwd.total);
      std::vector<Var> vars_flat = param_vars(vars);
      for (std::size_t p = 0; p < refs.size(); ++p) {
        const Tensor& g = tape.grad(vars_flat[p]);
        for (std::size_t i = 0; i < g.numel(); ++i) grad_accum[p][i] += g[i];
      }
      if (++accum_count == cfg.accum) flush_step();
    }
    flush_step();  // epoch never carries a partial window across its boundary

    EpochLog el;
    el.epoch = epoch + 1;
    el.sample_count = samples.size();
    el.mean_total = sum_total / static_cast<double>(samples.size());
    el.mean_main = sum_main / static_cast<double>(samples.size());
    el.mean_att = sum_att / static_cast<double>(samples.size());
    res.log.push_back(el);
    res.epoch = epoch + 1;

    if (!checkpoint_path.empty()) {
      Checkpoint ckpt;
      ckpt.params = res.params;
      ckpt.adam = res.adam;
      ckpt.epoch = res.epoch;
      ckpt.rng = res.rng;
      ckpt.vocab_hash = vocab_hash;
      ckpt.config = config_json;
      save_checkpoint(checkpoint_path, ckpt);
    }
  }
  return res;
}

}  // namespace tmlga
