// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "tmlga/synthdata.hpp"
#include "tmlga/training.hpp"

using namespace tmlga;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("tmlga_train_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct TinyData {
  Vocabulary vocab;
  EmbeddingTable table;
  std::vector<Sample> samples;
};

TinyData tiny_dataset(const fs::path& dir, std::size_t videos = 12, std::uint64_t seed = 5) {
  SynthSpec spec;
  spec.num_videos = videos;
  spec.n = 16;
  spec.d_v = 8;
  spec.num_actions = 3;
  spec.moment_len_range = {3, 6};
  spec.noise_sigma = 0.1;
  spec.distractor_prob = 0.3;
  spec.emb_dim = 6;
  spec.seed = seed;
  SynthOutput out = generate(spec, dir);
  TinyData data;
  data.vocab = build_vocabulary(collect_queries(out.manifest), 1);
  data.table = load_embeddings(out.embeddings_path, data.vocab, fork(seed, kRngKeyEmbeddings));
  data.samples = build_samples(out.manifest, out.manifest_path, data.vocab);
  return data;
}

TrainConfig tiny_config(std::uint32_t epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.u = 6;
  cfg.d = 6;
  cfg.learning_rate = 2e-3;
  cfg.seed = 11;
  return cfg;
}

Sample make_sample(std::uint32_t n, std::uint32_t d_v, std::size_t tau_s, std::size_t tau_e) {
  Sample s;
  auto fs = std::make_shared<FeatureSequence>();
  fs->n = n;
  fs->d_v = d_v;
  fs->data.resize(std::size_t(n) * d_v);
  for (std::size_t i = 0; i < fs->data.size(); ++i) fs->data[i] = static_cast<float>(i);
  s.features = std::move(fs);
  s.tau_s = tau_s;
  s.tau_e = tau_e;
  s.token_ids = {2, 3};
  return s;
}

}  // namespace

TEST_CASE("adam_step") {
  Tensor w = Tensor::scalar(0.0);
  std::vector<ParamRef> refs{{"w", &w}};
  AdamState state = init_adam(refs);

  SECTION("bias-corrected first step") {
    adam_step(refs, {{1.0}}, state, 1e-4, 0.0);
    REQUIRE(w[0] == Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));
    REQUIRE(state.t == 1);
  }
  SECTION("zero gradient leaves parameters untouched") {
    w[0] = 0.7;
    adam_step(refs, {{0.0}}, state, 1e-4, 0.0);
    REQUIRE(w[0] == 0.7);
  }
  SECTION("decay-only shrinks toward zero") {
    w[0] = 1.0;
    for (int i = 0; i < 50; ++i) adam_step(refs, {{0.0}}, state, 1e-3, 0.1);
    REQUIRE(w[0] < 1.0);
    REQUIRE(w[0] > 0.0);
  }
  SECTION("persistent positive gradient decreases the parameter monotonically") {
    double prev = w[0];
    for (int i = 0; i < 25; ++i) {
      adam_step(refs, {{2.5}}, state, 1e-3, 0.0);
      REQUIRE(w[0] < prev);
      prev = w[0];
    }
  }
  SECTION("non-finite gradient aborts naming the parameter") {
    REQUIRE_THROWS_MATCHES(
        adam_step(refs, {{std::nan("")}}, state, 1e-4, 0.0), config_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("w")));
  }
}

TEST_CASE("augment_random_crop") {
  SECTION("tau_s = 1 passes through without consuming randomness") {
    RngState rng{9, 0};
    Sample s = make_sample(10, 2, 1, 4);
    Sample out = augment_random_crop(s, rng);
    REQUIRE(rng.position == 0);
    REQUIRE(out.features.get() == s.features.get());
    REQUIRE(out.tau_s == 1);
  }
  SECTION("zero crop returns the sample unchanged") {
    Sample s = make_sample(10, 2, 4, 7);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      RngState rng{seed, 0};
      if (next_below(rng, 4) == 0) {
        RngState r2{seed, 0};
        Sample out = augment_random_crop(s, r2);
        REQUIRE(out.tau_s == 4);
        REQUIRE(out.features.get() == s.features.get());
        return;
      }
    }
    FAIL("no seed produced a zero crop");
  }
  SECTION("hand-checked shift") {
    Sample s = make_sample(10, 2, 4, 7);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      RngState rng{seed, 0};
      if (next_below(rng, 4) == 2) {
        RngState r2{seed, 0};
        Sample out = augment_random_crop(s, r2);
        REQUIRE(out.features->n == 8);
        REQUIRE(out.tau_s == 2);
        REQUIRE(out.tau_e == 5);
        // rows 3..10 retained: first retained entry was row index 2 (0-based)
        REQUIRE(out.features->data[0] == s.features->data[2 * 2]);
        return;
      }
    }
    FAIL("no seed produced a crop of 2");
  }
  SECTION("span length and lower bound are preserved") {
    RngState rng{33, 0};
    Sample s = make_sample(24, 3, 9, 15);
    for (int it = 0; it < 200; ++it) {
      Sample out = augment_random_crop(s, rng);
      REQUIRE(out.tau_e - out.tau_s == s.tau_e - s.tau_s);
      REQUIRE(out.tau_s >= 1);
      REQUIRE(out.tau_e <= out.features->n);
    }
  }
}

TEST_CASE("train basics") {
  SECTION("empty dataset is a configuration error") {
    EmbeddingTable table;
    table.dim = 4;
    REQUIRE_THROWS_AS(train({}, table, 0, tiny_config()), config_error);
  }
  SECTION("loss log is deterministic across runs") {
    fs::path dir = temp_dir("det");
    TinyData data = tiny_dataset(dir);
    TrainConfig cfg = tiny_config(3);
    TrainResult r1 = train(data.samples, data.table, data.vocab.hash(), cfg);
    TrainResult r2 = train(data.samples, data.table, data.vocab.hash(), cfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
      REQUIRE(r1.log[i].mean_total == r2.log[i].mean_total);
      REQUIRE(r1.log[i].mean_main == r2.log[i].mean_main);
      REQUIRE(r1.log[i].mean_att == r2.log[i].mean_att);
    }
    // parameters agree bit-exactly
    std::vector<ParamRef> p1 = param_refs(r1.params);
    std::vector<ParamRef> p2 = param_refs(r2.params);
    for (std::size_t i = 0; i < p1.size(); ++i) {
      REQUIRE(p1[i].tensor->values() == p2[i].tensor->values());
    }
  }
  SECTION("mean train loss decreases over the first epochs") {
    fs::path dir = temp_dir("desc");
    TinyData data = tiny_dataset(dir, 24);
    TrainConfig cfg = tiny_config(14);
    cfg.learning_rate = 5e-3;
    TrainResult r = train(data.samples, data.table, data.vocab.hash(), cfg);
    REQUIRE(r.log.size() == 14);
    REQUIRE(r.log.back().mean_total < 0.25 * r.log.front().mean_total);
    int drops = 0;
    for (std::size_t i = 1; i < r.log.size(); ++i) {
      if (r.log[i].mean_total < r.log[i - 1].mean_total) ++drops;
    }
    REQUIRE(drops >= 8);  // mostly decreasing; per-epoch means are noisy here
  }
  SECTION("gradient accumulation changes the trajectory but stays finite") {
    fs::path dir = temp_dir("accum");
    TinyData data = tiny_dataset(dir);
    TrainConfig cfg = tiny_config(2);
    cfg.accum = 4;
    TrainResult r = train(data.samples, data.table, data.vocab.hash(), cfg);
    REQUIRE(std::isfinite(r.log.back().mean_total));
  }
  SECTION("embedding table is untouched by training") {
    fs::path dir = temp_dir("frozen");
    TinyData data = tiny_dataset(dir);
    const std::vector<double> before = data.table.rows;
    train(data.samples, data.table, data.vocab.hash(), tiny_config(2));
    REQUIRE(data.table.rows == before);
  }
}

TEST_CASE("checkpointing") {
  fs::path dir = temp_dir("ckpt");
  TinyData data = tiny_dataset(dir);

  SECTION("save-load round trip restores everything bit-exactly") {
    TrainConfig cfg = tiny_config(2);
    TrainResult r = train(data.samples, data.table, data.vocab.hash(), cfg,
                          dir / "ckpt.tmlc", nlohmann::json{{"note", "unit"}});
    Checkpoint c = load_checkpoint(dir / "ckpt.tmlc");
    REQUIRE(c.epoch == 2);
    REQUIRE(c.vocab_hash == data.vocab.hash());
    REQUIRE(c.rng == r.rng);
    REQUIRE(c.config.at("note") == "unit");
    std::vector<ParamRef> a = param_refs(c.params);
    std::vector<ParamRef> b = param_refs(r.params);
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].tensor->values() == b[i].tensor->values());
      REQUIRE(c.adam.m[i] == r.adam.m[i]);
      REQUIRE(c.adam.v[i] == r.adam.v[i]);
    }
    REQUIRE(c.adam.t == r.adam.t);
  }
  SECTION("resume matches uninterrupted training bit-exactly") {
    TrainConfig cfg = tiny_config(4);
    TrainResult full = train(data.samples, data.table, data.vocab.hash(), cfg);

    TrainConfig half = cfg;
    half.epochs = 2;
    train(data.samples, data.table, data.vocab.hash(), half, dir / "half.tmlc");
    Checkpoint c = load_checkpoint(dir / "half.tmlc");
    TrainResult resumed = train(data.samples, data.table, data.vocab.hash(), cfg, {}, {}, &c);

    REQUIRE(resumed.log.size() == 2);  // epochs 3 and 4
    REQUIRE(resumed.log[0].mean_total == full.log[2].mean_total);
    REQUIRE(resumed.log[1].mean_total == full.log[3].mean_total);
    std::vector<ParamRef> a = param_refs(resumed.params);
    std::vector<ParamRef> b = param_refs(full.params);
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].tensor->values() == b[i].tensor->values());
    }
  }
  SECTION("corrupted checkpoint is rejected without partial state") {
    TrainConfig cfg = tiny_config(1);
    train(data.samples, data.table, data.vocab.hash(), cfg, dir / "c.tmlc");
    std::ifstream in(dir / "c.tmlc", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(dir / "c.tmlc", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
    out.close();
    REQUIRE_THROWS_AS(load_checkpoint(dir / "c.tmlc"), format_error);
  }
  SECTION("bad magic is rejected") {
    std::ofstream out(dir / "junk.tmlc", std::ios::binary);
    out << "NOTACKPT" << std::string(64, 'x');
    out.close();
    REQUIRE_THROWS_MATCHES(load_checkpoint(dir / "junk.tmlc"), format_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("magic")));
  }
  SECTION("vocabulary hash mismatch refuses to resume") {
    TrainConfig cfg = tiny_config(1);
    train(data.samples, data.table, data.vocab.hash(), cfg, dir / "v.tmlc");
    Checkpoint c = load_checkpoint(dir / "v.tmlc");
    TrainConfig more = cfg;
    more.epochs = 2;
    REQUIRE_THROWS_MATCHES(
        train(data.samples, data.table, data.vocab.hash() + 1, more, {}, {}, &c), config_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("vocabulary")));
  }
}

TEST_CASE("loss csv format") {
  fs::path dir = temp_dir("csv");
  std::vector<EpochLog> log{{1, 10, 1.5, 1.0, 0.5}, {2, 10, 1.25, 0.75, 0.5}};
  write_loss_csv(dir / "loss.csv", log);
  std::ifstream in(dir / "loss.csv");
  std::string header, row1;
  std::getline(in, header);
  std::getline(in, row1);
  REQUIRE(header == "epoch,sample_count,mean_total,mean_main,mean_att");
  REQUIRE(row1 == "1,10,1.5,1,0.5");
}
