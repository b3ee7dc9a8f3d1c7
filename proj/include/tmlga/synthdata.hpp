// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic benchmark generator. Every action concept gets a
// fixed random prototype vector and a short query template; each video is
// background noise with one planted span of prototype-plus-noise features
// (and, with some probability, an unannotated distractor span of a different
// action). Produced files use the standard formats: JSON manifest, TMLF
// features, text embeddings. Everything is a pure function of the spec.
//
// Prototypes and the embedding file depend only on the seed, not on the split
// tag, so train/test manifests generated from the same spec share them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tmlga/dataio.hpp"
#include "tmlga/errors.hpp"
#include "tmlga/rng.hpp"

namespace tmlga {

struct SynthSpec {
  std::size_t num_videos = 500;
  std::size_t n = 64;    // features per video
  std::size_t d_v = 32;  // feature dimension
  std::size_t num_actions = 8;
  std::pair<std::size_t, std::size_t> moment_len_range{8, 16};  // in feature indices
  double noise_sigma = 0.1;      // stddev of every feature entry's noise
  double distractor_prob = 0.5;  // chance of a second, different-action span
  std::size_t emb_dim = 16;
  std::uint64_t seed = 0;

  // 16 frames per feature vector at 25 fps.
  double fps() const { return 25.0; }
  std::uint64_t frames() const { return static_cast<std::uint64_t>(16 * n); }
};

inline void validate_spec(const SynthSpec& spec) {
  if (spec.num_actions < 2) throw config_error("synth: num_actions must be >= 2");
  if (spec.n < 1 || spec.d_v < 1) throw config_error("synth: n and d_v must be >= 1");
  if (spec.moment_len_range.first < 2) {
    throw config_error("synth: minimum moment length must be >= 2 (annotations need t_s < t_e)");
  }
  if (spec.moment_len_range.second < spec.moment_len_range.first ||
      spec.moment_len_range.second > spec.n) {
    throw config_error("synth: moment_len_range must fit within n");
  }
  if (!(spec.noise_sigma >= 0)) throw config_error("synth: noise_sigma must be >= 0");
  if (!(spec.distractor_prob >= 0 && spec.distractor_prob <= 1)) {
    throw config_error("synth: distractor_prob must lie in [0, 1]");
  }
  if (spec.emb_dim < 1) throw config_error("synth: emb_dim must be >= 1");
}

namespace detail {

inline constexpr std::uint64_t kSynthProtoKey = 101;
inline constexpr std::uint64_t kSynthEmbKey = 102;
inline constexpr std::uint64_t kSynthVideoKey = 103;

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

inline std::vector<std::vector<double>> synth_prototypes(const SynthSpec& spec) {
  RngState rng = fork(spec.seed, detail::kSynthProtoKey);
  std::vector<std::vector<double>> protos(spec.num_actions, std::vector<double>(spec.d_v));
  for (auto& p : protos)
    for (double& v : p) v = gaussian(rng);
  return protos;
}

// 2-4 token query template, fixed per action.
inline std::string synth_query(std::size_t action) {
  const std::string verb = "action" + std::to_string(action);
  switch (action % 3) {
    case 0: return "person " + verb + " object";
    case 1: return "person " + verb + " the object";
    default: return "person " + verb;
  }
}

inline std::vector<std::string> synth_tokens(const SynthSpec& spec) {
  std::vector<std::string> toks{"person", "object", "the"};
  for (std::size_t k = 0; k < spec.num_actions; ++k) toks.push_back("action" + std::to_string(k));
  return toks;
}

inline void write_synth_embeddings(const SynthSpec& spec, const std::filesystem::path& path) {
  RngState rng = fork(spec.seed, detail::kSynthEmbKey);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("synth: cannot write " + path.string());
  char buf[48];
  for (const std::string& tok : synth_tokens(spec)) {
    out << tok;
    for (std::size_t j = 0; j < spec.emb_dim; ++j) {
      std::snprintf(buf, sizeof(buf), " %.9g", uniform(rng, -1.0, 1.0));
      out << buf;
    }
    out << "\n";
  }
}

struct SynthVideo {
  std::size_t action = 0;                             // annotated action
  std::pair<std::size_t, std::size_t> planted{1, 1};  // 1-based inclusive
  std::optional<std::pair<std::size_t, std::size_t>> distractor;
  std::size_t distractor_action = 0;
};

struct SynthOutput {
  DatasetManifest manifest;
  std::vector<std::vector<double>> prototypes;
  std::vector<SynthVideo> videos;  // parallel to manifest entries
  std::filesystem::path manifest_path;
  std::filesystem::path embeddings_path;
};

// Generates <split>_manifest.json, features/<split>_<i>.tmlf and
// embeddings.txt under out_dir.
inline SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out_dir,
                            const std::string& split = "train") {
  validate_spec(spec);
  std::filesystem::create_directories(out_dir / "features");

  SynthOutput out;
  out.prototypes = synth_prototypes(spec);
  out.embeddings_path = out_dir / "embeddings.txt";
  write_synth_embeddings(spec, out.embeddings_path);

  const std::size_t len_span = spec.moment_len_range.second - spec.moment_len_range.first + 1;
  const std::uint64_t split_seed = fork(spec.seed, detail::kSynthVideoKey).seed ^
                                   detail::fnv1a(split);

  for (std::size_t i = 0; i < spec.num_videos; ++i) {
    RngState rng = fork(split_seed, i);

    SynthVideo video;
    video.action = i % spec.num_actions;
    const std::size_t len =
        spec.moment_len_range.first + static_cast<std::size_t>(next_below(rng, len_span));
    const std::size_t a = 1 + static_cast<std::size_t>(next_below(rng, spec.n - len + 1));
    video.planted = {a, a + len - 1};

    if (next_double(rng) < spec.distractor_prob) {
      std::size_t other = static_cast<std::size_t>(next_below(rng, spec.num_actions - 1));
      if (other >= video.action) ++other;
      const std::size_t len2 =
          spec.moment_len_range.first + static_cast<std::size_t>(next_below(rng, len_span));
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const std::size_t a2 = 1 + static_cast<std::size_t>(next_below(rng, spec.n - len2 + 1));
        const std::size_t b2 = a2 + len2 - 1;
        if (b2 < video.planted.first || a2 > video.planted.second) {
          video.distractor = {{a2, b2}};
          video.distractor_action = other;
          placed = true;
        }
      }
      if (!placed) {
        throw config_error("synth: could not place distractor span after 100 attempts (video " +
                           std::to_string(i) + ")");
      }
    }

    // Background first (a fixed number of draws), then the planted rows, then
    // the distractor rows.
    FeatureSequence fs;
    fs.n = static_cast<std::uint32_t>(spec.n);
    fs.d_v = static_cast<std::uint32_t>(spec.d_v);
    fs.data.resize(spec.n * spec.d_v);
    for (float& x : fs.data) x = static_cast<float>(spec.noise_sigma * gaussian(rng));
    auto plant = [&](std::pair<std::size_t, std::size_t> span, std::size_t action) {
      for (std::size_t r = span.first - 1; r < span.second; ++r)
        for (std::size_t c = 0; c < spec.d_v; ++c)
          fs.data[r * spec.d_v + c] =
              static_cast<float>(out.prototypes[action][c] + spec.noise_sigma * gaussian(rng));
    };
    plant(video.planted, video.action);
    if (video.distractor) plant(*video.distractor, video.distractor_action);

    VideoEntry entry;
    entry.video_id = split + "_" + std::to_string(i);
    entry.feature_path = "features/" + entry.video_id + ".tmlf";
    entry.l = spec.frames();
    entry.fps = spec.fps();
    Annotation ann;
    ann.query = synth_query(video.action);
    ann.t_s = index_to_time(video.planted.first, spec.n, entry.fps, entry.l);
    ann.t_e = index_to_time(video.planted.second, spec.n, entry.fps, entry.l);
    entry.annotations.push_back(std::move(ann));
    write_features(out_dir / entry.feature_path, fs);
    out.manifest.entries.push_back(std::move(entry));
    out.videos.push_back(std::move(video));
  }

  out.manifest_path = out_dir / (split + "_manifest.json");
  validate_manifest(out.manifest);
  save_manifest(out.manifest_path, out.manifest);
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

// Longest contiguous run of features whose cosine similarity to the prototype
// exceeds 0.5 (1-based inclusive span); nullopt when no feature qualifies.
// Ties go to the earliest run.
inline std::optional<std::pair<std::size_t, std::size_t>> oracle_localize(
    const FeatureSequence& fs, const std::vector<double>& prototype) {
  if (prototype.size() != fs.d_v) {
    throw shape_error("oracle_localize: prototype dimension " + std::to_string(prototype.size()) +
                      " != d_v " + std::to_string(fs.d_v));
  }
  double pn = 0;
  for (double v : prototype) pn += v * v;
  pn = std::sqrt(pn);

  std::optional<std::pair<std::size_t, std::size_t>> best;
  std::size_t run_start = 0, run_len = 0, best_len = 0;
  for (std::size_t r = 0; r < fs.n; ++r) {
    double dot = 0, rn = 0;
    for (std::size_t c = 0; c < fs.d_v; ++c) {
      const double x = fs.data[r * fs.d_v + c];
      dot += x * prototype[c];
      rn += x * x;
    }
    rn = std::sqrt(rn);
    const double cosine = (rn < 1e-30 || pn < 1e-30) ? 0.0 : dot / (rn * pn);
    if (cosine > 0.5) {
      if (run_len == 0) run_start = r;
      ++run_len;
      if (run_len > best_len) {
        best_len = run_len;
        best = {{run_start + 1, r + 1}};
      }
    } else {
      run_len = 0;
    }
  }
  return best;
}

// Intersection-over-union of two inclusive 1-based index spans, counting
// integer positions.
inline double span_tiou(std::pair<std::size_t, std::size_t> a,
                        std::pair<std::size_t, std::size_t> b) {
  const std::size_t lo = std::max(a.first, b.first);
  const std::size_t hi = std::min(a.second, b.second);
  const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
  const double len_a = static_cast<double>(a.second - a.first + 1);
  const double len_b = static_cast<double>(b.second - b.first + 1);
  return inter / (len_a + len_b - inter);
}

}  // namespace tmlga
