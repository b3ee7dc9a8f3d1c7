// SPDX-License-Identifier: Apache-2.0
//
// Dataset file formats and text preprocessing:
//   - JSON manifests listing videos, feature files and annotated moments
//   - TMLF, a little-endian binary container for feature sequences
//   - vocabulary construction and query tokenization
//   - text embedding tables
//   - the mapping between annotation times and feature indices
//
// Feature indices are 1-based throughout, matching the [1, n] convention used
// by the rest of the library.

#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tmlga/errors.hpp"
#include "tmlga/rng.hpp"
#include "tmlga/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats are defined little-endian");

namespace tmlga {

// ---------------------------------------------------------------------------
// Manifest

struct Annotation {
  std::string query;
  double t_s = 0;  // seconds
  double t_e = 0;  // seconds
};

struct VideoEntry {
  std::string video_id;
  std::string feature_path;
  std::uint64_t l = 0;  // frame count
  double fps = 0;       // frames per second
  std::vector<Annotation> annotations;
};

struct DatasetManifest {
  std::vector<VideoEntry> entries;
};

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace detail

inline void validate_manifest(const DatasetManifest& m) {
  std::unordered_map<std::string, int> seen;
  for (const VideoEntry& e : m.entries) {
    if (++seen[e.video_id] > 1) {
      throw format_error("manifest: duplicate video_id \"" + e.video_id + "\"");
    }
    if (e.l < 1) {
      throw format_error("manifest: video \"" + e.video_id + "\": l must be >= 1");
    }
    if (!(e.fps > 0)) {
      throw format_error("manifest: video \"" + e.video_id + "\": fps must be > 0");
    }
    const double duration = static_cast<double>(e.l) / e.fps;
    for (const Annotation& a : e.annotations) {
      if (!(a.t_s >= 0) || !(a.t_s < a.t_e)) {
        throw format_error("manifest: video \"" + e.video_id +
                           "\": annotation requires 0 <= t_s < t_e, got t_s=" +
                           std::to_string(a.t_s) + " t_e=" + std::to_string(a.t_e));
      }
      // 1 ulp of slack: annotation times are often computed as tau*l/(n*fps).
      if (a.t_e > duration * (1.0 + 1e-12) + 1e-12) {
        throw format_error("manifest: video \"" + e.video_id + "\": t_e=" +
                           std::to_string(a.t_e) + " exceeds video duration " +
                           std::to_string(duration));
      }
    }
  }
}

inline DatasetManifest parse_manifest(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("manifest: JSON parse error at line " +
                       std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
  }
  DatasetManifest m;
  try {
    for (const auto& je : j.at("entries")) {
      VideoEntry e;
      e.video_id = je.at("video_id").get<std::string>();
      e.feature_path = je.at("feature_path").get<std::string>();
      e.l = je.at("l").get<std::uint64_t>();
      e.fps = je.at("fps").get<double>();
      for (const auto& ja : je.at("annotations")) {
        Annotation a;
        a.query = ja.at("query").get<std::string>();
        a.t_s = ja.at("t_s").get<double>();
        a.t_e = ja.at("t_e").get<double>();
        e.annotations.push_back(std::move(a));
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("manifest: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const VideoEntry& e : m.entries) {
    nlohmann::json anns = nlohmann::json::array();
    for (const Annotation& a : e.annotations) {
      anns.push_back({{"query", a.query}, {"t_s", a.t_s}, {"t_e", a.t_e}});
    }
    entries.push_back({{"video_id", e.video_id},
                       {"feature_path", e.feature_path},
                       {"l", e.l},
                       {"fps", e.fps},
                       {"annotations", anns}});
  }
  return nlohmann::json{{"entries", entries}};
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("manifest: cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// TMLF feature files
//
// Layout (little-endian, no padding):
//   bytes 0..3   magic "TMLF"
//   u32          version, currently 1
//   u32          n    (number of feature vectors, >= 1)
//   u32          d_v  (feature dimension, >= 1)
//   f32 * n*d_v  row-major feature data

struct FeatureSequence {
  std::uint32_t n = 0;
  std::uint32_t d_v = 0;
  std::vector<float> data;  // row-major, n * d_v entries
};

inline constexpr char kTmlfMagic[4] = {'T', 'M', 'L', 'F'};
inline constexpr std::uint32_t kTmlfVersion = 1;

inline void write_features(const std::filesystem::path& path, const FeatureSequence& fs) {
  if (fs.n < 1 || fs.d_v < 1 || fs.data.size() != std::size_t(fs.n) * fs.d_v) {
    throw shape_error("features: inconsistent sequence (n=" + std::to_string(fs.n) +
                      ", d_v=" + std::to_string(fs.d_v) + ", entries=" +
                      std::to_string(fs.data.size()) + ")");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("features: cannot write " + path.string());
  out.write(kTmlfMagic, 4);
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(kTmlfVersion);
  put_u32(fs.n);
  put_u32(fs.d_v);
  out.write(reinterpret_cast<const char*>(fs.data.data()),
            static_cast<std::streamsize>(fs.data.size() * sizeof(float)));
  if (!out) throw format_error("features: write failed for " + path.string());
}

inline FeatureSequence load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("features: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kTmlfMagic, 4) != 0) {
    throw format_error("features: bad magic in " + path.string());
  }
  auto get_u32 = [&](const char* what) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) {
      throw format_error("features: truncated header (" + std::string(what) + ") in " +
                         path.string());
    }
    return v;
  };
  const std::uint32_t version = get_u32("version");
  if (version != kTmlfVersion) {
    throw format_error("features: unsupported version " + std::to_string(version) + " in " +
                       path.string());
  }
  FeatureSequence fs;
  fs.n = get_u32("n");
  fs.d_v = get_u32("d_v");
  if (fs.n < 1 || fs.d_v < 1) {
    throw format_error("features: n and d_v must be >= 1 in " + path.string());
  }
  fs.data.resize(std::size_t(fs.n) * fs.d_v);
  in.read(reinterpret_cast<char*>(fs.data.data()),
          static_cast<std::streamsize>(fs.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(fs.data.size() * sizeof(float))) {
    throw format_error("features: truncated data in " + path.string() + " (expected " +
                       std::to_string(fs.data.size()) + " floats)");
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw format_error("features: trailing bytes in " + path.string());
  }
  for (std::size_t i = 0; i < fs.data.size(); ++i) {
    if (!std::isfinite(fs.data[i])) {
      throw format_error("features: non-finite entry at index " + std::to_string(i) + " in " +
                         path.string());
    }
  }
  return fs;
}

// Widens to 64-bit for computation.
inline Tensor to_tensor(const FeatureSequence& fs) {
  Tensor t({fs.n, fs.d_v});
  for (std::size_t i = 0; i < fs.data.size(); ++i) t[i] = static_cast<double>(fs.data[i]);
  return t;
}

// Relative feature paths resolve against the manifest's directory.
inline std::filesystem::path resolve_feature_path(const std::filesystem::path& manifest_path,
                                                  const std::string& feature_path) {
  std::filesystem::path p(feature_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Tokenization and vocabulary

// Lowercased maximal runs of ASCII alphanumerics; every other byte separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if ((u >= 'a' && u <= 'z') || (u >= '0' && u <= '9')) {
      cur.push_back(c);
    } else if (u >= 'A' && u <= 'Z') {
      cur.push_back(static_cast<char>(u - 'A' + 'a'));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : token_to_id_{{"<pad>", kPad}, {"<unk>", kUnk}}, id_to_token_{"<pad>", "<unk>"} {}

  int add(const std::string& token) {
    auto [it, inserted] = token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(token);
    return it->second;
  }

  int id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const {
    return token_to_id_.count(std::string(token)) > 0;
  }

  const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return id_to_token_.size(); }

  // FNV-1a over the id-ordered token list; identifies a vocabulary in
  // checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const std::string& t : id_to_token_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
      }
      h ^= static_cast<unsigned char>('\n');
      h *= 0x100000001B3ULL;
    }
    return h;
  }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Tokens with corpus frequency >= min_freq get ids, in first-occurrence
// order; everything else encodes to <unk>.
inline Vocabulary build_vocabulary(const std::vector<std::string>& queries,
                                   std::size_t min_freq = 5) {
  if (queries.empty()) throw config_error("build_vocabulary: empty corpus");
  std::unordered_map<std::string, std::size_t> freq;
  std::vector<std::string> order;
  for (const std::string& q : queries) {
    for (std::string& tok : tokenize(q)) {
      if (++freq[tok] == 1) order.push_back(std::move(tok));
    }
  }
  Vocabulary vocab;
  for (const std::string& tok : order) {
    if (freq[tok] >= min_freq) vocab.add(tok);
  }
  return vocab;
}

inline std::vector<int> encode_query(std::string_view query, const Vocabulary& vocab,
                                     std::size_t max_len = 30) {
  std::vector<std::string> toks = tokenize(query);
  if (toks.empty()) {
    throw domain_error("encode_query: query tokenizes to nothing: \"" + std::string(query) + "\"");
  }
  if (toks.size() > max_len) toks.resize(max_len);
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const std::string& t : toks) ids.push_back(vocab.id(t));
  return ids;
}

// ---------------------------------------------------------------------------
// Embedding table

struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<double> rows;  // vocab_size * dim, row id * dim + j

  const double* row(int id) const { return rows.data() + static_cast<std::size_t>(id) * dim; }
  std::size_t vocab_size() const { return dim == 0 ? 0 : rows.size() / dim; }
};

// Text format: one token per line, "token v1 v2 ... v_dim"; dim is inferred
// from the first line. Vocabulary tokens absent from the file are initialized
// uniform(-0.05, 0.05) from rng, in ascending id order; the <pad> row stays
// all zeros.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                      RngState rng = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("embeddings: cannot open " + path.string());

  EmbeddingTable table;
  std::vector<bool> covered(vocab.size(), false);
  covered[Vocabulary::kPad] = true;  // stays zero

  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<double>> pending(vocab.size());
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (!ss.eof()) {
      throw format_error("embeddings: bad number at line " + std::to_string(lineno));
    }
    if (vec.empty()) {
      throw format_error("embeddings: no values at line " + std::to_string(lineno));
    }
    if (table.dim == 0) {
      table.dim = vec.size();
    } else if (vec.size() != table.dim) {
      throw format_error("embeddings: line " + std::to_string(lineno) + " has " +
                         std::to_string(vec.size()) + " values, expected " +
                         std::to_string(table.dim));
    }
    if (!vocab.contains(token)) continue;
    const int id = vocab.id(token);
    if (covered[static_cast<std::size_t>(id)]) continue;  // first occurrence wins
    covered[static_cast<std::size_t>(id)] = true;
    pending[static_cast<std::size_t>(id)] = std::move(vec);
  }
  if (table.dim == 0) {
    throw format_error("embeddings: file " + path.string() + " has no embedding lines");
  }

  table.rows.assign(vocab.size() * table.dim, 0.0);
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    double* dst = table.rows.data() + id * table.dim;
    if (covered[id]) {
      if (!pending[id].empty()) {
        for (std::size_t j = 0; j < table.dim; ++j) dst[j] = pending[id][j];
      }
    } else {
      for (std::size_t j = 0; j < table.dim; ++j) dst[j] = uniform(rng, -0.05, 0.05);
    }
  }
  return table;
}

// Token rows stacked into an m x dim constant input matrix.
inline Tensor embed_tokens(const std::vector<int>& ids, const EmbeddingTable& table) {
  if (ids.empty()) throw shape_error("embed_tokens: empty token list");
  Tensor out({ids.size(), table.dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.row(ids[i]);
    for (std::size_t j = 0; j < table.dim; ++j) out.at(i, j) = src[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time <-> feature-index mapping
//
// tau_real = t * n * fps / l; the returned index is round-half-up then
// clamped to [1, n]. index_to_time inverts the real-valued mapping.

inline std::size_t time_to_index(double t, std::size_t n, double fps, std::uint64_t l) {
  const double duration = static_cast<double>(l) / fps;
  if (!(t >= 0.0) || t > duration * (1.0 + 1e-12) + 1e-12) {
    throw domain_error("time_to_index: t=" + std::to_string(t) + " outside [0, " +
                       std::to_string(duration) + "]");
  }
  const double tau_real = t * static_cast<double>(n) * fps / static_cast<double>(l);
  double idx = std::floor(tau_real + 0.5);
  if (idx < 1.0) idx = 1.0;
  if (idx > static_cast<double>(n)) idx = static_cast<double>(n);
  return static_cast<std::size_t>(idx);
}

inline double index_to_time(std::size_t tau, std::size_t n, double fps, std::uint64_t l) {
  if (tau < 1 || tau > n) {
    throw domain_error("index_to_time: tau=" + std::to_string(tau) + " outside [1, " +
                       std::to_string(n) + "]");
  }
  return static_cast<double>(tau) * static_cast<double>(l) / (static_cast<double>(n) * fps);
}

// ---------------------------------------------------------------------------
// Samples
//
// One training example: a feature sequence, the encoded query, and the
// ground-truth span in 1-based feature indices. A video with several
// annotations yields that many independent samples.

struct Sample {
  std::shared_ptr<const FeatureSequence> features;
  std::vector<int> token_ids;
  std::size_t tau_s = 1;
  std::size_t tau_e = 1;
  std::string video_id;
  std::string query;
  double t_s = 0;  // annotation seconds, kept for evaluation
  double t_e = 0;
  double fps = 0;       // for converting predicted indices back to seconds
  std::uint64_t l = 0;  // frame count
};

inline std::vector<Sample> build_samples(const DatasetManifest& manifest,
                                         const std::filesystem::path& manifest_path,
                                         const Vocabulary& vocab, std::size_t max_len = 30) {
  std::vector<Sample> samples;
  std::map<std::string, std::shared_ptr<const FeatureSequence>> cache;
  for (const VideoEntry& e : manifest.entries) {
    auto it = cache.find(e.feature_path);
    if (it == cache.end()) {
      auto fs = std::make_shared<FeatureSequence>(
          load_features(resolve_feature_path(manifest_path, e.feature_path)));
      it = cache.emplace(e.feature_path, std::move(fs)).first;
    }
    const auto& fs = it->second;
    for (const Annotation& a : e.annotations) {
      Sample s;
      s.features = fs;
      s.token_ids = encode_query(a.query, vocab, max_len);
      s.tau_s = time_to_index(a.t_s, fs->n, e.fps, e.l);
      s.tau_e = time_to_index(a.t_e, fs->n, e.fps, e.l);
      if (s.tau_s > s.tau_e) s.tau_e = s.tau_s;  // sub-step annotation, degenerate span
      s.video_id = e.video_id;
      s.query = a.query;
      s.t_s = a.t_s;
      s.t_e = a.t_e;
      s.fps = e.fps;
      s.l = e.l;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

// All annotation queries of a manifest, in entry order; vocabulary input.
inline std::vector<std::string> collect_queries(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const VideoEntry& e : m.entries)
    for (const Annotation& a : e.annotations) out.push_back(a.query);
  return out;
}

}  // namespace tmlga
