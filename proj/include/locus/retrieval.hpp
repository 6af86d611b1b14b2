// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "locus/binary_io.hpp"
#include "locus/corpus.hpp"
#include "locus/error.hpp"
#include "locus/rng.hpp"

namespace locus {

struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }

  bool is_zero() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; });
  }

  double norm() const {
    double s = 0.0;
    for (float v : values) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  }

  bool operator==(const EmbeddingVector&) const = default;
};

/// Provider contract: deterministic for a fixed provider and text, output
/// L2-normalized (or all-zero when the text has no tokens). Implementations
/// must be safe to call concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
};

/// Offline reference embedder. Each lowercased token maps to a pseudo-random
/// unit vector seeded by a stable hash of the token; the sentence vector is
/// the normalized sum of its token vectors.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 256, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
  }

  std::string id() const override {
    return "hash-v1:dim=" + std::to_string(dim_) + ":seed=" + std::to_string(seed_);
  }

  std::size_t dim() const override { return dim_; }

  std::vector<double> token_vector(std::string_view token) const {
    Rng rng(mix_seed({seed_, fnv1a64(utf8::lower(token))}));
    std::vector<double> v(dim_);
    double n = 0.0;
    do {
      n = 0.0;
      for (auto& x : v) {
        x = uniform(rng, -1.0, 1.0);
        n += x * x;
      }
    } while (n == 0.0);
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
  }

  EmbeddingVector embed(std::string_view text) const override {
    if (text.empty()) throw DataError("cannot embed empty text");
    std::vector<double> acc(dim_, 0.0);
    for (const auto& tok : tokenize(text)) {
      auto tv = token_vector(tok.text);
      for (std::size_t i = 0; i < dim_; ++i) acc[i] += tv[i];
    }
    double n = 0.0;
    for (double x : acc) n += x * x;
    n = std::sqrt(n);
    EmbeddingVector out;
    out.values.resize(dim_, 0.0f);
    if (n > 0.0)
      for (std::size_t i = 0; i < dim_; ++i) out.values[i] = static_cast<float>(acc[i] / n);
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw DataError("dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double x = a.values[i], y = b.values[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Similarity used for ranking: a zero vector (text without tokens) is
/// similar to nothing and scores 0.
inline double ranking_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.is_zero() || b.is_zero()) return 0.0;
  return cosine_similarity(a, b);
}

struct IndexEntry {
  std::size_t position = 0;
  EmbeddingVector vector;
  LabeledExample example;

  bool operator==(const IndexEntry&) const = default;
};

struct RetrievalHit {
  LabeledExample example;
  double score = 0.0;
  std::size_t corpus_position = 0;

  bool operator==(const RetrievalHit&) const = default;
};

/// Immutable exhaustive-scan index over a corpus.
class RetrievalIndex {
 public:
  static constexpr std::string_view kMagic = "LOCUSIDX";
  static constexpr std::uint32_t kVersion = 1;

  RetrievalIndex(std::string embedder_id, std::size_t dim, LabelSchema schema, std::vector<IndexEntry> entries)
      : embedder_id_(std::move(embedder_id)), dim_(dim), schema_(std::move(schema)), entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].vector.dim() != dim_) throw DataError("index entry " + std::to_string(i) + " has wrong dimension");
      if (i > 0 && entries_[i].position <= entries_[i - 1].position)
        throw DataError("index entries are not ordered by corpus position");
    }
  }

  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const LabelSchema& schema() const { return schema_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }

  void save(std::ostream& os) const {
    binio::write_magic(os, kMagic);
    binio::write_uint<std::uint32_t>(os, kVersion);
    binio::write_string(os, embedder_id_);
    binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
    binio::write_uint<std::uint64_t>(os, entries_.size());
    binio::write_string(os, schema_to_json(schema_).dump());
    for (const auto& e : entries_) {
      binio::write_uint<std::uint64_t>(os, e.position);
      for (float v : e.vector.values) binio::write_f32(os, v);
      binio::write_string(os, example_to_record(e.example, schema_.task).dump());
    }
  }

  static RetrievalIndex load(std::istream& is) {
    binio::expect_magic(is, kMagic, "retrieval index");
    const auto version = binio::read_uint<std::uint32_t>(is);
    if (version != kVersion) throw FormatError("unsupported index version " + std::to_string(version));
    auto embedder_id = binio::read_string(is);
    const auto dim = binio::read_uint<std::uint32_t>(is);
    const auto count = binio::read_uint<std::uint64_t>(is);
    LabelSchema schema;
    try {
      schema = schema_from_json(json::parse(binio::read_string(is)));
    } catch (const json::exception& e) {
      throw FormatError(std::string("index schema: ") + e.what());
    }
    std::vector<IndexEntry> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
      IndexEntry e;
      e.position = binio::read_uint<std::uint64_t>(is);
      e.vector.values.resize(dim);
      for (auto& v : e.vector.values) v = binio::read_f32(is);
      try {
        e.example = example_from_record(json::parse(binio::read_string(is)), schema);
      } catch (const json::exception& ex) {
        throw FormatError("index entry " + std::to_string(i) + ": " + ex.what());
      }
      entries.push_back(std::move(e));
    }
    return RetrievalIndex(std::move(embedder_id), dim, std::move(schema), std::move(entries));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save(out);
    if (!out) throw IoError("write failure on " + path);
  }

  static RetrievalIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open index file " + path);
    return load(in);
  }

 private:
  std::string embedder_id_;
  std::size_t dim_;
  LabelSchema schema_;
  std::vector<IndexEntry> entries_;
};

/// Embeds every corpus example (optionally on several threads) and stores the
/// results by corpus position.
inline RetrievalIndex build_index(const Dataset& corpus, const Embedder& embedder, unsigned threads = 1) {
  if (corpus.empty()) throw DataError("empty corpus");
  const std::size_t n = corpus.size();
  std::vector<IndexEntry> entries(n);
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex err_mu;
  std::optional<std::pair<std::size_t, std::string>> failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard lk(err_mu);
        if (failure) return;
      }
      try {
        auto v = embedder.embed(corpus.examples[i].text);
        if (v.dim() != embedder.dim()) throw DataError("embedder returned wrong dimension");
        entries[i] = IndexEntry{i, std::move(v), corpus.examples[i]};
        done.fetch_add(1);
      } catch (const std::exception& e) {
        std::lock_guard lk(err_mu);
        if (!failure || i < failure->first) failure = {{i, e.what()}};
      }
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure)
    throw DataError("embedding failed at corpus entry " + std::to_string(failure->first) + " after " +
                    std::to_string(done.load()) + " of " + std::to_string(n) + " entries: " + failure->second);
  return RetrievalIndex(embedder.id(), embedder.dim(), corpus.schema, std::move(entries));
}

/// Seed vectors are embedded once and reused across rounds.
inline std::vector<EmbeddingVector> embed_all(const Dataset& d, const Embedder& embedder) {
  std::vector<EmbeddingVector> out;
  out.reserve(d.size());
  for (const auto& ex : d.examples) out.push_back(embedder.embed(ex.text));
  return out;
}

/// Top-k by max-over-seeds cosine, descending, ties by ascending corpus
/// position. Entries whose position is in `excluded` are skipped.
inline std::vector<RetrievalHit> retrieve_top_k(const RetrievalIndex& index,
                                                const std::vector<EmbeddingVector>& seed_vectors, std::size_t k,
                                                const std::set<std::size_t>& excluded = {}) {
  if (k == 0) throw ConfigError("k must be positive");
  if (seed_vectors.empty()) throw DataError("empty seed set");
  for (const auto& s : seed_vectors)
    if (s.dim() != index.dim()) throw DataError("seed embedding dimension does not match index");

  struct Scored {
    double score;
    std::size_t slot;
  };
  std::vector<Scored> scored;
  scored.reserve(index.size());
  const auto& entries = index.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (excluded.count(entries[i].position)) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& s : seed_vectors) best = std::max(best, ranking_similarity(s, entries[i].vector));
    scored.push_back({best, i});
  }
  const std::size_t take = std::min(k, scored.size());
  auto before = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return entries[a.slot].position < entries[b.slot].position;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);

  std::vector<RetrievalHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& e = entries[scored[i].slot];
    hits.push_back({e.example, scored[i].score, e.position});
  }
  return hits;
}

inline std::vector<RetrievalHit> retrieve_top_k(const RetrievalIndex& index, const Dataset& seeds, std::size_t k,
                                                const Embedder& embedder,
                                                const std::set<std::size_t>& excluded = {}) {
  if (embedder.id() != index.embedder_id())
    throw ConfigError("embedder mismatch: index built with '" + index.embedder_id() + "', query uses '" +
                      embedder.id() + "'");
  if (seeds.empty()) throw DataError("empty seed set");
  return retrieve_top_k(index, embed_all(seeds, embedder), k, excluded);
}

}  // namespace locus
