// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "locus/corpus.hpp"
#include "locus/generation.hpp"
#include "locus/retrieval.hpp"
#include "locus/rng.hpp"

namespace locus {

enum class DedupKey { ExactText, NormalizedText };

inline std::string_view to_string(DedupKey k) { return k == DedupKey::ExactText ? "exact" : "normalized"; }

inline DedupKey parse_dedup_key(std::string_view s) {
  if (s == "exact") return DedupKey::ExactText;
  if (s == "normalized") return DedupKey::NormalizedText;
  throw ConfigError("unknown dedup key '" + std::string(s) + "' (expected exact or normalized)");
}

/// Algorithm parameters. `s` is the number of examples requested per
/// retrieval round, so the expanded set holds at most size_a + rounds * s
/// generated items before deduplication.
struct PipelineConfig {
  std::size_t n = 10;        // seed count
  std::size_t size_a = 30;   // seed-based synthetic target
  std::size_t k = 8;         // retrieved per round
  std::size_t m = 4;         // prompt context per round
  std::size_t s = 10;        // generated per round
  std::size_t rounds = 3;    // R
  std::uint64_t rng_seed = 13;
  std::size_t min_text_len = 20;
  DedupKey dedup = DedupKey::NormalizedText;
  bool stratified = true;
  bool include_user = true;        // add S to X
  bool include_retrieved = false;  // add raw retrieved corpus sentences to X
  std::size_t per_prompt = 10;     // items requested per seed-based call
  std::size_t max_seed_calls = 0;  // 0: three times the calls the target needs

  void check() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (m < 1) throw ConfigError("m must be >= 1");
    if (k < m) throw ConfigError("k must be >= m");
    if (s < 1) throw ConfigError("s must be >= 1");
    if (per_prompt < 1) throw ConfigError("per_prompt must be >= 1");
  }
};

inline ordered_json to_json(const PipelineConfig& c) {
  return ordered_json{{"n", c.n},
                      {"size_a", c.size_a},
                      {"k", c.k},
                      {"m", c.m},
                      {"s", c.s},
                      {"rounds", c.rounds},
                      {"rng_seed", c.rng_seed},
                      {"min_text_len", c.min_text_len},
                      {"dedup", to_string(c.dedup)},
                      {"stratified", c.stratified},
                      {"include_user", c.include_user},
                      {"include_retrieved", c.include_retrieved},
                      {"per_prompt", c.per_prompt},
                      {"max_seed_calls", c.max_seed_calls}};
}

/// Stratum used for balanced seed sampling: the class label (TC) or the
/// first entity's label (NER); entity-free NER examples form their own stratum.
inline std::string stratum_of(const LabeledExample& ex, TaskKind task) {
  if (task == TaskKind::TC) return ex.label;
  return ex.entities.empty() ? std::string{} : ex.entities.front().label;
}

inline Dataset select_seeds(const Dataset& d_user, std::size_t n, std::uint64_t rng_seed, bool stratified = false) {
  if (d_user.empty()) throw DataError("user dataset is empty");
  Rng rng(mix_seed({rng_seed, 0x5eed}));
  Dataset out{d_user.schema, {}};

  if (!stratified || n >= d_user.size()) {
    out.examples = d_user.examples;
    shuffle(std::span(out.examples), rng);
    out.examples.resize(std::min(n, out.examples.size()));
    return out;
  }

  std::vector<std::string> order = d_user.schema.labels;
  order.push_back({});
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d_user.size(); ++i) strata[stratum_of(d_user.examples[i], d_user.schema.task)].push_back(i);
  std::vector<std::vector<std::size_t>> queues;
  for (const auto& key : order) {
    auto it = strata.find(key);
    if (it == strata.end()) continue;
    shuffle(std::span(it->second), rng);
    queues.push_back(it->second);
  }
  std::vector<std::size_t> cursor(queues.size(), 0);
  while (out.size() < n) {
    bool progressed = false;
    for (std::size_t q = 0; q < queues.size() && out.size() < n; ++q) {
      if (cursor[q] >= queues[q].size()) continue;
      out.examples.push_back(d_user.examples[queues[q][cursor[q]++]]);
      progressed = true;
    }
    if (!progressed) break;
  }
  shuffle(std::span(out.examples), rng);
  return out;
}

struct SeedBatchResult {
  Dataset a;
  ParseStats stats;
  std::size_t calls = 0;
  std::size_t failed_calls = 0;
  std::vector<std::string> warnings;
};

inline SeedBatchResult generate_seed_batch(const Dataset& seeds, const LabelSchema& schema, LLMClient& client,
                                           std::size_t size_a, const PipelineConfig& cfg) {
  SeedBatchResult r;
  r.a.schema = schema;
  if (size_a == 0) return r;
  if (seeds.empty()) throw DataError("seed set is empty");

  const std::size_t per = cfg.per_prompt;
  const std::size_t needed = (size_a + per - 1) / per;
  const std::size_t cap = cfg.max_seed_calls ? cfg.max_seed_calls : 3 * needed;
  const PromptOptions popt{cfg.min_text_len};
  const ParseOptions parse_opt{cfg.min_text_len, Provenance::SeedGen};

  while (r.a.size() < size_a && r.calls < cap) {
    std::size_t remaining = size_a - r.a.size();
    const std::size_t wave = std::min((remaining + per - 1) / per, cap - r.calls);
    std::vector<MetaPrompt> prompts;
    for (std::size_t i = 0; i < wave; ++i) {
      const std::size_t want = std::min(per, remaining);
      remaining -= want;
      prompts.push_back(build_seed_prompt(schema, seeds.examples, want, popt));
    }
    auto results = client.complete_many(prompts);
    r.calls += prompts.size();
    for (const auto& res : results) {
      if (!res.ok()) {
        ++r.failed_calls;
        r.warnings.push_back("seed-based call failed: " + res.error);
        continue;
      }
      auto batch = parse_generation(res.completion->text, schema, parse_opt);
      r.stats += batch.stats;
      for (auto& ex : batch.examples) r.a.examples.push_back(std::move(ex));
    }
  }
  if (r.a.size() > size_a) r.a.examples.resize(size_a);
  if (r.a.size() < size_a)
    r.warnings.push_back("seed-based generation reached its call cap (" + std::to_string(cap) + ") with " +
                         std::to_string(r.a.size()) + " of " + std::to_string(size_a) + " examples");
  return r;
}

struct RoundReport {
  std::size_t round = 0;
  std::size_t retrieved = 0;
  std::vector<std::size_t> context_positions;
  std::size_t requested = 0;
  std::size_t appended = 0;
  ParseStats stats;
  std::string error;
};

inline ordered_json to_json(const RoundReport& r) {
  return ordered_json{{"round", r.round},         {"retrieved", r.retrieved}, {"context_positions", r.context_positions},
                      {"requested", r.requested}, {"appended", r.appended},   {"parse_stats", to_json(r.stats)},
                      {"error", r.error}};
}

struct RetrievalGenResult {
  Dataset b;
  std::vector<RoundReport> rounds;
  std::vector<LabeledExample> used_context;  // in round order
};

/// Runs `cfg.rounds` retrieve-then-generate rounds against the fixed seed set.
/// Corpus entries used as context in earlier rounds are excluded from later
/// retrievals.
inline RetrievalGenResult iterative_retrieval_generation(const Dataset& seeds, const RetrievalIndex& index,
                                                         const LabelSchema& schema, LLMClient& client,
                                                         const Embedder& embedder, const PipelineConfig& cfg) {
  RetrievalGenResult r;
  r.b.schema = schema;
  if (cfg.rounds == 0) return r;
  if (embedder.id() != index.embedder_id())
    throw ConfigError("embedder mismatch: index built with '" + index.embedder_id() + "', pipeline uses '" +
                      embedder.id() + "'");
  if (seeds.empty()) throw DataError("seed set is empty");

  const auto seed_vectors = embed_all(seeds, embedder);
  std::set<std::size_t> used;
  const PromptOptions popt{cfg.min_text_len};
  const ParseOptions parse_opt{cfg.min_text_len, Provenance::RetrievalGen};

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundReport rr;
    rr.round = t + 1;
    const auto hits = retrieve_top_k(index, seed_vectors, cfg.k, used);
    rr.retrieved = hits.size();
    if (hits.empty()) {
      rr.error = "no unused corpus entries left for retrieval";
      r.rounds.push_back(std::move(rr));
      continue;
    }
    const std::size_t m = std::min(cfg.m, hits.size());
    for (std::size_t i = 0; i < m; ++i) {
      used.insert(hits[i].corpus_position);
      rr.context_positions.push_back(hits[i].corpus_position);
      r.used_context.push_back(hits[i].example);
    }
    rr.requested = cfg.s;
    auto prompt = build_retrieval_prompt(schema, seeds.examples, hits, m, cfg.s, popt);
    auto results = client.complete_many({prompt});
    if (!results.front().ok()) {
      rr.error = results.front().error;
      r.rounds.push_back(std::move(rr));
      continue;
    }
    auto batch = parse_generation(results.front().completion->text, schema, parse_opt);
    rr.stats = batch.stats;
    for (auto& ex : batch.examples) {
      if (rr.appended == cfg.s) break;
      r.b.examples.push_back(std::move(ex));
      ++rr.appended;
    }
    r.rounds.push_back(std::move(rr));
  }
  return r;
}

inline std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& tok : tokenize(utf8::lower(text))) out += (out.empty() ? "" : " ") + tok.text;
  return out;
}

struct MergeResult {
  Dataset x;
  std::size_t removed = 0;
};

/// Concatenates the parts in order and drops later duplicates by `key`.
inline MergeResult merge_datasets(const std::vector<const Dataset*>& parts, DedupKey key) {
  if (parts.empty()) throw DataError("nothing to merge");
  MergeResult r;
  r.x.schema = parts.front()->schema;
  std::unordered_set<std::string> seen;
  for (const auto* p : parts) {
    if (!(p->schema == r.x.schema)) throw DataError("schema mismatch between merged datasets");
    for (const auto& ex : p->examples) {
      auto k = key == DedupKey::ExactText ? ex.text : normalize_text(ex.text);
      if (!seen.insert(std::move(k)).second) {
        ++r.removed;
        continue;
      }
      r.x.examples.push_back(ex);
    }
  }
  return r;
}

inline MergeResult merge_datasets(const Dataset& a, const Dataset& b, const Dataset* s, DedupKey key) {
  std::vector<const Dataset*> parts{&a, &b};
  if (s) parts.push_back(s);
  return merge_datasets(parts, key);
}

struct PipelineRunReport {
  PipelineConfig config;
  std::size_t size_s = 0, size_a = 0, size_b = 0, size_x = 0, size_retrieved = 0;
  std::size_t dedup_removals = 0;
  std::size_t llm_calls = 0;
  ParseStats seed_stats;
  std::vector<RoundReport> rounds;
  std::map<std::string, std::size_t> provenance_counts;
  std::vector<std::string> warnings;
  std::map<std::string, double> stage_ms;
  std::string embedder_id;

  bool reconciles() const {
    const auto inputs = size_a + size_b + (config.include_user ? size_s : 0) +
                        (config.include_retrieved ? size_retrieved : 0);
    return size_x + dedup_removals == inputs;
  }
};

inline ordered_json to_json(const PipelineRunReport& r, bool include_timings = true) {
  ordered_json j;
  j["config"] = to_json(r.config);
  j["embedder_id"] = r.embedder_id;
  j["sizes"] = {{"S", r.size_s}, {"A", r.size_a}, {"B", r.size_b}, {"retrieved", r.size_retrieved}, {"X", r.size_x}};
  j["dedup_removals"] = r.dedup_removals;
  j["reconciles"] = r.reconciles();
  j["llm_calls"] = r.llm_calls;
  j["seed_parse_stats"] = to_json(r.seed_stats);
  j["rounds"] = ordered_json::array();
  for (const auto& rr : r.rounds) j["rounds"].push_back(to_json(rr));
  j["provenance_counts"] = r.provenance_counts;
  j["warnings"] = r.warnings;
  if (include_timings) j["stage_ms"] = r.stage_ms;
  return j;
}

struct PipelineResult {
  Dataset x;
  PipelineRunReport report;
};

/// Seed selection, seed-based generation, iterative retrieval generation and
/// merge. Model training is a separate step.
inline PipelineResult run_pipeline(const Dataset& d_user, const LabelSchema& schema, const RetrievalIndex& index,
                                   const PipelineConfig& cfg, LLMClient& client, const Embedder& embedder) {
  cfg.check();
  schema.check();
  if (d_user.empty()) throw DataError("user dataset is empty");
  if (!(d_user.schema == schema)) throw DataError("user dataset schema does not match the pipeline schema");
  if (embedder.id() != index.embedder_id())
    throw ConfigError("index mismatch: built with '" + index.embedder_id() + "', pipeline embedder is '" +
                      embedder.id() + "'");

  PipelineResult out;
  auto& rep = out.report;
  rep.config = cfg;
  rep.embedder_id = embedder.id();
  using clock = std::chrono::steady_clock;
  auto lap = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  const std::size_t calls_before = client.requests_issued();
  auto t0 = clock::now();
  const Dataset seeds = select_seeds(d_user, cfg.n, cfg.rng_seed, cfg.stratified);
  rep.size_s = seeds.size();
  rep.stage_ms["select_seeds"] = lap(t0);

  t0 = clock::now();
  auto seed_batch = generate_seed_batch(seeds, schema, client, cfg.size_a, cfg);
  rep.size_a = seed_batch.a.size();
  rep.seed_stats = seed_batch.stats;
  for (auto& w : seed_batch.warnings) rep.warnings.push_back(std::move(w));
  rep.stage_ms["seed_generation"] = lap(t0);

  t0 = clock::now();
  auto retrieval = iterative_retrieval_generation(seeds, index, schema, client, embedder, cfg);
  rep.size_b = retrieval.b.size();
  rep.rounds = retrieval.rounds;
  for (const auto& rr : rep.rounds)
    if (!rr.error.empty()) rep.warnings.push_back("round " + std::to_string(rr.round) + ": " + rr.error);
  rep.stage_ms["retrieval_generation"] = lap(t0);

  t0 = clock::now();
  Dataset retrieved{schema, {}};
  if (cfg.include_retrieved) {
    for (auto ex : retrieval.used_context) {
      ex.provenance = Provenance::Corpus;
      std::erase_if(ex.entities, [&](const EntitySpan& e) { return !schema.contains(e.label); });
      if (validate_example(ex, schema).ok()) retrieved.examples.push_back(std::move(ex));
    }
  }
  rep.size_retrieved = retrieved.size();
  std::vector<const Dataset*> parts{&seed_batch.a, &retrieval.b};
  if (cfg.include_user) parts.push_back(&seeds);
  if (cfg.include_retrieved) parts.push_back(&retrieved);
  auto merged = merge_datasets(parts, cfg.dedup);
  out.x = std::move(merged.x);
  rep.dedup_removals = merged.removed;
  rep.size_x = out.x.size();
  for (const auto& ex : out.x.examples) ++rep.provenance_counts[std::string(to_string(ex.provenance))];
  rep.stage_ms["merge"] = lap(t0);
  rep.llm_calls = client.requests_issued() - calls_before;
  return out;
}

inline PipelineResult run_pipeline(const Dataset& d_user, const LabelSchema& schema, const Dataset& corpus,
                                   const PipelineConfig& cfg, LLMClient& client, const Embedder& embedder) {
  return run_pipeline(d_user, schema, build_index(corpus, embedder), cfg, client, embedder);
}

}  // namespace locus
