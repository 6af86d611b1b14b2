// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

namespace locus {
namespace {

using testing::ner_schema;
using testing::tc_example;
using testing::tc_schema;

EmbeddingVector vec(std::vector<float> v) { return EmbeddingVector{std::move(v)}; }

Dataset random_corpus(Rng& rng, std::size_t n) {
  Dataset d{tc_schema(), {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const auto len = 1 + uniform_index(rng, 6);
    for (std::size_t j = 0; j < len; ++j) text += (j ? " " : "") + testing::random_word(rng);
    d.examples.push_back(tc_example(text, d.schema.labels[uniform_index(rng, 3)]));
  }
  return d;
}

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({0.3f, 0.4f}), vec({0.3f, 0.4f})), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_NEAR(cosine_similarity(vec({1, 1}), vec({1, 0})), 0.7071, 1e-4);
  EXPECT_THROW(cosine_similarity(vec({1, 0}), vec({1, 0, 0})), Error);
  EXPECT_THROW(cosine_similarity(vec({0, 0}), vec({1, 0})), Error);
  EXPECT_EQ(ranking_similarity(vec({0, 0}), vec({1, 0})), 0.0);
}

TEST(HashEmbedder, UnitNormAndDeterministic) {
  HashEmbedder e(64, 7);
  const auto a = e.embed("Paris is lovely in spring");
  EXPECT_EQ(a.dim(), 64u);
  EXPECT_NEAR(a.norm(), 1.0, 1e-6);
  EXPECT_EQ(a, HashEmbedder(64, 7).embed("Paris is lovely in spring"));
  EXPECT_LT(cosine_similarity(a, e.embed("stock markets fell sharply")), 1.0);
  EXPECT_EQ(a, e.embed("paris IS lovely in spring"));
  EXPECT_TRUE(e.embed("   ").is_zero());
}

TEST(BuildIndex, EmptyCorpusIsAnError) {
  EXPECT_THROW(build_index(Dataset{tc_schema(), {}}, HashEmbedder(16)), DataError);
}

TEST(BuildIndex, KeepsCorpusOrderAndSerializesStably) {
  Rng rng(3);
  const auto corpus = random_corpus(rng, 10);
  HashEmbedder e(32, 1);
  const auto one = build_index(corpus, e, 1);
  const auto many = build_index(corpus, e, 4);
  ASSERT_EQ(one.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(one.entries()[i].position, i);
    EXPECT_EQ(one.entries()[i].example, corpus.examples[i]);
  }
  std::ostringstream a, b;
  one.save(a);
  many.save(b);
  EXPECT_EQ(a.str(), b.str());

  std::istringstream in(a.str());
  const auto loaded = RetrievalIndex::load(in);
  EXPECT_EQ(loaded.entries(), one.entries());
  EXPECT_EQ(loaded.embedder_id(), one.embedder_id());
  EXPECT_EQ(loaded.schema(), corpus.schema);

  std::istringstream bad("NOTANIDX");
  EXPECT_THROW(RetrievalIndex::load(bad), Error);
}

TEST(RetrieveTopK, MatchesBruteForceOracle) {
  Rng rng(21);
  const auto corpus = random_corpus(rng, 200);
  HashEmbedder e(48, 2);
  const auto index = build_index(corpus, e);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seeds = embed_all(random_corpus(rng, 1 + uniform_index(rng, 5)), e);
    for (std::size_t k : {1u, 5u, 50u, 200u, 500u}) {
      const auto got = retrieve_top_k(index, seeds, k);
      const auto want = testing::oracle_top_k(index, seeds, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].corpus_position, want[i].position);
        EXPECT_EQ(got[i].score, want[i].score);
      }
    }
  }
}

TEST(RetrieveTopK, IdenticalSeedRanksFirst) {
  Rng rng(8);
  const auto corpus = random_corpus(rng, 30);
  HashEmbedder e(64, 5);
  const auto index = build_index(corpus, e);
  Dataset seeds{corpus.schema, {corpus.examples[17]}};
  const auto hits = retrieve_top_k(index, seeds, 3, e);
  ASSERT_FALSE(hits.empty());
  EXPECT_NEAR(hits[0].score, 1.0, 1e-9);
  EXPECT_EQ(hits[0].example.text, corpus.examples[17].text);
}

TEST(RetrieveTopK, ScoresAreNonIncreasingAndExclusionHolds) {
  Rng rng(9);
  const auto corpus = random_corpus(rng, 80);
  HashEmbedder e(32, 4);
  const auto index = build_index(corpus, e);
  const auto seeds = embed_all(random_corpus(rng, 3), e);
  const std::set<std::size_t> excluded = {0, 5, 6, 40, 79};
  const auto hits = retrieve_top_k(index, seeds, 200, excluded);
  EXPECT_EQ(hits.size(), 75u);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    EXPECT_EQ(excluded.count(hits[i].corpus_position), 0u);
    if (i > 0) {
      EXPECT_GE(hits[i - 1].score, hits[i].score);
      if (hits[i - 1].score == hits[i].score) {
        EXPECT_LT(hits[i - 1].corpus_position, hits[i].corpus_position);
      }
    }
  }
}

TEST(RetrieveTopK, TiesBreakByPosition) {
  Dataset corpus{tc_schema(), {tc_example("same words", "sports"), tc_example("other", "sports"),
                               tc_example("same words", "finance")}};
  HashEmbedder e(16);
  const auto hits = retrieve_top_k(build_index(corpus, e), Dataset{corpus.schema, {corpus.examples[0]}}, 2, e);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].corpus_position, 0u);
  EXPECT_EQ(hits[1].corpus_position, 2u);
}

TEST(RetrieveTopK, Errors) {
  Rng rng(1);
  const auto corpus = random_corpus(rng, 5);
  HashEmbedder e(16, 0);
  const auto index = build_index(corpus, e);
  Dataset seeds{corpus.schema, {corpus.examples[0]}};
  EXPECT_THROW(retrieve_top_k(index, seeds, 0, e), ConfigError);
  EXPECT_THROW(retrieve_top_k(index, seeds, 2, HashEmbedder(16, 9)), ConfigError);
  EXPECT_THROW(retrieve_top_k(index, Dataset{corpus.schema, {}}, 2, e), DataError);
  EXPECT_THROW(retrieve_top_k(index, std::vector<EmbeddingVector>{vec({1, 0})}, 2), DataError);
}

}  // namespace
}  // namespace locus
