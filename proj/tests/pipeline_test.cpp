// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace locus {
namespace {

using testing::SeparableTc;
using testing::tc_example;

LLMClient mock_client(const std::filesystem::path& dir) {
  LLMClientConfig cfg;
  cfg.max_in_flight = 1;
  return LLMClient(cfg, std::make_shared<MockTransport>(dir), [](auto) {});
}

Dataset labeled(const LabelSchema& schema, std::size_t per_label) {
  Dataset d{schema, {}};
  for (std::size_t i = 0; i < per_label; ++i)
    for (const auto& l : schema.labels) d.examples.push_back(tc_example(l + " example number " + std::to_string(i), l));
  return d;
}

TEST(SelectSeeds, StratifiedDrawIsBalanced) {
  const auto d = labeled(testing::tc_schema(), 10);
  const auto s = select_seeds(d, 9, 42, true);
  ASSERT_EQ(s.size(), 9u);
  std::map<std::string, int> per;
  for (const auto& ex : s.examples) ++per[ex.label];
  for (const auto& l : d.schema.labels) EXPECT_EQ(per[l], 3) << l;
  std::set<std::string> texts;
  for (const auto& ex : s.examples) texts.insert(ex.text);
  EXPECT_EQ(texts.size(), 9u);
}

TEST(SelectSeeds, DeterministicAndBounded) {
  const auto d = labeled(testing::tc_schema(), 10);
  EXPECT_EQ(select_seeds(d, 7, 5), select_seeds(d, 7, 5));
  EXPECT_EQ(select_seeds(d, 7, 5, true), select_seeds(d, 7, 5, true));
  EXPECT_NE(select_seeds(d, 7, 5), select_seeds(d, 7, 6));
  EXPECT_EQ(select_seeds(d, 100, 5).size(), 30u);
  EXPECT_THROW(select_seeds(Dataset{d.schema, {}}, 3, 1), DataError);
}

TEST(SelectSeeds, SkewedStrataFillFromWhatRemains) {
  Dataset d{testing::tc_schema(), {}};
  d.examples.push_back(tc_example("only weather sample", "weather"));
  for (int i = 0; i < 10; ++i) d.examples.push_back(tc_example("sports " + std::to_string(i), "sports"));
  const auto s = select_seeds(d, 4, 1, true);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(std::count_if(s.examples.begin(), s.examples.end(), [](auto& e) { return e.label == "weather"; }), 1);
}

class SeedBatch : public ::testing::Test {
 protected:
  void SetUp() override { gen.write_mock(dir.path(), 3, 10, 7); }
  SeparableTc gen;
  testing::TempDir dir;
};

TEST_F(SeedBatch, ZeroTargetMakesNoCalls) {
  auto client = mock_client(dir.path());
  const auto r = generate_seed_batch(gen.dataset(5, 1), gen.schema, client, 0, {});
  EXPECT_EQ(r.calls, 0u);
  EXPECT_TRUE(r.a.empty());
  EXPECT_EQ(client.requests_issued(), 0u);
}

TEST_F(SeedBatch, TargetIsMetExactly) {
  auto client = mock_client(dir.path());
  PipelineConfig cfg;
  const auto r = generate_seed_batch(gen.dataset(5, 1), gen.schema, client, 25, cfg);
  EXPECT_EQ(r.calls, 3u);
  EXPECT_EQ(r.a.size(), 25u);
  EXPECT_TRUE(r.warnings.empty());
  for (const auto& ex : r.a.examples) EXPECT_EQ(ex.provenance, Provenance::SeedGen);
  EXPECT_TRUE(r.stats.reconciles());
}

TEST(SeedBatchInvalid, UnusableResponsesLeaveAEmptyWithWarning) {
  testing::TempDir dir;
  testing::write_file(dir.path() / "0.txt", "Text: this text carries an unknown label\nLabel: astrology\n");
  SeparableTc gen;
  auto client = mock_client(dir.path());
  const auto r = generate_seed_batch(gen.dataset(5, 1), gen.schema, client, 10, {});
  EXPECT_TRUE(r.a.empty());
  EXPECT_EQ(r.calls, 3u);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings.back().find("call cap"), std::string::npos);
  EXPECT_EQ(r.stats.schema_violations, 3u);
}

class Retrieval : public ::testing::Test {
 protected:
  void SetUp() override { gen.write_mock(dir.path(), 4, 10, 9); }
  SeparableTc gen;
  testing::TempDir dir;
  HashEmbedder embedder{64, 3};
};

TEST_F(Retrieval, RoundsUseDisjointContexts) {
  const auto corpus = gen.dataset(40, 2);
  const auto index = build_index(corpus, embedder);
  auto client = mock_client(dir.path());
  PipelineConfig cfg;
  cfg.rounds = 2;
  cfg.k = 6;
  cfg.m = 3;
  cfg.s = 5;
  const auto r = iterative_retrieval_generation(gen.dataset(4, 1), index, gen.schema, client, embedder, cfg);
  ASSERT_EQ(r.rounds.size(), 2u);
  std::set<std::size_t> all;
  for (const auto& rr : r.rounds) {
    EXPECT_EQ(rr.context_positions.size(), 3u);
    EXPECT_EQ(rr.appended, 5u);
    all.insert(rr.context_positions.begin(), rr.context_positions.end());
  }
  EXPECT_EQ(all.size(), 6u);
  EXPECT_EQ(r.b.size(), 10u);
  for (const auto& ex : r.b.examples) EXPECT_EQ(ex.provenance, Provenance::RetrievalGen);
  EXPECT_EQ(client.requests_issued(), 2u);
}

TEST_F(Retrieval, ZeroRoundsIsANoOp) {
  const auto index = build_index(gen.dataset(10, 2), embedder);
  auto client = mock_client(dir.path());
  PipelineConfig cfg;
  cfg.rounds = 0;
  const auto r = iterative_retrieval_generation(gen.dataset(4, 1), index, gen.schema, client, embedder, cfg);
  EXPECT_TRUE(r.b.empty());
  EXPECT_TRUE(r.rounds.empty());
  EXPECT_EQ(client.requests_issued(), 0u);
}

TEST_F(Retrieval, ExhaustedCorpusIsReportedPerRound) {
  const auto index = build_index(gen.dataset(4, 2), embedder);
  auto client = mock_client(dir.path());
  PipelineConfig cfg;
  cfg.rounds = 3;
  cfg.k = 4;
  cfg.m = 4;
  const auto r = iterative_retrieval_generation(gen.dataset(4, 1), index, gen.schema, client, embedder, cfg);
  ASSERT_EQ(r.rounds.size(), 3u);
  EXPECT_TRUE(r.rounds[0].error.empty());
  EXPECT_FALSE(r.rounds[1].error.empty());
  EXPECT_EQ(client.requests_issued(), 1u);
}

TEST(Merge, DropsLaterDuplicatesByKey) {
  const auto schema = testing::tc_schema();
  Dataset a{schema, {tc_example("Rain  today", "weather"), tc_example("goal", "sports")}};
  Dataset b{schema, {tc_example("rain today", "weather"), tc_example("goal", "sports"), tc_example("bank", "finance")}};
  const auto norm = merge_datasets(a, b, nullptr, DedupKey::NormalizedText);
  EXPECT_EQ(norm.x.size(), 3u);
  EXPECT_EQ(norm.removed, 2u);
  EXPECT_EQ(norm.x.examples[0].text, "Rain  today");
  const auto exact = merge_datasets(a, b, nullptr, DedupKey::ExactText);
  EXPECT_EQ(exact.x.size(), 4u);
  EXPECT_EQ(exact.removed, 1u);
  EXPECT_THROW(merge_datasets(a, Dataset{testing::ner_schema(), {}}, nullptr, DedupKey::ExactText), DataError);
}

TEST(RunPipeline, EndToEndReconcilesAndIsBounded) {
  SeparableTc gen;
  testing::TempDir dir;
  gen.write_mock(dir.path(), 6, 10, 5);
  HashEmbedder embedder(64, 1);
  const auto user = gen.dataset(30, 3);
  const auto corpus = gen.dataset(60, 4);
  PipelineConfig cfg;
  cfg.include_user = false;
  auto client = mock_client(dir.path());
  const auto r = run_pipeline(user, gen.schema, corpus, cfg, client, embedder);
  EXPECT_LE(r.x.size(), cfg.size_a + cfg.rounds * cfg.s);
  EXPECT_EQ(r.report.size_s, 10u);
  EXPECT_EQ(r.report.size_a, 30u);
  EXPECT_EQ(r.report.size_b, 30u);
  EXPECT_TRUE(r.report.reconciles());
  EXPECT_EQ(r.report.llm_calls, 6u);
  for (const auto& ex : r.x.examples) EXPECT_TRUE(validate_example(ex, gen.schema).ok());

  cfg.include_user = true;
  cfg.include_retrieved = true;
  auto client2 = mock_client(dir.path());
  const auto r2 = run_pipeline(user, gen.schema, corpus, cfg, client2, embedder);
  EXPECT_TRUE(r2.report.reconciles());
  EXPECT_EQ(r2.report.size_retrieved, 12u);
  EXPECT_GT(r2.x.size(), r.x.size());
}

TEST(RunPipeline, RejectsMismatches) {
  SeparableTc gen;
  testing::TempDir dir;
  gen.write_mock(dir.path(), 1, 10, 5);
  auto client = mock_client(dir.path());
  const auto index = build_index(gen.dataset(10, 4), HashEmbedder(64, 1));
  EXPECT_THROW(run_pipeline(gen.dataset(10, 3), gen.schema, index, {}, client, HashEmbedder(64, 2)), ConfigError);
  EXPECT_THROW(run_pipeline(gen.dataset(10, 3), testing::tc_schema(), index, {}, client, HashEmbedder(64, 1)),
               DataError);
  PipelineConfig bad;
  bad.k = 2;
  bad.m = 3;
  EXPECT_THROW(run_pipeline(gen.dataset(10, 3), gen.schema, index, bad, client, HashEmbedder(64, 1)), ConfigError);
}

}  // namespace
}  // namespace locus
