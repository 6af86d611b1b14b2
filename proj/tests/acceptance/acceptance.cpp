// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "../test_util.hpp"

namespace locus::acceptance {
namespace {

using testing::SeparableTc;
using Clock = std::chrono::steady_clock;

constexpr double kRetrievalSeconds = 1.0;
constexpr double kMergeTolerance = 1e-6;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 10.0;
constexpr double kSvdTolerance = 1e-6;
constexpr double kExactRankTolerance = 1e-8;
constexpr double kAdapterAccuracyFraction = 0.95;
constexpr double kTrainableRatioCeiling = 0.10;
constexpr double kTrainSeconds = 60.0;
constexpr double kByteRatioTolerance = 0.10;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

LoRAConfig lora(std::size_t r, std::vector<LinearTarget> targets) {
  LoRAConfig c;
  c.rank = r;
  c.alpha = static_cast<double>(r);
  c.targets = std::move(targets);
  return c;
}

std::vector<EncodedExample> random_batch(Rng& rng, const ModelConfig& cfg, std::size_t n) {
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedExample e;
    e.ids = testing::random_sequence(rng, cfg.vocab_buckets, 1, 6);
    for (std::size_t t = 0; t < e.ids.size(); ++t)
      e.tags.push_back(static_cast<std::uint32_t>(uniform_index(rng, cfg.num_labels)));
    e.label = static_cast<std::uint32_t>(uniform_index(rng, cfg.num_labels));
    out.push_back(std::move(e));
  }
  return out;
}

Outcome retrieval_oracle() {
  Rng rng(101);
  Dataset corpus{testing::tc_schema(), {}};
  auto sentence = [&] {
    std::string s;
    const auto len = 1 + uniform_index(rng, 8);
    for (std::size_t j = 0; j < len; ++j) s += (j ? " " : "") + testing::random_word(rng);
    return s;
  };
  for (int i = 0; i < 200; ++i) corpus.examples.push_back(testing::tc_example(sentence(), "sports"));
  HashEmbedder embedder(64, 5);
  const auto index = build_index(corpus, embedder);
  std::size_t mismatches = 0;
  double elapsed = 0.0;
  for (int set = 0; set < 20; ++set) {
    std::vector<EmbeddingVector> seeds;
    const auto n = 1 + uniform_index(rng, 5);
    for (std::size_t i = 0; i < n; ++i) seeds.push_back(embedder.embed(sentence()));
    for (std::size_t k : {1u, 5u, 50u}) {
      const auto t0 = Clock::now();
      const auto got = retrieve_top_k(index, seeds, k);
      elapsed += seconds_since(t0);
      const auto want = testing::oracle_top_k(index, seeds, k);
      if (got.size() != want.size()) {
        ++mismatches;
        continue;
      }
      for (std::size_t i = 0; i < got.size(); ++i)
        if (got[i].corpus_position != want[i].position || got[i].score != want[i].score) ++mismatches;
    }
  }
  return {mismatches == 0 && elapsed < kRetrievalSeconds,
          std::to_string(mismatches) + " mismatches over 60 queries, " + fmt("%.4f", elapsed) + " s"};
}

Outcome zero_delta_identity() {
  Rng rng(102);
  const auto base = init_model(testing::toy_model(testing::ner_schema(), 8, 16), 1);
  const auto am = wrap_lora(base, lora(4, {LinearTarget::Hidden, LinearTarget::Output}), 2);
  std::size_t differ = 0;
  for (int i = 0; i < 100; ++i) {
    const auto ids = testing::random_sequence(rng, base.config().vocab_buckets);
    if (adapted_forward(am, ids).values != forward(base, ids).values) ++differ;
  }
  return {differ == 0, std::to_string(differ) + " of 100 inputs differ"};
}

Outcome merge_consistency() {
  Rng rng(103);
  const auto cfg = testing::toy_model(testing::ner_schema(), 8, 16, 1, 256);
  auto am = wrap_lora(init_model(cfg, 3), lora(4, {LinearTarget::Hidden, LinearTarget::Output}), 4);
  AdapterLearner learner(am);
  for (int step = 0; step < 50; ++step) learner.step(random_batch(rng, cfg, 8), 0.5);
  std::vector<Sequence> inputs;
  std::vector<DenseMatrix> adapted;
  for (int i = 0; i < 20; ++i) {
    inputs.push_back(testing::random_sequence(rng, cfg.vocab_buckets));
    adapted.push_back(adapted_forward(am, inputs.back()));
  }
  const auto merged = merge_adapters(am);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    worst = std::max(worst, testing::max_relative_deviation(adapted[i], forward(merged, inputs[i])));
  return {worst < kMergeTolerance, "max relative deviation " + fmt("%.3e", worst)};
}

double fd_compare(std::function<double()> loss, DenseMatrix& param, const DenseMatrix& analytic) {
  constexpr double h = 1e-4;
  DenseMatrix numeric(param.rows, param.cols);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param.values[i];
    param.values[i] = saved + h;
    const double up = loss();
    param.values[i] = saved - h;
    const double down = loss();
    param.values[i] = saved;
    numeric.values[i] = (up - down) / (2 * h);
  }
  return testing::max_relative_deviation(numeric, analytic);
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto task : {TaskKind::NER, TaskKind::TC}) {
    Rng rng(task == TaskKind::NER ? 104 : 105);
    const auto schema = task == TaskKind::NER ? testing::ner_schema() : testing::tc_schema();
    Model m(testing::toy_model(schema, 8, 16, 1, 32));
    testing::randomize(m, rng);
    const auto batch = random_batch(rng, m.config(), 4);
    const auto full = loss_and_grads(m, batch).grads;
    for (std::size_t p = 0; p < kNumParams; ++p) {
      const auto id = static_cast<ParamId>(p);
      worst = std::max(worst, fd_compare([&] { return loss_and_grads(m, batch).loss; }, m.param(id),
                                         full.dense(id, m.config())));
      checked += m.param(id).size();
    }
    auto am = wrap_lora(m, lora(3, {LinearTarget::Hidden, LinearTarget::Output}), 6);
    for (auto& ad : am.adapters()) {
      testing::randomize(ad.a, rng);
      testing::randomize(ad.b, rng);
    }
    const auto g = loss_and_grads(m, batch, am.deltas(), GradTarget::Deltas).grads;
    for (auto& ad : am.adapters()) {
      const auto& lg = ad.target == LinearTarget::Hidden ? *g.hidden_delta : *g.output_delta;
      auto loss = [&] { return loss_and_grads(m, batch, am.deltas(), GradTarget::Deltas).loss; };
      worst = std::max(worst, fd_compare(loss, ad.a, lg.a));
      worst = std::max(worst, fd_compare(loss, ad.b, lg.b));
      checked += ad.a.size() + ad.b.size();
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst < kGradTolerance && elapsed < kGradSeconds,
          std::to_string(checked) + " parameters, max rel err " + fmt("%.3e", worst) + ", " + fmt("%.2f", elapsed) +
              " s"};
}

Outcome svd_optimality() {
  Rng rng(106);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    DenseMatrix w0(8, 6), w1(8, 6);
    testing::randomize(w0, rng, 1.0);
    testing::randomize(w1, rng, 1.0);
    const Eigen::MatrixXd delta = to_eigen(w1) - to_eigen(w0);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta);
    const auto& s = svd.singularValues();
    for (std::size_t r = 1; r <= 3; ++r) {
      const auto ap = decompose_delta(w0, w1, r);
      const double err = (delta - to_eigen(ap.b) * to_eigen(ap.a)).norm();
      const double tail = std::sqrt(s.tail(s.size() - static_cast<Eigen::Index>(r)).squaredNorm());
      worst = std::max(worst, std::abs(err - tail));
    }
  }
  double exact = 0.0;
  for (std::size_t r = 1; r <= 3; ++r) {
    DenseMatrix w0(8, 6);
    testing::randomize(w0, rng, 1.0);
    DenseMatrix u(8, r), v(r, 6);
    testing::randomize(u, rng, 1.0);
    testing::randomize(v, rng, 1.0);
    const auto uv = matmul(u, v);
    DenseMatrix w1 = w0;
    for (std::size_t i = 0; i < w1.size(); ++i) w1.values[i] += uv.values[i];
    const auto ap = decompose_delta(w0, w1, r);
    exact = std::max(exact, (to_eigen(uv) - to_eigen(ap.b) * to_eigen(ap.a)).norm());
  }
  return {worst < kSvdTolerance && exact < kExactRankTolerance,
          "max |error - tail| " + fmt("%.3e", worst) + ", exact-rank residual " + fmt("%.3e", exact)};
}

Outcome adapter_vs_full() {
  SeparableTc gen;
  testing::TempDir dir;
  gen.write_mock(dir.path(), 30, 10, 107);
  LLMClientConfig lc;
  lc.max_in_flight = 1;
  LLMClient client(lc, std::make_shared<MockTransport>(dir.path()), [](auto) {});
  PipelineConfig pc;
  const auto batch = generate_seed_batch(gen.dataset(10, 1), gen.schema, client, 300, pc);
  if (batch.a.size() != 300) return {false, "mock generation produced " + std::to_string(batch.a.size()) + " examples"};
  const auto test = gen.dataset(300, 2);
  // Frozen random features must be wide enough for a rank-4 head to
  // separate the keywords; both pathways share every training setting.
  const auto cfg = testing::toy_model(gen.schema, 128, 32);
  auto tc = testing::quick_training(100);
  tc.patience = 20;

  auto t0 = Clock::now();
  const auto full = train(init_model(cfg, 7), batch.a, tc);
  const double full_s = seconds_since(t0);
  const double full_acc = evaluate(predict_dataset(full.model, test), test).accuracy;

  t0 = Clock::now();
  const auto adapted = train_adapters(wrap_lora(init_model(cfg, 7), lora(4, {LinearTarget::Hidden}), 8), batch.a, tc);
  const double lora_s = seconds_since(t0);
  const double lora_acc = evaluate(predict_dataset(adapted.model.base(), test, adapted.model.deltas()), test).accuracy;
  const double ratio = count_params(adapted.model).trainable_ratio;

  const bool ok = lora_acc >= kAdapterAccuracyFraction * full_acc && ratio < kTrainableRatioCeiling &&
                  full_s < kTrainSeconds && lora_s < kTrainSeconds;
  return {ok, "full acc " + fmt("%.4f", full_acc) + ", adapter acc " + fmt("%.4f", lora_acc) + " (" +
                  fmt("%.1f", 100.0 * lora_acc / std::max(full_acc, 1e-12)) + "%), trainable ratio " +
                  fmt("%.4f", ratio) + ", " + fmt("%.2f", full_s) + " s / " + fmt("%.2f", lora_s) + " s"};
}

Outcome checkpoint_ratio() {
  const auto base = init_model(testing::toy_model(testing::ner_schema(), 8, 16), 9);
  const auto am = wrap_lora(base, lora(4, {LinearTarget::Hidden, LinearTarget::Output}), 10);
  std::ostringstream os;
  save_adapters(am, os);
  const double bytes = static_cast<double>(os.str().size()) / static_cast<double>(base.checkpoint_bytes().size());
  const double ratio = count_params(am).trainable_ratio;
  const double rel = std::abs(bytes - ratio) / ratio;
  return {rel < kByteRatioTolerance, "byte ratio " + fmt("%.5f", bytes) + ", trainable ratio " + fmt("%.5f", ratio) +
                                         ", relative gap " + fmt("%.3f", rel)};
}

Outcome pipeline_determinism() {
  SeparableTc gen;
  testing::TempDir dir;
  gen.write_mock(dir.path(), 6, 10, 108);
  const auto user = gen.dataset(30, 3);
  const auto corpus = gen.dataset(100, 4);
  PipelineConfig cfg;
  cfg.n = 10;
  cfg.size_a = 30;
  cfg.rounds = 3;
  cfg.k = 8;
  cfg.m = 4;
  cfg.s = 10;
  auto run = [&] {
    LLMClientConfig lc;
    LLMClient client(lc, std::make_shared<MockTransport>(dir.path()), [](auto) {});
    return run_pipeline(user, gen.schema, corpus, cfg, client, HashEmbedder(64, 11));
  };
  const auto a = run(), b = run();
  const bool same_x = serialize_dataset(a.x) == serialize_dataset(b.x);
  const bool same_report = to_json(a.report, false).dump() == to_json(b.report, false).dump();
  std::size_t violations = 0;
  for (const auto& ex : a.x.examples)
    if (!validate_example(ex, gen.schema).ok()) ++violations;
  const auto& r = a.report;
  return {same_x && same_report && r.reconciles() && b.report.reconciles() && violations == 0,
          std::string(same_x ? "X identical" : "X differs") + ", |X|=" + std::to_string(r.size_x) +
              " dedup=" + std::to_string(r.dedup_removals) + " A=" + std::to_string(r.size_a) +
              " B=" + std::to_string(r.size_b) + " S=" + std::to_string(r.size_s) + ", " +
              std::to_string(violations) + " violations"};
}

Outcome metric_oracle() {
  const auto schema = testing::ner_schema();
  Dataset gold{schema, {testing::ner_example("john met mary", {{0, 4, "person"}, {9, 13, "person"}})}};
  Dataset half{schema, {testing::ner_example("john met mary", {{0, 4, "person"}, {9, 13, "location"}})}};
  Dataset none{schema, {testing::ner_example("john met mary", {})}};
  const auto id = entity_f1(gold, gold), h = entity_f1(half, gold), z = entity_f1(none, gold);
  const bool fixtures = id.f1 == 1.0 && id.precision == 1.0 && id.recall == 1.0 && h.precision == 0.5 &&
                        h.recall == 0.5 && h.f1 == 0.5 && z.f1 == 0.0;

  Rng rng(109);
  const auto rich = testing::ner_schema({"person", "location", "org"});
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_ner_dataset(rng, rich, 1 + uniform_index(rng, 5));
    auto p = g;
    for (auto& ex : p.examples) {
      for (auto& e : ex.entities)
        if (uniform01(rng) < 0.3) e.label = rich.labels[uniform_index(rng, 3)];
      if (!ex.entities.empty() && uniform01(rng) < 0.3) ex.entities.pop_back();
    }
    const auto want = testing::oracle_entity_f1(p, g);
    const auto got = entity_f1(p, g);
    if (got.precision != want.precision || got.recall != want.recall || std::abs(got.f1 - want.f1) > 1e-15)
      ++mismatches;
  }
  return {fixtures && mismatches == 0,
          std::string(fixtures ? "fixtures exact" : "fixture mismatch") + ", " + std::to_string(mismatches) +
              " of 50 random instances disagree with the pair oracle"};
}

Outcome sweep_harness() {
  SeparableTc gen;
  SweepInputs in;
  in.train = gen.dataset(200, 110);
  in.test = gen.dataset(150, 111);
  in.model = testing::toy_model(gen.schema);
  in.training = testing::quick_training();
  in.lora = lora(4, {LinearTarget::Hidden});

  SweepSpec sizes;
  sizes.grid = {50, 100, 200};
  const auto s = run_sweep(sizes, in, 3);
  bool monotone = s.points.size() == 3;
  std::string means;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    monotone = monotone && s.points[i].runs == 1 && (i == 0 || s.points[i].mean >= s.points[i - 1].mean);
    means += (i ? "/" : "") + fmt("%.4f", s.points[i].mean);
  }

  SweepSpec ranks;
  ranks.axis = SweepAxis::LoraRankAlpha;
  ranks.grid = {1, 4, 16};
  const auto r = run_sweep(ranks, in, 3);
  bool increasing = r.points.size() == 3;
  std::string ratios;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    increasing = increasing && r.points[i].runs == 1 &&
                 (i == 0 || r.points[i].trainable_ratio > r.points[i - 1].trainable_ratio);
    ratios += (i ? "/" : "") + fmt("%.5f", r.points[i].trainable_ratio);
  }
  return {monotone && increasing, "size means " + means + ", rank ratios " + ratios};
}

}  // namespace
}  // namespace locus::acceptance

int main() {
  using namespace locus::acceptance;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"retrieval matches brute-force oracle", retrieval_oracle},
      {"LoRA zero-delta identity", zero_delta_identity},
      {"merge consistency after 50 adapter steps", merge_consistency},
      {"finite-difference gradient checks", gradient_checks},
      {"SVD decomposition optimality", svd_optimality},
      {"adapter accuracy vs full fine-tuning", adapter_vs_full},
      {"checkpoint size ratio", checkpoint_ratio},
      {"end-to-end pipeline determinism", pipeline_determinism},
      {"entity F1 metric oracle", metric_oracle},
      {"sweep harness shape", sweep_harness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
