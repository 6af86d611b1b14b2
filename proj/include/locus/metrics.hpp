// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "locus/corpus.hpp"
#include "locus/error.hpp"

namespace locus {

struct LabelScores {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Micro-averaged entity-level scores (NER) or accuracy (TC). For TC,
/// `matched` counts correct predictions and gold == predicted == total.
struct EvalReport {
  TaskKind task = TaskKind::NER;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
  std::map<std::string, LabelScores> per_label;

  /// The headline number: F1 for NER, accuracy for TC.
  double primary() const { return task == TaskKind::NER ? f1 : accuracy; }
};

inline double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline void finalize(LabelScores& s) {
  s.precision = safe_ratio(s.matched, s.predicted);
  s.recall = safe_ratio(s.matched, s.gold);
  s.f1 = f1_score(s.precision, s.recall);
}

inline void check_aligned(const Dataset& pred, const Dataset& gold) {
  if (pred.size() != gold.size())
    throw DataError("misaligned datasets: " + std::to_string(pred.size()) + " predictions for " +
                    std::to_string(gold.size()) + " gold examples");
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (pred.examples[i].text != gold.examples[i].text)
      throw DataError("misaligned datasets: texts differ at example " + std::to_string(i));
}

/// Exact (start, end, label) matching; each gold span absorbs at most one
/// prediction.
inline EvalReport entity_f1(const Dataset& pred, const Dataset& gold) {
  check_aligned(pred, gold);
  EvalReport r;
  r.task = TaskKind::NER;
  for (const auto& l : gold.schema.labels) r.per_label[l];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::map<std::tuple<std::size_t, std::size_t, std::string>, std::size_t> remaining;
    for (const auto& g : gold.examples[i].entities) {
      ++remaining[{g.start, g.end, g.label}];
      ++r.per_label[g.label].gold;
      ++r.gold;
    }
    for (const auto& p : pred.examples[i].entities) {
      ++r.per_label[p.label].predicted;
      ++r.predicted;
      auto it = remaining.find({p.start, p.end, p.label});
      if (it != remaining.end() && it->second > 0) {
        --it->second;
        ++r.per_label[p.label].matched;
        ++r.matched;
      }
    }
  }
  r.precision = safe_ratio(r.matched, r.predicted);
  r.recall = safe_ratio(r.matched, r.gold);
  r.f1 = f1_score(r.precision, r.recall);
  for (auto& [_, s] : r.per_label) finalize(s);
  return r;
}

inline EvalReport tc_accuracy(const Dataset& pred, const Dataset& gold) {
  check_aligned(pred, gold);
  if (gold.empty()) throw DataError("accuracy over an empty gold set");
  EvalReport r;
  r.task = TaskKind::TC;
  for (const auto& l : gold.schema.labels) r.per_label[l];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold.examples[i].label;
    const auto& p = pred.examples[i].label;
    ++r.per_label[g].gold;
    ++r.per_label[p].predicted;
    if (g == p) {
      ++r.per_label[g].matched;
      ++r.matched;
    }
  }
  r.gold = r.predicted = gold.size();
  r.accuracy = safe_ratio(r.matched, r.gold);
  r.precision = r.recall = r.f1 = r.accuracy;
  for (auto& [_, s] : r.per_label) finalize(s);
  return r;
}

inline EvalReport evaluate(const Dataset& pred, const Dataset& gold) {
  return gold.schema.task == TaskKind::NER ? entity_f1(pred, gold) : tc_accuracy(pred, gold);
}

inline ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["task"] = to_string(r.task);
  if (r.task == TaskKind::NER) {
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
  } else {
    j["accuracy"] = r.accuracy;
  }
  j["gold"] = r.gold;
  j["predicted"] = r.predicted;
  j["matched"] = r.matched;
  j["per_label"] = ordered_json::object();
  for (const auto& [label, s] : r.per_label)
    j["per_label"][label] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                             {"gold", s.gold},           {"predicted", s.predicted}, {"matched", s.matched}};
  return j;
}

inline EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.task = parse_task_kind(j.at("task").get<std::string>());
  if (r.task == TaskKind::NER) {
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
  } else {
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = r.recall = r.f1 = r.accuracy;
  }
  r.gold = j.value("gold", std::size_t{0});
  r.predicted = j.value("predicted", std::size_t{0});
  r.matched = j.value("matched", std::size_t{0});
  if (j.contains("per_label"))
    for (const auto& [label, s] : j["per_label"].items())
      r.per_label[label] = LabelScores{s.value("gold", std::size_t{0}), s.value("predicted", std::size_t{0}),
                                       s.value("matched", std::size_t{0}), s.value("precision", 0.0),
                                       s.value("recall", 0.0), s.value("f1", 0.0)};
  return r;
}

}  // namespace locus
