// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "locus/lora.hpp"
#include "locus/metrics.hpp"
#include "locus/model.hpp"

namespace locus {

enum class SweepAxis { DatasetSize, LoraRankAlpha };

inline std::string_view to_string(SweepAxis a) { return a == SweepAxis::DatasetSize ? "dataset_size" : "lora_rank_alpha"; }

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "dataset_size" || s == "dataset-size" || s == "size") return SweepAxis::DatasetSize;
  if (s == "lora_rank_alpha" || s == "rank" || s == "rank-alpha" || s == "rank_alpha") return SweepAxis::LoraRankAlpha;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected dataset_size or rank)");
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::DatasetSize;
  std::vector<std::size_t> grid;
  std::size_t repetitions = 1;
  std::uint64_t base_seed = 7;

  void check() const {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    if (repetitions < 1) throw ConfigError("sweep needs at least one repetition");
  }
};

/// Everything a sweep cell needs besides the axis value. `adapters` selects
/// LoRA training for DATASET_SIZE sweeps; rank sweeps always train adapters.
struct SweepInputs {
  Dataset train;
  Dataset test;
  ModelConfig model;
  TrainConfig training;
  LoRAConfig lora;
  bool adapters = false;
};

struct SweepRow {
  std::size_t axis_value = 0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  double metric = 0.0;
  double trainable_ratio = 0.0;
  std::size_t train_size = 0;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct SweepPoint {
  std::size_t axis_value = 0;
  std::size_t runs = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double trainable_ratio = 0.0;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::DatasetSize;
  std::string metric_name;
  std::vector<SweepRow> rows;
  std::vector<SweepPoint> points;
};

inline std::uint64_t cell_seed(std::uint64_t base, std::size_t axis_value, std::size_t repetition) {
  return mix_seed({base, static_cast<std::uint64_t>(axis_value), static_cast<std::uint64_t>(repetition)});
}

namespace detail {

inline SweepRow run_cell(const SweepSpec& spec, const SweepInputs& in, const Dataset& pool, std::size_t value,
                         std::size_t rep) {
  SweepRow row;
  row.axis_value = value;
  row.repetition = rep;
  row.seed = cell_seed(spec.base_seed, value, rep);
  try {
    Dataset subset = pool;
    LoRAConfig lora = in.lora;
    bool use_adapters = in.adapters;
    if (spec.axis == SweepAxis::DatasetSize) {
      if (value == 0) throw ConfigError("dataset size must be positive");
      subset.examples.resize(std::min(value, subset.size()));
    } else {
      lora.rank = value;
      lora.alpha = static_cast<double>(value);
      use_adapters = true;
    }
    row.train_size = subset.size();
    TrainConfig tc = in.training;
    tc.rng_seed = mix_seed({row.seed, 1});
    auto base = init_model(in.model, mix_seed({row.seed, 2}));
    if (use_adapters) {
      auto trained = train_adapters(wrap_lora(std::move(base), lora, mix_seed({row.seed, 3})), subset, tc);
      row.metric = evaluate(predict_dataset(trained.model.base(), in.test, trained.model.deltas()), in.test).primary();
      row.trainable_ratio = count_params(trained.model).trainable_ratio;
    } else {
      auto trained = train(std::move(base), subset, tc);
      row.metric = evaluate(predict_dataset(trained.model, in.test), in.test).primary();
      row.trainable_ratio = 1.0;
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

}  // namespace detail

/// Trains and evaluates one model per (grid value, repetition), changing only
/// the swept variable. Dataset-size cells take prefixes of one fixed shuffle
/// of the training pool, so larger cells see supersets of smaller ones. Cells
/// may run on several threads; rows are keyed by cell, not by completion order.
inline SweepResult run_sweep(const SweepSpec& spec, const SweepInputs& in, unsigned threads = 1) {
  spec.check();
  if (in.train.empty()) throw DataError("sweep training pool is empty");
  if (in.test.empty()) throw DataError("sweep test set is empty");
  Dataset pool = in.train;
  Rng rng(mix_seed({spec.base_seed, 0x9001}));
  shuffle(std::span(pool.examples), rng);

  SweepResult res;
  res.axis = spec.axis;
  res.metric_name = in.test.schema.task == TaskKind::NER ? "f1" : "accuracy";
  const std::size_t cells = spec.grid.size() * spec.repetitions;
  res.rows.resize(cells);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < cells;)
      res.rows[c] = detail::run_cell(spec, in, pool, spec.grid[c / spec.repetitions], c % spec.repetitions);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool_threads;
    for (unsigned t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
  }

  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    SweepPoint p;
    p.axis_value = spec.grid[g];
    double sum = 0.0, ratio = 0.0;
    std::vector<double> vals;
    for (std::size_t r = 0; r < spec.repetitions; ++r) {
      const auto& row = res.rows[g * spec.repetitions + r];
      if (!row.ok()) continue;
      vals.push_back(row.metric);
      sum += row.metric;
      ratio += row.trainable_ratio;
    }
    p.runs = vals.size();
    if (!vals.empty()) {
      p.mean = sum / static_cast<double>(vals.size());
      p.trainable_ratio = ratio / static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - p.mean) * (v - p.mean);
      p.stddev = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
    }
    res.points.push_back(p);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string render_text() const {
    std::vector<std::size_t> width(columns.size(), 0);
    for (std::size_t c = 0; c < columns.size(); ++c) width[c] = columns[c].size();
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const std::string& v = c < cells.size() ? cells[c] : std::string{};
        os << (c ? "  " : "") << v << std::string(width[c] - v.size(), ' ');
      }
      os << '\n';
    };
    line(columns);
    std::vector<std::string> rule;
    for (auto w : width) rule.push_back(std::string(w, '-'));
    line(rule);
    for (const auto& r : rows) line(r);
    return os.str();
  }

  std::string render_tsv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "\t" : "") << cells[c];
      os << '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// One evaluation outcome of a named dataset; several runs of the same name
/// are averaged in the report.
struct NamedResult {
  std::string dataset;
  EvalReport report;
};

/// One row per dataset with metrics averaged over its
/// runs, a `mean` column of the headline metric, and an AVG row when more
/// than one dataset is present.
inline Table report_table(const std::vector<NamedResult>& results) {
  Table t{{"dataset", "task", "runs", "precision", "recall", "f1", "accuracy", "mean", "stddev"}, {}};
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalReport*>> groups;
  for (const auto& r : results) {
    if (!groups.count(r.dataset)) order.push_back(r.dataset);
    groups[r.dataset].push_back(&r.report);
  }
  std::vector<double> means;
  for (const auto& name : order) {
    const auto& g = groups[name];
    double p = 0, rc = 0, f = 0, a = 0, m = 0;
    for (const auto* r : g) {
      p += r->precision;
      rc += r->recall;
      f += r->f1;
      a += r->accuracy;
      m += r->primary();
    }
    const double n = static_cast<double>(g.size());
    m /= n;
    double ss = 0.0;
    for (const auto* r : g) ss += (r->primary() - m) * (r->primary() - m);
    const double sd = g.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    const bool ner = g.front()->task == TaskKind::NER;
    t.rows.push_back({name, std::string(to_string(g.front()->task)), std::to_string(g.size()),
                      ner ? fixed(p / n) : "-", ner ? fixed(rc / n) : "-", ner ? fixed(f / n) : "-",
                      ner ? "-" : fixed(a / n), fixed(m), fixed(sd)});
    means.push_back(m);
  }
  if (means.size() > 1) {
    double s = 0;
    for (double v : means) s += v;
    t.rows.push_back({"AVG", "-", "-", "-", "-", "-", "-", fixed(s / static_cast<double>(means.size())), "-"});
  }
  return t;
}

inline Table sweep_rows_table(const SweepResult& r) {
  Table t{{"axis", "axis_value", "repetition", "metric", "value", "trainable_ratio", "train_size", "error"}, {}};
  for (const auto& row : r.rows)
    t.rows.push_back({std::string(to_string(r.axis)), std::to_string(row.axis_value), std::to_string(row.repetition),
                      r.metric_name, fixed(row.metric, 4), fixed(row.trainable_ratio, 6), std::to_string(row.train_size),
                      row.error});
  return t;
}

inline Table sweep_summary_table(const SweepResult& r) {
  Table t{{"axis", "axis_value", "runs", "mean", "stddev", "trainable_ratio"}, {}};
  for (const auto& p : r.points)
    t.rows.push_back({std::string(to_string(r.axis)), std::to_string(p.axis_value), std::to_string(p.runs),
                      fixed(p.mean, 4), fixed(p.stddev, 4), fixed(p.trainable_ratio, 6)});
  return t;
}

}  // namespace locus
