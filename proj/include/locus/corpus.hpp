// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "locus/error.hpp"
#include "locus/utf8.hpp"

namespace locus {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class TaskKind { NER, TC };

inline std::string_view to_string(TaskKind k) { return k == TaskKind::NER ? "ner" : "tc"; }

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "ner" || s == "NER") return TaskKind::NER;
  if (s == "tc" || s == "TC") return TaskKind::TC;
  throw ConfigError("unknown task kind '" + std::string(s) + "' (expected ner or tc)");
}

enum class Provenance { User, SeedGen, RetrievalGen, Corpus };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::User: return "user";
    case Provenance::SeedGen: return "seed_gen";
    case Provenance::RetrievalGen: return "retrieval_gen";
    case Provenance::Corpus: return "corpus";
  }
  return "user";
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
  if (s == "user") return Provenance::User;
  if (s == "seed_gen") return Provenance::SeedGen;
  if (s == "retrieval_gen") return Provenance::RetrievalGen;
  if (s == "corpus") return Provenance::Corpus;
  return std::nullopt;
}

/// The user's label inventory. For NER the labels are entity types, for TC
/// they are class names. Label order is significant: it fixes tag and class
/// indices in the model.
struct LabelSchema {
  TaskKind task = TaskKind::NER;
  std::vector<std::string> labels;
  std::map<std::string, std::string> definitions;
  std::string domain;

  bool contains(std::string_view label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
  }

  std::optional<std::size_t> index_of(std::string_view label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  }

  void check() const {
    if (labels.empty()) throw ConfigError("schema has no labels");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels) {
      if (l.empty()) throw ConfigError("schema contains an empty label name");
      if (!seen.insert(l).second) throw ConfigError("duplicate label '" + l + "' in schema");
    }
  }

  bool operator==(const LabelSchema&) const = default;
};

inline LabelSchema schema_from_json(const json& j) {
  LabelSchema s;
  try {
    s.task = parse_task_kind(j.at("task").get<std::string>());
    s.domain = j.value("domain", std::string{});
    for (const auto& l : j.at("labels")) {
      std::string name = l.is_string() ? l.get<std::string>() : l.at("name").get<std::string>();
      if (l.is_object() && l.contains("definition") && !l["definition"].is_null())
        s.definitions[name] = l["definition"].get<std::string>();
      s.labels.push_back(std::move(name));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed schema: ") + e.what());
  }
  s.check();
  return s;
}

inline ordered_json schema_to_json(const LabelSchema& s) {
  ordered_json j;
  j["task"] = to_string(s.task);
  j["domain"] = s.domain;
  j["labels"] = ordered_json::array();
  for (const auto& l : s.labels) {
    ordered_json e;
    e["name"] = l;
    if (auto it = s.definitions.find(l); it != s.definitions.end()) e["definition"] = it->second;
    j["labels"].push_back(e);
  }
  return j;
}

inline LabelSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path);
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("schema " + path + ": " + e.what());
  }
}

/// Half-open span [start, end) in Unicode scalar values.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;
  std::string mention;

  bool operator==(const EntitySpan&) const = default;
};

struct LabeledExample {
  std::string text;
  std::vector<EntitySpan> entities;  // NER only
  std::string label;                 // TC only
  Provenance provenance = Provenance::User;

  bool operator==(const LabeledExample&) const = default;
};

struct Dataset {
  LabelSchema schema;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  bool operator==(const Dataset&) const = default;
};

/// Code-point slice of `text`; empty if the range is out of bounds.
inline std::string slice_text(std::u32string_view cps, std::size_t start, std::size_t end) {
  if (start > end || end > cps.size()) return {};
  return utf8::encode(cps.substr(start, end - start));
}

inline std::string slice_text(std::string_view text, std::size_t start, std::size_t end) {
  auto cps = utf8::decode(text);
  if (!cps) return {};
  return slice_text(*cps, start, end);
}

struct ValidationReport {
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }

  bool mentions(std::string_view needle) const {
    return std::any_of(problems.begin(), problems.end(),
                       [&](const std::string& p) { return p.find(needle) != std::string::npos; });
  }
};

/// Lists every invariant `ex` violates against `schema`. Never throws.
inline ValidationReport validate_example(const LabeledExample& ex, const LabelSchema& schema) {
  ValidationReport r;
  auto cps = utf8::decode(ex.text);
  if (!cps) {
    r.problems.push_back("text is not valid UTF-8");
    return r;
  }
  if (cps->empty()) r.problems.push_back("empty text");

  if (schema.task == TaskKind::TC) {
    if (!ex.entities.empty()) r.problems.push_back("entities present on a classification example");
    if (ex.label.empty())
      r.problems.push_back("missing class label");
    else if (!schema.contains(ex.label))
      r.problems.push_back("unknown label '" + ex.label + "'");
    return r;
  }

  if (!ex.label.empty()) r.problems.push_back("class label present on an NER example");
  for (std::size_t i = 0; i < ex.entities.size(); ++i) {
    const auto& e = ex.entities[i];
    const std::string where = "entity " + std::to_string(i) + ": ";
    if (e.start >= e.end || e.end > cps->size()) {
      r.problems.push_back(where + "offset out of bounds [" + std::to_string(e.start) + ", " +
                           std::to_string(e.end) + ") for text of length " + std::to_string(cps->size()));
    } else if (e.mention != slice_text(*cps, e.start, e.end)) {
      r.problems.push_back(where + "mention mismatch ('" + e.mention + "' vs '" +
                           slice_text(*cps, e.start, e.end) + "')");
    }
    if (!schema.contains(e.label)) r.problems.push_back(where + "unknown label '" + e.label + "'");
  }

  std::vector<std::size_t> order(ex.entities.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = ex.entities[a];
    const auto& y = ex.entities[b];
    return x.start != y.start ? x.start < y.start : x.end < y.end;
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& prev = ex.entities[order[i - 1]];
    const auto& cur = ex.entities[order[i]];
    if (cur.start < prev.end)
      r.problems.push_back("overlap between entity " + std::to_string(order[i - 1]) + " and entity " +
                           std::to_string(order[i]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Record (de)serialization

inline ordered_json example_to_record(const LabeledExample& ex, TaskKind task) {
  ordered_json j;
  j["text"] = ex.text;
  if (task == TaskKind::NER) {
    j["entities"] = ordered_json::array();
    for (const auto& e : ex.entities) {
      ordered_json s;
      s["start"] = e.start;
      s["end"] = e.end;
      s["label"] = e.label;
      s["mention"] = e.mention;
      j["entities"].push_back(s);
    }
  } else {
    j["label"] = ex.label;
  }
  if (ex.provenance != Provenance::User) j["provenance"] = to_string(ex.provenance);
  return j;
}

/// Builds an example from one decoded record. Structural problems throw
/// DataError; semantic ones are left to validate_example.
inline LabeledExample example_from_record(const json& j, const LabelSchema& schema) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  LabeledExample ex;
  try {
    if (!j.contains("text") || !j["text"].is_string()) throw DataError("missing string field 'text'");
    ex.text = j["text"].get<std::string>();
    auto cps = utf8::decode(ex.text);
    if (!cps) throw DataError("text is not valid UTF-8");
    if (j.contains("provenance")) {
      auto p = parse_provenance(j["provenance"].get<std::string>());
      if (!p) throw DataError("unknown provenance '" + j["provenance"].get<std::string>() + "'");
      ex.provenance = *p;
    }
    if (schema.task == TaskKind::NER) {
      if (j.contains("label")) throw DataError("NER record carries a class 'label' field");
      if (j.contains("entities")) {
        if (!j["entities"].is_array()) throw DataError("'entities' is not an array");
        for (const auto& e : j["entities"]) {
          EntitySpan s;
          const auto start = e.at("start").get<long long>();
          const auto end = e.at("end").get<long long>();
          if (start < 0 || end < 0) throw DataError("negative entity offset");
          s.start = static_cast<std::size_t>(start);
          s.end = static_cast<std::size_t>(end);
          s.label = e.at("label").get<std::string>();
          s.mention = e.contains("mention") ? e["mention"].get<std::string>() : slice_text(*cps, s.start, s.end);
          ex.entities.push_back(std::move(s));
        }
      }
    } else {
      if (j.contains("entities")) throw DataError("classification record carries an 'entities' field");
      if (!j.contains("label") || !j["label"].is_string()) throw DataError("missing string field 'label'");
      ex.label = j["label"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  return ex;
}

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParsedDataset {
  Dataset dataset;
  std::vector<LineError> errors;
};

/// Parses line-delimited records. Blank lines are skipped; every other line
/// either yields a validated example or a LineError.
inline ParsedDataset parse_dataset(std::istream& in, const LabelSchema& schema) {
  schema.check();
  ParsedDataset out;
  out.dataset.schema = schema;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      auto ex = example_from_record(json::parse(line), schema);
      auto report = validate_example(ex, schema);
      if (!report.ok()) {
        std::string msg;
        for (const auto& p : report.problems) msg += (msg.empty() ? "" : "; ") + p;
        out.errors.push_back({lineno, msg});
        continue;
      }
      out.dataset.examples.push_back(std::move(ex));
    } catch (const json::parse_error& e) {
      out.errors.push_back({lineno, std::string("invalid JSON: ") + e.what()});
    } catch (const DataError& e) {
      out.errors.push_back({lineno, e.what()});
    }
  }
  if (in.bad()) throw IoError("read failure after line " + std::to_string(lineno));
  return out;
}

inline ParsedDataset load_dataset(const std::string& path, const LabelSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file " + path);
  return parse_dataset(in, schema);
}

inline void serialize_dataset(const Dataset& d, std::ostream& out) {
  for (const auto& ex : d.examples) out << example_to_record(ex, d.schema.task).dump() << '\n';
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  serialize_dataset(d, out);
  if (!out) throw IoError("write failure on " + path);
}

inline std::string serialize_dataset(const Dataset& d) {
  std::ostringstream os;
  serialize_dataset(d, os);
  return os.str();
}

// ---------------------------------------------------------------------------
// Tokenization and BIO encoding

struct Token {
  std::string text;
  std::size_t start = 0;  // code points
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

inline std::vector<Token> tokenize(std::u32string_view cps) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && utf8::is_space(cps[i])) ++i;
    if (i == cps.size()) break;
    const std::size_t start = i;
    while (i < cps.size() && !utf8::is_space(cps[i])) ++i;
    out.push_back({utf8::encode(cps.substr(start, i - start)), start, i});
  }
  return out;
}

/// Whitespace segmentation. Malformed UTF-8 is tokenized byte-wise.
inline std::vector<Token> tokenize(std::string_view text) {
  if (auto cps = utf8::decode(text)) return tokenize(std::u32string_view(*cps));
  std::u32string bytes;
  for (unsigned char c : text) bytes.push_back(c);
  auto toks = tokenize(std::u32string_view(bytes));
  for (auto& t : toks) t.text = std::string(text.substr(t.start, t.end - t.start));
  return toks;
}

/// Maps BIO tag strings to dense ids: O = 0, B-label_i = 1 + 2i, I-label_i = 2 + 2i.
class TagSet {
 public:
  explicit TagSet(const LabelSchema& schema) {
    tags_.push_back("O");
    for (const auto& l : schema.labels) {
      tags_.push_back("B-" + l);
      tags_.push_back("I-" + l);
    }
  }

  std::size_t size() const { return tags_.size(); }
  const std::string& name(std::size_t id) const { return tags_.at(id); }

  std::optional<std::size_t> id(std::string_view tag) const {
    auto it = std::find(tags_.begin(), tags_.end(), tag);
    if (it == tags_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - tags_.begin());
  }

 private:
  std::vector<std::string> tags_;
};

/// One tag per token, or nullopt when some span does not start and end on
/// token boundaries (the example is then unalignable).
inline std::optional<std::vector<std::string>> to_bio(const LabeledExample& ex, const std::vector<Token>& tokens) {
  std::vector<std::string> tags(tokens.size(), "O");
  for (const auto& span : ex.entities) {
    std::optional<std::size_t> first, last;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto& tok = tokens[t];
      const bool intersects = tok.start < span.end && tok.end > span.start;
      if (!intersects) continue;
      if (tok.start < span.start || tok.end > span.end) return std::nullopt;
      if (!first) first = t;
      last = t;
    }
    if (!first || tokens[*first].start != span.start || tokens[*last].end != span.end) return std::nullopt;
    for (std::size_t t = *first; t <= *last; ++t) {
      if (tags[t] != "O") return std::nullopt;
      tags[t] = (t == *first ? "B-" : "I-") + span.label;
    }
  }
  return tags;
}

/// Decodes BIO tags back to spans. An I-x that does not continue an x span
/// opens a new one.
inline std::vector<EntitySpan> from_bio(const std::vector<std::string>& tags, const std::vector<Token>& tokens,
                                        std::string_view text) {
  if (tags.size() != tokens.size()) throw DataError("tag count does not match token count");
  auto cps = utf8::decode(text);
  std::vector<EntitySpan> spans;
  std::optional<EntitySpan> open;
  auto close = [&] {
    if (open) {
      open->mention = cps ? slice_text(*cps, open->start, open->end) : std::string{};
      spans.push_back(std::move(*open));
      open.reset();
    }
  };
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto& tag = tags[t];
    if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
      std::string label = tag.substr(2);
      if (tag[0] == 'I' && open && open->label == label) {
        open->end = tokens[t].end;
        continue;
      }
      close();
      open = EntitySpan{tokens[t].start, tokens[t].end, std::move(label), {}};
    } else {
      close();
    }
  }
  close();
  return spans;
}

}  // namespace locus
