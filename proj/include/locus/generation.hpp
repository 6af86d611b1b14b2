// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "locus/corpus.hpp"
#include "locus/error.hpp"
#include "locus/retrieval.hpp"

namespace locus {

enum class PromptKind { SeedBased, RetrievalBased };

struct MetaPrompt {
  PromptKind kind = PromptKind::SeedBased;
  std::string rendered_text;
  LabelSchema schema;
  std::vector<LabeledExample> seed_examples;
  std::vector<LabeledExample> retrieved_examples;  // RetrievalBased only
  std::size_t requested_count = 1;
};

struct PromptOptions {
  std::size_t min_text_len = 20;
};

namespace detail {

inline std::string entity_list(const LabeledExample& ex) {
  std::string s = "[";
  for (std::size_t i = 0; i < ex.entities.size(); ++i) {
    if (i) s += ", ";
    s += ex.entities[i].mention + ":" + ex.entities[i].label;
  }
  return s + "]";
}

inline std::string join_labels(const LabelSchema& schema) {
  std::string s;
  for (std::size_t i = 0; i < schema.labels.size(); ++i) s += (i ? ", " : "") + schema.labels[i];
  return s;
}

inline std::string render_example(const LabeledExample& ex, TaskKind task) {
  std::string s = "Text: " + ex.text + "\n";
  s += task == TaskKind::NER ? "Entities: " + entity_list(ex) : "Label: " + ex.label;
  return s + "\n";
}

inline std::string render_definitions(const LabelSchema& schema) {
  if (schema.definitions.empty()) return {};
  std::string s = schema.task == TaskKind::NER ? "\nEntity definitions:\n" : "\nClass definitions:\n";
  for (const auto& l : schema.labels)
    if (auto it = schema.definitions.find(l); it != schema.definitions.end()) s += "- " + l + ": " + it->second + "\n";
  return s;
}

inline std::string render_request(std::size_t count) {
  return "\nGenerate exactly " + std::to_string(count) + (count == 1 ? " item.\n" : " items.\n");
}

inline std::string render_format(const LabelSchema& schema, const PromptOptions& opt) {
  std::string s = "\nReturn format:\nText: [text greater than a certain length]\n";
  if (schema.task == TaskKind::NER) {
    s += "Entities: [among the given entity list]\n";
    s += "Write every text with at least " + std::to_string(opt.min_text_len) +
         " characters. List entities as mention:label separated by commas, for example [" +
         "mention:" + schema.labels.front() + "], or [] when there are none. Separate items with a blank line.\n";
  } else {
    s += "Label: [one of the given class list]\n";
    s += "Write every text with at least " + std::to_string(opt.min_text_len) +
         " characters. Give exactly one class name per item. Separate items with a blank line.\n";
  }
  return s;
}

}  // namespace detail

/// Seed-based meta prompt: domain, label inventory and seed examples only.
inline MetaPrompt build_seed_prompt(const LabelSchema& schema, const std::vector<LabeledExample>& seeds,
                                    std::size_t count, const PromptOptions& opt = {}) {
  if (seeds.empty()) throw DataError("seed-based prompt needs at least one seed example");
  if (count == 0) throw ConfigError("requested item count must be positive");
  for (const auto& s : seeds)
    if (!validate_example(s, schema).ok()) throw DataError("invalid seed example: " + s.text);

  const bool ner = schema.task == TaskKind::NER;
  std::string t = "Generate a diverse dataset with features:\n";
  t += ner ? "(1) Real-world entities\n" : "(1) Real-world content\n";
  t += "(2) Multifactorial, including outliers for robustness.\n";
  t += "(3) Domain: " + schema.domain + (ner ? ", Entities: " : ", Classes: ") + detail::join_labels(schema) +
       ", guided by " + (ner ? "entity_examples" : "class_examples") + ".\n";
  t += detail::render_definitions(schema);
  t += ner ? "\nentity_examples:\n" : "\nclass_examples:\n";
  for (const auto& s : seeds) t += detail::render_example(s, schema.task);
  t += detail::render_request(count);
  t += detail::render_format(schema, opt);
  return MetaPrompt{PromptKind::SeedBased, std::move(t), schema, seeds, {}, count};
}

/// Retrieval-based meta prompt: as the seed prompt, plus the top `m`
/// retrieved corpus sentences as context.
inline MetaPrompt build_retrieval_prompt(const LabelSchema& schema, const std::vector<LabeledExample>& seeds,
                                         const std::vector<RetrievalHit>& retrieved, std::size_t m,
                                         std::size_t count, const PromptOptions& opt = {}) {
  if (retrieved.empty()) throw DataError("retrieval-based prompt needs retrieved examples");
  if (m == 0) throw ConfigError("context size m must be positive");
  if (m > retrieved.size())
    throw ConfigError("context size m=" + std::to_string(m) + " exceeds " + std::to_string(retrieved.size()) +
                      " retrieved examples");
  if (seeds.empty()) throw DataError("retrieval-based prompt needs at least one seed example");
  if (count == 0) throw ConfigError("requested item count must be positive");

  const bool ner = schema.task == TaskKind::NER;
  std::vector<LabeledExample> context;
  for (std::size_t i = 0; i < m; ++i) context.push_back(retrieved[i].example);

  std::string t = "Given a context of relevant samples, generate diverse data:\n";
  t += ner ? "(1) Real-world entities\n" : "(1) Real-world content\n";
  t += "(2) Multifactorial with outliers.\n";
  t += "(3) Domain: " + schema.domain + (ner ? ", Entities: " : ", Classes: ") + detail::join_labels(schema) +
       ", guided by " + (ner ? "entity_examples" : "class_examples") + " with retrieved_examples\n";
  t += detail::render_definitions(schema);
  t += ner ? "\nentity_examples:\n" : "\nclass_examples:\n";
  for (const auto& s : seeds) t += detail::render_example(s, schema.task);
  t += "\nretrieved_examples:\n";
  for (const auto& c : context) t += "Text: " + c.text + "\n";
  t += detail::render_request(count);
  t += detail::render_format(schema, opt);
  return MetaPrompt{PromptKind::RetrievalBased, std::move(t), schema, seeds, std::move(context), count};
}

// ---------------------------------------------------------------------------
// Response parsing

struct ParseStats {
  std::size_t raw_blocks = 0;
  std::size_t parsed_ok = 0;
  std::size_t dropped_entities = 0;
  std::size_t dropped_examples = 0;
  std::size_t schema_violations = 0;
  std::size_t short_texts = 0;        // subset of dropped_examples
  std::size_t entity_free_kept = 0;   // NER blocks kept after every entity failed

  ParseStats& operator+=(const ParseStats& o) {
    raw_blocks += o.raw_blocks;
    parsed_ok += o.parsed_ok;
    dropped_entities += o.dropped_entities;
    dropped_examples += o.dropped_examples;
    schema_violations += o.schema_violations;
    short_texts += o.short_texts;
    entity_free_kept += o.entity_free_kept;
    return *this;
  }

  bool reconciles() const { return raw_blocks == parsed_ok + dropped_examples && short_texts <= dropped_examples; }
  bool operator==(const ParseStats&) const = default;
};

inline ordered_json to_json(const ParseStats& s) {
  return ordered_json{{"raw_blocks", s.raw_blocks},         {"parsed_ok", s.parsed_ok},
                      {"dropped_entities", s.dropped_entities}, {"dropped_examples", s.dropped_examples},
                      {"schema_violations", s.schema_violations}, {"short_texts", s.short_texts},
                      {"entity_free_kept", s.entity_free_kept}};
}

struct GenerationBatch {
  std::vector<LabeledExample> examples;
  ParseStats stats;
};

/// Maps each mention to its first occurrence that does not overlap an
/// already-assigned span. Mentions are processed in order; misses are omitted.
inline std::vector<EntitySpan> align_entities(std::string_view text,
                                              const std::vector<std::pair<std::string, std::string>>& mentions) {
  std::vector<EntitySpan> out;
  auto cps = utf8::decode(text);
  if (!cps) return out;
  std::vector<bool> taken(cps->size(), false);
  for (const auto& [mention, label] : mentions) {
    auto m = utf8::decode(mention);
    if (!m || m->empty() || m->size() > cps->size()) continue;
    for (std::size_t p = 0; p + m->size() <= cps->size(); ++p) {
      if (cps->compare(p, m->size(), *m) != 0) continue;
      bool free = true;
      for (std::size_t q = p; q < p + m->size() && free; ++q) free = !taken[q];
      if (!free) continue;
      for (std::size_t q = p; q < p + m->size(); ++q) taken[q] = true;
      out.push_back({p, p + m->size(), label, mention});
      break;
    }
  }
  return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_quotes(std::string s) {
  s = trim(s);
  while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'') ||
                           (s.front() == '*' && s.back() == '*') || (s.front() == '`' && s.back() == '`')))
    s = trim(s.substr(1, s.size() - 2));
  return s;
}

inline std::string ascii_lower(std::string s) {
  for (auto& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
  return s;
}

/// Resolves a generated label to the schema's canonical spelling.
inline std::optional<std::string> resolve_label(const LabelSchema& schema, const std::string& raw) {
  const std::string l = strip_quotes(raw);
  if (schema.contains(l)) return l;
  for (const auto& name : schema.labels)
    if (ascii_lower(name) == ascii_lower(l)) return name;
  return std::nullopt;
}

struct RawBlock {
  std::string text;
  std::optional<std::string> annotation;
};

inline std::vector<RawBlock> split_blocks(std::string_view raw) {
  static const std::regex kText(R"(^\s*(?:[-*]\s*)?(?:\d+\s*[.):]\s*)?(?:\*\*)?text(?:\*\*)?\s*:(?:\*\*)?\s*(.*)$)",
                                std::regex::icase);
  static const std::regex kAnno(R"(^\s*(?:[-*]\s*)?(?:\*\*)?(?:entities|label|class)(?:\*\*)?\s*:(?:\*\*)?\s*(.*)$)",
                                std::regex::icase);
  std::vector<RawBlock> blocks;
  std::istringstream in{std::string(raw)};
  std::string line;
  bool in_text = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, kText)) {
      blocks.push_back({trim(m[1].str()), std::nullopt});
      in_text = true;
    } else if (std::regex_match(line, m, kAnno)) {
      if (!blocks.empty() && !blocks.back().annotation) blocks.back().annotation = trim(m[1].str());
      in_text = false;
    } else if (in_text && !trim(line).empty() && line.find_first_not_of("-=_ ") != std::string::npos) {
      auto& t = blocks.back().text;
      t += (t.empty() ? "" : " ") + trim(line);
    } else {
      in_text = false;
    }
  }
  return blocks;
}

inline std::vector<std::string> split_entity_items(std::string list) {
  list = trim(list);
  if (!list.empty() && list.front() == '[') list.erase(0, 1);
  if (!list.empty() && list.back() == ']') list.pop_back();
  std::vector<std::string> items;
  std::string cur;
  for (char c : list) {
    if (c == ',' || c == ';') {
      if (!trim(cur).empty()) items.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) items.push_back(trim(cur));
  if (items.size() == 1) {
    const auto l = ascii_lower(items[0]);
    if (l == "none" || l == "n/a" || l == "-") items.clear();
  }
  return items;
}

}  // namespace detail

struct ParseOptions {
  std::size_t min_text_len = 20;
  Provenance provenance = Provenance::SeedGen;
};

/// Splits a completion into Text/Entities (or Text/Label) blocks. Total: every
/// failure becomes a counter, never an exception.
inline GenerationBatch parse_generation(std::string_view raw, const LabelSchema& schema,
                                        const ParseOptions& opt = {}) {
  GenerationBatch batch;
  auto& st = batch.stats;
  for (auto& block : detail::split_blocks(raw)) {
    ++st.raw_blocks;
    LabeledExample ex;
    ex.text = detail::strip_quotes(block.text);
    ex.provenance = opt.provenance;
    auto cps = utf8::decode(ex.text);
    if (!cps || cps->size() < opt.min_text_len) {
      ++st.dropped_examples;
      ++st.short_texts;
      continue;
    }
    if (!block.annotation) {
      ++st.dropped_examples;
      continue;
    }

    if (schema.task == TaskKind::TC) {
      auto label = detail::resolve_label(schema, *block.annotation);
      if (!label) {
        ++st.dropped_examples;
        ++st.schema_violations;
        continue;
      }
      ex.label = *label;
    } else {
      std::vector<std::pair<std::string, std::string>> mentions;
      std::size_t offered = 0;
      for (const auto& item : detail::split_entity_items(*block.annotation)) {
        ++offered;
        const auto colon = item.rfind(':');
        if (colon == std::string::npos) {
          ++st.dropped_entities;
          continue;
        }
        auto label = detail::resolve_label(schema, item.substr(colon + 1));
        if (!label) {
          ++st.dropped_entities;
          ++st.schema_violations;
          continue;
        }
        auto mention = detail::strip_quotes(item.substr(0, colon));
        if (mention.empty()) {
          ++st.dropped_entities;
          continue;
        }
        mentions.emplace_back(std::move(mention), std::move(*label));
      }
      ex.entities = align_entities(ex.text, mentions);
      st.dropped_entities += mentions.size() - ex.entities.size();
      if (offered > 0 && ex.entities.empty()) ++st.entity_free_kept;
      std::sort(ex.entities.begin(), ex.entities.end(),
                [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    }

    if (!validate_example(ex, schema).ok()) {
      ++st.dropped_examples;
      ++st.schema_violations;
      continue;
    }
    batch.examples.push_back(std::move(ex));
    ++st.parsed_ok;
  }
  return batch;
}

// ---------------------------------------------------------------------------
// LLM client

struct LLMClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model_name = "gpt-4o";
  std::string api_key;
  int max_retries = 3;
  std::vector<std::chrono::milliseconds> backoff = {std::chrono::milliseconds(500), std::chrono::milliseconds(1000),
                                                    std::chrono::milliseconds(2000), std::chrono::milliseconds(4000)};
  double temperature = 1.0;
  int max_tokens = 4096;
  unsigned max_in_flight = 4;

  static constexpr const char* kApiKeyEnv = "LOCUS_LLM_API_KEY";

  void check() const {
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
    if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
    if (max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
  }

  static std::optional<std::string> api_key_from_env() {
    const char* v = std::getenv(kApiKeyEnv);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  }
};

struct TransportResponse {
  int status = 0;  // HTTP status; 0 means the request never completed
  std::string body;
  std::string error;
};

/// Carries one chat-completion request body. `request_index` is assigned by
/// the client in submission order and is stable across retries.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResponse post(const std::string& body, std::size_t request_index, int attempt) = 0;
  virtual std::string describe() const = 0;
};

/// Replays canned completions from a directory of numbered files. File `<i>`
/// (any extension, leading zeros allowed) answers request i; indices past the
/// last file wrap around. `.json` files are returned as full response bodies,
/// anything else as the message content.
class MockTransport final : public Transport {
 public:
  explicit MockTransport(const std::filesystem::path& dir) : dir_(dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("mock directory not found: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      const auto stem = e.path().stem().string();
      std::string digits;
      for (char c : stem)
        if (c >= '0' && c <= '9') digits.push_back(c);
      if (digits.empty()) continue;
      files_[std::stoull(digits)] = e.path();
    }
    if (files_.empty()) throw ConfigError("mock directory has no numbered response files: " + dir.string());
  }

  std::size_t size() const { return files_.size(); }

  TransportResponse post(const std::string&, std::size_t request_index, int) override {
    auto it = files_.find(request_index);
    if (it == files_.end()) {
      it = files_.begin();
      std::advance(it, static_cast<std::ptrdiff_t>(request_index % files_.size()));
    }
    std::ifstream in(it->second, std::ios::binary);
    if (!in) return {0, {}, "cannot read " + it->second.string()};
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (it->second.extension() == ".json") return {200, std::move(content), {}};
    json body = {{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}};
    return {200, body.dump(), {}};
  }

  std::string describe() const override { return "mock:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
  std::map<std::size_t, std::filesystem::path> files_;
};

struct AuditRecord {
  std::size_t request_index = 0;
  int attempt = 0;
  int status = 0;
  std::string request;
  std::string response;
};

struct Completion {
  std::string text;
  int retries = 0;
};

struct CompletionResult {
  std::optional<Completion> completion;
  std::string error;
  int status = 0;

  bool ok() const { return completion.has_value(); }
};

inline bool is_retriable_status(int status) {
  return status == 0 || status == 408 || status == 409 || status == 429 || status >= 500;
}

class LLMClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  LLMClient(LLMClientConfig cfg, std::shared_ptr<Transport> transport,
            Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
      : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    cfg_.check();
    if (!transport_) throw ConfigError("LLM client needs a transport");
  }

  const LLMClientConfig& config() const { return cfg_; }
  const Transport& transport() const { return *transport_; }

  std::string build_request(const MetaPrompt& prompt) const {
    ordered_json body;
    body["model"] = cfg_.model_name;
    body["messages"] = ordered_json::array({ordered_json{{"role", "user"}, {"content", prompt.rendered_text}}});
    body["temperature"] = cfg_.temperature;
    body["max_tokens"] = cfg_.max_tokens;
    return body.dump();
  }

  /// Sends one prompt, retrying transient failures with the backoff schedule.
  Completion complete(const MetaPrompt& prompt) { return complete_at(prompt, next_index_.fetch_add(1)); }

  /// Completes all prompts with at most `max_in_flight` concurrent requests.
  /// Results come back in prompt order; failures are captured per prompt.
  std::vector<CompletionResult> complete_many(const std::vector<MetaPrompt>& prompts) {
    const std::size_t base = next_index_.fetch_add(prompts.size());
    std::vector<CompletionResult> results(prompts.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < prompts.size();) {
        try {
          results[i].completion = complete_at(prompts[i], base + i);
        } catch (const ProviderError& e) {
          results[i].error = e.what();
          results[i].status = e.status();
        } catch (const std::exception& e) {
          results[i].error = e.what();
        }
      }
    };
    const auto n = std::min<std::size_t>(cfg_.max_in_flight, prompts.size());
    if (n <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    return results;
  }

  std::vector<AuditRecord> audit() const {
    std::lock_guard lk(mu_);
    auto out = audit_;
    std::sort(out.begin(), out.end(), [](const AuditRecord& a, const AuditRecord& b) {
      return a.request_index != b.request_index ? a.request_index < b.request_index : a.attempt < b.attempt;
    });
    return out;
  }

  std::size_t requests_issued() const { return next_index_.load(); }

 private:
  Completion complete_at(const MetaPrompt& prompt, std::size_t index) {
    const auto body = build_request(prompt);
    TransportResponse last;
    for (int attempt = 0;; ++attempt) {
      last = transport_->post(body, index, attempt);
      {
        std::lock_guard lk(mu_);
        audit_.push_back({index, attempt, last.status, body, last.status ? last.body : last.error});
      }
      if (last.status == 200) {
        try {
          auto j = json::parse(last.body);
          return {j.at("choices").at(0).at("message").at("content").get<std::string>(), attempt};
        } catch (const json::exception& e) {
          last.error = std::string("malformed response body: ") + e.what();
        }
      } else if (last.status == 401 || last.status == 403) {
        throw ProviderError("authentication rejected by " + transport_->describe() + " (HTTP " +
                                std::to_string(last.status) + ")",
                            last.status, false);
      } else if (!is_retriable_status(last.status)) {
        throw ProviderError("request rejected by " + transport_->describe() + " (HTTP " +
                                std::to_string(last.status) + "): " + last.body.substr(0, 200),
                            last.status, false);
      }
      if (attempt >= cfg_.max_retries) break;
      if (!cfg_.backoff.empty())
        sleeper_(cfg_.backoff[std::min<std::size_t>(static_cast<std::size_t>(attempt), cfg_.backoff.size() - 1)]);
    }
    std::string detail = last.error.empty() ? last.body.substr(0, 200) : last.error;
    throw ProviderError("request " + std::to_string(index) + " failed after " + std::to_string(cfg_.max_retries + 1) +
                            " attempt(s) via " + transport_->describe() + " (last status " +
                            std::to_string(last.status) + "): " + detail,
                        last.status, true);
  }

  LLMClientConfig cfg_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::atomic<std::size_t> next_index_{0};
  mutable std::mutex mu_;
  std::vector<AuditRecord> audit_;
};

}  // namespace locus
