// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: validate, index, generate, train, train-lora, merge,
// decompose, eval, sweep, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "locus/http_transport.hpp"
#include "locus/locus.hpp"

namespace fs = std::filesystem;
using namespace locus;

namespace {

constexpr int kExitFatal = 1;
constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// Flat config files: `key = value` per line, `#` comments. Keys are flag
// names with or without leading dashes; underscores and dashes are equivalent.

std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    auto key = detail::trim(std::string_view(body).substr(0, eq));
    auto value = detail::strip_quotes(detail::trim(std::string_view(body).substr(eq + 1)));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (key == "config") throw ConfigError(path + ":" + std::to_string(lineno) + ": config files cannot nest");
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// Splices config-file tokens right after the subcommand name so that flags
/// given on the command line come later and win.
std::vector<std::string> expand_config(int argc, char** argv, const std::vector<std::string>& subcommands) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::size_t sub = args.size();
  for (std::size_t i = 0; i < args.size(); ++i)
    if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
      sub = i;
      break;
    }
  if (sub == args.size()) return args;
  std::string config_path;
  for (std::size_t i = sub + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  auto tokens = config_tokens(config_path);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, tokens.begin(), tokens.end());
  return args;
}

// ---------------------------------------------------------------------------
// Run artifacts

void write_text(const std::string& path, const std::string& content) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failure on " + path);
}

/// Resolved flag values of a subcommand in the config-file format, so the
/// echo can be fed back through --config.
std::string effective_config(const CLI::App& sub) {
  std::ostringstream os;
  os << "# locus " << sub.get_name() << "\n";
  for (const auto* opt : sub.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_multi_option_policy() != CLI::MultiOptionPolicy::TakeAll)
        value = res.back();
      else
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    if (value.empty()) continue;
    os << name << " = " << value << "\n";
  }
  return os.str();
}

struct Artifacts {
  std::string base;

  std::string config_path() const { return base + ".config"; }
  std::string report_path() const { return base + ".report.json"; }

  void write(const CLI::App& sub, ordered_json report) const {
    report["command"] = sub.get_name();
    write_text(config_path(), effective_config(sub));
    write_text(report_path(), report.dump(2) + "\n");
  }
};

Dataset load_valid(const std::string& path, const LabelSchema& schema) {
  auto parsed = load_dataset(path, schema);
  if (!parsed.errors.empty()) {
    const auto& e = parsed.errors.front();
    throw DataError(path + ":" + std::to_string(e.line) + ": " + e.message + " (" +
                    std::to_string(parsed.errors.size()) + " invalid line(s); run `locus validate` for all)");
  }
  return std::move(parsed.dataset);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = detail::trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::vector<LinearTarget> parse_targets(const std::string& list) {
  std::vector<LinearTarget> out;
  for (const auto& n : split_list(list)) out.push_back(parse_linear_target(n));
  return out;
}

std::vector<std::size_t> parse_grid(const std::string& list) {
  std::vector<std::size_t> out;
  for (const auto& v : split_list(list)) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.front() == '-') throw ConfigError("grid value '" + v + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Shared option groups

struct ModelOpts {
  ModelConfig cfg;
  std::uint64_t init_seed = 1;

  void add(CLI::App* app) {
    app->add_option("--vocab-buckets", cfg.vocab_buckets, "Hashing vocabulary size");
    app->add_option("--embed-dim", cfg.embed_dim, "Token embedding width");
    app->add_option("--window", cfg.window, "Context half-width");
    app->add_option("--hidden-dim", cfg.hidden_dim, "Hidden layer width");
    app->add_option("--init-seed", init_seed, "Weight initialization seed");
  }
};

struct TrainOpts {
  TrainConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--lr", cfg.learning_rate, "SGD learning rate");
    app->add_option("--epochs", cfg.epochs, "Maximum epochs");
    app->add_option("--patience", cfg.patience, "Early-stopping patience in epochs");
    app->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
    app->add_option("--dev-fraction", cfg.dev_fraction, "Held-out dev share");
    app->add_option("--train-seed", cfg.rng_seed, "Shuffle and split seed");
    app->add_option("--optimizer", cfg.optimizer, "Optimizer (sgd)");
  }
};

struct LoraOpts {
  LoRAConfig cfg;
  std::string targets = "auto";
  std::uint64_t seed = 3;

  void add(CLI::App* app, bool with_seed = true) {
    app->add_option("--rank", cfg.rank, "Adapter rank r");
    app->add_option("--alpha", cfg.alpha, "Adapter scale numerator alpha");
    app->add_option("--targets", targets,
                    "Adapted matrices, comma-separated (hidden,output); auto skips targets narrower than the rank");
    app->add_option("--init-scale", cfg.init_scale, "Scale of the A initialization");
    if (with_seed) app->add_option("--lora-seed", seed, "Adapter initialization seed");
  }

  LoRAConfig resolved(const ModelConfig& mc) const {
    LoRAConfig c = cfg;
    if (targets != "auto") {
      c.targets = parse_targets(targets);
      return c;
    }
    c.targets = {LinearTarget::Hidden};
    if (c.rank <= std::min(mc.num_labels, mc.hidden_dim))
      c.targets.push_back(LinearTarget::Output);
    else
      std::cerr << "locus: warning: rank " << c.rank << " exceeds the " << mc.num_labels << "x" << mc.hidden_dim
                << " output layer; adapting the hidden layer only\n";
    return c;
  }
};

// ---------------------------------------------------------------------------
// Subcommands

struct ValidateCmd {
  std::string data, schema, report;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("validate", "Check a dataset file against a schema");
    c->add_option("--data", data, "Dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--report", report, "Artifact base path (default: <data>.validate)");
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    const auto parsed = load_dataset(data, s);
    std::map<std::string, std::size_t> per_label;
    std::size_t spans = 0;
    for (const auto& ex : parsed.dataset.examples) {
      if (s.task == TaskKind::TC) ++per_label[ex.label];
      for (const auto& e : ex.entities) {
        ++per_label[e.label];
        ++spans;
      }
    }
    std::cout << "examples: " << parsed.dataset.size() << "\n";
    if (s.task == TaskKind::NER) std::cout << "entities: " << spans << "\n";
    for (const auto& [label, n] : per_label) std::cout << "  " << label << ": " << n << "\n";
    std::cout << "invalid lines: " << parsed.errors.size() << "\n";
    for (const auto& e : parsed.errors) std::cerr << data << ":" << e.line << ": " << e.message << "\n";

    ordered_json rep{{"examples", parsed.dataset.size()}, {"entities", spans}, {"per_label", per_label}};
    rep["errors"] = ordered_json::array();
    for (const auto& e : parsed.errors) rep["errors"].push_back({{"line", e.line}, {"message", e.message}});
    Artifacts{report.empty() ? data + ".validate" : report}.write(*sub, rep);
    if (!parsed.errors.empty())
      throw DataError(std::to_string(parsed.errors.size()) + " invalid line(s) in " + data);
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct IndexCmd {
  std::string corpus, schema, out;
  std::size_t dim = 256;
  std::uint64_t embed_seed = 0;
  unsigned threads = 1;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("index", "Embed a corpus into a retrieval index");
    c->add_option("--corpus", corpus, "Corpus JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--out", out, "Index file")->required();
    c->add_option("--embed-dim", dim, "Hash-embedder dimension");
    c->add_option("--embed-seed", embed_seed, "Hash-embedder seed");
    c->add_option("--threads", threads, "Embedding threads");
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    const auto data = load_valid(corpus, s);
    HashEmbedder embedder(dim, embed_seed);
    const auto idx = build_index(data, embedder, threads);
    idx.save(out);
    std::cout << "indexed " << idx.size() << " entries (" << idx.embedder_id() << ") -> " << out << "\n";
    Artifacts{out}.write(*sub, {{"entries", idx.size()}, {"embedder_id", idx.embedder_id()}, {"output", out}});
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct GenerateCmd {
  std::string data, schema, index, corpus, out, mock, endpoint, model_name, dedup = "normalized";
  PipelineConfig cfg;
  LLMClientConfig llm;
  std::size_t n = 0;
  std::size_t dim = 256;
  std::uint64_t embed_seed = 0;
  int timeout_s = 120;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("generate", "Expand a few-shot dataset with seed- and retrieval-based generation");
    c->add_option("--data", data, "User dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--index", index, "Retrieval index (from `locus index`)");
    c->add_option("--corpus", corpus, "Corpus JSONL, indexed on the fly when --index is absent");
    c->add_option("--out", out, "Expanded dataset JSONL")->required();
    c->add_option("--n", n, "Seed count (0: 10 per label)");
    c->add_option("--size-a", cfg.size_a, "Seed-based synthetic target |A|");
    c->add_option("--k", cfg.k, "Retrieved entries per round");
    c->add_option("--m", cfg.m, "Retrieved entries used as prompt context");
    c->add_option("--s", cfg.s, "Examples generated per round");
    c->add_option("--rounds", cfg.rounds, "Retrieval rounds R");
    c->add_option("--rng-seed", cfg.rng_seed, "Seed-selection seed");
    c->add_option("--min-text-len", cfg.min_text_len, "Minimum generated text length");
    c->add_option("--dedup", dedup, "Dedup key (exact|normalized)");
    c->add_option("--stratified", cfg.stratified, "Balance seeds across labels");
    c->add_option("--include-user", cfg.include_user, "Add the seed set to the output");
    c->add_option("--include-retrieved", cfg.include_retrieved, "Add context corpus entries to the output");
    c->add_option("--per-prompt", cfg.per_prompt, "Items requested per seed-based call");
    c->add_option("--max-seed-calls", cfg.max_seed_calls, "Seed-based call cap (0: 3x needed)");
    c->add_option("--embed-dim", dim, "Hash-embedder dimension");
    c->add_option("--embed-seed", embed_seed, "Hash-embedder seed");
    c->add_option("--mock", mock, "Directory of canned responses replacing the LLM");
    c->add_option("--endpoint", llm.endpoint, "Chat-completions URL");
    c->add_option("--model-name", llm.model_name, "LLM model name");
    c->add_option("--max-retries", llm.max_retries, "Retries per request");
    c->add_option("--temperature", llm.temperature, "Sampling temperature");
    c->add_option("--max-tokens", llm.max_tokens, "Maximum output tokens");
    c->add_option("--max-in-flight", llm.max_in_flight, "Concurrent requests");
    c->add_option("--timeout", timeout_s, "HTTP timeout in seconds");
    sub = c;
  }

  int run() {
    std::shared_ptr<Transport> transport;
    if (!mock.empty()) {
      transport = std::make_shared<MockTransport>(mock);
    } else {
      auto key = LLMClientConfig::api_key_from_env();
      if (!key)
        throw ConfigError(std::string(LLMClientConfig::kApiKeyEnv) +
                          " is not set; export it or pass --mock DIR for offline generation");
      transport = std::make_shared<HttpTransport>(llm.endpoint, *key, std::chrono::seconds(timeout_s));
    }
    LLMClient client(llm, transport);

    const auto s = load_schema(schema);
    const auto user = load_valid(data, s);
    cfg.dedup = parse_dedup_key(dedup);
    cfg.n = n ? n : 10 * s.labels.size();
    HashEmbedder embedder(dim, embed_seed);
    if (index.empty() && corpus.empty()) throw ConfigError("generate needs --index or --corpus");
    const auto idx = !index.empty() ? RetrievalIndex::load(index) : build_index(load_valid(corpus, s), embedder);

    auto res = run_pipeline(user, s, idx, cfg, client, embedder);
    save_dataset(res.x, out);

    std::ostringstream audit;
    for (const auto& a : client.audit())
      audit << ordered_json{{"request_index", a.request_index}, {"attempt", a.attempt}, {"status", a.status},
                            {"request", a.request}, {"response", a.response}}
                   .dump()
            << "\n";
    write_text(out + ".audit.jsonl", audit.str());

    auto rep = to_json(res.report);
    rep["transport"] = transport->describe();
    rep["output"] = out;
    Artifacts{out}.write(*sub, rep);
    for (const auto& w : res.report.warnings) std::cerr << "locus: warning: " << w << "\n";
    std::cout << "S=" << res.report.size_s << " A=" << res.report.size_a << " B=" << res.report.size_b
              << " X=" << res.report.size_x << " (dedup removed " << res.report.dedup_removals << ", "
              << res.report.llm_calls << " LLM calls) -> " << out << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct TrainCmd {
  std::string data, schema, out;
  ModelOpts model;
  TrainOpts train;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Fully fine-tune a model on a dataset");
    c->add_option("--data", data, "Training dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--out", out, "Model checkpoint")->required();
    model.add(c);
    train.add(c);
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    const auto x = load_valid(data, s);
    const auto mc = model_config_for(s, model.cfg);
    auto res = locus::train(init_model(mc, model.init_seed), x, train.cfg);
    res.model.save(out);
    const auto pc = count_params(res.model);
    ordered_json rep{{"model_config", to_json(mc)},
                     {"train_config", to_json(train.cfg)},
                     {"init_seed", model.init_seed},
                     {"history", to_json(res.history)},
                     {"params", {{"total", pc.total}, {"trainable", pc.trainable}}},
                     {"checkpoint_bytes", fs::file_size(out)},
                     {"output", out}};
    Artifacts{out}.write(*sub, rep);
    std::cout << "trained " << res.history.epochs.size() << " epoch(s), best epoch " << res.history.best_epoch
              << " dev " << res.history.best_metric << " (" << to_string(res.history.stop_reason) << ") -> " << out
              << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct TrainLoraCmd {
  std::string data, schema, base, base_out, out;
  ModelOpts model;
  TrainOpts train;
  LoraOpts lora;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train-lora", "Train low-rank adapters on a frozen base model");
    c->add_option("--data", data, "Training dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--base", base, "Base checkpoint (default: freshly initialized)");
    c->add_option("--base-out", base_out, "Where to write a freshly initialized base (default: <out>.base)");
    c->add_option("--out", out, "Adapter file")->required();
    model.add(c);
    train.add(c);
    lora.add(c);
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    const auto x = load_valid(data, s);
    Model b;
    std::string base_path = base;
    if (!base.empty()) {
      b = Model::load(base);
    } else {
      b = init_model(model_config_for(s, model.cfg), model.init_seed);
      base_path = base_out.empty() ? out + ".base" : base_out;
      b.save(base_path);
    }
    const auto lc = lora.resolved(b.config());
    auto res = train_adapters(wrap_lora(std::move(b), lc, lora.seed), x, train.cfg);
    save_adapters(res.model, out);
    const auto pc = count_params(res.model);
    const auto adapter_bytes = fs::file_size(out), base_bytes = fs::file_size(base_path);
    ordered_json rep{{"model_config", to_json(res.model.base().config())},
                     {"train_config", to_json(train.cfg)},
                     {"lora", to_json(lc)},
                     {"lora_seed", lora.seed},
                     {"base", base_path},
                     {"base_fingerprint", res.model.base().fingerprint()},
                     {"history", to_json(res.history)},
                     {"params", {{"total", pc.total}, {"trainable", pc.trainable}, {"trainable_ratio", pc.trainable_ratio}}},
                     {"adapter_bytes", adapter_bytes},
                     {"base_checkpoint_bytes", base_bytes},
                     {"byte_ratio", static_cast<double>(adapter_bytes) / static_cast<double>(base_bytes)},
                     {"output", out}};
    Artifacts{out}.write(*sub, rep);
    std::cout << "trained adapters r=" << lc.rank << " alpha=" << lc.alpha << " (" << pc.trainable << "/" << pc.total
              << " params) best epoch " << res.history.best_epoch << " dev " << res.history.best_metric << " -> "
              << out << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct MergeCmd {
  std::string base, adapters, out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("merge", "Fold adapters into the base weights");
    c->add_option("--base", base, "Base checkpoint")->required();
    c->add_option("--adapters", adapters, "Adapter file")->required();
    c->add_option("--out", out, "Merged checkpoint")->required();
    sub = c;
  }

  int run() {
    auto am = load_adapters(Model::load(base), adapters);
    const auto lc = am.lora_config();
    const auto merged = merge_adapters(am);
    merged.save(out);
    Artifacts{out}.write(*sub, {{"lora", to_json(lc)}, {"output", out}, {"checkpoint_bytes", fs::file_size(out)}});
    std::cout << "merged " << adapters << " into " << base << " -> " << out << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct DecomposeCmd {
  std::string base, trained, out;
  LoraOpts lora;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("decompose", "Compress a fine-tuned model into adapters by truncated SVD");
    c->add_option("--base", base, "Base checkpoint")->required();
    c->add_option("--trained", trained, "Fully fine-tuned checkpoint")->required();
    c->add_option("--out", out, "Adapter file")->required();
    lora.add(c, false);
    sub = c;
  }

  int run() {
    const auto b = Model::load(base);
    const auto t = Model::load(trained);
    const auto lc = lora.resolved(b.config());
    auto am = decompose_model(b, t, lc);
    save_adapters(am, out);
    ordered_json residual = ordered_json::object();
    for (const auto& ad : am.adapters()) {
      const auto w = weight_of(ad.target);
      const auto ba = matmul(ad.b, ad.a);
      DenseMatrix err(ba.rows, ba.cols);
      for (std::size_t i = 0; i < err.size(); ++i)
        err.values[i] = t.param(w).values[i] - b.param(w).values[i] - lc.scale() * ba.values[i];
      residual[std::string(to_string(ad.target))] = frobenius_norm(err);
    }
    const auto pc = count_params(am);
    Artifacts{out}.write(*sub, {{"lora", to_json(lc)},
                                {"residual_frobenius", residual},
                                {"params", {{"trainable", pc.trainable}, {"trainable_ratio", pc.trainable_ratio}}},
                                {"adapter_bytes", fs::file_size(out)},
                                {"output", out}});
    std::cout << "decomposed at r=" << lc.rank << " -> " << out << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct EvalCmd {
  std::string model, adapters, data, schema, out, name, pred;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Score a model on a labeled test set");
    c->add_option("--model", model, "Model checkpoint (the base when --adapters is given)")->required();
    c->add_option("--adapters", adapters, "Adapter file applied on top of --model");
    c->add_option("--data", data, "Test dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--out", out, "Metrics JSON")->required();
    c->add_option("--name", name, "Dataset name used by `locus report` (default: data file stem)");
    c->add_option("--pred", pred, "Write predictions JSONL here");
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    const auto gold = load_valid(data, s);
    auto m = Model::load(model);
    Dataset p;
    if (!adapters.empty()) {
      const auto am = load_adapters(std::move(m), adapters);
      p = predict_dataset(am.base(), gold, am.deltas());
    } else {
      p = predict_dataset(m, gold);
    }
    if (!pred.empty()) save_dataset(p, pred);
    const auto r = evaluate(p, gold);
    const auto ds = name.empty() ? fs::path(data).stem().string() : name;
    ordered_json metrics{{"dataset", ds}, {"metrics", to_json(r)}};
    write_text(out, metrics.dump(2) + "\n");
    Artifacts{out}.write(*sub, metrics);
    if (r.task == TaskKind::NER)
      std::cout << ds << ": P=" << fixed(r.precision, 4) << " R=" << fixed(r.recall, 4) << " F1=" << fixed(r.f1, 4)
                << "\n";
    else
      std::cout << ds << ": accuracy=" << fixed(r.accuracy, 4) << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct SweepCmd {
  std::string data, test, schema, out, axis = "dataset_size";
  std::string grid;
  SweepSpec spec;
  unsigned threads = 1;
  bool adapters = false;
  ModelOpts model;
  TrainOpts train;
  LoraOpts lora;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("sweep", "Ablate dataset size or adapter rank/alpha");
    c->add_option("--data", data, "Training pool JSONL")->required();
    c->add_option("--test", test, "Test dataset JSONL")->required();
    c->add_option("--schema", schema, "Schema JSON")->required();
    c->add_option("--out", out, "Per-cell rows (TSV)")->required();
    c->add_option("--axis", axis, "dataset_size or rank");
    c->add_option("--grid", grid, "Comma-separated axis values")->required();
    c->add_option("--repetitions", spec.repetitions, "Runs per grid value");
    c->add_option("--sweep-seed", spec.base_seed, "Base seed for per-cell seeds");
    c->add_option("--threads", threads, "Cells trained concurrently");
    c->add_option("--adapters", adapters, "Train adapters in dataset-size sweeps");
    model.add(c);
    train.add(c);
    lora.add(c, false);
    sub = c;
  }

  int run() {
    const auto s = load_schema(schema);
    spec.axis = parse_sweep_axis(axis);
    spec.grid = parse_grid(grid);
    const auto mc = model_config_for(s, model.cfg);
    SweepInputs in{load_valid(data, s), load_valid(test, s), mc, train.cfg, lora.resolved(mc), adapters};
    const auto res = run_sweep(spec, in, threads);
    const auto rows = sweep_rows_table(res), summary = sweep_summary_table(res);
    write_text(out, rows.render_tsv());
    write_text(out + ".summary.tsv", summary.render_tsv());
    std::cout << summary.render_text();
    ordered_json pts = ordered_json::array();
    for (const auto& p : res.points)
      pts.push_back({{"axis_value", p.axis_value}, {"runs", p.runs}, {"mean", p.mean}, {"stddev", p.stddev},
                     {"trainable_ratio", p.trainable_ratio}});
    std::size_t failed = 0;
    for (const auto& r : res.rows) failed += r.ok() ? 0 : 1;
    Artifacts{out}.write(*sub, {{"axis", to_string(spec.axis)},
                                {"metric", res.metric_name},
                                {"model_config", to_json(in.model)},
                                {"train_config", to_json(in.training)},
                                {"lora", to_json(in.lora)},
                                {"points", pts},
                                {"failed_cells", failed},
                                {"output", out}});
    for (const auto& r : res.rows)
      if (!r.ok())
        std::cerr << "locus: warning: cell " << r.axis_value << "/" << r.repetition << " failed: " << r.error << "\n";
    return 0;
  }

  CLI::App* sub = nullptr;
};

struct ReportCmd {
  std::vector<std::string> inputs;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("report", "Tabulate eval results, averaging runs of the same dataset");
    c->add_option("--input", inputs, "Metrics JSON from `locus eval` (repeatable or comma-separated)")->delimiter(',')->required();
    c->add_option("--out", out, "Rendered table (a .tsv copy is written alongside)")->required();
    sub = c;
  }

  int run() {
    std::vector<NamedResult> results;
    for (const auto& path : inputs) {
      json j;
      try {
        j = json::parse(file_bytes(path));
        results.push_back({j.at("dataset").get<std::string>(), eval_report_from_json(j.at("metrics"))});
      } catch (const json::exception& e) {
        throw FormatError(path + ": not a metrics file: " + e.what());
      }
    }
    const auto t = report_table(results);
    write_text(out, t.render_text());
    write_text(out + ".tsv", t.render_tsv());
    std::cout << t.render_text();
    Artifacts{out}.write(*sub, {{"inputs", inputs}, {"rows", t.rows.size()}, {"output", out}});
    return 0;
  }

  CLI::App* sub = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locus: few-shot data expansion and compact model specialization"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1, 1);

  ValidateCmd validate;
  IndexCmd index;
  GenerateCmd generate;
  TrainCmd train;
  TrainLoraCmd train_lora;
  MergeCmd merge;
  DecomposeCmd decompose;
  EvalCmd eval;
  SweepCmd sweep;
  ReportCmd report;
  validate.add(app);
  index.add(app);
  generate.add(app);
  train.add(app);
  train_lora.add(app);
  merge.add(app);
  decompose.add(app);
  eval.add(app);
  sweep.add(app);
  report.add(app);

  std::vector<std::string> names;
  for (auto* s : app.get_subcommands({})) {
    names.push_back(s->get_name());
    s->add_option("--config", "Flat key = value file with flag defaults");
  }
  report.sub->get_option("--input")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  try {
    auto args = expand_config(argc, argv, names);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "locus: error: " << e.kind() << ": " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (validate.sub->parsed()) return validate.run();
    if (index.sub->parsed()) return index.run();
    if (generate.sub->parsed()) return generate.run();
    if (train.sub->parsed()) return train.run();
    if (train_lora.sub->parsed()) return train_lora.run();
    if (merge.sub->parsed()) return merge.run();
    if (decompose.sub->parsed()) return decompose.run();
    if (eval.sub->parsed()) return eval.run();
    if (sweep.sub->parsed()) return sweep.run();
    if (report.sub->parsed()) return report.run();
  } catch (const Error& e) {
    std::cerr << "locus: error: " << e.kind() << ": " << e.what() << "\n";
    return kExitFatal;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "locus: error: io: " << e.what() << "\n";
    return kExitFatal;
  } catch (const std::exception& e) {
    std::cerr << "locus: error: internal: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitUsage;
}
