// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "locus/binary_io.hpp"
#include "locus/corpus.hpp"
#include "locus/error.hpp"
#include "locus/metrics.hpp"
#include "locus/rng.hpp"

namespace locus {

// ---------------------------------------------------------------------------
// Dense linear algebra

/// Row-major matrix. Vectors are stored as n x 1.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::size_t size() const { return values.size(); }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const DenseMatrix&) const = default;
};

/// y += M x
inline void gemv_add(const DenseMatrix& m, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.values.data() + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += w[c] * x[c];
    y[r] += acc;
  }
}

/// y += M^T x
inline void gemv_t_add(const DenseMatrix& m, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.values.data() + r * m.cols;
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += w[c] * xr;
  }
}

/// M += scale * u v^T
inline void ger_add(DenseMatrix& m, double scale, std::span<const double> u, std::span<const double> v) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double ur = scale * u[r];
    if (ur == 0.0) continue;
    double* w = m.values.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) w[c] += ur * v[c];
  }
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows) throw NumericError("matmul shape mismatch");
  DenseMatrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline double frobenius_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double v : m.values) s += v * v;
  return std::sqrt(s);
}

/// Parameters live on the float32 grid so checkpoints round-trip bitwise.
inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void round_to_f32(DenseMatrix& m) {
  for (auto& v : m.values) v = round_to_f32(v);
}

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
  std::size_t vocab_buckets = 16384;
  std::size_t embed_dim = 32;
  std::size_t window = 2;
  std::size_t hidden_dim = 128;
  std::size_t num_labels = 3;
  TaskKind task = TaskKind::NER;

  std::size_t feature_dim() const { return (2 * window + 1) * embed_dim; }

  void check() const {
    if (vocab_buckets < 1 || embed_dim < 1 || hidden_dim < 1 || num_labels < 1)
      throw ConfigError("model dimensions must be >= 1");
    if (task == TaskKind::NER && (num_labels < 3 || num_labels % 2 == 0))
      throw ConfigError("NER models need 2*|labels|+1 BIO tags (>= 3), got " + std::to_string(num_labels));
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Copy of `base` with num_labels and task taken from `schema`.
inline ModelConfig model_config_for(const LabelSchema& schema, ModelConfig base = {}) {
  base.task = schema.task;
  base.num_labels = schema.task == TaskKind::NER ? 2 * schema.labels.size() + 1 : schema.labels.size();
  base.check();
  return base;
}

inline ordered_json to_json(const ModelConfig& c) {
  return ordered_json{{"task", to_string(c.task)},   {"vocab_buckets", c.vocab_buckets}, {"embed_dim", c.embed_dim},
                      {"window", c.window},          {"hidden_dim", c.hidden_dim},       {"num_labels", c.num_labels}};
}

// ---------------------------------------------------------------------------
// Model

enum class ParamId : std::size_t { Embedding = 0, HiddenW = 1, HiddenB = 2, OutputW = 3, OutputB = 4 };
inline constexpr std::size_t kNumParams = 5;
inline constexpr std::array<const char*, kNumParams> kParamNames = {"embedding", "hidden.weight", "hidden.bias",
                                                                    "output.weight", "output.bias"};

/// Hashed token embedding -> windowed concatenation -> tanh hidden layer ->
/// output layer; per-token logits for NER, mean-pooled hidden state for TC.
class Model {
 public:
  static constexpr std::string_view kMagic = "LOCUSMDL";
  static constexpr std::uint32_t kVersion = 1;

  Model() = default;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.check();
    params_[0] = DenseMatrix(cfg_.vocab_buckets, cfg_.embed_dim);
    params_[1] = DenseMatrix(cfg_.hidden_dim, cfg_.feature_dim());
    params_[2] = DenseMatrix(cfg_.hidden_dim, 1);
    params_[3] = DenseMatrix(cfg_.num_labels, cfg_.hidden_dim);
    params_[4] = DenseMatrix(cfg_.num_labels, 1);
  }

  const ModelConfig& config() const { return cfg_; }

  DenseMatrix& param(ParamId id) { return params_[static_cast<std::size_t>(id)]; }
  const DenseMatrix& param(ParamId id) const { return params_[static_cast<std::size_t>(id)]; }
  std::array<DenseMatrix, kNumParams>& params() { return params_; }
  const std::array<DenseMatrix, kNumParams>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void save(std::ostream& os) const {
    binio::write_magic(os, kMagic);
    binio::write_uint<std::uint32_t>(os, kVersion);
    binio::write_uint<std::uint8_t>(os, cfg_.task == TaskKind::NER ? 0 : 1);
    for (auto v : {cfg_.vocab_buckets, cfg_.embed_dim, cfg_.window, cfg_.hidden_dim, cfg_.num_labels})
      binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(v));
    for (const auto& p : params_)
      for (double v : p.values) binio::write_f32(os, static_cast<float>(v));
  }

  static Model load(std::istream& is) {
    binio::expect_magic(is, kMagic, "model checkpoint");
    const auto version = binio::read_uint<std::uint32_t>(is);
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.task = binio::read_uint<std::uint8_t>(is) == 0 ? TaskKind::NER : TaskKind::TC;
    cfg.vocab_buckets = binio::read_uint<std::uint32_t>(is);
    cfg.embed_dim = binio::read_uint<std::uint32_t>(is);
    cfg.window = binio::read_uint<std::uint32_t>(is);
    cfg.hidden_dim = binio::read_uint<std::uint32_t>(is);
    cfg.num_labels = binio::read_uint<std::uint32_t>(is);
    Model m(cfg);
    for (auto& p : m.params_)
      for (auto& v : p.values) v = binio::read_f32(is);
    return m;
  }

  std::string checkpoint_bytes() const {
    std::ostringstream os(std::ios::binary);
    save(os);
    return os.str();
  }

  /// Content hash of the serialized checkpoint.
  std::uint64_t fingerprint() const { return fnv1a64(checkpoint_bytes()); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save(out);
    if (!out) throw IoError("write failure on " + path);
  }

  static Model load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model checkpoint " + path);
    return load(in);
  }

  bool operator==(const Model&) const = default;

 private:
  ModelConfig cfg_;
  std::array<DenseMatrix, kNumParams> params_;
};

/// Closed-form parameter count of the architecture.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  return c.vocab_buckets * c.embed_dim + c.hidden_dim * c.feature_dim() + c.hidden_dim +
         c.num_labels * c.hidden_dim + c.num_labels;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline Model init_model(const ModelConfig& cfg, std::uint64_t rng_seed) {
  Model m(cfg);
  Rng rng(mix_seed({rng_seed, 0x1417}));
  auto fill = [&](DenseMatrix& w, std::size_t fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w.values) v = round_to_f32(uniform(rng, -a, a));
  };
  fill(m.param(ParamId::Embedding), cfg.embed_dim);
  fill(m.param(ParamId::HiddenW), cfg.feature_dim());
  fill(m.param(ParamId::OutputW), cfg.hidden_dim);
  return m;
}

// ---------------------------------------------------------------------------
// Inputs

using Sequence = std::vector<std::uint32_t>;

inline std::uint32_t hash_token(std::string_view token, std::size_t buckets) {
  return static_cast<std::uint32_t>(fnv1a64(utf8::lower(token)) % buckets);
}

inline Sequence encode_tokens(const std::vector<Token>& tokens, std::size_t buckets) {
  Sequence s;
  s.reserve(tokens.size());
  for (const auto& t : tokens) s.push_back(hash_token(t.text, buckets));
  return s;
}

/// One training instance: token ids plus per-token tags (NER) or a class id (TC).
struct EncodedExample {
  Sequence ids;
  std::vector<std::uint32_t> tags;
  std::uint32_t label = 0;
};

struct EncodedData {
  std::vector<EncodedExample> examples;
  std::vector<std::size_t> source_index;  // position in the input dataset
  std::size_t unalignable = 0;
  std::size_t empty = 0;
};

/// Converts a dataset to model inputs. Unalignable NER examples and TC
/// examples without tokens are counted and skipped.
inline EncodedData encode_dataset(const Dataset& d, const ModelConfig& cfg) {
  EncodedData out;
  const TagSet tags(d.schema);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& ex = d.examples[i];
    const auto tokens = tokenize(ex.text);
    EncodedExample e;
    e.ids = encode_tokens(tokens, cfg.vocab_buckets);
    if (d.schema.task == TaskKind::NER) {
      auto bio = to_bio(ex, tokens);
      if (!bio) {
        ++out.unalignable;
        continue;
      }
      for (const auto& t : *bio) e.tags.push_back(static_cast<std::uint32_t>(*tags.id(t)));
    } else {
      if (tokens.empty()) {
        ++out.empty;
        continue;
      }
      auto idx = d.schema.index_of(ex.label);
      if (!idx) throw DataError("unknown label '" + ex.label + "'");
      e.label = static_cast<std::uint32_t>(*idx);
    }
    out.examples.push_back(std::move(e));
    out.source_index.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Read-only view of a low-rank update (scale * B A) applied alongside a base
/// linear layer. A is r x d_in, B is d_out x r.
struct LowRankView {
  const DenseMatrix* a = nullptr;
  const DenseMatrix* b = nullptr;
  double scale = 1.0;
};

/// Optional low-rank terms for the two linear layers.
struct LinearDeltas {
  std::optional<LowRankView> hidden;
  std::optional<LowRankView> output;
};

namespace detail {

inline void linear_forward(const DenseMatrix& w, const DenseMatrix& bias, const std::optional<LowRankView>& d,
                           std::span<const double> x, std::span<double> y, std::vector<double>* ax_out = nullptr) {
  for (std::size_t r = 0; r < w.rows; ++r) y[r] = bias.values[r];
  gemv_add(w, x, y);
  if (d) {
    std::vector<double> ax(d->a->rows, 0.0);
    gemv_add(*d->a, x, ax);
    std::vector<double> bax(d->b->rows, 0.0);
    gemv_add(*d->b, ax, bax);
    for (std::size_t r = 0; r < y.size(); ++r) y[r] += d->scale * bax[r];
    if (ax_out) *ax_out = std::move(ax);
  }
}

inline void gather_features(const DenseMatrix& emb, const Sequence& ids, std::size_t t, std::size_t window,
                            std::span<double> x) {
  const std::size_t e = emb.cols;
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t o = 0; o <= 2 * window; ++o) {
    const auto pos = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(window);
    if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(ids.size())) continue;
    auto row = emb.row(ids[static_cast<std::size_t>(pos)]);
    std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(o * e));
  }
}

/// Everything the backward pass needs for one sequence.
struct SequenceTrace {
  std::vector<std::vector<double>> x;    // features per token
  std::vector<std::vector<double>> ax1;  // A1 x per token (hidden adapter)
  std::vector<std::vector<double>> h;    // hidden activations per token
  std::vector<double> pooled;            // TC
  std::vector<double> ax2_pooled;        // TC: A2 pooled
  std::vector<std::vector<double>> ax2;  // NER: A2 h per token
  DenseMatrix logits;                    // tokens x labels (NER) or 1 x labels (TC)
};

inline SequenceTrace trace_sequence(const Model& m, const Sequence& ids, const LinearDeltas& d) {
  const auto& cfg = m.config();
  SequenceTrace tr;
  const std::size_t T = ids.size();
  tr.x.resize(T);
  tr.h.resize(T);
  if (d.hidden) tr.ax1.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    tr.x[t].assign(cfg.feature_dim(), 0.0);
    gather_features(m.param(ParamId::Embedding), ids, t, cfg.window, tr.x[t]);
    tr.h[t].assign(cfg.hidden_dim, 0.0);
    linear_forward(m.param(ParamId::HiddenW), m.param(ParamId::HiddenB), d.hidden, tr.x[t], tr.h[t],
                   d.hidden ? &tr.ax1[t] : nullptr);
    for (auto& v : tr.h[t]) v = std::tanh(v);
  }
  const auto& w2 = m.param(ParamId::OutputW);
  const auto& b2 = m.param(ParamId::OutputB);
  if (cfg.task == TaskKind::NER) {
    tr.logits = DenseMatrix(T, cfg.num_labels);
    if (d.output) tr.ax2.resize(T);
    for (std::size_t t = 0; t < T; ++t)
      linear_forward(w2, b2, d.output, tr.h[t], tr.logits.row(t), d.output ? &tr.ax2[t] : nullptr);
  } else {
    if (T == 0) throw DataError("cannot classify an empty sequence");
    tr.pooled.assign(cfg.hidden_dim, 0.0);
    for (const auto& h : tr.h)
      for (std::size_t j = 0; j < h.size(); ++j) tr.pooled[j] += h[j];
    for (auto& v : tr.pooled) v /= static_cast<double>(T);
    tr.logits = DenseMatrix(1, cfg.num_labels);
    linear_forward(w2, b2, d.output, tr.pooled, tr.logits.row(0), d.output ? &tr.ax2_pooled : nullptr);
  }
  return tr;
}

}  // namespace detail

/// Logits for one sequence: tokens x labels (NER) or 1 x labels (TC).
inline DenseMatrix forward(const Model& m, const Sequence& ids, const LinearDeltas& deltas = {}) {
  return detail::trace_sequence(m, ids, deltas).logits;
}

inline std::vector<DenseMatrix> forward(const Model& m, const std::vector<Sequence>& batch,
                                        const LinearDeltas& deltas = {}) {
  std::vector<DenseMatrix> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(forward(m, s, deltas));
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) z += (v = std::exp(v - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Gradient of one low-rank pair.
struct LowRankGrad {
  DenseMatrix a;
  DenseMatrix b;
};

/// Gradients aligned to the model parameters. The embedding gradient is kept
/// as sparse rows because only the looked-up buckets receive signal.
struct Gradients {
  std::unordered_map<std::uint32_t, std::vector<double>> embedding_rows;
  DenseMatrix hidden_w, hidden_b, output_w, output_b;
  std::optional<LowRankGrad> hidden_delta, output_delta;
  bool has_base = false;

  DenseMatrix dense_embedding(const ModelConfig& cfg) const {
    DenseMatrix e(cfg.vocab_buckets, cfg.embed_dim);
    for (const auto& [row, g] : embedding_rows) std::copy(g.begin(), g.end(), e.row(row).begin());
    return e;
  }

  /// Dense view of the gradient for parameter `id`.
  DenseMatrix dense(ParamId id, const ModelConfig& cfg) const {
    switch (id) {
      case ParamId::Embedding: return dense_embedding(cfg);
      case ParamId::HiddenW: return hidden_w;
      case ParamId::HiddenB: return hidden_b;
      case ParamId::OutputW: return output_w;
      case ParamId::OutputB: return output_b;
    }
    return {};
  }
};

enum class GradTarget { Base, Deltas };

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Mean cross-entropy over tokens (NER) or examples (TC) with gradients for
/// either the base parameters or the low-rank terms.
inline LossAndGrads loss_and_grads(const Model& m, std::span<const EncodedExample> batch,
                                   const LinearDeltas& deltas = {}, GradTarget target = GradTarget::Base) {
  const auto& cfg = m.config();
  const bool ner = cfg.task == TaskKind::NER;
  LossAndGrads out;
  auto& g = out.grads;
  const bool base = target == GradTarget::Base;
  g.has_base = base;
  if (base) {
    g.hidden_w = DenseMatrix(cfg.hidden_dim, cfg.feature_dim());
    g.hidden_b = DenseMatrix(cfg.hidden_dim, 1);
    g.output_w = DenseMatrix(cfg.num_labels, cfg.hidden_dim);
    g.output_b = DenseMatrix(cfg.num_labels, 1);
  } else {
    if (deltas.hidden) g.hidden_delta = LowRankGrad{DenseMatrix(deltas.hidden->a->rows, deltas.hidden->a->cols),
                                                   DenseMatrix(deltas.hidden->b->rows, deltas.hidden->b->cols)};
    if (deltas.output) g.output_delta = LowRankGrad{DenseMatrix(deltas.output->a->rows, deltas.output->a->cols),
                                                   DenseMatrix(deltas.output->b->rows, deltas.output->b->cols)};
  }

  std::size_t count = 0;
  for (const auto& ex : batch) {
    if (ner) {
      if (ex.tags.size() != ex.ids.size()) throw DataError("tag count does not match token count");
      count += ex.ids.size();
      for (auto t : ex.tags)
        if (t >= cfg.num_labels) throw DataError("gold tag index " + std::to_string(t) + " out of range");
    } else {
      ++count;
      if (ex.label >= cfg.num_labels) throw DataError("gold label index " + std::to_string(ex.label) + " out of range");
    }
  }
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);

  const auto& w1 = m.param(ParamId::HiddenW);
  const auto& w2 = m.param(ParamId::OutputW);
  const std::size_t H = cfg.hidden_dim, D = cfg.feature_dim(), E = cfg.embed_dim;

  // Backprop through the output layer for one (input h, dlogit) pair; returns dh.
  auto output_backward = [&](std::span<const double> h, std::span<const double> dlogit,
                             const std::vector<double>* ax2) {
    std::vector<double> dh(H, 0.0);
    gemv_t_add(w2, dlogit, dh);
    if (base) {
      ger_add(g.output_w, 1.0, dlogit, h);
      for (std::size_t k = 0; k < cfg.num_labels; ++k) g.output_b.values[k] += dlogit[k];
    }
    if (deltas.output) {
      const auto& d = *deltas.output;
      std::vector<double> btd(d.b->cols, 0.0);
      gemv_t_add(*d.b, dlogit, btd);
      std::vector<double> tmp(H, 0.0);
      gemv_t_add(*d.a, btd, tmp);
      for (std::size_t j = 0; j < H; ++j) dh[j] += d.scale * tmp[j];
      if (!base) {
        ger_add(g.output_delta->b, d.scale, dlogit, *ax2);
        ger_add(g.output_delta->a, d.scale, btd, h);
      }
    }
    return dh;
  };

  auto hidden_backward = [&](const detail::SequenceTrace& tr, std::size_t t, const Sequence& ids,
                             std::span<const double> dh) {
    std::vector<double> dpre(H);
    for (std::size_t j = 0; j < H; ++j) dpre[j] = dh[j] * (1.0 - tr.h[t][j] * tr.h[t][j]);
    std::vector<double> dx;
    if (base) {
      ger_add(g.hidden_w, 1.0, dpre, tr.x[t]);
      for (std::size_t j = 0; j < H; ++j) g.hidden_b.values[j] += dpre[j];
      dx.assign(D, 0.0);
      gemv_t_add(w1, dpre, dx);
    }
    if (deltas.hidden) {
      const auto& d = *deltas.hidden;
      std::vector<double> btd(d.b->cols, 0.0);
      gemv_t_add(*d.b, dpre, btd);
      if (base) {
        std::vector<double> tmp(D, 0.0);
        gemv_t_add(*d.a, btd, tmp);
        for (std::size_t c = 0; c < D; ++c) dx[c] += d.scale * tmp[c];
      } else {
        ger_add(g.hidden_delta->b, d.scale, dpre, tr.ax1[t]);
        ger_add(g.hidden_delta->a, d.scale, btd, tr.x[t]);
      }
    }
    if (!base) return;
    for (std::size_t o = 0; o <= 2 * cfg.window; ++o) {
      const auto pos =
          static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(cfg.window);
      if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(ids.size())) continue;
      auto& row = g.embedding_rows[ids[static_cast<std::size_t>(pos)]];
      if (row.empty()) row.assign(E, 0.0);
      for (std::size_t c = 0; c < E; ++c) row[c] += dx[o * E + c];
    }
  };

  for (const auto& ex : batch) {
    if (ex.ids.empty()) continue;
    const auto tr = detail::trace_sequence(m, ex.ids, deltas);
    if (ner) {
      for (std::size_t t = 0; t < ex.ids.size(); ++t) {
        auto p = softmax(tr.logits.row(t));
        out.loss -= std::log(std::max(p[ex.tags[t]], 1e-300)) * inv;
        p[ex.tags[t]] -= 1.0;
        for (auto& v : p) v *= inv;
        auto dh = output_backward(tr.h[t], p, deltas.output ? &tr.ax2[t] : nullptr);
        hidden_backward(tr, t, ex.ids, dh);
      }
    } else {
      auto p = softmax(tr.logits.row(0));
      out.loss -= std::log(std::max(p[ex.label], 1e-300)) * inv;
      p[ex.label] -= 1.0;
      for (auto& v : p) v *= inv;
      auto dpooled = output_backward(tr.pooled, p, deltas.output ? &tr.ax2_pooled : nullptr);
      const double invT = 1.0 / static_cast<double>(ex.ids.size());
      for (auto& v : dpooled) v *= invT;
      for (std::size_t t = 0; t < ex.ids.size(); ++t) hidden_backward(tr, t, ex.ids, dpooled);
    }
  }
  return out;
}

/// Plain SGD step on the base parameters.
inline void apply_sgd(Model& m, const Gradients& g, double lr) {
  auto step = [lr](DenseMatrix& w, const DenseMatrix& dw) {
    for (std::size_t i = 0; i < w.size(); ++i) w.values[i] = round_to_f32(w.values[i] - lr * dw.values[i]);
  };
  step(m.param(ParamId::HiddenW), g.hidden_w);
  step(m.param(ParamId::HiddenB), g.hidden_b);
  step(m.param(ParamId::OutputW), g.output_w);
  step(m.param(ParamId::OutputB), g.output_b);
  auto& emb = m.param(ParamId::Embedding);
  for (const auto& [row, grad] : g.embedding_rows) {
    auto r = emb.row(row);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] = round_to_f32(r[c] - lr * grad[c]);
  }
}

// ---------------------------------------------------------------------------
// Prediction

inline LabeledExample predict(const Model& m, std::string_view text, const LabelSchema& schema,
                              const LinearDeltas& deltas = {}) {
  const auto& cfg = m.config();
  LabeledExample ex;
  ex.text = std::string(text);
  const auto tokens = tokenize(text);
  const auto ids = encode_tokens(tokens, cfg.vocab_buckets);
  if (cfg.task == TaskKind::NER) {
    if (cfg.num_labels != 2 * schema.labels.size() + 1) throw ConfigError("model does not match schema");
    const TagSet tags(schema);
    const auto logits = forward(m, ids, deltas);
    std::vector<std::string> names;
    for (std::size_t t = 0; t < ids.size(); ++t) names.push_back(tags.name(argmax(logits.row(t))));
    ex.entities = from_bio(names, tokens, text);
  } else {
    if (cfg.num_labels != schema.labels.size()) throw ConfigError("model does not match schema");
    if (ids.empty()) {
      ex.label = schema.labels[argmax(m.param(ParamId::OutputB).values)];
    } else {
      const auto logits = forward(m, ids, deltas);
      ex.label = schema.labels[argmax(logits.row(0))];
    }
  }
  return ex;
}

inline Dataset predict_dataset(const Model& m, const Dataset& gold, const LinearDeltas& deltas = {}) {
  Dataset out{gold.schema, {}};
  out.examples.reserve(gold.size());
  for (const auto& ex : gold.examples) out.examples.push_back(predict(m, ex.text, gold.schema, deltas));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 2e-5;
  std::size_t epochs = 40;
  std::size_t patience = 5;
  std::size_t batch_size = 16;
  double dev_fraction = 0.1;
  std::uint64_t rng_seed = 17;
  std::string optimizer = "sgd";

  void check() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(dev_fraction > 0 && dev_fraction < 1)) throw ConfigError("dev_fraction must be in (0, 1)");
    if (optimizer != "sgd") throw ConfigError("unsupported optimizer '" + optimizer + "' (only sgd)");
  }
};

inline ordered_json to_json(const TrainConfig& c) {
  return ordered_json{{"learning_rate", c.learning_rate}, {"epochs", c.epochs},         {"patience", c.patience},
                      {"batch_size", c.batch_size},       {"dev_fraction", c.dev_fraction}, {"rng_seed", c.rng_seed},
                      {"optimizer", c.optimizer}};
}

enum class StopReason { EarlyStop, MaxEpochs };

inline std::string_view to_string(StopReason r) { return r == StopReason::EarlyStop ? "early_stop" : "max_epochs"; }

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_metric = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_metric = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;
  std::size_t train_examples = 0;
  std::size_t dev_examples = 0;
  std::size_t excluded_examples = 0;

  bool operator==(const TrainHistory&) const = default;
};

inline ordered_json to_json(const TrainHistory& h) {
  ordered_json j;
  j["epochs"] = ordered_json::array();
  for (const auto& e : h.epochs)
    j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
  j["best_epoch"] = h.best_epoch;
  j["best_metric"] = h.best_metric;
  j["stop_reason"] = to_string(h.stop_reason);
  j["train_examples"] = h.train_examples;
  j["dev_examples"] = h.dev_examples;
  j["excluded_examples"] = h.excluded_examples;
  return j;
}

/// Scores dev predictions against dev gold; higher is better.
using DevMetric = std::function<double(const Dataset& predicted, const Dataset& gold)>;

inline DevMetric default_dev_metric() {
  return [](const Dataset& pred, const Dataset& gold) { return evaluate(pred, gold).primary(); };
}

/// Deterministic train/dev split by seeded shuffle. Single-example sets have
/// no dev part; the caller evaluates on the training data instead.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};

inline Split split_train_dev(std::size_t n, double dev_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed({seed, 0xde5}));
  shuffle(std::span(idx), rng);
  std::size_t dev = 0;
  if (n >= 2)
    dev = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(n))), 1,
                                  n - 1);
  Split s;
  s.dev.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(dev));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(dev), idx.end());
  std::sort(s.dev.begin(), s.dev.end());
  return s;
}

/// What the shared loop needs from a trainable object.
template <typename L>
concept Learner = requires(L& l, const L& cl, std::span<const EncodedExample> batch, double lr, const Dataset& d,
                           typename L::Snapshot snap) {
  { cl.model_config() } -> std::convertible_to<const ModelConfig&>;
  { l.step(batch, lr) } -> std::convertible_to<double>;
  { cl.predict_all(d) } -> std::convertible_to<Dataset>;
  { cl.snapshot() } -> std::convertible_to<typename L::Snapshot>;
  l.restore(snap);
};

/// Mini-batch SGD with per-epoch dev evaluation and patience-based early
/// stopping. Restores the best-epoch state before returning.
template <Learner L>
TrainHistory train_loop(L& learner, const Dataset& data, const TrainConfig& tc, const DevMetric& metric) {
  tc.check();
  if (data.empty()) throw DataError("training set is empty");
  TrainHistory hist;
  if (tc.epochs == 0) return hist;

  const auto enc = encode_dataset(data, learner.model_config());
  hist.excluded_examples = enc.unalignable + enc.empty;
  if (enc.examples.empty())
    throw DataError("no trainable examples: all " + std::to_string(data.size()) + " are unalignable or empty");

  const auto split = split_train_dev(enc.examples.size(), tc.dev_fraction, tc.rng_seed);
  std::vector<std::size_t> train_idx = split.train;
  Dataset dev_gold{data.schema, {}};
  for (auto i : (split.dev.empty() ? split.train : split.dev))
    dev_gold.examples.push_back(data.examples[enc.source_index[i]]);
  hist.train_examples = train_idx.size();
  hist.dev_examples = split.dev.size();

  Rng rng(mix_seed({tc.rng_seed, 0xe90c}));
  auto best = learner.snapshot();
  std::size_t since_best = 0;
  std::vector<EncodedExample> batch;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle(std::span(train_idx), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += tc.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + tc.batch_size, train_idx.size()); ++i)
        batch.push_back(enc.examples[train_idx[i]]);
      loss_sum += learner.step(batch, tc.learning_rate);
      ++batches;
    }
    const double dev = metric(learner.predict_all(dev_gold), dev_gold);
    hist.epochs.push_back({epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, dev});
    if (hist.best_epoch == 0 || dev > hist.best_metric) {
      hist.best_epoch = epoch;
      hist.best_metric = dev;
      best = learner.snapshot();
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      hist.stop_reason = StopReason::EarlyStop;
      break;
    }
  }
  learner.restore(best);
  return hist;
}

/// Full-weight learner: every base parameter is trainable.
class FullLearner {
 public:
  using Snapshot = Model;

  explicit FullLearner(Model& m) : m_(m) {}

  const ModelConfig& model_config() const { return m_.config(); }

  double step(std::span<const EncodedExample> batch, double lr) {
    auto lg = loss_and_grads(m_, batch);
    apply_sgd(m_, lg.grads, lr);
    return lg.loss;
  }

  Dataset predict_all(const Dataset& gold) const { return predict_dataset(m_, gold); }
  Model snapshot() const { return m_; }
  void restore(const Model& s) { m_ = s; }

 private:
  Model& m_;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

inline TrainResult train(Model model, const Dataset& x, const TrainConfig& tc, DevMetric metric = default_dev_metric()) {
  FullLearner learner(model);
  auto hist = train_loop(learner, x, tc, metric);
  return {std::move(model), std::move(hist)};
}

}  // namespace locus
