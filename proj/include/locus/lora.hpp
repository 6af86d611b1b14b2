// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "locus/binary_io.hpp"
#include "locus/error.hpp"
#include "locus/model.hpp"
#include "locus/svd.hpp"

namespace locus {

/// Linear layers that can carry an adapter.
enum class LinearTarget : std::uint8_t { Hidden = 0, Output = 1 };

inline std::string_view to_string(LinearTarget t) { return t == LinearTarget::Hidden ? "hidden" : "output"; }

inline LinearTarget parse_linear_target(std::string_view s) {
  if (s == "hidden") return LinearTarget::Hidden;
  if (s == "output") return LinearTarget::Output;
  throw ConfigError("unknown adapter target '" + std::string(s) + "' (expected hidden or output)");
}

inline ParamId weight_of(LinearTarget t) { return t == LinearTarget::Hidden ? ParamId::HiddenW : ParamId::OutputW; }

struct LoRAConfig {
  std::size_t rank = 32;
  double alpha = 32.0;
  std::vector<LinearTarget> targets = {LinearTarget::Hidden, LinearTarget::Output};
  double init_scale = 1.0;  // A ~ U(-init_scale / sqrt(d_in), init_scale / sqrt(d_in))

  double scale() const { return alpha / static_cast<double>(rank); }

  void check() const {
    if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
    if (!(alpha > 0)) throw ConfigError("LoRA alpha must be > 0");
    if (targets.empty()) throw ConfigError("LoRA needs at least one target matrix");
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t j = i + 1; j < targets.size(); ++j)
        if (targets[i] == targets[j]) throw ConfigError("duplicate LoRA target");
  }

  bool operator==(const LoRAConfig&) const = default;
};

inline ordered_json to_json(const LoRAConfig& c) {
  ordered_json t = ordered_json::array();
  for (auto x : c.targets) t.push_back(to_string(x));
  return ordered_json{{"rank", c.rank}, {"alpha", c.alpha}, {"targets", t}, {"init_scale", c.init_scale}};
}

/// Low-rank factors for one d_out x d_in weight: A is r x d_in, B is d_out x r.
struct AdapterPair {
  LinearTarget target = LinearTarget::Hidden;
  DenseMatrix a;
  DenseMatrix b;

  bool operator==(const AdapterPair&) const = default;
};

/// Frozen base model plus one adapter pair per target. Merging consumes the
/// adapters.
class AdaptedModel {
 public:
  AdaptedModel(Model base, std::vector<AdapterPair> adapters, LoRAConfig cfg)
      : base_(std::move(base)), adapters_(std::move(adapters)), cfg_(std::move(cfg)) {
    cfg_.check();
    for (const auto& ad : adapters_) {
      const auto& w = base_.param(weight_of(ad.target));
      if (ad.a.rows != cfg_.rank || ad.a.cols != w.cols || ad.b.rows != w.rows || ad.b.cols != cfg_.rank)
        throw ConfigError("adapter shape does not match target '" + std::string(to_string(ad.target)) + "'");
    }
  }

  const Model& base() const { return base_; }
  const LoRAConfig& lora_config() const { return cfg_; }
  const std::vector<AdapterPair>& adapters() const { return adapters_; }
  std::vector<AdapterPair>& adapters() { return adapters_; }
  bool consumed() const { return consumed_; }

  const AdapterPair* adapter(LinearTarget t) const {
    for (const auto& a : adapters_)
      if (a.target == t) return &a;
    return nullptr;
  }

  LinearDeltas deltas() const {
    LinearDeltas d;
    for (const auto& ad : adapters_) {
      LowRankView view{&ad.a, &ad.b, cfg_.scale()};
      (ad.target == LinearTarget::Hidden ? d.hidden : d.output) = view;
    }
    return d;
  }

  void mark_consumed() {
    consumed_ = true;
    adapters_.clear();
  }

 private:
  Model base_;
  std::vector<AdapterPair> adapters_;
  LoRAConfig cfg_;
  bool consumed_ = false;
};

inline void check_rank(const Model& m, const LoRAConfig& cfg) {
  for (auto t : cfg.targets) {
    const auto& w = m.param(weight_of(t));
    const auto limit = std::min(w.rows, w.cols);
    if (cfg.rank > limit)
      throw ConfigError("LoRA rank " + std::to_string(cfg.rank) + " exceeds min dimension " + std::to_string(limit) +
                        " of target '" + std::string(to_string(t)) + "' (" + std::to_string(w.rows) + "x" +
                        std::to_string(w.cols) + ")");
  }
}

/// A from a seeded zero-mean uniform, B = 0: the adapted model starts out
/// identical to the base.
inline AdaptedModel wrap_lora(Model model, const LoRAConfig& cfg, std::uint64_t rng_seed) {
  cfg.check();
  check_rank(model, cfg);
  Rng rng(mix_seed({rng_seed, 0x10ea}));
  std::vector<AdapterPair> adapters;
  for (auto t : cfg.targets) {
    const auto& w = model.param(weight_of(t));
    AdapterPair ap{t, DenseMatrix(cfg.rank, w.cols), DenseMatrix(w.rows, cfg.rank)};
    const double bound = cfg.init_scale / std::sqrt(static_cast<double>(w.cols));
    for (auto& v : ap.a.values) v = round_to_f32(uniform(rng, -bound, bound));
    adapters.push_back(std::move(ap));
  }
  return AdaptedModel(std::move(model), std::move(adapters), cfg);
}

/// Forward with W x + (alpha / r) B (A x) per target; the merged matrix is
/// never formed.
inline DenseMatrix adapted_forward(const AdaptedModel& am, const Sequence& ids) {
  if (am.consumed()) throw ConfigError("adapters were merged and are no longer available");
  return forward(am.base(), ids, am.deltas());
}

inline std::vector<DenseMatrix> adapted_forward(const AdaptedModel& am, const std::vector<Sequence>& batch) {
  std::vector<DenseMatrix> out;
  for (const auto& s : batch) out.push_back(adapted_forward(am, s));
  return out;
}

inline LabeledExample predict(const AdaptedModel& am, std::string_view text, const LabelSchema& schema) {
  return predict(am.base(), text, schema, am.deltas());
}

/// Learner that updates only the adapter factors.
class AdapterLearner {
 public:
  using Snapshot = std::vector<AdapterPair>;

  explicit AdapterLearner(AdaptedModel& am) : am_(am) {}

  const ModelConfig& model_config() const { return am_.base().config(); }

  double step(std::span<const EncodedExample> batch, double lr) {
    auto lg = loss_and_grads(am_.base(), batch, am_.deltas(), GradTarget::Deltas);
    for (auto& ad : am_.adapters()) {
      const auto& g = ad.target == LinearTarget::Hidden ? lg.grads.hidden_delta : lg.grads.output_delta;
      for (std::size_t i = 0; i < ad.a.size(); ++i) ad.a.values[i] = round_to_f32(ad.a.values[i] - lr * g->a.values[i]);
      for (std::size_t i = 0; i < ad.b.size(); ++i) ad.b.values[i] = round_to_f32(ad.b.values[i] - lr * g->b.values[i]);
    }
    return lg.loss;
  }

  Dataset predict_all(const Dataset& gold) const { return predict_dataset(am_.base(), gold, am_.deltas()); }
  Snapshot snapshot() const { return am_.adapters(); }
  void restore(const Snapshot& s) { am_.adapters() = s; }

 private:
  AdaptedModel& am_;
};

struct AdapterTrainResult {
  AdaptedModel model;
  TrainHistory history;
};

/// Same loop as full training; gradients reach the adapters only and the base
/// checkpoint hash is verified unchanged afterwards.
inline AdapterTrainResult train_adapters(AdaptedModel am, const Dataset& data, const TrainConfig& tc,
                                         DevMetric metric = default_dev_metric()) {
  if (am.consumed()) throw ConfigError("adapters were merged and are no longer available");
  const auto before = am.base().fingerprint();
  AdapterLearner learner(am);
  auto hist = train_loop(learner, data, tc, metric);
  if (am.base().fingerprint() != before) throw NumericError("base model changed during adapter training");
  return {std::move(am), std::move(hist)};
}

/// Folds (alpha / r) B A into each target weight and consumes the adapters.
inline Model merge_adapters(AdaptedModel& am) {
  if (am.consumed()) throw ConfigError("adapters already merged");
  Model merged = am.base();
  const double scale = am.lora_config().scale();
  for (const auto& ad : am.adapters()) {
    auto& w = merged.param(weight_of(ad.target));
    const auto ba = matmul(ad.b, ad.a);
    for (std::size_t i = 0; i < w.size(); ++i) w.values[i] += scale * ba.values[i];
  }
  am.mark_consumed();
  return merged;
}

/// Best rank-r approximation of (w_trained - w_base) as adapter factors:
/// B = U_r diag(s_r) * r / alpha, A = V_r^T, so (alpha / r) B A is the
/// truncated SVD of the delta.
inline AdapterPair decompose_delta(const DenseMatrix& w_base, const DenseMatrix& w_trained, std::size_t r,
                                   double alpha = 0.0, double tolerance = 1e-10) {
  if (!w_base.same_shape(w_trained)) throw ConfigError("decompose_delta: shape mismatch");
  if (r < 1 || r > std::min(w_base.rows, w_base.cols))
    throw ConfigError("decompose_delta: rank " + std::to_string(r) + " outside [1, " +
                      std::to_string(std::min(w_base.rows, w_base.cols)) + "]");
  if (alpha <= 0.0) alpha = static_cast<double>(r);
  DenseMatrix delta(w_base.rows, w_base.cols);
  for (std::size_t i = 0; i < delta.size(); ++i) delta.values[i] = w_trained.values[i] - w_base.values[i];

  const auto svd = jacobi_svd(delta, tolerance);
  const double unscale = static_cast<double>(r) / alpha;
  AdapterPair ap;
  ap.a = DenseMatrix(r, delta.cols);
  ap.b = DenseMatrix(delta.rows, r);
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t j = 0; j < delta.cols; ++j) ap.a(k, j) = svd.v(j, k);
    for (std::size_t i = 0; i < delta.rows; ++i) ap.b(i, k) = svd.u(i, k) * svd.s[k] * unscale;
  }
  return ap;
}

/// Compresses a fully fine-tuned model into adapters on `base`. Only the
/// target weight matrices are carried over; embedding and bias updates are
/// dropped.
inline AdaptedModel decompose_model(const Model& base, const Model& trained, const LoRAConfig& cfg) {
  cfg.check();
  if (!(base.config() == trained.config())) throw ConfigError("base and trained models have different configs");
  check_rank(base, cfg);
  std::vector<AdapterPair> adapters;
  for (auto t : cfg.targets) {
    auto ap = decompose_delta(base.param(weight_of(t)), trained.param(weight_of(t)), cfg.rank, cfg.alpha);
    ap.target = t;
    adapters.push_back(std::move(ap));
  }
  return AdaptedModel(base, std::move(adapters), cfg);
}

struct ParamCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double trainable_ratio = 0.0;
};

inline ParamCount count_params(const Model& m) {
  const auto n = m.parameter_count();
  return {n, n, n ? 1.0 : 0.0};
}

inline ParamCount count_params(const AdaptedModel& am) {
  ParamCount c;
  c.total = am.base().parameter_count();
  for (const auto& ad : am.adapters()) c.trainable += ad.a.size() + ad.b.size();
  c.trainable_ratio = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

/// Closed-form adapter parameter count: sum over targets of r * (d_in + d_out).
inline std::size_t adapter_parameter_count(const ModelConfig& mc, const LoRAConfig& lc) {
  std::size_t n = 0;
  for (auto t : lc.targets) {
    const std::size_t d_in = t == LinearTarget::Hidden ? mc.feature_dim() : mc.hidden_dim;
    const std::size_t d_out = t == LinearTarget::Hidden ? mc.hidden_dim : mc.num_labels;
    n += lc.rank * (d_in + d_out);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Adapter checkpoints

inline constexpr std::string_view kAdapterMagic = "LOCUSLRA";
inline constexpr std::uint32_t kAdapterVersion = 1;

inline void save_adapters(const AdaptedModel& am, std::ostream& os) {
  if (am.consumed()) throw ConfigError("adapters were merged and are no longer available");
  const auto& cfg = am.lora_config();
  binio::write_magic(os, kAdapterMagic);
  binio::write_uint<std::uint32_t>(os, kAdapterVersion);
  binio::write_uint<std::uint64_t>(os, am.base().fingerprint());
  binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.rank));
  binio::write_f64(os, cfg.alpha);
  binio::write_f64(os, cfg.init_scale);
  binio::write_uint<std::uint8_t>(os, static_cast<std::uint8_t>(am.adapters().size()));
  for (const auto& ad : am.adapters()) {
    binio::write_uint<std::uint8_t>(os, static_cast<std::uint8_t>(ad.target));
    for (double v : ad.a.values) binio::write_f32(os, static_cast<float>(v));
    for (double v : ad.b.values) binio::write_f32(os, static_cast<float>(v));
  }
}

inline AdaptedModel load_adapters(Model base, std::istream& is) {
  binio::expect_magic(is, kAdapterMagic, "adapter checkpoint");
  const auto version = binio::read_uint<std::uint32_t>(is);
  if (version != kAdapterVersion) throw FormatError("unsupported adapter version " + std::to_string(version));
  const auto fp = binio::read_uint<std::uint64_t>(is);
  if (fp != base.fingerprint())
    throw ConfigError("adapter file was trained against a different base model (fingerprint mismatch)");
  LoRAConfig cfg;
  cfg.rank = binio::read_uint<std::uint32_t>(is);
  cfg.alpha = binio::read_f64(is);
  cfg.init_scale = binio::read_f64(is);
  const auto n = binio::read_uint<std::uint8_t>(is);
  cfg.targets.clear();
  std::vector<AdapterPair> adapters;
  for (std::uint8_t i = 0; i < n; ++i) {
    const auto t = binio::read_uint<std::uint8_t>(is);
    if (t > 1) throw FormatError("unknown adapter target id " + std::to_string(t));
    AdapterPair ap;
    ap.target = static_cast<LinearTarget>(t);
    const auto& w = base.param(weight_of(ap.target));
    ap.a = DenseMatrix(cfg.rank, w.cols);
    ap.b = DenseMatrix(w.rows, cfg.rank);
    for (auto& v : ap.a.values) v = binio::read_f32(is);
    for (auto& v : ap.b.values) v = binio::read_f32(is);
    cfg.targets.push_back(ap.target);
    adapters.push_back(std::move(ap));
  }
  return AdaptedModel(std::move(base), std::move(adapters), cfg);
}

inline void save_adapters(const AdaptedModel& am, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  save_adapters(am, out);
  if (!out) throw IoError("write failure on " + path);
}

inline AdaptedModel load_adapters(Model base, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open adapter file " + path);
  return load_adapters(std::move(base), in);
}

}  // namespace locus
