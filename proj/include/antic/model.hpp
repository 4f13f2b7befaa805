#pragma once

// Causal transformer decoder head over per-clip features.
//
// Three input topologies share one parameter set:
//   base     observed clips only
//   teacher  observed + real gap-clip features (full video)
//   student  observed clips followed by learnable future tokens in the gap slots
//
// Layout: linear input projection -> learned positional table -> n_layers
// pre-norm blocks (masked self-attention, GELU feedforward) -> final norm ->
// optional multi-scale block -> independent verb / noun / action heads.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "antic/autograd.hpp"
#include "antic/config.hpp"
#include "antic/data.hpp"
#include "antic/ops.hpp"

namespace antic {

enum class Topology { base, teacher, student };

inline const char* topology_name(Topology t) {
  switch (t) {
    case Topology::base: return "base";
    case Topology::teacher: return "teacher";
    case Topology::student: return "student";
  }
  return "?";
}

inline Topology parse_topology(const std::string& s) {
  if (s == "base") return Topology::base;
  if (s == "teacher") return Topology::teacher;
  if (s == "student") return Topology::student;
  throw ConfigError("unknown topology '" + s + "'");
}

class ParameterStore {
 public:
  std::size_t add(std::string name, Matrix init, bool decay) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(init), decay);
    return params_.size() - 1;
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const { return const_cast<ParameterStore*>(this)->at(name); }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Per-position logits for a batch of equal-length sequences, rows ordered
/// b * length + t.
struct LogitBundle {
  int batch = 0;
  int length = 0;
  Matrix verb;
  Matrix noun;
  std::optional<Matrix> action;
};

struct HeadVars {
  Var verb;
  Var noun;
  std::optional<Var> action;
};

/// Training-mode switches for one forward pass. A null rng means evaluation mode.
struct ForwardContext {
  std::mt19937_64* rng = nullptr;
  bool training() const { return rng != nullptr; }
};

namespace detail {

inline Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z;
    do {
      z = n(rng);
    } while (std::abs(z) > 2.0);
    m.data()[i] = z * std;
  }
  return m;
}

inline std::vector<int> positions_of(int batch, int length, int position) {
  std::vector<int> idx(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) idx[static_cast<std::size_t>(b)] = b * length + position;
  return idx;
}

/// Rows b*length + t for t in [from, to).
inline std::vector<int> position_range(int batch, int length, int from, int to) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(batch) * static_cast<std::size_t>(std::max(0, to - from)));
  for (int b = 0; b < batch; ++b)
    for (int t = from; t < to; ++t) idx.push_back(b * length + t);
  return idx;
}

}  // namespace detail

/// Number of scalar parameters implied by a configuration:
///   D*E + E                                   input projection
/// + S*E + G*E                                 positional table, future tokens
/// + L*(4*(E*E + E) + 2*E*F + F + E + 4*E)     decoder blocks
/// + 2*E                                       final norm
/// + |scales|*(E*E + E)                        multi-scale block, if enabled
/// + (E+1)*K_v + (E+1)*K_n                     verb, noun heads
/// + (E+1)*K_a                                 action head (without VNRM)
/// With VNRM (context width C):
/// + K_v*C + (E*E + E)                         verb embeddings, noun-token projection
/// + (C*C + C) + 2*(E*C + C) + (C*E + E)       relation query/key/value/output
/// + (C*E + E)                                 verb-context residual projection
/// + (C+E+1)*K_a                               action head on [context, noun], if K_a > 0
/// + L*(block) + 2*E                           separate noun trunk when not shared
inline std::size_t parameter_count(const ModelConfig& c, const std::optional<VnrmConfig>& vnrm = std::nullopt) {
  const std::size_t D = static_cast<std::size_t>(c.input_dim);
  const std::size_t E = static_cast<std::size_t>(c.embed_dim);
  const std::size_t F = static_cast<std::size_t>(c.ff_dim());
  const std::size_t L = static_cast<std::size_t>(c.n_layers);
  const std::size_t S = static_cast<std::size_t>(c.max_seq_len);
  const std::size_t G = static_cast<std::size_t>(c.future_tokens);
  const std::size_t Kv = static_cast<std::size_t>(c.num_verbs);
  const std::size_t Kn = static_cast<std::size_t>(c.num_nouns);
  const std::size_t Ka = static_cast<std::size_t>(c.num_actions);
  const std::size_t block = 4 * (E * E + E) + 2 * E * F + F + E + 4 * E;
  std::size_t n = D * E + E + S * E + G * E + L * block + 2 * E;
  if (c.multi_scale) n += c.scales.size() * (E * E + E);
  n += (E + 1) * Kv + (E + 1) * Kn;
  if (!vnrm) {
    n += (E + 1) * Ka;
    return n;
  }
  const std::size_t C = static_cast<std::size_t>(vnrm->context_dim(c.embed_dim));
  n += Kv * C + (E * E + E);
  n += (C * C + C) + 2 * (E * C + C) + (C * E + E);
  n += C * E + E;
  if (Ka > 0) n += (C + E + 1) * Ka;
  if (!vnrm->share_backbone) n += L * block + 2 * E;
  return n;
}

class AnticipationModel {
 public:
  static constexpr double kInitStd = 0.02;

  AnticipationModel(ModelConfig config, std::optional<VnrmConfig> vnrm, std::uint64_t seed)
      : config_(std::move(config)), vnrm_(std::move(vnrm)) {
    config_.validate();
    if (vnrm_) vnrm_->validate(config_.embed_dim);
    std::mt19937_64 rng(seed);
    const int E = config_.embed_dim;
    input_w_ = linear_weight("input.weight", config_.input_dim, E, rng);
    input_b_ = bias("input.bias", E);
    pos_ = store_.add("pos_embed", detail::truncated_normal(config_.max_seq_len, E, kInitStd, rng), false);
    future_ = store_.add("future_tokens", detail::truncated_normal(config_.future_tokens, E, kInitStd, rng), false);
    trunks_.push_back(make_trunk("", rng));
    if (config_.multi_scale) {
      for (int s : config_.scales) {
        const std::string p = "multi_scale." + std::to_string(s);
        scale_w_.push_back(linear_weight(p + ".weight", E, E, rng));
        scale_b_.push_back(bias(p + ".bias", E));
      }
    }
    verb_w_ = linear_weight("head.verb.weight", E, config_.num_verbs, rng);
    verb_b_ = bias("head.verb.bias", config_.num_verbs);
    noun_w_ = linear_weight("head.noun.weight", E, config_.num_nouns, rng);
    noun_b_ = bias("head.noun.bias", config_.num_nouns);
    if (!vnrm_ && config_.num_actions > 0) {
      action_w_ = linear_weight("head.action.weight", E, config_.num_actions, rng);
      action_b_ = bias("head.action.bias", config_.num_actions);
    }
    if (vnrm_) init_vnrm(rng);
  }

  const ModelConfig& config() const { return config_; }
  const std::optional<VnrmConfig>& vnrm_config() const { return vnrm_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  bool has_action_head() const { return config_.num_actions > 0; }

  /// Linear projection of clip features, without positions.
  Var project_features(Tape& t, const Matrix& features) {
    if (features.cols() != config_.input_dim) throw ShapeError("model: feature width != input_dim");
    return ops::linear(t, t.constant(features), t.param(store_[input_w_]), t.param(store_[input_b_]));
  }

  /// Adds the positional row for position t to every row b*length + t.
  Var add_positions(Tape& t, Var x, int batch, int length) {
    if (length > config_.max_seq_len)
      throw ShapeError("model: sequence length " + std::to_string(length) + " exceeds max_seq_len");
    std::vector<int> idx(static_cast<std::size_t>(batch) * static_cast<std::size_t>(length));
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < length; ++i) idx[static_cast<std::size_t>(b * length + i)] = i;
    return ops::add(t, x, ops::gather_rows(t, t.param(store_[pos_]), std::move(idx)));
  }

  /// Projection plus positional embedding for (batch*length) x D features.
  Var embed_features(Tape& t, const Matrix& features, int batch, int length) {
    if (features.rows() != Eigen::Index(batch) * length) throw ShapeError("model: feature rows != batch * length");
    if (length > config_.max_seq_len)
      throw ShapeError("model: sequence length " + std::to_string(length) + " exceeds max_seq_len");
    return add_positions(t, project_features(t, features), batch, length);
  }

  /// Observed rows of each sequence followed by future tokens 0..gap-1, then
  /// positions over the whole concatenated length.
  Var build_student_input(Tape& t, Var observed_projected, int batch, int observed_len, int gap) {
    if (gap < 1) throw ConfigError("model: the student needs at least one gap position");
    if (gap > config_.future_tokens)
      throw ConfigError("model: gap of " + std::to_string(gap) + " exceeds the future-token table");
    const Matrix& obs = t.value(observed_projected);
    if (obs.rows() != Eigen::Index(batch) * observed_len) throw ShapeError("model: observed rows != batch * observed_len");
    const int n_obs_rows = batch * observed_len;
    Var stacked = ops::concat_rows(t, observed_projected, t.param(store_[future_]));
    const int length = observed_len + gap;
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(batch) * static_cast<std::size_t>(length));
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < observed_len; ++i) idx.push_back(b * observed_len + i);
      for (int g = 0; g < gap; ++g) idx.push_back(n_obs_rows + g);
    }
    return add_positions(t, ops::gather_rows(t, stacked, std::move(idx)), batch, length);
  }

  /// Decoder stack followed by the final norm. trunk 1 is the separate noun
  /// trunk of an unshared VNRM model.
  Var causal_decode(Tape& t, Var x, int batch, int length, const ForwardContext& ctx, std::size_t trunk = 0) {
    if (!t.value(x).allFinite()) throw NumericError("causal_decode: non-finite input");
    const Trunk& tr = trunks_.at(trunk);
    const double p = ctx.training() ? config_.dropout : 0.0;
    Var h = ops::dropout(t, x, p, ctx.rng);
    const ops::AttentionShape shape{batch, length, length, config_.n_heads, true};
    for (const Block& blk : tr.blocks) {
      Var a = ops::layer_norm(t, h, t.param(store_[blk.ln1_g]), t.param(store_[blk.ln1_b]));
      Var q = ops::linear(t, a, t.param(store_[blk.wq]), t.param(store_[blk.bq]));
      Var k = ops::linear(t, a, t.param(store_[blk.wk]), t.param(store_[blk.bk]));
      Var v = ops::linear(t, a, t.param(store_[blk.wv]), t.param(store_[blk.bv]));
      Var att = ops::attention(t, q, k, v, shape);
      Var o = ops::linear(t, att, t.param(store_[blk.wo]), t.param(store_[blk.bo]));
      h = ops::add(t, h, ops::dropout(t, o, p, ctx.rng));
      Var m = ops::layer_norm(t, h, t.param(store_[blk.ln2_g]), t.param(store_[blk.ln2_b]));
      Var f = ops::gelu(t, ops::linear(t, m, t.param(store_[blk.w1]), t.param(store_[blk.b1])));
      f = ops::linear(t, f, t.param(store_[blk.w2]), t.param(store_[blk.b2]));
      h = ops::add(t, h, ops::dropout(t, f, p, ctx.rng));
    }
    return ops::layer_norm(t, h, t.param(store_[tr.lnf_g]), t.param(store_[tr.lnf_b]));
  }

  /// Sum over scales of a per-scale projection of the trailing-window mean,
  /// plus the input (residual).
  Var multi_scale(Tape& t, Var hidden, int batch, int length) {
    if (!config_.multi_scale) return hidden;
    Var out = hidden;
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
      const int s = config_.scales[i];
      if (s > length) throw ConfigError("multi_scale: scale " + std::to_string(s) + " exceeds sequence length");
      Var pooled = ops::causal_pool(t, hidden, batch, length, s);
      out = ops::add(t, out, ops::linear(t, pooled, t.param(store_[scale_w_[i]]), t.param(store_[scale_b_[i]])));
    }
    return out;
  }

  HeadVars classify(Tape& t, Var hidden) {
    HeadVars out{verb_logits(t, hidden), noun_logits(t, hidden), std::nullopt};
    if (action_w_) out.action = ops::linear(t, hidden, t.param(store_[*action_w_]), t.param(store_[*action_b_]));
    return out;
  }

  Var verb_logits(Tape& t, Var hidden) {
    return ops::linear(t, hidden, t.param(store_[verb_w_]), t.param(store_[verb_b_]));
  }
  Var noun_logits(Tape& t, Var hidden) {
    return ops::linear(t, hidden, t.param(store_[noun_w_]), t.param(store_[noun_b_]));
  }

  /// Sequence length the topology feeds the decoder.
  static int sequence_length(Topology topo, int observed_len, int gap) {
    return topo == Topology::base ? observed_len : observed_len + gap;
  }

  /// Embedded decoder input for a batch of examples under a topology. The
  /// student and base topologies never read Example::gap.
  Var assemble_input(Tape& t, std::span<const Example* const> batch, Topology topo) {
    if (batch.empty()) throw ShapeError("model: empty batch");
    const int L = batch.front()->observed_len();
    const int G = batch.front()->gap_len();
    const int B = static_cast<int>(batch.size());
    for (const Example* e : batch)
      if (e->observed_len() != L || e->gap_len() != G) throw ShapeError("model: batch mixes sequence lengths");
    const int D = config_.input_dim;
    if (topo == Topology::teacher) {
      const int T = L + G;
      Matrix feats(Eigen::Index(B) * T, D);
      for (int b = 0; b < B; ++b) {
        feats.middleRows(Eigen::Index(b) * T, L) = batch[static_cast<std::size_t>(b)]->observed;
        feats.middleRows(Eigen::Index(b) * T + L, G) = batch[static_cast<std::size_t>(b)]->gap;
      }
      return embed_features(t, feats, B, T);
    }
    Matrix obs(Eigen::Index(B) * L, D);
    for (int b = 0; b < B; ++b) obs.middleRows(Eigen::Index(b) * L, L) = batch[static_cast<std::size_t>(b)]->observed;
    if (topo == Topology::base) return embed_features(t, obs, B, L);
    return build_student_input(t, project_features(t, obs), B, L, G);
  }

  /// Decoder + multi-scale hidden states for a batch.
  Var encode(Tape& t, std::span<const Example* const> batch, Topology topo, const ForwardContext& ctx) {
    const int L = batch.front()->observed_len();
    const int T = sequence_length(topo, L, batch.front()->gap_len());
    const int B = static_cast<int>(batch.size());
    Var x = assemble_input(t, batch, topo);
    return multi_scale(t, causal_decode(t, x, B, T, ctx), B, T);
  }

  /// Evaluation-mode per-position logits.
  LogitBundle forward(std::span<const Example* const> batch, Topology topo) {
    Tape t(false);
    const int T = sequence_length(topo, batch.front()->observed_len(), batch.front()->gap_len());
    HeadVars h = classify(t, encode(t, batch, topo, ForwardContext{}));
    LogitBundle out;
    out.batch = static_cast<int>(batch.size());
    out.length = T;
    out.verb = t.value(h.verb);
    out.noun = t.value(h.noun);
    if (h.action) out.action = t.value(*h.action);
    return out;
  }

  // Parameter indices used by the relation module.
  struct VnrmParams {
    std::size_t verb_embed, noun_w, noun_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, res_w, res_b;
    std::optional<std::size_t> action_w, action_b;
  };
  const VnrmParams& vnrm_params() const {
    if (!vnrm_params_) throw ConfigError("model has no verb-noun relation module");
    return *vnrm_params_;
  }

 private:
  struct Block {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Trunk {
    std::vector<Block> blocks;
    std::size_t lnf_g, lnf_b;
  };

  std::size_t linear_weight(const std::string& name, int in, int out, std::mt19937_64& rng) {
    return store_.add(name, detail::truncated_normal(in, out, kInitStd, rng), true);
  }
  std::size_t bias(const std::string& name, int width) { return store_.add(name, Matrix::Zero(1, width), false); }
  std::size_t gain(const std::string& name, int width) { return store_.add(name, Matrix::Ones(1, width), false); }

  Trunk make_trunk(const std::string& prefix, std::mt19937_64& rng) {
    const int E = config_.embed_dim;
    const int F = config_.ff_dim();
    Trunk tr;
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string p = prefix + "layers." + std::to_string(l) + ".";
      Block b{};
      b.ln1_g = gain(p + "ln1.gain", E);
      b.ln1_b = bias(p + "ln1.bias", E);
      b.wq = linear_weight(p + "attn.q.weight", E, E, rng);
      b.bq = bias(p + "attn.q.bias", E);
      b.wk = linear_weight(p + "attn.k.weight", E, E, rng);
      b.bk = bias(p + "attn.k.bias", E);
      b.wv = linear_weight(p + "attn.v.weight", E, E, rng);
      b.bv = bias(p + "attn.v.bias", E);
      b.wo = linear_weight(p + "attn.o.weight", E, E, rng);
      b.bo = bias(p + "attn.o.bias", E);
      b.ln2_g = gain(p + "ln2.gain", E);
      b.ln2_b = bias(p + "ln2.bias", E);
      b.w1 = linear_weight(p + "ff.fc1.weight", E, F, rng);
      b.b1 = bias(p + "ff.fc1.bias", F);
      b.w2 = linear_weight(p + "ff.fc2.weight", F, E, rng);
      b.b2 = bias(p + "ff.fc2.bias", E);
      tr.blocks.push_back(b);
    }
    tr.lnf_g = gain(prefix + "ln_f.gain", E);
    tr.lnf_b = bias(prefix + "ln_f.bias", E);
    return tr;
  }

  void init_vnrm(std::mt19937_64& rng) {
    const int E = config_.embed_dim;
    const int C = vnrm_->context_dim(E);
    VnrmParams p{};
    p.verb_embed = linear_weight("vnrm.verb_embed", config_.num_verbs, C, rng);
    p.noun_w = linear_weight("vnrm.noun_tokens.weight", E, E, rng);
    p.noun_b = bias("vnrm.noun_tokens.bias", E);
    p.q_w = linear_weight("vnrm.relation.q.weight", C, C, rng);
    p.q_b = bias("vnrm.relation.q.bias", C);
    p.k_w = linear_weight("vnrm.relation.k.weight", E, C, rng);
    p.k_b = bias("vnrm.relation.k.bias", C);
    p.v_w = linear_weight("vnrm.relation.v.weight", E, C, rng);
    p.v_b = bias("vnrm.relation.v.bias", C);
    p.o_w = linear_weight("vnrm.relation.o.weight", C, E, rng);
    p.o_b = bias("vnrm.relation.o.bias", E);
    p.res_w = linear_weight("vnrm.residual.weight", C, E, rng);
    p.res_b = bias("vnrm.residual.bias", E);
    if (config_.num_actions > 0) {
      p.action_w = linear_weight("vnrm.action.weight", C + E, config_.num_actions, rng);
      p.action_b = bias("vnrm.action.bias", config_.num_actions);
    }
    vnrm_params_ = p;
    if (!vnrm_->share_backbone) trunks_.push_back(make_trunk("noun_trunk.", rng));
  }

  ModelConfig config_;
  std::optional<VnrmConfig> vnrm_;
  ParameterStore store_;
  std::size_t input_w_ = 0, input_b_ = 0, pos_ = 0, future_ = 0;
  std::vector<Trunk> trunks_;
  std::vector<std::size_t> scale_w_, scale_b_;
  std::size_t verb_w_ = 0, verb_b_ = 0, noun_w_ = 0, noun_b_ = 0;
  std::optional<std::size_t> action_w_, action_b_;
  std::optional<VnrmParams> vnrm_params_;
};

}  // namespace antic
