#pragma once

// Verb-noun relation module.
//
// The verb branch reads verb logits off the decoder and turns the final
// position's verb distribution into an expected verb embedding (the verb
// context). The relation block lets that context attend over noun tokens,
// projections of the decoder states at observed positions, to form the
// anticipated noun representation that feeds the noun head.

#include <optional>
#include <span>
#include <vector>

#include "antic/model.hpp"

namespace antic {

struct VerbBranch {
  Var logits;   // (batch*length) x K_v
  Var context;  // batch x C
};

/// Per-position verb logits plus softmax(final verb logits) x verb embedding table.
inline VerbBranch verb_branch(Tape& t, AnticipationModel& model, Var hidden, int batch, int length) {
  const auto& vp = model.vnrm_params();
  Var logits = model.verb_logits(t, hidden);
  Var last = ops::gather_rows(t, logits, detail::positions_of(batch, length, length - 1));
  Var probs = ops::softmax_rows(t, last);
  Var context = ops::matmul(t, probs, t.param(model.params()[vp.verb_embed]));
  return VerbBranch{logits, context};
}

/// Cross-attention of the verb context (batch x C) over noun tokens
/// ((batch*tokens) x E), plus a residual projection of the context.
/// Returns batch x E. attention_weights, when given, receives one 1 x tokens
/// row per (batch, head).
inline Var relate(Tape& t, AnticipationModel& model, Var verb_context, Var noun_tokens, int batch, int tokens,
                  std::vector<Matrix>* attention_weights = nullptr) {
  if (tokens < 1) throw ShapeError("relate: no noun tokens");
  const auto& vp = model.vnrm_params();
  auto& ps = model.params();
  Var q = ops::linear(t, verb_context, t.param(ps[vp.q_w]), t.param(ps[vp.q_b]));
  Var k = ops::linear(t, noun_tokens, t.param(ps[vp.k_w]), t.param(ps[vp.k_b]));
  Var v = ops::linear(t, noun_tokens, t.param(ps[vp.v_w]), t.param(ps[vp.v_b]));
  const ops::AttentionShape shape{batch, 1, tokens, model.vnrm_config()->relation_heads, false};
  Var pooled = ops::attention(t, q, k, v, shape, attention_weights);
  Var out = ops::linear(t, pooled, t.param(ps[vp.o_w]), t.param(ps[vp.o_b]));
  return ops::add(t, out, ops::linear(t, verb_context, t.param(ps[vp.res_w]), t.param(ps[vp.res_b])));
}

struct VnrmOutputs {
  int batch = 0;
  int length = 0;
  int observed_len = 0;
  /// Per-position logits of the plain heads, used for auxiliary supervision.
  Var verb_all;
  Var noun_all;
  /// Final-position predictions (batch rows).
  Var verb;
  Var noun;
  std::optional<Var> action;
};

/// Student (observed + future tokens) or teacher (observed + real gap
/// features) pass. Noun tokens always come from observed positions only.
inline VnrmOutputs vnrm_pass(Tape& t, AnticipationModel& model, std::span<const Example* const> batch, Topology topo,
                             const ForwardContext& ctx) {
  if (!model.vnrm_config()) throw ConfigError("vnrm: model was built without a relation module");
  if (topo == Topology::base) throw ConfigError("vnrm: base topology has no gap positions");
  const int B = static_cast<int>(batch.size());
  const int L = batch.front()->observed_len();
  const int G = batch.front()->gap_len();
  if (topo == Topology::teacher) {
    for (const Example* e : batch)
      if (e->gap_len() < 1 || e->gap.cols() != model.config().input_dim) throw ShapeError("vnrm teacher: missing gap features");
  }
  const int T = L + G;
  Var hidden = model.encode(t, batch, topo, ctx);
  VerbBranch vb = verb_branch(t, model, hidden, B, T);

  Var noun_states;
  if (model.vnrm_config()->share_backbone) {
    noun_states = ops::gather_rows(t, hidden, detail::position_range(B, T, 0, L));
  } else {
    Var x = model.assemble_input(t, batch, Topology::base);
    noun_states = model.causal_decode(t, x, B, L, ctx, 1);
  }
  const auto& vp = model.vnrm_params();
  auto& ps = model.params();
  Var tokens = ops::linear(t, noun_states, t.param(ps[vp.noun_w]), t.param(ps[vp.noun_b]));
  Var anticipated = relate(t, model, vb.context, tokens, B, L);

  VnrmOutputs out;
  out.batch = B;
  out.length = T;
  out.observed_len = L;
  out.verb_all = vb.logits;
  out.noun_all = model.noun_logits(t, hidden);
  out.verb = ops::gather_rows(t, vb.logits, detail::positions_of(B, T, T - 1));
  out.noun = model.noun_logits(t, anticipated);
  if (vp.action_w) {
    Var joint = ops::concat_cols(t, vb.context, anticipated);
    out.action = ops::linear(t, joint, t.param(ps[*vp.action_w]), t.param(ps[*vp.action_b]));
  }
  return out;
}

inline VnrmOutputs vnrm_forward(Tape& t, AnticipationModel& model, std::span<const Example* const> batch,
                                const ForwardContext& ctx) {
  return vnrm_pass(t, model, batch, Topology::student, ctx);
}

/// Verb branch over observed + gap features; relation block over observed
/// positions only.
inline VnrmOutputs vnrm_teacher_forward(Tape& t, AnticipationModel& model, std::span<const Example* const> batch,
                                        const ForwardContext& ctx) {
  return vnrm_pass(t, model, batch, Topology::teacher, ctx);
}

/// Evaluation-mode final-position logits (length 1).
inline LogitBundle vnrm_predict(AnticipationModel& model, std::span<const Example* const> batch, Topology topo) {
  Tape t(false);
  VnrmOutputs o = vnrm_pass(t, model, batch, topo, ForwardContext{});
  LogitBundle out;
  out.batch = o.batch;
  out.length = 1;
  out.verb = t.value(o.verb);
  out.noun = t.value(o.noun);
  if (o.action) out.action = t.value(*o.action);
  return out;
}

}  // namespace antic
