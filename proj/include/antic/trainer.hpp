#pragma once

// Shared training loop for every model variant: seeded shuffling, AdamW with
// the warm-restart cosine schedule, per-epoch validation recall, and
// best-by-validation-action-recall model retention.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "antic/atkd.hpp"
#include "antic/checkpoint.hpp"
#include "antic/evaluate.hpp"
#include "antic/schedule.hpp"
#include "antic/vnrm.hpp"

namespace antic {

struct LossPlan {
  Variant variant = Variant::base;
  DistillConfig distill;
  /// Teacher soft labels keyed by segment_id; required when kd_weight > 0 for
  /// ATKD students and for relation-module students with use_kd.
  const SoftLabelMap* soft_labels = nullptr;

  bool distills() const {
    if (distill.kd_weight <= 0.0 || variant == Variant::base) return false;
    return variant == Variant::atkd_student || variant == Variant::vnrm_student;
  }
};

struct MetricRow {
  int epoch = 0;
  std::string split;
  std::string head;
  double recall = std::nan("");
  double loss = std::nan("");
  double lr = 0.0;
};

inline std::string format_metric_row(const MetricRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%s,%.9g,%.9g,%.9g", r.epoch, r.split.c_str(), r.head.c_str(), r.recall, r.loss, r.lr);
  return buf;
}

inline const char* metric_log_header() { return "epoch,split,head,recall,loss,lr"; }

namespace detail {

inline int pick_verb(const ActionLabel& l) { return l.verb; }
inline int pick_noun(const ActionLabel& l) { return l.noun; }
inline int pick_action(const ActionLabel& l) { return l.action; }

inline std::vector<int> target_of(std::span<const Example* const> batch, int (*pick)(const ActionLabel&)) {
  std::vector<int> out;
  for (const Example* e : batch) out.push_back(pick(e->target));
  return out;
}

/// Concatenated per-position labels (observed then gap) for positions [from, to).
inline std::vector<int> sequence_targets(std::span<const Example* const> batch, int (*pick)(const ActionLabel&),
                                         int from, int to) {
  std::vector<int> out;
  for (const Example* e : batch) {
    const int L = e->observed_len();
    for (int i = from; i < to; ++i)
      out.push_back(pick(i < L ? e->observed_labels[static_cast<std::size_t>(i)]
                               : e->gap_labels[static_cast<std::size_t>(i - L)]));
  }
  return out;
}

/// Stacks soft-label rows for a batch: either all positions or the last only.
inline Matrix stack_soft(std::span<const Example* const> batch, const SoftLabelMap& labels, int expected_rows,
                         bool last_only, const Matrix& (*head)(const SoftLabelSet&)) {
  std::vector<const Matrix*> parts;
  Eigen::Index cols = 0;
  for (const Example* e : batch) {
    auto it = labels.find(e->segment_id);
    if (it == labels.end()) throw ValidationError("distillation: no soft labels for segment " + e->segment_id);
    const Matrix& m = head(it->second);
    if (!last_only && m.rows() != expected_rows)
      throw ShapeError("distillation: teacher gap count " + std::to_string(m.rows()) + " != student gap count " +
                       std::to_string(expected_rows));
    parts.push_back(&m);
    cols = m.cols();
  }
  const Eigen::Index per = last_only ? 1 : expected_rows;
  Matrix out(per * static_cast<Eigen::Index>(parts.size()), cols);
  for (std::size_t i = 0; i < parts.size(); ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * per, per) = last_only ? parts[i]->bottomRows(1) : *parts[i];
  return out;
}

inline const Matrix& soft_verb(const SoftLabelSet& s) { return s.verb; }
inline const Matrix& soft_noun(const SoftLabelSet& s) { return s.noun; }
inline const Matrix& soft_action(const SoftLabelSet& s) {
  if (!s.action) throw ShapeError("distillation: teacher soft labels have no action head");
  return *s.action;
}

}  // namespace detail

/// Scalar training loss of one batch under a variant's objective.
inline Var batch_loss(Tape& t, AnticipationModel& model, std::span<const Example* const> batch, const LossPlan& plan,
                      double eps, const ForwardContext& ctx) {
  using namespace detail;
  const int B = static_cast<int>(batch.size());
  const int L = batch.front()->observed_len();
  const int G = batch.front()->gap_len();
  const DistillConfig& dc = plan.distill;
  std::optional<Var> total;

  auto ce_rows = [&](Var logits, const std::vector<int>& rows, const std::vector<int>& targets) {
    return ops::smoothed_cross_entropy(t, ops::gather_rows(t, logits, rows), targets, eps);
  };

  if (uses_vnrm(plan.variant)) {
    const bool teacher = plan.variant == Variant::vnrm_teacher;
    VnrmOutputs o = teacher ? vnrm_teacher_forward(t, model, batch, ctx) : vnrm_forward(t, model, batch, ctx);
    const int T = o.length;
    Var final_ce = ops::add(t, ops::smoothed_cross_entropy(t, o.verb, target_of(batch, pick_verb), eps),
                            ops::smoothed_cross_entropy(t, o.noun, target_of(batch, pick_noun), eps));
    if (o.action) final_ce = ops::add(t, final_ce, ops::smoothed_cross_entropy(t, *o.action, target_of(batch, pick_action), eps));
    total = ops::scale(t, final_ce, dc.ce_weight);
    // The teacher supervises every position, the student its observed ones.
    const int upto = teacher ? T : L;
    if (dc.positionwise_ce_weight > 0.0 && upto > 0) {
      const auto rows = position_range(B, T, 0, upto);
      Var pw = ops::add(t, ce_rows(o.verb_all, rows, sequence_targets(batch, pick_verb, 0, upto)),
                        ce_rows(o.noun_all, rows, sequence_targets(batch, pick_noun, 0, upto)));
      total = ops::add(t, *total, ops::scale(t, pw, dc.positionwise_ce_weight));
    }
    if (!teacher && plan.distills() && model.vnrm_config()->use_kd) {
      if (plan.soft_labels == nullptr) throw ConfigError("vnrm student: use_kd set but no soft labels supplied");
      const double T_kd = dc.temperature;
      Var kd = ops::add(t, ops::distillation_kl(t, o.verb, stack_soft(batch, *plan.soft_labels, 1, true, soft_verb), T_kd),
                        ops::distillation_kl(t, o.noun, stack_soft(batch, *plan.soft_labels, 1, true, soft_noun), T_kd));
      int heads = 2;
      if (o.action && plan.soft_labels->begin()->second.action) {
        kd = ops::add(t, kd, ops::distillation_kl(t, *o.action, stack_soft(batch, *plan.soft_labels, 1, true, soft_action), T_kd));
        ++heads;
      }
      total = ops::add(t, *total, ops::scale(t, kd, dc.kd_weight / heads));
    }
    return *total;
  }

  const Topology topo = topology_of(plan.variant);
  const int T = AnticipationModel::sequence_length(topo, L, G);
  Var hidden = model.encode(t, batch, topo, ctx);
  HeadVars h = model.classify(t, hidden);

  if (plan.variant == Variant::atkd_teacher) {
    const auto rows = position_range(B, T, 0, T);
    Var loss = ops::add(t, ce_rows(h.verb, rows, sequence_targets(batch, pick_verb, 0, T)),
                        ce_rows(h.noun, rows, sequence_targets(batch, pick_noun, 0, T)));
    if (h.action) loss = ops::add(t, loss, ce_rows(*h.action, rows, sequence_targets(batch, pick_action, 0, T)));
    return loss;
  }

  // Base and ATKD student: final position against the segment target.
  const auto last = positions_of(B, T, T - 1);
  Var final_ce = ops::add(t, ce_rows(h.verb, last, target_of(batch, pick_verb)), ce_rows(h.noun, last, target_of(batch, pick_noun)));
  if (h.action) final_ce = ops::add(t, final_ce, ce_rows(*h.action, last, target_of(batch, pick_action)));
  total = ops::scale(t, final_ce, dc.ce_weight);

  // Observed positions against their propagated labels; the base model reads
  // its prediction off the last observed position, so that one is excluded.
  const int upto = plan.variant == Variant::base ? L - 1 : L;
  if (dc.positionwise_ce_weight > 0.0 && upto > 0) {
    const auto rows = position_range(B, T, 0, upto);
    Var pw = ops::add(t, ce_rows(h.verb, rows, sequence_targets(batch, pick_verb, 0, upto)),
                      ce_rows(h.noun, rows, sequence_targets(batch, pick_noun, 0, upto)));
    if (h.action) pw = ops::add(t, pw, ce_rows(*h.action, rows, sequence_targets(batch, pick_action, 0, upto)));
    total = ops::add(t, *total, ops::scale(t, pw, dc.positionwise_ce_weight));
  }

  if (plan.variant == Variant::atkd_student && plan.distills()) {
    if (plan.soft_labels == nullptr) throw ConfigError("atkd student: kd_weight > 0 but no soft labels supplied");
    const auto gap_rows = position_range(B, T, L, T);
    const double T_kd = dc.temperature;
    Var kd = ops::add(
        t, ops::distillation_kl(t, ops::gather_rows(t, h.verb, gap_rows), stack_soft(batch, *plan.soft_labels, G, false, soft_verb), T_kd),
        ops::distillation_kl(t, ops::gather_rows(t, h.noun, gap_rows), stack_soft(batch, *plan.soft_labels, G, false, soft_noun), T_kd));
    int heads = 2;
    if (h.action && plan.soft_labels->begin()->second.action) {
      kd = ops::add(t, kd, ops::distillation_kl(t, ops::gather_rows(t, *h.action, gap_rows),
                                                stack_soft(batch, *plan.soft_labels, G, false, soft_action), T_kd));
      ++heads;
    }
    total = ops::add(t, *total, ops::scale(t, kd, dc.kd_weight / heads));
  }
  return *total;
}

/// Final-position logits for a batch under a variant (one row per example).
inline LogitBundle final_logits(AnticipationModel& model, Variant variant, std::span<const Example* const> batch) {
  if (uses_vnrm(variant)) return vnrm_predict(model, batch, topology_of(variant));
  LogitBundle all = model.forward(batch, topology_of(variant));
  LogitBundle out;
  out.batch = all.batch;
  out.length = 1;
  const auto rows = detail::positions_of(all.batch, all.length, all.length - 1);
  auto take = [&](const Matrix& m) {
    Matrix r(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return r;
  };
  out.verb = take(all.verb);
  out.noun = take(all.noun);
  if (all.action) out.action = take(*all.action);
  return out;
}

/// Softmax probabilities of final-position predictions as a ScoreFile.
inline ScoreFile predict_scores(AnticipationModel& model, Variant variant, const std::vector<Example>& examples,
                                const std::string& tag, int batch_size = 256) {
  ScoreFile sf;
  sf.model_tag = tag;
  sf.num_verbs = model.config().num_verbs;
  sf.num_nouns = model.config().num_nouns;
  sf.num_actions = model.has_action_head() ? model.config().num_actions : 0;
  std::vector<const Example*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  for (std::size_t s = 0; s < ptrs.size(); s += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(ptrs.size() - s, static_cast<std::size_t>(batch_size));
    std::span<const Example* const> batch(ptrs.data() + s, n);
    LogitBundle lb = final_logits(model, variant, batch);
    const Matrix pv = ops::detail::softmax_rows(lb.verb);
    const Matrix pn = ops::detail::softmax_rows(lb.noun);
    std::optional<Matrix> pa;
    if (lb.action) pa = ops::detail::softmax_rows(*lb.action);
    for (std::size_t i = 0; i < n; ++i) {
      ScoreRecord r;
      r.segment_id = batch[i]->segment_id;
      r.verb = pv.row(static_cast<Eigen::Index>(i));
      r.noun = pn.row(static_cast<Eigen::Index>(i));
      if (pa) r.action = pa->row(static_cast<Eigen::Index>(i));
      sf.records.push_back(std::move(r));
    }
  }
  return sf;
}

/// Overall class-mean top-5 recall per head for scores against examples' targets.
inline std::array<std::optional<double>, 3> overall_recall(const ScoreFile& sf, const std::vector<Example>& examples,
                                                           const ActionVocabulary& vocab) {
  std::vector<AnnotationRow> labels;
  for (const auto& e : examples) {
    AnnotationRow r;
    r.segment_id = e.segment_id;
    r.participant_id = e.participant_id;
    r.label = e.target;
    labels.push_back(std::move(r));
  }
  RecallReport rep = evaluate(sf, labels, SplitSpec{}, vocab);
  return {rep.mean(Split::overall, Head::verb), rep.mean(Split::overall, Head::noun), rep.mean(Split::overall, Head::action)};
}

namespace detail {
inline std::string rec_or_dash(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace detail

struct TrainResult {
  std::vector<MetricRow> log;
  std::vector<double> epoch_loss;
  AnticipationModel best;
  int best_epoch = -1;
  double best_action_recall = -1.0;
  std::uint64_t steps = 0;
};

/// Trains `model` in place. The returned `best` is a copy of the parameters
/// at the epoch with the highest validation action recall (the final model
/// when no validation set is given).
inline TrainResult train(AnticipationModel& model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const LossPlan& plan, const TrainConfig& cfg, const ActionVocabulary& vocab,
                         std::ostream* progress = nullptr) {
  cfg.validate();
  plan.distill.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (uses_vnrm(plan.variant) != model.vnrm_config().has_value())
    throw ConfigError("train: variant and model disagree about the relation module");
  std::seed_seq order_seed{cfg.seed, std::uint64_t{1}};
  std::seed_seq dropout_seed{cfg.seed, std::uint64_t{2}};
  std::mt19937_64 order_rng(order_seed);
  std::mt19937_64 dropout_rng(dropout_seed);

  std::vector<const Example*> order;
  order.reserve(train_set.size());
  for (const auto& e : train_set) order.push_back(&e);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (order.size() + bs - 1) / bs;

  AdamW opt(cfg);
  auto& params = model.params().all();
  TrainResult res{{}, {}, model, -1, -1.0, 0};
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t from = s * bs;
      std::span<const Example* const> batch(order.data() + from, std::min(bs, order.size() - from));
      model.params().zero_grad();
      Tape tape(true);
      const ForwardContext ctx{&dropout_rng};
      Var loss = batch_loss(tape, model, batch, plan, cfg.smoothing, ctx);
      const double lv = tape.scalar(loss);
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(s) +
                           " (" + variant_name(plan.variant) + ")");
      }
      tape.backward(loss);
      if (cfg.grad_clip) clip_grad_norm(params, *cfg.grad_clip);
      const double lr = lr_at(epoch + static_cast<double>(s) / static_cast<double>(steps_per_epoch), cfg);
      opt.step(params, lr);
      loss_sum += lv;
    }
    const double epoch_loss = loss_sum / static_cast<double>(steps_per_epoch);
    const double epoch_lr = lr_at(epoch, cfg);
    res.epoch_loss.push_back(epoch_loss);
    res.log.push_back(MetricRow{epoch, "train", "all", std::nan(""), epoch_loss, epoch_lr});
    if (!val_set.empty()) {
      const ScoreFile sf = predict_scores(model, plan.variant, val_set, "val");
      const auto rec = overall_recall(sf, val_set, vocab);
      for (Head h : kHeads) {
        const auto& r = rec[static_cast<std::size_t>(h)];
        res.log.push_back(MetricRow{epoch, "val", head_name(h), r ? *r : std::nan(""), std::nan(""), epoch_lr});
      }
      const double action = rec[2].value_or(0.0);
      if (action > res.best_action_recall) {
        res.best_action_recall = action;
        res.best_epoch = epoch;
        res.best = model;
      }
    }
    if (progress != nullptr) {
      *progress << variant_name(plan.variant) << " epoch " << epoch << " loss " << epoch_loss;
      if (!val_set.empty()) *progress << " val_action_recall " << detail::rec_or_dash(res.log.back().recall);
      *progress << '\n';
    }
  }
  res.steps = opt.steps();
  if (val_set.empty()) {
    res.best = model;
    res.best_epoch = cfg.max_epochs - 1;
  }
  return res;
}

}  // namespace antic
