#pragma once

// Configuration records for every stage of the pipeline, their validation
// rules, and their JSON form. A run's config file is one JSON object with
// the sections "task", "synthetic", "model", "vnrm", "distill", "train".

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "antic/error.hpp"
#include "json.hpp"

namespace antic {

using Json = nlohmann::json;

namespace detail {

/// n = value / unit when value is (numerically) an integer multiple of unit.
inline std::optional<int> exact_ratio(double value, double unit) {
  if (!(unit > 0.0)) return std::nullopt;
  const double r = value / unit;
  const double rounded = std::round(r);
  if (std::abs(r - rounded) > 1e-9 * std::max(1.0, std::abs(r))) return std::nullopt;
  return static_cast<int>(rounded);
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace detail

struct TaskConfig {
  double anticipation_time = 1.0;
  double clip_duration = 1.0;
  double observed_duration = 4.0;
  int num_verbs = 0;
  int num_nouns = 0;
  int num_actions = 0;

  /// Clips covering the anticipation time (G).
  int gap_clips() const {
    auto g = detail::exact_ratio(anticipation_time, clip_duration);
    if (!g || *g < 1) throw ConfigError("task: anticipation_time must be a positive multiple of clip_duration");
    return *g;
  }

  int observed_clips() const {
    auto n = detail::exact_ratio(observed_duration, clip_duration);
    if (!n || *n < 1) throw ConfigError("task: observed_duration must be a positive multiple of clip_duration");
    return *n;
  }

  void validate() const {
    if (!(clip_duration > 0.0)) throw ConfigError("task: clip_duration must be > 0");
    gap_clips();
    observed_clips();
    if (num_verbs < 1 || num_nouns < 1 || num_actions < 0) throw ConfigError("task: class counts must be positive");
  }
};

struct ModelConfig {
  int input_dim = 0;
  int n_layers = 4;
  int n_heads = 4;
  int embed_dim = 256;
  /// 0 means 4 * embed_dim.
  int feedforward_dim = 0;
  double dropout = 0.1;
  int num_verbs = 0;
  int num_nouns = 0;
  /// 0 disables the dedicated action head; action scores are then composed from verb x noun.
  int num_actions = 0;
  bool multi_scale = false;
  std::vector<int> scales{1, 2, 4};
  int max_seq_len = 32;
  /// Rows of the learnable future-embedding table (G_max).
  int future_tokens = 1;

  int ff_dim() const { return feedforward_dim > 0 ? feedforward_dim : 4 * embed_dim; }

  void validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (n_layers < 1 || n_heads < 1 || embed_dim < 1) throw ConfigError("model: layer/head/width counts must be >= 1");
    if (embed_dim % n_heads != 0) throw ConfigError("model: embed_dim must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
    if (num_verbs < 1 || num_nouns < 1 || num_actions < 0) throw ConfigError("model: class counts must be positive");
    if (max_seq_len < 1 || future_tokens < 1) throw ConfigError("model: max_seq_len and future_tokens must be >= 1");
    if (multi_scale) {
      if (scales.empty()) throw ConfigError("model: multi_scale needs at least one scale");
      for (int s : scales)
        if (s < 1 || s > max_seq_len) throw ConfigError("model: scales must lie in [1, max_seq_len]");
    }
  }
};

struct DistillConfig {
  double temperature = 2.0;
  double kd_weight = 1.0;
  double ce_weight = 1.0;
  double positionwise_ce_weight = 1.0;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("distill: temperature must be > 0");
    if (kd_weight < 0.0 || positionwise_ce_weight < 0.0) throw ConfigError("distill: weights must be >= 0");
    if (!(ce_weight > 0.0)) throw ConfigError("distill: ce_weight must be > 0");
  }
};

struct VnrmConfig {
  /// 0 means embed_dim.
  int verb_context_dim = 0;
  int relation_heads = 4;
  bool use_kd = false;
  bool share_backbone = true;

  int context_dim(int embed_dim) const { return verb_context_dim > 0 ? verb_context_dim : embed_dim; }

  void validate(int embed_dim) const {
    if (relation_heads < 1 || context_dim(embed_dim) % relation_heads != 0)
      throw ConfigError("vnrm: relation_heads must divide verb_context_dim");
  }
};

struct TrainConfig {
  int batch_size = 128;
  double smoothing = 0.4;
  double weight_decay = 5e-4;
  double base_lr = 1e-4;
  int max_epochs = 300;
  int cycle_epochs = 15;
  int warmup_epochs = 1;
  int n_cycles = 20;
  double min_lr = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Hyperparameters of the published recipe.
  static TrainConfig fidelity() { return TrainConfig{}; }

  /// Small profile used by the synthetic experiments: batch 32, 2 cycles.
  static TrainConfig desk() {
    TrainConfig c;
    c.batch_size = 32;
    c.n_cycles = 2;
    c.max_epochs = 2 * c.cycle_epochs;
    return c;
  }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("train: smoothing must lie in [0, 1)");
    if (weight_decay < 0.0 || !(base_lr > 0.0) || min_lr < 0.0 || min_lr > base_lr)
      throw ConfigError("train: invalid learning-rate or decay setting");
    if (cycle_epochs < 1 || n_cycles < 1) throw ConfigError("train: cycle_epochs and n_cycles must be >= 1");
    if (n_cycles * cycle_epochs != max_epochs) throw ConfigError("train: n_cycles * cycle_epochs must equal max_epochs");
    if (warmup_epochs < 0 || warmup_epochs >= cycle_epochs) throw ConfigError("train: warmup_epochs must be < cycle_epochs");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
  }
};

// JSON ---------------------------------------------------------------------

inline void to_json(Json& j, const TaskConfig& c) {
  j = Json{{"anticipation_time", c.anticipation_time}, {"clip_duration", c.clip_duration},
           {"observed_duration", c.observed_duration}, {"num_verbs", c.num_verbs},
           {"num_nouns", c.num_nouns}, {"num_actions", c.num_actions}};
}
inline void from_json(const Json& j, TaskConfig& c) {
  detail::read_opt(j, "anticipation_time", c.anticipation_time);
  detail::read_opt(j, "clip_duration", c.clip_duration);
  detail::read_opt(j, "observed_duration", c.observed_duration);
  detail::read_opt(j, "num_verbs", c.num_verbs);
  detail::read_opt(j, "num_nouns", c.num_nouns);
  detail::read_opt(j, "num_actions", c.num_actions);
}

inline void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"input_dim", c.input_dim},     {"n_layers", c.n_layers},         {"n_heads", c.n_heads},
           {"embed_dim", c.embed_dim},     {"feedforward_dim", c.feedforward_dim}, {"dropout", c.dropout},
           {"num_verbs", c.num_verbs},     {"num_nouns", c.num_nouns},       {"num_actions", c.num_actions},
           {"multi_scale", c.multi_scale}, {"scales", c.scales},             {"max_seq_len", c.max_seq_len},
           {"future_tokens", c.future_tokens}};
}
inline void from_json(const Json& j, ModelConfig& c) {
  detail::read_opt(j, "input_dim", c.input_dim);
  detail::read_opt(j, "n_layers", c.n_layers);
  detail::read_opt(j, "n_heads", c.n_heads);
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "feedforward_dim", c.feedforward_dim);
  detail::read_opt(j, "dropout", c.dropout);
  detail::read_opt(j, "num_verbs", c.num_verbs);
  detail::read_opt(j, "num_nouns", c.num_nouns);
  detail::read_opt(j, "num_actions", c.num_actions);
  detail::read_opt(j, "multi_scale", c.multi_scale);
  detail::read_opt(j, "scales", c.scales);
  detail::read_opt(j, "max_seq_len", c.max_seq_len);
  detail::read_opt(j, "future_tokens", c.future_tokens);
}

inline void to_json(Json& j, const DistillConfig& c) {
  j = Json{{"temperature", c.temperature}, {"kd_weight", c.kd_weight}, {"ce_weight", c.ce_weight},
           {"positionwise_ce_weight", c.positionwise_ce_weight}};
}
inline void from_json(const Json& j, DistillConfig& c) {
  detail::read_opt(j, "temperature", c.temperature);
  detail::read_opt(j, "kd_weight", c.kd_weight);
  detail::read_opt(j, "ce_weight", c.ce_weight);
  detail::read_opt(j, "positionwise_ce_weight", c.positionwise_ce_weight);
}

inline void to_json(Json& j, const VnrmConfig& c) {
  j = Json{{"verb_context_dim", c.verb_context_dim}, {"relation_heads", c.relation_heads},
           {"use_kd", c.use_kd}, {"share_backbone", c.share_backbone}};
}
inline void from_json(const Json& j, VnrmConfig& c) {
  detail::read_opt(j, "verb_context_dim", c.verb_context_dim);
  detail::read_opt(j, "relation_heads", c.relation_heads);
  detail::read_opt(j, "use_kd", c.use_kd);
  detail::read_opt(j, "share_backbone", c.share_backbone);
}

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"batch_size", c.batch_size},     {"smoothing", c.smoothing},     {"weight_decay", c.weight_decay},
           {"base_lr", c.base_lr},           {"max_epochs", c.max_epochs},   {"cycle_epochs", c.cycle_epochs},
           {"warmup_epochs", c.warmup_epochs}, {"n_cycles", c.n_cycles},     {"min_lr", c.min_lr},
           {"seed", c.seed},                 {"beta1", c.beta1},             {"beta2", c.beta2},
           {"adam_eps", c.adam_eps}};
  j["grad_clip"] = c.grad_clip ? Json(*c.grad_clip) : Json(nullptr);
}
inline void from_json(const Json& j, TrainConfig& c) {
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "smoothing", c.smoothing);
  detail::read_opt(j, "weight_decay", c.weight_decay);
  detail::read_opt(j, "base_lr", c.base_lr);
  detail::read_opt(j, "max_epochs", c.max_epochs);
  detail::read_opt(j, "cycle_epochs", c.cycle_epochs);
  detail::read_opt(j, "warmup_epochs", c.warmup_epochs);
  detail::read_opt(j, "n_cycles", c.n_cycles);
  detail::read_opt(j, "min_lr", c.min_lr);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "beta1", c.beta1);
  detail::read_opt(j, "beta2", c.beta2);
  detail::read_opt(j, "adam_eps", c.adam_eps);
  if (auto it = j.find("grad_clip"); it != j.end()) {
    c.grad_clip = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
  }
}

}  // namespace antic
