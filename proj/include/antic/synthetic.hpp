#pragma once

// Synthetic videos with a controllable verb -> noun grammar.
//
// A video is a run of action segments separated by single gap clips. Each
// segment's verb follows a seeded Markov transition from the previous verb,
// and its noun is verb_to_noun_map applied to the previous segment's verb or,
// with NounSource::own_verb, to the segment's own verb (with probability
// noun_rule_prob, otherwise drawn from a seeded per-cue distribution whose
// peakedness is noun_sharpness; 0 means uniform). Clip features are the
// action prototype (verb prototype + noun prototype) plus Gaussian noise; a gap clip mixes the
// next and previous prototypes by gap_signal_strength. All values are
// rounded to float32 so that in-memory and on-disk datasets agree exactly.

#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "antic/config.hpp"
#include "antic/data.hpp"
#include "antic/evaluate.hpp"
#include "antic/metrics.hpp"

namespace antic {

enum class NounSource { previous_verb, own_verb };

inline const char* noun_source_name(NounSource s) { return s == NounSource::own_verb ? "own_verb" : "previous_verb"; }

inline NounSource parse_noun_source(const std::string& s) {
  if (s == "previous_verb") return NounSource::previous_verb;
  if (s == "own_verb") return NounSource::own_verb;
  throw ConfigError("unknown noun_source '" + s + "' (expected previous_verb or own_verb)");
}

struct SyntheticGrammarConfig {
  int num_verbs = 10;
  int num_nouns = 15;
  int feature_dim = 32;
  double noise_scale = 0.5;
  double gap_signal_strength = 0.8;
  /// Previous verb -> next noun. Empty: drawn from the seed.
  std::vector<int> verb_to_noun_map;
  double noun_rule_prob = 1.0;
  /// Scale of the per-cue noun logits used when the rule is not followed.
  double noun_sharpness = 0.0;
  NounSource noun_source = NounSource::previous_verb;
  /// Scale of the next-verb transition logits; 0 gives uniform transitions.
  double transition_sharpness = 2.0;
  double prototype_scale = 1.0;
  int min_segment_clips = 2;
  int max_segment_clips = 4;
  int num_participants = 10;
  int unseen_participants = 2;
  double clip_duration = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_verbs < 1 || num_nouns < 1 || feature_dim < 1) throw ValidationError("synthetic: class counts and D must be >= 1");
    if (noise_scale < 0.0) throw ValidationError("synthetic: noise_scale must be >= 0");
    if (gap_signal_strength < 0.0 || gap_signal_strength > 1.0)
      throw ValidationError("synthetic: gap_signal_strength must lie in [0, 1]");
    if (noun_rule_prob < 0.0 || noun_rule_prob > 1.0) throw ValidationError("synthetic: noun_rule_prob must lie in [0, 1]");
    if (transition_sharpness < 0.0 || noun_sharpness < 0.0 || prototype_scale < 0.0) throw ValidationError("synthetic: scales must be >= 0");
    if (min_segment_clips < 1 || max_segment_clips < min_segment_clips)
      throw ValidationError("synthetic: need 1 <= min_segment_clips <= max_segment_clips");
    if (num_participants < 1 || unseen_participants < 0 || unseen_participants >= num_participants)
      throw ValidationError("synthetic: need 0 <= unseen_participants < num_participants");
    if (!(clip_duration > 0.0)) throw ValidationError("synthetic: clip_duration must be > 0");
    if (!verb_to_noun_map.empty()) {
      if (static_cast<int>(verb_to_noun_map.size()) != num_verbs)
        throw ValidationError("synthetic: verb_to_noun_map needs one entry per verb");
      for (int n : verb_to_noun_map)
        if (n < 0 || n >= num_nouns) throw ValidationError("synthetic: verb_to_noun_map entry out of range");
    }
  }
};

inline void to_json(Json& j, const SyntheticGrammarConfig& c) {
  j = Json{{"num_verbs", c.num_verbs},
           {"num_nouns", c.num_nouns},
           {"feature_dim", c.feature_dim},
           {"noise_scale", c.noise_scale},
           {"gap_signal_strength", c.gap_signal_strength},
           {"verb_to_noun_map", c.verb_to_noun_map},
           {"noun_rule_prob", c.noun_rule_prob},
           {"noun_sharpness", c.noun_sharpness},
           {"noun_source", noun_source_name(c.noun_source)},
           {"transition_sharpness", c.transition_sharpness},
           {"prototype_scale", c.prototype_scale},
           {"min_segment_clips", c.min_segment_clips},
           {"max_segment_clips", c.max_segment_clips},
           {"num_participants", c.num_participants},
           {"unseen_participants", c.unseen_participants},
           {"clip_duration", c.clip_duration},
           {"seed", c.seed}};
}

inline void from_json(const Json& j, SyntheticGrammarConfig& c) {
  detail::read_opt(j, "num_verbs", c.num_verbs);
  detail::read_opt(j, "num_nouns", c.num_nouns);
  detail::read_opt(j, "feature_dim", c.feature_dim);
  detail::read_opt(j, "noise_scale", c.noise_scale);
  detail::read_opt(j, "gap_signal_strength", c.gap_signal_strength);
  detail::read_opt(j, "verb_to_noun_map", c.verb_to_noun_map);
  detail::read_opt(j, "noun_rule_prob", c.noun_rule_prob);
  detail::read_opt(j, "noun_sharpness", c.noun_sharpness);
  if (j.contains("noun_source")) c.noun_source = parse_noun_source(j.at("noun_source").get<std::string>());
  detail::read_opt(j, "transition_sharpness", c.transition_sharpness);
  detail::read_opt(j, "prototype_scale", c.prototype_scale);
  detail::read_opt(j, "min_segment_clips", c.min_segment_clips);
  detail::read_opt(j, "max_segment_clips", c.max_segment_clips);
  detail::read_opt(j, "num_participants", c.num_participants);
  detail::read_opt(j, "unseen_participants", c.unseen_participants);
  detail::read_opt(j, "clip_duration", c.clip_duration);
  detail::read_opt(j, "seed", c.seed);
}

/// The fixed random structure behind a synthetic dataset.
struct SyntheticGrammar {
  Matrix verb_prototypes;  // K_v x D
  Matrix noun_prototypes;  // K_n x D
  Matrix verb_transitions; // K_v x K_v, rows on the simplex
  std::vector<int> verb_to_noun;
  Matrix noun_fallback;    // K_v x K_n, rows on the simplex; empty when uniform

  /// float32-rounded prototype of action (verb, noun).
  Eigen::RowVectorXd prototype(int verb, int noun) const {
    Eigen::RowVectorXd p = verb_prototypes.row(verb) + noun_prototypes.row(noun);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = static_cast<float>(p(i));
    return p;
  }
};

struct SyntheticDataset {
  TaskConfig task;
  SyntheticGrammar grammar;
  std::vector<ClipTimeline> videos;
  std::vector<AnnotationRow> annotations;
  ActionVocabulary vocab;
};

inline SyntheticGrammar make_grammar(const SyntheticGrammarConfig& c) {
  std::seed_seq seq{c.seed, std::uint64_t{0x9a3}};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticGrammar g;
  g.verb_prototypes.resize(c.num_verbs, c.feature_dim);
  g.noun_prototypes.resize(c.num_nouns, c.feature_dim);
  for (Eigen::Index i = 0; i < g.verb_prototypes.size(); ++i) g.verb_prototypes.data()[i] = c.prototype_scale * normal(rng);
  for (Eigen::Index i = 0; i < g.noun_prototypes.size(); ++i) g.noun_prototypes.data()[i] = c.prototype_scale * normal(rng);
  g.verb_transitions.resize(c.num_verbs, c.num_verbs);
  for (int v = 0; v < c.num_verbs; ++v) {
    for (int w = 0; w < c.num_verbs; ++w) g.verb_transitions(v, w) = std::exp(c.transition_sharpness * normal(rng));
    g.verb_transitions.row(v) /= g.verb_transitions.row(v).sum();
  }
  if (c.verb_to_noun_map.empty()) {
    std::uniform_int_distribution<int> pick(0, c.num_nouns - 1);
    for (int v = 0; v < c.num_verbs; ++v) g.verb_to_noun.push_back(pick(rng));
  } else {
    g.verb_to_noun = c.verb_to_noun_map;
  }
  if (c.noun_sharpness > 0.0) {
    g.noun_fallback.resize(c.num_verbs, c.num_nouns);
    for (int v = 0; v < c.num_verbs; ++v) {
      for (int n = 0; n < c.num_nouns; ++n) g.noun_fallback(v, n) = std::exp(c.noun_sharpness * normal(rng));
      g.noun_fallback.row(v) /= g.noun_fallback.row(v).sum();
    }
  }
  return g;
}

inline std::string video_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vid%04d", i);
  return buf;
}

inline std::string participant_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%02d", i);
  return buf;
}

/// Deterministic in (config, n_videos, clips_per_video). Video i belongs to
/// participant i mod num_participants.
inline SyntheticDataset generate_synthetic(const SyntheticGrammarConfig& c, int n_videos, int clips_per_video) {
  c.validate();
  if (n_videos < 1) throw ValidationError("synthetic: n_videos must be >= 1");
  if (clips_per_video < c.min_segment_clips) throw ValidationError("synthetic: clips_per_video shorter than one segment");
  SyntheticDataset ds;
  ds.task.clip_duration = c.clip_duration;
  ds.task.anticipation_time = c.clip_duration;
  ds.task.observed_duration = 4.0 * c.clip_duration;
  ds.task.num_verbs = c.num_verbs;
  ds.task.num_nouns = c.num_nouns;
  ds.task.num_actions = c.num_verbs * c.num_nouns;
  ds.grammar = make_grammar(c);
  ds.vocab = ActionVocabulary::dense(c.num_verbs, c.num_nouns);
  const SyntheticGrammar& g = ds.grammar;

  for (int vi = 0; vi < n_videos; ++vi) {
    std::seed_seq seq{c.seed, std::uint64_t{0x71de0}, static_cast<std::uint64_t>(vi)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_int_distribution<int> seg_len(c.min_segment_clips, c.max_segment_clips);
    std::uniform_int_distribution<int> any_verb(0, c.num_verbs - 1);
    std::uniform_int_distribution<int> any_noun(0, c.num_nouns - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    struct Seg {
      int first;
      int len;
      ActionLabel label;
    };
    std::vector<Seg> segs;
    int cursor = 0;
    int prev_verb = -1;
    while (cursor + c.min_segment_clips <= clips_per_video) {
      int len = seg_len(rng);
      if (cursor + len > clips_per_video) break;
      int verb;
      int noun;
      if (prev_verb < 0) {
        verb = any_verb(rng);
      } else {
        std::discrete_distribution<int> next(g.verb_transitions.row(prev_verb).data(),
                                             g.verb_transitions.row(prev_verb).data() + c.num_verbs);
        verb = next(rng);
      }
      const int cue = c.noun_source == NounSource::own_verb ? verb : prev_verb;
      if (cue < 0) {
        noun = any_noun(rng);
      } else {
        const bool follow = unit(rng) < c.noun_rule_prob;
        if (follow) {
          noun = g.verb_to_noun[static_cast<std::size_t>(cue)];
        } else if (g.noun_fallback.size() > 0) {
          const double* row = g.noun_fallback.row(cue).data();
          noun = std::discrete_distribution<int>(row, row + c.num_nouns)(rng);
        } else {
          noun = any_noun(rng);
        }
      }
      segs.push_back(Seg{cursor, len, ActionLabel{verb, noun, verb * c.num_nouns + noun}});
      prev_verb = verb;
      cursor += len + 1;  // one gap clip
    }
    Matrix feats(clips_per_video, c.feature_dim);
    std::vector<std::optional<ActionLabel>> labels(static_cast<std::size_t>(clips_per_video));
    auto noisy = [&](const Eigen::RowVectorXd& base) {
      Eigen::RowVectorXd r(c.feature_dim);
      for (int d = 0; d < c.feature_dim; ++d) r(d) = static_cast<float>(base(d) + c.noise_scale * noise(rng));
      return r;
    };
    int filled = 0;
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const Seg& s = segs[k];
      const auto proto = g.prototype(s.label.verb, s.label.noun);
      for (int i = 0; i < s.len; ++i) {
        feats.row(s.first + i) = noisy(proto);
        labels[static_cast<std::size_t>(s.first + i)] = s.label;
      }
      filled = s.first + s.len;
      if (filled < clips_per_video) {
        // Gap clip after this segment (or trailing clip when none follows).
        Eigen::RowVectorXd mix = proto;
        if (k + 1 < segs.size()) {
          const auto nxt = g.prototype(segs[k + 1].label.verb, segs[k + 1].label.noun);
          mix = c.gap_signal_strength * nxt + (1.0 - c.gap_signal_strength) * proto;
        }
        feats.row(filled) = noisy(mix);
        ++filled;
      }
    }
    if (!segs.empty()) {
      const auto last = g.prototype(segs.back().label.verb, segs.back().label.noun);
      for (int i = filled; i < clips_per_video; ++i) feats.row(i) = noisy(last);
    } else {
      for (int i = filled; i < clips_per_video; ++i) feats.row(i) = noisy(Eigen::RowVectorXd::Zero(c.feature_dim));
    }

    const std::string vid = video_name(vi);
    const std::string participant = participant_name(vi % c.num_participants);
    std::vector<AnnotationRow> rows;
    for (std::size_t k = 0; k < segs.size(); ++k) {
      char sid[64];
      std::snprintf(sid, sizeof sid, "%s_%04zu", vid.c_str(), k);
      rows.push_back(AnnotationRow{sid, participant, vid, segs[k].first * c.clip_duration,
                                   (segs[k].first + segs[k].len) * c.clip_duration, segs[k].label});
    }
    ds.videos.push_back(build_timeline(vid, feats, rows, ds.task));
    ds.annotations.insert(ds.annotations.end(), rows.begin(), rows.end());
  }
  return ds;
}

/// Train / validation / test annotation rows plus the evaluation SplitSpec.
/// Videos of the last `unseen_participants` participants go to test only;
/// among the rest, video index mod 10 == 1 is validation, == 2 is test.
/// Tail classes are the rarest training classes covering 20% of training
/// segments (zero-count classes first, ties by class id).
struct DatasetSplits {
  std::vector<AnnotationRow> train;
  std::vector<AnnotationRow> val;
  std::vector<AnnotationRow> test;
  SplitSpec spec;
};

inline std::set<int> tail_classes(const std::vector<int>& labels, int num_classes, double fraction = 0.2) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] < counts[b]; });
  std::set<int> out;
  const double budget = fraction * static_cast<double>(labels.size());
  double covered = 0.0;
  for (int c : order) {
    if (covered >= budget && counts[static_cast<std::size_t>(c)] > 0) break;
    out.insert(c);
    covered += counts[static_cast<std::size_t>(c)];
  }
  return out;
}

inline DatasetSplits split_dataset(const std::vector<AnnotationRow>& rows, const TaskConfig& task,
                                   const std::set<std::string>& unseen) {
  DatasetSplits s;
  s.spec.unseen_participants = unseen;
  for (const auto& r : rows) {
    if (unseen.contains(r.participant_id)) {
      s.test.push_back(r);
      continue;
    }
    int vi = 0;
    std::sscanf(r.video_id.c_str(), "vid%d", &vi);
    switch (vi % 10) {
      case 1: s.val.push_back(r); break;
      case 2: s.test.push_back(r); break;
      default: s.train.push_back(r); break;
    }
  }
  std::vector<int> v, n, a;
  for (const auto& r : s.train) {
    v.push_back(r.label.verb);
    n.push_back(r.label.noun);
    a.push_back(r.label.action);
  }
  s.spec.tail_verbs = tail_classes(v, task.num_verbs);
  s.spec.tail_nouns = tail_classes(n, task.num_nouns);
  if (task.num_actions > 0) s.spec.tail_actions = tail_classes(a, task.num_actions);
  return s;
}

inline DatasetSplits split_synthetic(const SyntheticDataset& ds, const SyntheticGrammarConfig& c) {
  std::set<std::string> unseen;
  for (int p = c.num_participants - c.unseen_participants; p < c.num_participants; ++p) unseen.insert(participant_name(p));
  return split_dataset(ds.annotations, ds.task, unseen);
}

}  // namespace antic
