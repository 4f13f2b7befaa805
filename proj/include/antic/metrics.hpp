#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "antic/autograd.hpp"
#include "antic/error.hpp"

namespace antic {

struct ClassRecall {
  int instances = 0;
  int hits = 0;
  double recall() const { return instances > 0 ? static_cast<double>(hits) / instances : 0.0; }
};

struct RecallResult {
  /// Percent in [0, 100]; empty when no class has a ground-truth instance.
  std::optional<double> mean_percent;
  std::map<int, ClassRecall> per_class;
  std::vector<std::string> warnings;
};

/// Indices of the k highest scores of a row. Equal scores rank the lower
/// class index first.
inline std::vector<int> top_k_classes(const Eigen::Ref<const Eigen::RowVectorXd>& scores, int k) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = static_cast<std::ptrdiff_t>(std::min<std::size_t>(static_cast<std::size_t>(k), idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](int a, int b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(kk));
  return idx;
}

/// Class-mean top-k recall. Each class with at least one ground-truth
/// instance (restricted to class_filter when given) contributes the fraction
/// of its instances whose true class is among the top k scores; the mean is
/// unweighted over those classes.
inline RecallResult mean_top_k_recall(const Matrix& scores, const std::vector<int>& labels, int k,
                                      const std::optional<std::set<int>>& class_filter = std::nullopt) {
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) throw ShapeError("recall: label count != score rows");
  RecallResult res;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= scores.cols()) throw ShapeError("recall: label " + std::to_string(c) + " outside prediction width");
    if (class_filter && !class_filter->contains(c)) continue;
    ClassRecall& cr = res.per_class[c];
    ++cr.instances;
    const auto top = top_k_classes(scores.row(static_cast<Eigen::Index>(i)), k);
    if (std::find(top.begin(), top.end(), c) != top.end()) ++cr.hits;
  }
  if (class_filter) {
    for (int c : *class_filter)
      if (!res.per_class.contains(c)) res.warnings.push_back("class " + std::to_string(c) + " has no ground-truth instance; excluded");
  }
  if (!res.per_class.empty()) {
    double total = 0.0;
    for (const auto& [c, cr] : res.per_class) total += cr.recall();
    res.mean_percent = 100.0 * total / static_cast<double>(res.per_class.size());
  }
  return res;
}

inline RecallResult mean_top5_recall(const Matrix& scores, const std::vector<int>& labels,
                                     const std::optional<std::set<int>>& class_filter = std::nullopt) {
  return mean_top_k_recall(scores, labels, 5, class_filter);
}

/// Action id -> (verb, noun) table, indexed by action id.
class ActionVocabulary {
 public:
  ActionVocabulary() = default;

  /// Validates that action ids are unique and cover 0..K_a-1.
  explicit ActionVocabulary(const std::map<std::pair<int, int>, int>& valid_pairs) {
    std::map<int, std::pair<int, int>> by_action;
    for (const auto& [pair, a] : valid_pairs) {
      if (!by_action.emplace(a, pair).second) throw ConfigError("action vocabulary: duplicate action id " + std::to_string(a));
    }
    for (const auto& [a, pair] : by_action) {
      if (a != static_cast<int>(pairs_.size())) throw ConfigError("action vocabulary: action ids must cover 0..K_a-1");
      pairs_.push_back(pair);
    }
  }

  /// Every (verb, noun) pair, action = verb * num_nouns + noun.
  static ActionVocabulary dense(int num_verbs, int num_nouns) {
    std::map<std::pair<int, int>, int> m;
    for (int v = 0; v < num_verbs; ++v)
      for (int n = 0; n < num_nouns; ++n) m[{v, n}] = v * num_nouns + n;
    return ActionVocabulary(m);
  }

  int size() const { return static_cast<int>(pairs_.size()); }
  const std::pair<int, int>& pair(int action) const { return pairs_.at(static_cast<std::size_t>(action)); }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

  std::map<std::pair<int, int>, int> to_map() const {
    std::map<std::pair<int, int>, int> m;
    for (std::size_t a = 0; a < pairs_.size(); ++a) m[pairs_[a]] = static_cast<int>(a);
    return m;
  }

 private:
  std::vector<std::pair<int, int>> pairs_;
};

/// score(a) = verb[v(a)] * noun[n(a)], normalized over the vocabulary.
inline Eigen::RowVectorXd compose_action_scores(const Eigen::Ref<const Eigen::RowVectorXd>& verb_probs,
                                                const Eigen::Ref<const Eigen::RowVectorXd>& noun_probs,
                                                const ActionVocabulary& vocab) {
  Eigen::RowVectorXd out(vocab.size());
  for (int a = 0; a < vocab.size(); ++a) {
    const auto [v, n] = vocab.pair(a);
    if (v < 0 || v >= verb_probs.size() || n < 0 || n >= noun_probs.size())
      throw ShapeError("compose_action_scores: pair outside verb/noun width");
    out(a) = verb_probs(v) * noun_probs(n);
  }
  const double total = out.sum();
  if (!(total > 0.0)) throw NumericError("compose_action_scores: all composed scores are zero");
  return out / total;
}

}  // namespace antic
