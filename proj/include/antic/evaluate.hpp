#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "antic/config.hpp"
#include "antic/data.hpp"
#include "antic/metrics.hpp"
#include "antic/scores.hpp"

namespace antic {

enum class Head { verb = 0, noun = 1, action = 2 };
enum class Split { overall = 0, unseen = 1, tail = 2 };

inline const char* head_name(Head h) {
  switch (h) {
    case Head::verb: return "verb";
    case Head::noun: return "noun";
    case Head::action: return "action";
  }
  return "?";
}

inline const char* split_name(Split s) {
  switch (s) {
    case Split::overall: return "overall";
    case Split::unseen: return "unseen";
    case Split::tail: return "tail";
  }
  return "?";
}

inline constexpr std::array<Head, 3> kHeads{Head::verb, Head::noun, Head::action};
inline constexpr std::array<Split, 3> kSplits{Split::overall, Split::unseen, Split::tail};

/// Unseen-participant and tail-class membership, supplied from outside.
struct SplitSpec {
  std::set<std::string> unseen_participants;
  std::set<int> tail_verbs;
  std::set<int> tail_nouns;
  std::set<int> tail_actions;

  const std::set<int>& tail(Head h) const {
    switch (h) {
      case Head::verb: return tail_verbs;
      case Head::noun: return tail_nouns;
      default: return tail_actions;
    }
  }

  void validate(const TaskConfig& task) const {
    auto check = [](const std::set<int>& s, int bound, const char* head) {
      for (int c : s)
        if (c < 0 || c >= bound) throw ValidationError(std::string("split spec: tail ") + head + " class out of range");
    };
    check(tail_verbs, task.num_verbs, "verb");
    check(tail_nouns, task.num_nouns, "noun");
    if (task.num_actions > 0) check(tail_actions, task.num_actions, "action");
  }
};

inline void write_split_spec(const std::string& participants_path, const std::string& tail_path, const SplitSpec& s) {
  std::ofstream p(participants_path);
  if (!p) throw IoError("cannot write " + participants_path);
  for (const auto& id : s.unseen_participants) p << id << '\n';
  std::ofstream t(tail_path);
  if (!t) throw IoError("cannot write " + tail_path);
  for (Head h : kHeads)
    for (int c : s.tail(h)) t << head_name(h) << ' ' << c << '\n';
}

inline SplitSpec read_split_spec(const std::string& participants_path, const std::string& tail_path) {
  SplitSpec s;
  std::ifstream p(participants_path);
  if (!p) throw IoError("cannot open " + participants_path);
  std::string line;
  while (std::getline(p, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    s.unseen_participants.insert(line);
  }
  std::ifstream t(tail_path);
  if (!t) throw IoError("cannot open " + tail_path);
  std::size_t line_no = 0;
  while (std::getline(t, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    std::string head;
    int c = 0;
    if (!(in >> head >> c)) throw ParseError(tail_path + ":" + std::to_string(line_no) + ": expected '<head> <class_id>'");
    if (head == "verb") s.tail_verbs.insert(c);
    else if (head == "noun") s.tail_nouns.insert(c);
    else if (head == "action") s.tail_actions.insert(c);
    else throw ParseError(tail_path + ":" + std::to_string(line_no) + ": unknown head '" + head + "'");
  }
  return s;
}

struct RecallReport {
  std::string model_tag;
  /// cells[split][head]; empty when the split has no members for that head.
  std::array<std::array<std::optional<RecallResult>, 3>, 3> cells;
  std::vector<std::string> warnings;

  const std::optional<RecallResult>& cell(Split s, Head h) const {
    return cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(h)];
  }
  std::optional<double> mean(Split s, Head h) const {
    const auto& c = cell(s, h);
    return c ? c->mean_percent : std::nullopt;
  }
};

/// Overall / unseen / tail class-mean top-5 recall per head. Action scores
/// come from the file's action head when present, else from verb x noun
/// composition over `vocab`.
inline RecallReport evaluate(const ScoreFile& scores, const std::vector<AnnotationRow>& labels, const SplitSpec& split,
                             const std::optional<ActionVocabulary>& vocab = std::nullopt) {
  std::map<std::string, const AnnotationRow*> by_id;
  for (const auto& r : labels) by_id[r.segment_id] = &r;
  const bool composed = scores.num_actions == 0;
  if (composed && !vocab) throw ConfigError("evaluate: score file has no action head and no action vocabulary was given");
  const int n_actions = composed ? vocab->size() : scores.num_actions;
  const auto n = static_cast<Eigen::Index>(scores.records.size());

  std::array<Matrix, 3> all{Matrix(n, scores.num_verbs), Matrix(n, scores.num_nouns), Matrix(n, n_actions)};
  std::array<std::vector<int>, 3> truth;
  std::vector<bool> unseen(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const ScoreRecord& r = scores.records[static_cast<std::size_t>(i)];
    auto it = by_id.find(r.segment_id);
    if (it == by_id.end()) throw ValidationError("evaluate: segment " + r.segment_id + " has no label");
    const AnnotationRow& row = *it->second;
    all[0].row(i) = r.verb;
    all[1].row(i) = r.noun;
    all[2].row(i) = composed ? compose_action_scores(r.verb, r.noun, *vocab) : *r.action;
    truth[0].push_back(row.label.verb);
    truth[1].push_back(row.label.noun);
    truth[2].push_back(row.label.action);
    unseen[static_cast<std::size_t>(i)] = split.unseen_participants.contains(row.participant_id);
  }

  RecallReport rep;
  rep.model_tag = scores.model_tag;
  for (Head h : kHeads) {
    const auto hi = static_cast<std::size_t>(h);
    auto& overall = rep.cells[static_cast<std::size_t>(Split::overall)][hi];
    overall = mean_top5_recall(all[hi], truth[hi]);
    if (!overall->mean_percent) overall.reset();

    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i)
      if (unseen[static_cast<std::size_t>(i)]) rows.push_back(i);
    if (!rows.empty()) {
      Matrix sub(static_cast<Eigen::Index>(rows.size()), all[hi].cols());
      std::vector<int> sub_truth;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        sub.row(static_cast<Eigen::Index>(k)) = all[hi].row(rows[k]);
        sub_truth.push_back(truth[hi][static_cast<std::size_t>(rows[k])]);
      }
      rep.cells[static_cast<std::size_t>(Split::unseen)][hi] = mean_top5_recall(sub, sub_truth);
    }

    const auto& tail_set = split.tail(h);
    if (!tail_set.empty()) {
      RecallResult t = mean_top5_recall(all[hi], truth[hi], tail_set);
      for (auto& w : t.warnings) rep.warnings.push_back(std::string(head_name(h)) + " tail: " + w);
      if (t.mean_percent) rep.cells[static_cast<std::size_t>(Split::tail)][hi] = std::move(t);
    }
  }
  return rep;
}

/// Aligned text table: one row per report, Verb | Noun | Action per split.
inline std::string format_report_table(const std::vector<RecallReport>& reports) {
  std::size_t tag_w = 8;
  for (const auto& r : reports) tag_w = std::max(tag_w, r.model_tag.size());
  std::ostringstream out;
  char buf[64];
  auto pad = [&](const std::string& s, std::size_t w) { out << s << std::string(w > s.size() ? w - s.size() : 0, ' '); };
  pad("", tag_w + 2);
  for (Split s : kSplits) {
    std::string name = split_name(s);
    name[0] = static_cast<char>(std::toupper(name[0]));
    pad(name, 26);
  }
  out << '\n';
  pad("", tag_w + 2);
  for (std::size_t i = 0; i < kSplits.size(); ++i) {
    pad("Verb", 8);
    pad("Noun", 8);
    pad("Action", 10);
  }
  out << '\n';
  for (const auto& r : reports) {
    pad(r.model_tag, tag_w + 2);
    for (Split s : kSplits) {
      for (Head h : kHeads) {
        const auto m = r.mean(s, h);
        if (m) std::snprintf(buf, sizeof buf, "%.2f", *m);
        else std::snprintf(buf, sizeof buf, "-");
        pad(buf, h == Head::action ? 10 : 8);
      }
    }
    out << '\n';
  }
  return out.str();
}

inline Json report_to_json(const RecallReport& r) {
  Json j;
  j["model_tag"] = r.model_tag;
  for (Split s : kSplits) {
    Json js = Json::object();
    for (Head h : kHeads) {
      const auto& c = r.cell(s, h);
      if (!c) {
        js[head_name(h)] = nullptr;
        continue;
      }
      Json per = Json::object();
      int instances = 0;
      for (const auto& [cls, cr] : c->per_class) {
        per[std::to_string(cls)] = Json{{"instances", cr.instances}, {"hits", cr.hits}, {"recall", cr.recall()}};
        instances += cr.instances;
      }
      js[head_name(h)] = Json{{"mean_top5_recall", *c->mean_percent},
                              {"classes", c->per_class.size()},
                              {"instances", instances},
                              {"per_class", per}};
    }
    j[split_name(s)] = js;
  }
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace antic
