#pragma once

// Clip timelines, annotation ingestion, nearest-label propagation and
// anticipation-instance construction.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "antic/autograd.hpp"
#include "antic/config.hpp"
#include "antic/error.hpp"

namespace antic {

struct ActionLabel {
  int verb = 0;
  int noun = 0;
  int action = 0;

  friend bool operator==(const ActionLabel&, const ActionLabel&) = default;
};

struct Clip {
  int index = 0;
  double start_time = 0.0;
  double duration = 1.0;
  Eigen::RowVectorXd features;
  std::optional<ActionLabel> label;
};

struct ClipTimeline {
  std::string video_id;
  int feature_dim = 0;
  std::vector<Clip> clips;

  std::size_t size() const { return clips.size(); }

  void validate() const {
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const Clip& c = clips[i];
      if (c.index != static_cast<int>(i)) throw ValidationError("timeline " + video_id + ": clip indices not contiguous");
      if (!(c.duration > 0.0)) throw ValidationError("timeline " + video_id + ": clip duration must be > 0");
      if (c.features.size() != feature_dim) throw ShapeError("timeline " + video_id + ": clip feature width != D");
      if (!c.features.allFinite()) throw NumericError("timeline " + video_id + ": non-finite clip feature");
    }
  }
};

/// One row of an annotation file.
struct AnnotationRow {
  std::string segment_id;
  std::string participant_id;
  std::string video_id;
  double start = 0.0;
  double stop = 0.0;
  ActionLabel label;
};

struct AnticipationInstance {
  std::string video_id;
  std::string segment_id;
  std::string participant_id;
  std::vector<Clip> observed;
  /// Number of clips covering the anticipation time (G).
  int gap_positions = 1;
  ActionLabel target;

  int first_observed() const { return observed.empty() ? 0 : observed.front().index; }
  int first_gap() const { return first_observed() + static_cast<int>(observed.size()); }
};

/// Teacher view of an instance: real features for observed and gap clips with
/// one propagated label per position.
struct FullSequence {
  Matrix features;
  std::vector<ActionLabel> labels;
};

/// Everything a model of any variant needs for one annotated segment.
/// Students read only `observed`; `gap` is there for full-video teachers.
struct Example {
  std::string segment_id;
  std::string participant_id;
  Matrix observed;
  Matrix gap;
  std::vector<ActionLabel> observed_labels;
  std::vector<ActionLabel> gap_labels;
  ActionLabel target;

  int observed_len() const { return static_cast<int>(observed.rows()); }
  int gap_len() const { return static_cast<int>(gap.rows()); }
};

inline void check_label_bounds(const ActionLabel& l, const TaskConfig& task, const std::string& where) {
  if (l.verb < 0 || l.verb >= task.num_verbs) throw ValidationError(where + ": verb_id " + std::to_string(l.verb) + " out of range");
  if (l.noun < 0 || l.noun >= task.num_nouns) throw ValidationError(where + ": noun_id " + std::to_string(l.noun) + " out of range");
  if (task.num_actions > 0 && (l.action < 0 || l.action >= task.num_actions))
    throw ValidationError(where + ": action_id " + std::to_string(l.action) + " out of range");
}

/// Checks action ids against a (verb, noun) -> action mapping.
inline void check_action_mapping(const std::vector<AnnotationRow>& rows, const std::map<std::pair<int, int>, int>& mapping) {
  for (const auto& r : rows) {
    auto it = mapping.find({r.label.verb, r.label.noun});
    if (it == mapping.end() || it->second != r.label.action)
      throw ValidationError("segment " + r.segment_id + ": action_id inconsistent with (verb, noun) mapping");
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line_no, const char* column) {
  T value{};
  std::istringstream in(s);
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ParseError("annotations line " + std::to_string(line_no) + ": bad " + column + " '" + s + "'");
  }
  return value;
}

}  // namespace detail

inline const char* annotation_header() {
  return "segment_id,participant_id,video_id,start_sec,stop_sec,verb_id,noun_id,action_id";
}

/// Parses comma-delimited annotation rows (header first) in file order.
inline std::vector<AnnotationRow> parse_annotations(std::istream& in, const TaskConfig& task) {
  std::vector<AnnotationRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("segment_id", 0) == 0) continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 8) {
      throw ParseError("annotations line " + std::to_string(line_no) + ": expected 8 columns, got " +
                       std::to_string(cells.size()));
    }
    AnnotationRow r;
    r.segment_id = cells[0];
    r.participant_id = cells[1];
    r.video_id = cells[2];
    r.start = detail::parse_number<double>(cells[3], line_no, "start_sec");
    r.stop = detail::parse_number<double>(cells[4], line_no, "stop_sec");
    r.label.verb = detail::parse_number<int>(cells[5], line_no, "verb_id");
    r.label.noun = detail::parse_number<int>(cells[6], line_no, "noun_id");
    r.label.action = detail::parse_number<int>(cells[7], line_no, "action_id");
    if (r.segment_id.empty() || r.video_id.empty())
      throw ParseError("annotations line " + std::to_string(line_no) + ": empty segment_id or video_id");
    if (!(r.stop > r.start) || r.start < 0.0)
      throw ParseError("annotations line " + std::to_string(line_no) + ": need 0 <= start_sec < stop_sec");
    check_label_bounds(r.label, task, "annotations line " + std::to_string(line_no));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<AnnotationRow> load_annotations(const std::string& path, const TaskConfig& task) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path);
  return parse_annotations(in, task);
}

inline void write_annotations(std::ostream& out, const std::vector<AnnotationRow>& rows) {
  out << annotation_header() << '\n';
  char buf[64];
  for (const auto& r : rows) {
    out << r.segment_id << ',' << r.participant_id << ',' << r.video_id << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.start);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.stop);
    out << buf << ',' << r.label.verb << ',' << r.label.noun << ',' << r.label.action << '\n';
  }
}

inline void write_annotations(const std::string& path, const std::vector<AnnotationRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write annotation file " + path);
  write_annotations(out, rows);
}

/// Builds a uniform-clip timeline from per-clip features (rows) and the
/// annotation rows of this video. A clip is labeled when its midpoint lies in
/// [start, stop) of some segment; overlaps go to the later-starting segment.
/// When video_duration is given the feature row count must match it.
inline ClipTimeline build_timeline(const std::string& video_id, const Matrix& features,
                                   const std::vector<AnnotationRow>& annotations, const TaskConfig& task,
                                   std::optional<double> video_duration = std::nullopt) {
  const double dur = task.clip_duration;
  if (!(dur > 0.0)) throw ConfigError("task: clip_duration must be > 0");
  if (video_duration) {
    auto n = detail::exact_ratio(*video_duration, dur);
    if (!n || *n != features.rows()) {
      throw ShapeError("video " + video_id + ": " + std::to_string(features.rows()) +
                       " feature rows do not match duration / clip_duration");
    }
  }
  ClipTimeline tl;
  tl.video_id = video_id;
  tl.feature_dim = static_cast<int>(features.cols());
  tl.clips.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Clip c;
    c.index = static_cast<int>(i);
    c.start_time = static_cast<double>(i) * dur;
    c.duration = dur;
    c.features = features.row(i);
    tl.clips.push_back(std::move(c));
  }
  std::vector<double> owner_start(tl.clips.size(), -1.0);
  for (const auto& row : annotations) {
    if (row.video_id != video_id) continue;
    for (auto& c : tl.clips) {
      const double mid = c.start_time + 0.5 * dur;
      if (mid >= row.start && mid < row.stop && row.start >= owner_start[static_cast<std::size_t>(c.index)]) {
        c.label = row.label;
        owner_start[static_cast<std::size_t>(c.index)] = row.start;
      }
    }
  }
  tl.validate();
  return tl;
}

/// Gives every unlabeled clip the label of its nearest labeled clip by index
/// distance; equal distances resolve to the later clip.
inline ClipTimeline propagate_labels(ClipTimeline timeline) {
  const int n = static_cast<int>(timeline.clips.size());
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  std::vector<int> next(static_cast<std::size_t>(n), -1);
  int last = -1;
  for (int i = 0; i < n; ++i) {
    if (timeline.clips[static_cast<std::size_t>(i)].label) last = i;
    prev[static_cast<std::size_t>(i)] = last;
  }
  if (last < 0) throw ValidationError("timeline " + timeline.video_id + ": no labeled clip to propagate from");
  last = -1;
  for (int i = n - 1; i >= 0; --i) {
    if (timeline.clips[static_cast<std::size_t>(i)].label) last = i;
    next[static_cast<std::size_t>(i)] = last;
  }
  std::vector<std::optional<ActionLabel>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& c = timeline.clips[static_cast<std::size_t>(i)];
    if (c.label) {
      out[static_cast<std::size_t>(i)] = c.label;
      continue;
    }
    const int p = prev[static_cast<std::size_t>(i)];
    const int q = next[static_cast<std::size_t>(i)];
    int src;
    if (p < 0) {
      src = q;
    } else if (q < 0) {
      src = p;
    } else {
      src = (q - i <= i - p) ? q : p;
    }
    out[static_cast<std::size_t>(i)] = timeline.clips[static_cast<std::size_t>(src)].label;
  }
  for (int i = 0; i < n; ++i) timeline.clips[static_cast<std::size_t>(i)].label = out[static_cast<std::size_t>(i)];
  return timeline;
}

/// Cuts the observation window [start - anticipation_time - observed_duration,
/// start - anticipation_time) for one segment. Returns nullopt (and fills
/// `why` when given) when the video has too little history or too few clips.
inline std::optional<AnticipationInstance> make_instance(const ClipTimeline& timeline, const AnnotationRow& segment,
                                                         const TaskConfig& task, std::string* why = nullptr) {
  const double dur = task.clip_duration;
  const int n_obs = task.observed_clips();
  const int n_gap = task.gap_clips();
  auto skip = [&](const std::string& reason) -> std::optional<AnticipationInstance> {
    if (why != nullptr) *why = "segment " + segment.segment_id + ": " + reason;
    return std::nullopt;
  };
  if (segment.video_id != timeline.video_id) throw ValidationError("make_instance: segment belongs to another video");
  const double window_end = segment.start - task.anticipation_time;
  if (window_end - task.observed_duration < -1e-9) return skip("insufficient preceding video");
  const int end_clip = static_cast<int>(std::floor(window_end / dur + 1e-9));
  const int first = end_clip - n_obs;
  if (first < 0) return skip("insufficient preceding video");
  if (end_clip + n_gap > static_cast<int>(timeline.size())) return skip("anticipation gap runs past the timeline");
  AnticipationInstance inst;
  inst.video_id = timeline.video_id;
  inst.segment_id = segment.segment_id;
  inst.participant_id = segment.participant_id;
  inst.gap_positions = n_gap;
  inst.target = segment.label;
  inst.observed.assign(timeline.clips.begin() + first, timeline.clips.begin() + end_clip);
  return inst;
}

/// Observed + gap features with per-position propagated labels (teacher input).
inline FullSequence full_sequence(const AnticipationInstance& inst, const ClipTimeline& propagated) {
  if (inst.video_id != propagated.video_id) throw ValidationError("full_sequence: instance from another timeline");
  const int first = inst.first_observed();
  const int len = static_cast<int>(inst.observed.size()) + inst.gap_positions;
  if (first + len > static_cast<int>(propagated.size())) throw ShapeError("full_sequence: gap beyond timeline end");
  FullSequence seq;
  seq.features.resize(len, propagated.feature_dim);
  for (int i = 0; i < len; ++i) {
    const Clip& c = propagated.clips[static_cast<std::size_t>(first + i)];
    if (!c.label) throw Error("full_sequence: position " + std::to_string(i) + " has no label after propagation");
    seq.features.row(i) = c.features;
    seq.labels.push_back(*c.label);
  }
  return seq;
}

inline Example make_example(const AnticipationInstance& inst, const ClipTimeline& propagated) {
  FullSequence seq = full_sequence(inst, propagated);
  const int n_obs = static_cast<int>(inst.observed.size());
  Example ex;
  ex.segment_id = inst.segment_id;
  ex.participant_id = inst.participant_id;
  ex.observed = seq.features.topRows(n_obs);
  ex.gap = seq.features.bottomRows(inst.gap_positions);
  ex.observed_labels.assign(seq.labels.begin(), seq.labels.begin() + n_obs);
  ex.gap_labels.assign(seq.labels.begin() + n_obs, seq.labels.end());
  ex.target = inst.target;
  return ex;
}

/// Builds examples for every segment of `rows` that has enough history.
/// Skipped segments are reported through `warnings`.
inline std::vector<Example> build_examples(const std::map<std::string, ClipTimeline>& timelines,
                                           const std::vector<AnnotationRow>& rows, const TaskConfig& task,
                                           std::vector<std::string>* warnings = nullptr) {
  std::map<std::string, ClipTimeline> propagated;
  std::vector<Example> out;
  for (const auto& row : rows) {
    auto tl = timelines.find(row.video_id);
    if (tl == timelines.end()) throw ValidationError("segment " + row.segment_id + ": no features for video " + row.video_id);
    auto pit = propagated.find(row.video_id);
    if (pit == propagated.end()) pit = propagated.emplace(row.video_id, propagate_labels(tl->second)).first;
    std::string why;
    auto inst = make_instance(pit->second, row, task, &why);
    if (!inst) {
      if (warnings != nullptr) warnings->push_back(why);
      continue;
    }
    out.push_back(make_example(*inst, pit->second));
  }
  return out;
}

}  // namespace antic
