#pragma once

// On-disk dataset bundle:
//
//   task.json                      TaskConfig
//   actions.csv                    verb_id,noun_id,action_id (valid pairs)
//   features/<video_id>.feat       per-video clip features
//   annotations_{train,val,test}.csv
//   splits/unseen_participants.txt
//   splits/tail_classes.txt

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "antic/config.hpp"
#include "antic/data.hpp"
#include "antic/evaluate.hpp"
#include "antic/feature_io.hpp"
#include "antic/metrics.hpp"

namespace antic {

namespace fs = std::filesystem;

struct DatasetBundle {
  TaskConfig task;
  ActionVocabulary vocab;
  std::map<std::string, ClipTimeline> timelines;
  std::vector<AnnotationRow> train;
  std::vector<AnnotationRow> val;
  std::vector<AnnotationRow> test;
  SplitSpec split;

  const std::vector<AnnotationRow>& rows(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown dataset split '" + name + "' (expected train, val or test)");
  }
};

inline void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_vocabulary(const fs::path& path, const ActionVocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "verb_id,noun_id,action_id\n";
  for (int a = 0; a < vocab.size(); ++a) {
    const auto [v, n] = vocab.pair(a);
    out << v << ',' << n << ',' << a << '\n';
  }
}

inline ActionVocabulary read_vocabulary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::map<std::pair<int, int>, int> pairs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    int v = 0, n = 0, a = 0;
    try {
      v = std::stoi(f[0]);
      n = std::stoi(f[1]);
      a = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-integer field");
    }
    if (!pairs.emplace(std::make_pair(v, n), a).second)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": duplicate verb/noun pair");
  }
  return ActionVocabulary(pairs);
}

inline void write_dataset(const fs::path& dir, const DatasetBundle& d) {
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "splits");
  write_json_file(dir / "task.json", Json(d.task));
  write_vocabulary(dir / "actions.csv", d.vocab);
  for (const auto& [vid, tl] : d.timelines) {
    Matrix f(static_cast<Eigen::Index>(tl.clips.size()), tl.feature_dim);
    for (std::size_t i = 0; i < tl.clips.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = tl.clips[i].features;
    write_features((dir / "features" / (vid + ".feat")).string(), f);
  }
  write_annotations((dir / "annotations_train.csv").string(), d.train);
  write_annotations((dir / "annotations_val.csv").string(), d.val);
  write_annotations((dir / "annotations_test.csv").string(), d.test);
  write_split_spec((dir / "splits" / "unseen_participants.txt").string(), (dir / "splits" / "tail_classes.txt").string(),
                   d.split);
}

inline DatasetBundle load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  DatasetBundle d;
  d.task = read_json_file(dir / "task.json").get<TaskConfig>();
  d.task.validate();
  d.vocab = read_vocabulary(dir / "actions.csv");
  d.train = load_annotations((dir / "annotations_train.csv").string(), d.task);
  d.val = load_annotations((dir / "annotations_val.csv").string(), d.task);
  d.test = load_annotations((dir / "annotations_test.csv").string(), d.task);
  d.split = read_split_spec((dir / "splits" / "unseen_participants.txt").string(),
                            (dir / "splits" / "tail_classes.txt").string());
  d.split.validate(d.task);
  std::map<std::string, std::vector<AnnotationRow>> by_video;
  for (const auto* rows : {&d.train, &d.val, &d.test})
    for (const auto& r : *rows) by_video[r.video_id].push_back(r);
  for (const auto& [vid, rows] : by_video) {
    const fs::path p = dir / "features" / (vid + ".feat");
    d.timelines.emplace(vid, build_timeline(vid, read_features(p.string()), rows, d.task));
  }
  return d;
}

}  // namespace antic
