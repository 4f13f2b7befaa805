#pragma once

// Score files: per-segment verb / noun / optional action probability vectors
// produced by one model (or an ensemble of models).
//
//   antic-scores 1
//   model_tag <tag>
//   dims <K_v> <K_n> <K_a>          (K_a = 0 when there is no action head)
//   <segment_id>|<verb probs>|<noun probs>|<action probs>
//
// Probabilities are printed with 9 significant digits; records are sorted by
// segment_id on write.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "antic/autograd.hpp"
#include "antic/error.hpp"

namespace antic {

struct ScoreRecord {
  std::string segment_id;
  Eigen::RowVectorXd verb;
  Eigen::RowVectorXd noun;
  std::optional<Eigen::RowVectorXd> action;
};

struct ScoreFile {
  std::string model_tag;
  int num_verbs = 0;
  int num_nouns = 0;
  int num_actions = 0;
  std::vector<ScoreRecord> records;

  const ScoreRecord* find(const std::string& segment_id) const {
    for (const auto& r : records)
      if (r.segment_id == segment_id) return &r;
    return nullptr;
  }

  void validate(double tol = 1e-5) const {
    auto check = [&](const Eigen::RowVectorXd& p, int width, const std::string& id, const char* head) {
      if (p.size() != width) throw ShapeError("scores " + id + ": " + head + " width mismatch");
      if ((p.array() < 0.0).any() || !p.allFinite()) throw ValidationError("scores " + id + ": negative or non-finite " + head + " entry");
      if (std::abs(p.sum() - 1.0) > tol) throw ValidationError("scores " + id + ": " + head + " probabilities do not sum to 1");
    };
    std::set<std::string> seen;
    for (const auto& r : records) {
      if (!seen.insert(r.segment_id).second) throw ValidationError("scores: duplicate segment " + r.segment_id);
      check(r.verb, num_verbs, r.segment_id, "verb");
      check(r.noun, num_nouns, r.segment_id, "noun");
      if (num_actions > 0) {
        if (!r.action) throw ShapeError("scores " + r.segment_id + ": missing action probabilities");
        check(*r.action, num_actions, r.segment_id, "action");
      } else if (r.action) {
        throw ShapeError("scores " + r.segment_id + ": unexpected action probabilities");
      }
    }
  }
};

namespace detail {

inline void write_probs(std::ostream& out, const Eigen::RowVectorXd& p) {
  char buf[32];
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", p(i));
    if (i > 0) out << ' ';
    out << buf;
  }
}

inline Eigen::RowVectorXd read_probs(const std::string& field, int width, std::size_t line_no) {
  std::istringstream in(field);
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (!in.eof()) throw ParseError("scores line " + std::to_string(line_no) + ": bad number");
  if (static_cast<int>(vals.size()) != width)
    throw ParseError("scores line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " values");
  return Eigen::Map<Eigen::RowVectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace detail

inline void write_scores(std::ostream& out, const ScoreFile& sf) {
  std::vector<const ScoreRecord*> order;
  for (const auto& r : sf.records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->segment_id < b->segment_id; });
  out << "antic-scores 1\n";
  out << "model_tag " << sf.model_tag << '\n';
  out << "dims " << sf.num_verbs << ' ' << sf.num_nouns << ' ' << sf.num_actions << '\n';
  for (const auto* r : order) {
    out << r->segment_id << '|';
    detail::write_probs(out, r->verb);
    out << '|';
    detail::write_probs(out, r->noun);
    out << '|';
    if (r->action) detail::write_probs(out, *r->action);
    out << '\n';
  }
}

inline std::string scores_to_string(const ScoreFile& sf) {
  std::ostringstream out;
  write_scores(out, sf);
  return out.str();
}

inline ScoreFile read_scores(std::istream& in) {
  ScoreFile sf;
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(std::string("scores: missing ") + what);
    ++line_no;
  };
  next_line("header");
  if (line != "antic-scores 1") throw ParseError("scores: unrecognized header '" + line + "'");
  next_line("model_tag");
  if (line.rfind("model_tag ", 0) != 0) throw ParseError("scores line 2: expected model_tag");
  sf.model_tag = line.substr(10);
  next_line("dims");
  {
    std::istringstream d(line);
    std::string key;
    if (!(d >> key >> sf.num_verbs >> sf.num_nouns >> sf.num_actions) || key != "dims")
      throw ParseError("scores line 3: expected 'dims K_v K_n K_a'");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    for (;;) {
      const auto bar = line.find('|', pos);
      fields.push_back(line.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
      if (bar == std::string::npos) break;
      pos = bar + 1;
    }
    if (fields.size() != 4) throw ParseError("scores line " + std::to_string(line_no) + ": expected 4 '|'-separated fields");
    ScoreRecord r;
    r.segment_id = fields[0];
    r.verb = detail::read_probs(fields[1], sf.num_verbs, line_no);
    r.noun = detail::read_probs(fields[2], sf.num_nouns, line_no);
    if (sf.num_actions > 0) r.action = detail::read_probs(fields[3], sf.num_actions, line_no);
    sf.records.push_back(std::move(r));
  }
  sf.validate();
  return sf;
}

inline ScoreFile scores_from_string(const std::string& s) {
  std::istringstream in(s);
  return read_scores(in);
}

inline void write_scores(const std::string& path, const ScoreFile& sf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write score file " + path);
  write_scores(out, sf);
}

inline ScoreFile read_scores(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open score file " + path);
  return read_scores(in);
}

/// Entrywise mean of the inputs per head per segment. Each entry sums its N
/// values in ascending order, so the result does not depend on input order.
inline ScoreFile ensemble(const std::vector<ScoreFile>& files) {
  if (files.empty()) throw ValidationError("ensemble: no input files");
  const ScoreFile& first = files.front();
  std::set<std::string> ids;
  for (const auto& r : first.records) ids.insert(r.segment_id);
  std::set<std::string> tags;
  for (const auto& f : files) {
    if (f.num_verbs != first.num_verbs || f.num_nouns != first.num_nouns || f.num_actions != first.num_actions)
      throw ShapeError("ensemble: score files have different head widths");
    std::set<std::string> other;
    for (const auto& r : f.records) other.insert(r.segment_id);
    if (other != ids) {
      std::vector<std::string> diff;
      std::set_symmetric_difference(ids.begin(), ids.end(), other.begin(), other.end(), std::back_inserter(diff));
      std::string listed;
      for (std::size_t i = 0; i < diff.size() && i < 10; ++i) listed += (i ? ", " : "") + diff[i];
      if (diff.size() > 10) listed += ", ...";
      throw ValidationError("ensemble: segment sets differ (" + listed + ")");
    }
    tags.insert(f.model_tag);
  }
  std::vector<std::map<std::string, const ScoreRecord*>> index(files.size());
  for (std::size_t i = 0; i < files.size(); ++i)
    for (const auto& r : files[i].records) index[i][r.segment_id] = &r;

  auto mean_of = [&](const std::string& id, auto head) {
    const Eigen::Index width = head(*index[0].at(id)).size();
    Eigen::RowVectorXd out(width);
    std::vector<double> vals(files.size());
    for (Eigen::Index c = 0; c < width; ++c) {
      for (std::size_t i = 0; i < files.size(); ++i) vals[i] = head(*index[i].at(id))(c);
      std::sort(vals.begin(), vals.end());
      double s = 0.0;
      for (double v : vals) s += v;
      out(c) = s / static_cast<double>(files.size());
    }
    return out;
  };

  ScoreFile out;
  out.num_verbs = first.num_verbs;
  out.num_nouns = first.num_nouns;
  out.num_actions = first.num_actions;
  if (tags.size() == 1) {
    out.model_tag = *tags.begin();
  } else {
    out.model_tag = "ensemble(";
    bool sep = false;
    for (const auto& t : tags) {
      out.model_tag += (sep ? "+" : "") + t;
      sep = true;
    }
    out.model_tag += ")";
  }
  for (const auto& id : ids) {
    ScoreRecord r;
    r.segment_id = id;
    r.verb = mean_of(id, [](const ScoreRecord& s) -> const Eigen::RowVectorXd& { return s.verb; });
    r.noun = mean_of(id, [](const ScoreRecord& s) -> const Eigen::RowVectorXd& { return s.noun; });
    if (out.num_actions > 0)
      r.action = mean_of(id, [](const ScoreRecord& s) -> const Eigen::RowVectorXd& { return *s.action; });
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace antic
