#pragma once

// Anticipation-time distillation: soft labels extracted from a full-video
// teacher at the gap positions, averaged across teachers, and the tempered
// KL objective the student is trained with.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "antic/feature_io.hpp"
#include "antic/model.hpp"
#include "antic/ops.hpp"
#include "antic/vnrm.hpp"

namespace antic {

/// Teacher distributions for one instance, one row per distilled position.
struct SoftLabelSet {
  double temperature = 1.0;
  Matrix verb;
  Matrix noun;
  std::optional<Matrix> action;

  int positions() const { return static_cast<int>(verb.rows()); }

  void validate(double tol = 1e-6) const {
    auto check = [&](const Matrix& p, const char* head) {
      if ((p.array() < 0.0).any()) throw ValidationError(std::string("soft labels: negative ") + head + " probability");
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        if (std::abs(p.row(r).sum() - 1.0) > tol) throw ValidationError(std::string("soft labels: ") + head + " row off the simplex");
    };
    check(verb, "verb");
    check(noun, "noun");
    if (action) check(*action, "action");
    if (noun.rows() != verb.rows() || (action && action->rows() != verb.rows()))
      throw ShapeError("soft labels: heads disagree on position count");
  }

  /// The last position only (what the relation-module student distills).
  SoftLabelSet last_position() const {
    SoftLabelSet s;
    s.temperature = temperature;
    s.verb = verb.bottomRows(1);
    s.noun = noun.bottomRows(1);
    if (action) s.action = action->bottomRows(1);
    return s;
  }
};

using SoftLabelMap = std::map<std::string, SoftLabelSet>;

/// Tempered softmax of gap-position logits, one SoftLabelSet per example.
/// Teachers with a relation module distill their single final-position
/// prediction instead.
inline std::vector<SoftLabelSet> extract_soft_labels(AnticipationModel& teacher, std::span<const Example* const> batch,
                                                     double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("extract_soft_labels: temperature must be positive");
  const double inv = 1.0 / temperature;
  LogitBundle lb;
  int first = 0;
  int count = 0;
  if (teacher.vnrm_config()) {
    lb = vnrm_predict(teacher, batch, Topology::teacher);
    count = 1;
  } else {
    lb = teacher.forward(batch, Topology::teacher);
    first = batch.front()->observed_len();
    count = batch.front()->gap_len();
  }
  std::vector<SoftLabelSet> out;
  out.reserve(batch.size());
  for (int b = 0; b < lb.batch; ++b) {
    const Eigen::Index row = Eigen::Index(b) * lb.length + first;
    SoftLabelSet s;
    s.temperature = temperature;
    s.verb = ops::detail::softmax_rows(lb.verb.middleRows(row, count), inv);
    s.noun = ops::detail::softmax_rows(lb.noun.middleRows(row, count), inv);
    if (lb.action) s.action = ops::detail::softmax_rows(lb.action->middleRows(row, count), inv);
    out.push_back(std::move(s));
  }
  return out;
}

/// Entrywise mean per head per position.
inline SoftLabelSet average_soft_labels(std::span<const SoftLabelSet> sets) {
  if (sets.empty()) throw ValidationError("average_soft_labels: no inputs");
  const SoftLabelSet& f = sets.front();
  for (const auto& s : sets) {
    if (s.verb.rows() != f.verb.rows() || s.verb.cols() != f.verb.cols() || s.noun.rows() != f.noun.rows() ||
        s.noun.cols() != f.noun.cols() || s.action.has_value() != f.action.has_value() ||
        (s.action && (s.action->rows() != f.action->rows() || s.action->cols() != f.action->cols())))
      throw ShapeError("average_soft_labels: shape mismatch");
    if (s.temperature != f.temperature) throw ValidationError("average_soft_labels: temperatures differ");
  }
  // Sum each entry in ascending order so the mean is independent of input order.
  auto mean = [&](auto get) {
    const Matrix& first = get(f);
    Matrix out(first.rows(), first.cols());
    std::vector<double> vals(sets.size());
    for (Eigen::Index i = 0; i < first.size(); ++i) {
      for (std::size_t k = 0; k < sets.size(); ++k) vals[k] = get(sets[k]).data()[i];
      std::sort(vals.begin(), vals.end());
      double acc = 0.0;
      for (double v : vals) acc += v;
      out.data()[i] = acc / static_cast<double>(sets.size());
    }
    return out;
  };
  SoftLabelSet out;
  out.temperature = f.temperature;
  out.verb = mean([](const SoftLabelSet& s) -> const Matrix& { return s.verb; });
  out.noun = mean([](const SoftLabelSet& s) -> const Matrix& { return s.noun; });
  if (f.action) out.action = mean([](const SoftLabelSet& s) -> const Matrix& { return *s.action; });
  return out;
}

/// Averages several teachers' soft-label maps segment by segment.
inline SoftLabelMap average_soft_label_maps(std::span<const SoftLabelMap> maps) {
  if (maps.empty()) throw ValidationError("average_soft_labels: no teachers");
  SoftLabelMap out;
  for (const auto& [id, first] : maps.front()) {
    std::vector<SoftLabelSet> sets;
    for (const auto& m : maps) {
      auto it = m.find(id);
      if (it == m.end()) throw ValidationError("average_soft_labels: teacher lacks segment " + id);
      sets.push_back(it->second);
    }
    out.emplace(id, average_soft_labels(sets));
  }
  return out;
}

/// Per-position student logits for the distilled heads.
struct StudentLogits {
  Matrix verb;
  Matrix noun;
  std::optional<Matrix> action;
};

/// T^2 * KL(teacher || softmax(student / T)) averaged over positions and over
/// the heads both sides provide.
inline double distillation_loss(const StudentLogits& student, const SoftLabelSet& teacher, double temperature) {
  auto kl = [&](const Matrix& z, const Matrix& p) {
    if (z.rows() != p.rows() || z.cols() != p.cols()) throw ShapeError("distillation_loss: shape mismatch");
    const Matrix logq = ops::detail::log_softmax_rows(z, 1.0 / temperature);
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double pi = p.data()[i];
      if (pi > 0.0) total += pi * (std::log(pi) - logq.data()[i]);
    }
    return temperature * temperature * total / static_cast<double>(z.rows());
  };
  if (!(temperature > 0.0)) throw ConfigError("distillation_loss: temperature must be positive");
  double sum = kl(student.verb, teacher.verb) + kl(student.noun, teacher.noun);
  int heads = 2;
  if (student.action && teacher.action) {
    sum += kl(*student.action, *teacher.action);
    ++heads;
  }
  return sum / heads;
}

// Soft-label cache ---------------------------------------------------------
//
// 8-byte magic, u64 header length, JSON header (teacher checkpoint hash,
// temperature, head widths, record count), then per record: u32 segment id
// length, id bytes, u32 position count, and per position the verb, noun and
// (when present) action distributions as float32.

inline constexpr std::array<char, 8> kSoftLabelMagic{'A', 'N', 'T', 'S', 'O', 'F', 'T', '1'};

struct SoftLabelCache {
  std::string teacher_hash;
  double temperature = 1.0;
  SoftLabelMap labels;
};

inline void write_soft_label_cache(const std::string& path, const SoftLabelCache& cache) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write soft-label cache " + path);
  int kv = 0, kn = 0, ka = 0;
  if (!cache.labels.empty()) {
    const auto& f = cache.labels.begin()->second;
    kv = static_cast<int>(f.verb.cols());
    kn = static_cast<int>(f.noun.cols());
    ka = f.action ? static_cast<int>(f.action->cols()) : 0;
  }
  Json header{{"teacher_checkpoint_hash", cache.teacher_hash}, {"temperature", cache.temperature},
              {"num_verbs", kv}, {"num_nouns", kn}, {"num_actions", ka}, {"count", cache.labels.size()}};
  const std::string h = header.dump();
  out.write(kSoftLabelMagic.data(), kSoftLabelMagic.size());
  detail::write_pod<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [id, s] : cache.labels) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.positions()));
    for (int g = 0; g < s.positions(); ++g) {
      for (Eigen::Index c = 0; c < s.verb.cols(); ++c) detail::write_pod<float>(out, static_cast<float>(s.verb(g, c)));
      for (Eigen::Index c = 0; c < s.noun.cols(); ++c) detail::write_pod<float>(out, static_cast<float>(s.noun(g, c)));
      if (s.action)
        for (Eigen::Index c = 0; c < s.action->cols(); ++c) detail::write_pod<float>(out, static_cast<float>((*s.action)(g, c)));
    }
  }
}

inline SoftLabelCache read_soft_label_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open soft-label cache " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kSoftLabelMagic) throw IoError("soft-label cache: bad magic");
  const auto hlen = detail::read_pod<std::uint64_t>(in, "header length");
  if (hlen > (1u << 20)) throw IoError("soft-label cache: implausible header");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  const Json header = Json::parse(h);
  SoftLabelCache cache;
  cache.teacher_hash = header.at("teacher_checkpoint_hash").get<std::string>();
  cache.temperature = header.at("temperature").get<double>();
  const int kv = header.at("num_verbs").get<int>();
  const int kn = header.at("num_nouns").get<int>();
  const int ka = header.at("num_actions").get<int>();
  const auto count = header.at("count").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = detail::read_pod<std::uint32_t>(in, "segment id length");
    std::string id(len, '\0');
    in.read(id.data(), len);
    const auto g = static_cast<Eigen::Index>(detail::read_pod<std::uint32_t>(in, "position count"));
    SoftLabelSet s;
    s.temperature = cache.temperature;
    s.verb.resize(g, kv);
    s.noun.resize(g, kn);
    if (ka > 0) s.action = Matrix(g, ka);
    for (Eigen::Index p = 0; p < g; ++p) {
      for (int c = 0; c < kv; ++c) s.verb(p, c) = detail::read_pod<float>(in, "verb distribution");
      for (int c = 0; c < kn; ++c) s.noun(p, c) = detail::read_pod<float>(in, "noun distribution");
      for (int c = 0; c < ka; ++c) (*s.action)(p, c) = detail::read_pod<float>(in, "action distribution");
    }
    cache.labels.emplace(std::move(id), std::move(s));
  }
  return cache;
}

}  // namespace antic
