#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "antic/data.hpp"
#include "antic/model.hpp"

namespace antic::testing {

inline ModelConfig tiny_model(int D = 6, int Kv = 4, int Kn = 5, int Ka = 0) {
  ModelConfig c;
  c.input_dim = D;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 8;
  c.feedforward_dim = 12;
  c.dropout = 0.0;
  c.num_verbs = Kv;
  c.num_nouns = Kn;
  c.num_actions = Ka;
  c.max_seq_len = 10;
  c.future_tokens = 3;
  return c;
}

inline Example random_example(std::mt19937_64& rng, int L, int G, int D, int Kv, int Kn, const std::string& id = "s") {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> v(0, Kv - 1);
  std::uniform_int_distribution<int> o(0, Kn - 1);
  auto label = [&] {
    ActionLabel l;
    l.verb = v(rng);
    l.noun = o(rng);
    l.action = l.verb * Kn + l.noun;
    return l;
  };
  Example e;
  e.segment_id = id;
  e.participant_id = "P00";
  e.observed.resize(L, D);
  e.gap.resize(G, D);
  for (Eigen::Index i = 0; i < e.observed.size(); ++i) e.observed.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < e.gap.size(); ++i) e.gap.data()[i] = n(rng);
  for (int i = 0; i < L; ++i) e.observed_labels.push_back(label());
  for (int i = 0; i < G; ++i) e.gap_labels.push_back(label());
  e.target = G > 0 ? e.gap_labels.back() : label();
  return e;
}

inline std::vector<Example> random_examples(std::mt19937_64& rng, int count, int L, int G, int D, int Kv, int Kn) {
  std::vector<Example> out;
  for (int i = 0; i < count; ++i) out.push_back(random_example(rng, L, G, D, Kv, Kn, "seg" + std::to_string(i)));
  return out;
}

inline std::vector<const Example*> pointers(const std::vector<Example>& xs) {
  std::vector<const Example*> out;
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

/// Largest relative error between the tape gradient and central differences
/// over (up to) `per_param` entries of every parameter in `ps`.
inline double gradient_check(ParameterStore& ps, const std::function<Var(Tape&)>& loss, double h = 1e-5,
                             int per_param = 6, std::uint64_t seed = 7) {
  ps.zero_grad();
  {
    Tape t(true);
    Var l = loss(t);
    t.backward(l);
  }
  auto value = [&] {
    Tape t(false);
    return t.scalar(loss(t));
  };
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& p : ps.all()) {
    const Eigen::Index n = p.value.size();
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int k = 0; k < std::min<Eigen::Index>(per_param, n); ++k) {
      const Eigen::Index i = n <= per_param ? k : pick(rng);
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = value();
      p.value.data()[i] = keep - h;
      const double down = value();
      p.value.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

// Reference implementations -------------------------------------------------

/// Top-5 membership without sorting: class j outranks c when s_j > s_c, or
/// s_j == s_c and j < c; c is recalled when fewer than 5 classes outrank it.
struct OracleRecall {
  std::optional<double> mean_percent;
  std::map<int, double> per_class;  // fraction in [0, 1]
};

inline OracleRecall oracle_top5_recall(const Matrix& scores, const std::vector<int>& labels,
                                       const std::optional<std::set<int>>& filter = std::nullopt) {
  std::map<int, int> hits;
  std::map<int, int> totals;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (filter && !filter->count(c)) continue;
    int above = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const double sj = scores(static_cast<Eigen::Index>(i), j);
      const double sc = scores(static_cast<Eigen::Index>(i), c);
      if (sj > sc || (sj == sc && j < c)) ++above;
    }
    totals[c] += 1;
    if (above < 5) hits[c] += 1;
  }
  OracleRecall r;
  double sum = 0.0;
  for (const auto& [c, n] : totals) {
    r.per_class[c] = static_cast<double>(hits[c]) / n;
    sum += r.per_class[c];
  }
  if (!totals.empty()) r.mean_percent = 100.0 * sum / static_cast<double>(totals.size());
  return r;
}

/// Exhaustive nearest-labeled-clip search; ties go to the later clip.
inline std::vector<std::optional<ActionLabel>> oracle_propagate(const std::vector<std::optional<ActionLabel>>& labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<std::optional<ActionLabel>> out(labels.size());
  for (int i = 0; i < n; ++i) {
    int best = -1;
    int best_d = n + 1;
    for (int j = 0; j < n; ++j) {
      if (!labels[static_cast<std::size_t>(j)]) continue;
      const int d = std::abs(i - j);
      if (d < best_d || (d == best_d && j > best)) {
        best = j;
        best_d = d;
      }
    }
    if (best >= 0) out[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(best)];
  }
  return out;
}

/// T^2 * sum p (log p - log q) / rows, written elementwise.
inline double oracle_kd(const Matrix& student_logits, const Matrix& teacher_probs, double T) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < student_logits.rows(); ++r) {
    double mx = -INFINITY;
    for (Eigen::Index c = 0; c < student_logits.cols(); ++c) mx = std::max(mx, student_logits(r, c) / T);
    double z = 0.0;
    for (Eigen::Index c = 0; c < student_logits.cols(); ++c) z += std::exp(student_logits(r, c) / T - mx);
    for (Eigen::Index c = 0; c < student_logits.cols(); ++c) {
      const double p = teacher_probs(r, c);
      if (p <= 0.0) continue;
      const double logq = student_logits(r, c) / T - mx - std::log(z);
      total += p * (std::log(p) - logq);
    }
  }
  return T * T * total / static_cast<double>(student_logits.rows());
}

/// Smoothed cross-entropy computed from probabilities directly.
inline double oracle_smoothed_ce(const Eigen::RowVectorXd& logits, int target, double eps) {
  const Eigen::Index k = logits.size();
  Eigen::RowVectorXd p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  double loss = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const double q = (c == target ? 1.0 - eps : 0.0) + eps / static_cast<double>(k);
    loss -= q * std::log(p(c));
  }
  return loss;
}

/// Learning rate written per cycle from the cycle index.
inline double oracle_lr(double epoch, double base, double min_lr, int cycle, int warmup) {
  const int k = static_cast<int>(std::floor(epoch / cycle));
  const double u = epoch - static_cast<double>(k) * cycle;
  if (u < warmup) return base * u / warmup;
  const double x = (u - warmup) / static_cast<double>(cycle - warmup);
  return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(M_PI * x));
}

}  // namespace antic::testing
