#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "antic/atkd.hpp"
#include "antic/trainer.hpp"
#include "support.hpp"

using namespace antic;
using namespace antic::testing;

namespace {

SoftLabelSet random_set(std::mt19937_64& rng, int G, int Kv, int Kn, int Ka, double T = 2.0) {
  std::normal_distribution<double> n(0.0, 2.0);
  auto probs = [&](int k) {
    Matrix z(G, k);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    return ops::detail::softmax_rows(z);
  };
  SoftLabelSet s;
  s.temperature = T;
  s.verb = probs(Kv);
  s.noun = probs(Kn);
  if (Ka > 0) s.action = probs(Ka);
  return s;
}

}  // namespace

TEST(Distillation, ZeroWhenStudentMatchesTeacher) {
  std::mt19937_64 rng(1);
  for (double T : {1.0, 2.0, 5.0}) {
    const Matrix z = Matrix::Random(3, 6) * 4.0;
    SoftLabelSet s;
    s.temperature = T;
    s.verb = ops::detail::softmax_rows(z, 1.0 / T);
    s.noun = s.verb;
    EXPECT_NEAR(distillation_loss(StudentLogits{z, z, std::nullopt}, s, T), 0.0, 1e-12);
  }
}

TEST(Distillation, OneHotTeacherAgainstUniformStudentIsLogK) {
  const int K = 7;
  SoftLabelSet s;
  s.verb = Matrix::Zero(1, K);
  s.verb(0, 3) = 1.0;
  s.noun = s.verb;
  const Matrix flat = Matrix::Zero(1, K);
  EXPECT_NEAR(distillation_loss(StudentLogits{flat, flat, std::nullopt}, s, 1.0), std::log(K), 1e-12);
  // Uniform student stays uniform at any temperature; the T^2 factor remains.
  EXPECT_NEAR(distillation_loss(StudentLogits{flat, flat, std::nullopt}, s, 3.0), 9.0 * std::log(K), 1e-12);
}

TEST(Distillation, MatchesElementwiseOracleAndIsNonNegative) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const double T = 0.5 + trial % 4;
    const SoftLabelSet s = random_set(rng, 2, 5, 6, trial % 2 ? 9 : 0, T);
    StudentLogits z{Matrix::Random(2, 5) * 3.0, Matrix::Random(2, 6) * 3.0, std::nullopt};
    if (s.action) z.action = Matrix::Random(2, 9) * 3.0;
    double want = oracle_kd(z.verb, s.verb, T) + oracle_kd(z.noun, s.noun, T);
    if (s.action) want = (want + oracle_kd(*z.action, *s.action, T)) / 3.0;
    else want /= 2.0;
    const double got = distillation_loss(z, s, T);
    EXPECT_NEAR(got, want, 1e-10);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Distillation, ShapeMismatchAndBadTemperatureThrow) {
  SoftLabelSet s;
  s.verb = Matrix::Constant(1, 3, 1.0 / 3);
  s.noun = s.verb;
  EXPECT_THROW(distillation_loss(StudentLogits{Matrix::Zero(1, 4), Matrix::Zero(1, 3), std::nullopt}, s, 1.0), ShapeError);
  EXPECT_THROW(distillation_loss(StudentLogits{Matrix::Zero(1, 3), Matrix::Zero(1, 3), std::nullopt}, s, 0.0), ConfigError);
}

TEST(SoftLabels, AverageOfIdenticalSetsIsIdentity) {
  std::mt19937_64 rng(3);
  const SoftLabelSet s = random_set(rng, 3, 4, 5, 6);
  const std::vector<SoftLabelSet> copies(4, s);
  const SoftLabelSet avg = average_soft_labels(copies);
  EXPECT_LE((avg.verb - s.verb).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((avg.noun - s.noun).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((*avg.action - *s.action).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SoftLabels, AverageIsOrderInvariantMeanOnTheSimplex) {
  std::mt19937_64 rng(4);
  std::vector<SoftLabelSet> sets;
  for (int i = 0; i < 5; ++i) sets.push_back(random_set(rng, 2, 4, 5, 0));
  const SoftLabelSet a = average_soft_labels(sets);
  std::vector<SoftLabelSet> rev(sets.rbegin(), sets.rend());
  std::swap(rev[1], rev[3]);
  const SoftLabelSet b = average_soft_labels(rev);
  EXPECT_EQ(a.verb, b.verb);
  EXPECT_EQ(a.noun, b.noun);
  Matrix mean = Matrix::Zero(2, 4);
  for (const auto& s : sets) mean += s.verb;
  EXPECT_LE((a.verb - mean / 5.0).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NO_THROW(a.validate(1e-12));
}

TEST(SoftLabels, AverageRejectsMismatches) {
  std::mt19937_64 rng(5);
  std::vector<SoftLabelSet> sets{random_set(rng, 2, 4, 5, 0), random_set(rng, 3, 4, 5, 0)};
  EXPECT_THROW(average_soft_labels(sets), ShapeError);
  sets = {random_set(rng, 2, 4, 5, 0, 1.0), random_set(rng, 2, 4, 5, 0, 2.0)};
  EXPECT_THROW(average_soft_labels(sets), ValidationError);
  EXPECT_THROW(average_soft_labels(std::span<const SoftLabelSet>{}), ValidationError);
  SoftLabelMap one{{"a", random_set(rng, 1, 4, 5, 0)}};
  SoftLabelMap other{{"b", random_set(rng, 1, 4, 5, 0)}};
  std::vector<SoftLabelMap> maps{one, other};
  EXPECT_THROW(average_soft_label_maps(maps), ValidationError);
}

TEST(SoftLabels, ExtractedFromGapPositionsOnTheSimplex) {
  AnticipationModel m(tiny_model(6, 4, 5, 20), std::nullopt, 6);
  std::mt19937_64 rng(6);
  const auto xs = random_examples(rng, 3, 4, 2, 6, 4, 5);
  const auto sets = extract_soft_labels(m, pointers(xs), 2.0);
  ASSERT_EQ(sets.size(), 3u);
  const LogitBundle lb = m.forward(pointers(xs), Topology::teacher);
  for (int b = 0; b < 3; ++b) {
    const SoftLabelSet& s = sets[static_cast<std::size_t>(b)];
    EXPECT_EQ(s.positions(), 2);
    EXPECT_EQ(s.action->cols(), 20);
    EXPECT_NO_THROW(s.validate(1e-12));
    // Row g is softmax(logits/T) of teacher position L+g.
    for (int g = 0; g < 2; ++g) {
      const Eigen::RowVectorXd z = lb.noun.row(b * 6 + 4 + g) / 2.0;
      const Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
      EXPECT_LE((s.noun.row(g) - e / e.sum()).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
  EXPECT_THROW(extract_soft_labels(m, pointers(xs), 0.0), ConfigError);
}

TEST(SoftLabels, RelationTeacherYieldsOneFinalPosition) {
  VnrmConfig v;
  v.relation_heads = 2;
  AnticipationModel m(tiny_model(), v, 7);
  std::mt19937_64 rng(7);
  const auto xs = random_examples(rng, 2, 3, 1, 6, 4, 5);
  const auto sets = extract_soft_labels(m, pointers(xs), 1.0);
  EXPECT_EQ(sets[0].positions(), 1);
  EXPECT_NO_THROW(sets[1].validate(1e-12));
}

TEST(SoftLabels, CacheRoundTripAtFloatPrecision) {
  std::mt19937_64 rng(8);
  SoftLabelCache c;
  c.teacher_hash = "0123456789abcdef";
  c.temperature = 2.0;
  for (int i = 0; i < 5; ++i) c.labels.emplace("seg" + std::to_string(i), random_set(rng, 2, 4, 5, 7));
  const auto path = (std::filesystem::temp_directory_path() / "antic_soft_cache.bin").string();
  write_soft_label_cache(path, c);
  const SoftLabelCache r = read_soft_label_cache(path);
  EXPECT_EQ(r.teacher_hash, c.teacher_hash);
  EXPECT_EQ(r.temperature, 2.0);
  ASSERT_EQ(r.labels.size(), 5u);
  for (const auto& [id, s] : c.labels) {
    const SoftLabelSet& q = r.labels.at(id);
    EXPECT_LE((q.verb - s.verb).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE((*q.action - *s.action).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_EQ(q.temperature, 2.0);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_soft_label_cache(path), IoError);
}

TEST(SoftLabels, StudentKdTermMatchesOracleInBatchLoss) {
  // batch_loss with kd_weight w minus the same loss with kd_weight 0 equals
  // w times the per-head mean of the gap-position distillation terms.
  AnticipationModel m(tiny_model(), std::nullopt, 9);
  std::mt19937_64 rng(9);
  const auto xs = random_examples(rng, 2, 3, 2, 6, 4, 5);
  SoftLabelMap labels;
  for (const auto& x : xs) labels.emplace(x.segment_id, random_set(rng, 2, 4, 5, 0));
  LossPlan plan;
  plan.variant = Variant::atkd_student;
  plan.distill.kd_weight = 0.7;
  plan.distill.temperature = 2.0;
  plan.soft_labels = &labels;
  Tape t(false);
  const double with = t.scalar(batch_loss(t, m, pointers(xs), plan, 0.4, ForwardContext{}));
  plan.distill.kd_weight = 0.0;
  const double without = t.scalar(batch_loss(t, m, pointers(xs), plan, 0.4, ForwardContext{}));
  const LogitBundle lb = m.forward(pointers(xs), Topology::student);
  Matrix zv(4, 4), zn(4, 5), pv(4, 4), pn(4, 5);
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 2; ++g) {
      zv.row(b * 2 + g) = lb.verb.row(b * 5 + 3 + g);
      zn.row(b * 2 + g) = lb.noun.row(b * 5 + 3 + g);
      pv.row(b * 2 + g) = labels.at(xs[static_cast<std::size_t>(b)].segment_id).verb.row(g);
      pn.row(b * 2 + g) = labels.at(xs[static_cast<std::size_t>(b)].segment_id).noun.row(g);
    }
  const double kd = 0.5 * (oracle_kd(zv, pv, 2.0) + oracle_kd(zn, pn, 2.0));
  EXPECT_NEAR(with - without, 0.7 * kd, 1e-10);
}
