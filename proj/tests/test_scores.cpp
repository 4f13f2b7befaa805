#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "antic/evaluate.hpp"
#include "antic/scores.hpp"

using namespace antic;

namespace {

Eigen::RowVectorXd random_simplex(std::mt19937_64& rng, int k) {
  std::gamma_distribution<double> g(0.7, 1.0);
  Eigen::RowVectorXd p(k);
  for (int i = 0; i < k; ++i) p(i) = g(rng) + 1e-12;
  return p / p.sum();
}

ScoreFile random_scores(std::uint64_t seed, int n, int kv, int kn, int ka, const std::string& tag) {
  std::mt19937_64 rng(seed);
  ScoreFile sf;
  sf.model_tag = tag;
  sf.num_verbs = kv;
  sf.num_nouns = kn;
  sf.num_actions = ka;
  for (int i = 0; i < n; ++i) {
    ScoreRecord r;
    r.segment_id = "seg" + std::to_string(1000 + i);
    r.verb = random_simplex(rng, kv);
    r.noun = random_simplex(rng, kn);
    if (ka > 0) r.action = random_simplex(rng, ka);
    sf.records.push_back(r);
  }
  // Round through text so values sit on the serialized grid.
  return scores_from_string(scores_to_string(sf));
}

std::vector<AnnotationRow> labels_for(const ScoreFile& sf, int kv, int kn, std::uint64_t seed,
                                      const std::string& unseen_prefix = "") {
  std::mt19937_64 rng(seed);
  std::vector<AnnotationRow> rows;
  int i = 0;
  for (const auto& r : sf.records) {
    AnnotationRow a;
    a.segment_id = r.segment_id;
    a.participant_id = (!unseen_prefix.empty() && i % 3 == 0) ? unseen_prefix + "1" : "P01";
    a.video_id = "v";
    a.label.verb = static_cast<int>(rng() % static_cast<std::uint64_t>(kv));
    a.label.noun = static_cast<int>(rng() % static_cast<std::uint64_t>(kn));
    a.label.action = a.label.verb * kn + a.label.noun;
    rows.push_back(a);
    ++i;
  }
  return rows;
}

}  // namespace

TEST(ScoreFileFormat, RoundTripIsTextExact) {
  const ScoreFile sf = random_scores(1, 12, 4, 5, 20, "m");
  const std::string text = scores_to_string(sf);
  EXPECT_EQ(scores_to_string(scores_from_string(text)), text);
  EXPECT_EQ(text.rfind("antic-scores 1\nmodel_tag m\ndims 4 5 20\n", 0), 0u);
}

TEST(ScoreFileFormat, RejectsOffSimplexRows) {
  std::string text = "antic-scores 1\nmodel_tag m\ndims 2 2 0\nseg|0.5 0.6|0.5 0.5|\n";
  EXPECT_THROW(scores_from_string(text), ValidationError);
}

TEST(ScoreFileFormat, RejectsMalformedLines) {
  EXPECT_THROW(scores_from_string("antic-scores 2\n"), ParseError);
  EXPECT_THROW(scores_from_string("antic-scores 1\nmodel_tag m\ndims 2 2 0\nseg|0.5 0.5\n"), ParseError);
  EXPECT_THROW(scores_from_string("antic-scores 1\nmodel_tag m\ndims 2 2 0\nseg|0.5|0.5 0.5|\n"), ParseError);
}

TEST(Ensemble, SingleFileIsIdentity) {
  const ScoreFile sf = random_scores(2, 30, 5, 6, 0, "only");
  EXPECT_EQ(scores_to_string(ensemble({sf})), scores_to_string(sf));
}

TEST(Ensemble, SelfEnsembleIsIdempotent) {
  const ScoreFile sf = random_scores(3, 30, 5, 6, 30, "same");
  EXPECT_EQ(scores_to_string(ensemble({sf, sf, sf})), scores_to_string(sf));
}

TEST(Ensemble, InputOrderDoesNotMatter) {
  std::vector<ScoreFile> files;
  for (int i = 0; i < 5; ++i) files.push_back(random_scores(10 + i, 25, 4, 7, 0, "m" + std::to_string(i)));
  const std::string ref = scores_to_string(ensemble(files));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(files.begin(), files.end(), rng);
    EXPECT_EQ(scores_to_string(ensemble(files)), ref);
  }
}

TEST(Ensemble, IsEntrywiseMeanAndStaysOnSimplex) {
  const ScoreFile a = random_scores(20, 10, 3, 4, 0, "a");
  const ScoreFile b = random_scores(21, 10, 3, 4, 0, "b");
  const ScoreFile e = ensemble({a, b});
  EXPECT_EQ(e.model_tag, "ensemble(a+b)");
  e.validate(1e-9);
  for (std::size_t i = 0; i < e.records.size(); ++i) {
    const auto* ra = a.find(e.records[i].segment_id);
    const auto* rb = b.find(e.records[i].segment_id);
    EXPECT_LT((e.records[i].verb - 0.5 * (ra->verb + rb->verb)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((e.records[i].noun - 0.5 * (ra->noun + rb->noun)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Ensemble, SegmentMismatchListsIds) {
  ScoreFile a = random_scores(30, 4, 3, 3, 0, "a");
  ScoreFile b = a;
  b.records.back().segment_id = "extra";
  try {
    ensemble({a, b});
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("extra"), std::string::npos);
    EXPECT_NE(msg.find(a.records.back().segment_id), std::string::npos);
  }
}

TEST(Ensemble, TenFilesGiveOneFile) {
  std::vector<ScoreFile> files;
  for (int i = 0; i < 10; ++i) files.push_back(random_scores(40 + i, 8, 4, 4, 0, "m" + std::to_string(i)));
  const ScoreFile e = ensemble(files);
  EXPECT_EQ(e.records.size(), 8u);
  e.validate();
}

TEST(Evaluate, EmptyUnseenSetIsAbsentNotZero) {
  const ScoreFile sf = random_scores(50, 40, 4, 5, 0, "m");
  const auto labels = labels_for(sf, 4, 5, 1);
  const auto rep = evaluate(sf, labels, SplitSpec{}, ActionVocabulary::dense(4, 5));
  for (Head h : kHeads) {
    EXPECT_TRUE(rep.mean(Split::overall, h).has_value());
    EXPECT_FALSE(rep.mean(Split::unseen, h).has_value());
    EXPECT_FALSE(rep.mean(Split::tail, h).has_value());
  }
}

TEST(Evaluate, TailOfAllClassesEqualsOverall) {
  const ScoreFile sf = random_scores(51, 60, 4, 5, 20, "m");
  const auto labels = labels_for(sf, 4, 5, 2);
  SplitSpec split;
  for (int c = 0; c < 4; ++c) split.tail_verbs.insert(c);
  for (int c = 0; c < 5; ++c) split.tail_nouns.insert(c);
  for (int c = 0; c < 20; ++c) split.tail_actions.insert(c);
  const auto rep = evaluate(sf, labels, split);
  for (Head h : kHeads) EXPECT_EQ(*rep.mean(Split::tail, h), *rep.mean(Split::overall, h));
}

TEST(Evaluate, UnseenSplitUsesParticipantMembership) {
  const ScoreFile sf = random_scores(52, 30, 4, 5, 0, "m");
  const auto labels = labels_for(sf, 4, 5, 3, "U");
  SplitSpec split;
  split.unseen_participants = {"U1"};
  const auto vocab = ActionVocabulary::dense(4, 5);
  const auto rep = evaluate(sf, labels, split, vocab);
  // Recompute the unseen verb cell directly.
  Matrix s(10, 4);
  std::vector<int> truth;
  int k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].participant_id != "U1") continue;
    s.row(k++) = sf.find(labels[i].segment_id)->verb;
    truth.push_back(labels[i].label.verb);
  }
  EXPECT_EQ(*rep.mean(Split::unseen, Head::verb), *mean_top5_recall(s, truth).mean_percent);
}

TEST(Evaluate, PerfectScoresGive100Everywhere) {
  ScoreFile sf = random_scores(53, 20, 6, 7, 0, "m");
  const auto labels = labels_for(sf, 6, 7, 4, "U");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& r = sf.records[i];
    r.verb.setZero();
    r.verb(labels[i].label.verb) = 1.0;
    r.noun.setZero();
    r.noun(labels[i].label.noun) = 1.0;
  }
  SplitSpec split;
  split.unseen_participants = {"U1"};
  split.tail_verbs = {0, 1};
  split.tail_nouns = {2, 3, 4};
  split.tail_actions = {0, 5, 9, 13};
  const auto rep = evaluate(sf, labels, split, ActionVocabulary::dense(6, 7));
  for (Split s : kSplits)
    for (Head h : kHeads)
      if (rep.mean(s, h)) {
        EXPECT_DOUBLE_EQ(*rep.mean(s, h), 100.0);
      }
  const std::string table = format_report_table({rep});
  EXPECT_NE(table.find("100.00"), std::string::npos);
}

TEST(Evaluate, ReportMeansReproducibleFromTables) {
  const ScoreFile sf = random_scores(54, 80, 5, 6, 0, "m");
  const auto labels = labels_for(sf, 5, 6, 5, "U");
  SplitSpec split;
  split.unseen_participants = {"U1"};
  split.tail_nouns = {0, 1, 2};
  const auto rep = evaluate(sf, labels, split, ActionVocabulary::dense(5, 6));
  for (Split s : kSplits)
    for (Head h : kHeads) {
      const auto& c = rep.cell(s, h);
      if (!c) continue;
      double sum = 0.0;
      for (const auto& [cls, cr] : c->per_class) {
        EXPECT_GE(cr.recall(), 0.0);
        EXPECT_LE(cr.recall(), 1.0);
        sum += cr.recall();
      }
      EXPECT_NEAR(*c->mean_percent, 100.0 * sum / static_cast<double>(c->per_class.size()), 1e-9);
    }
}

TEST(Evaluate, EnsembleOfIdenticalFilesEvaluatesTheSame) {
  const ScoreFile sf = random_scores(55, 50, 5, 6, 0, "m");
  const auto labels = labels_for(sf, 5, 6, 6);
  const auto vocab = ActionVocabulary::dense(5, 6);
  const auto one = evaluate(sf, labels, SplitSpec{}, vocab);
  const auto many = evaluate(ensemble({sf, sf, sf, sf}), labels, SplitSpec{}, vocab);
  for (Head h : kHeads) EXPECT_EQ(*one.mean(Split::overall, h), *many.mean(Split::overall, h));
}

TEST(Evaluate, UnlabeledSegmentIsAnError) {
  const ScoreFile sf = random_scores(56, 5, 3, 3, 0, "m");
  auto labels = labels_for(sf, 3, 3, 7);
  labels.pop_back();
  EXPECT_THROW(evaluate(sf, labels, SplitSpec{}, ActionVocabulary::dense(3, 3)), ValidationError);
}

TEST(SplitSpecFiles, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "antic_splitspec_test";
  std::filesystem::create_directories(dir);
  SplitSpec s;
  s.unseen_participants = {"P07", "P09"};
  s.tail_verbs = {1, 3};
  s.tail_nouns = {0};
  s.tail_actions = {4, 8, 15};
  write_split_spec((dir / "u.txt").string(), (dir / "t.txt").string(), s);
  const SplitSpec r = read_split_spec((dir / "u.txt").string(), (dir / "t.txt").string());
  EXPECT_EQ(r.unseen_participants, s.unseen_participants);
  EXPECT_EQ(r.tail_verbs, s.tail_verbs);
  EXPECT_EQ(r.tail_nouns, s.tail_nouns);
  EXPECT_EQ(r.tail_actions, s.tail_actions);
  TaskConfig task;
  task.num_verbs = 2;
  task.num_nouns = 5;
  task.num_actions = 20;
  EXPECT_THROW(r.validate(task), ValidationError);
  std::filesystem::remove_all(dir);
}
