#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "antic/data.hpp"
#include "antic/feature_io.hpp"
#include "support.hpp"

using namespace antic;
using antic::testing::oracle_propagate;

namespace {

TaskConfig task_10x12() {
  TaskConfig t;
  t.num_verbs = 10;
  t.num_nouns = 12;
  t.num_actions = 120;
  return t;
}

ActionLabel L(int v, int n = 0) { return ActionLabel{v, n, v * 12 + n}; }

ClipTimeline bare_timeline(int n, int D = 2) {
  return build_timeline("v", Matrix::Zero(n, D), {}, task_10x12());
}

AnnotationRow segment(const std::string& id, double start, double stop, ActionLabel l) {
  return AnnotationRow{id, "P01", "v", start, stop, l};
}

}  // namespace

TEST(Annotations, ParsesRowsInOrder) {
  std::istringstream in(
      "segment_id,participant_id,video_id,start_sec,stop_sec,verb_id,noun_id,action_id\n"
      "a,P01,v1,0.5,2,1,2,14\n"
      "b,P01,v1,3,4.25,0,0,0\n"
      "c,P02,v2,1,2,9,11,119\n");
  const auto rows = parse_annotations(in, task_10x12());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].segment_id, "a");
  EXPECT_EQ(rows[1].segment_id, "b");
  EXPECT_EQ(rows[2].segment_id, "c");
  EXPECT_DOUBLE_EQ(rows[1].stop, 4.25);
  EXPECT_EQ(rows[2].label, (ActionLabel{9, 11, 119}));
}

TEST(Annotations, VerbEqualToCountIsValidationError) {
  std::istringstream in("segment_id,participant_id,video_id,start_sec,stop_sec,verb_id,noun_id,action_id\n"
                        "a,P01,v1,0,1,10,0,0\n");
  EXPECT_THROW(parse_annotations(in, task_10x12()), ValidationError);
}

TEST(Annotations, MalformedRowNamesTheLine) {
  std::istringstream in("segment_id,participant_id,video_id,start_sec,stop_sec,verb_id,noun_id,action_id\n"
                        "a,P01,v1,0,1,1,1,13\n"
                        "b,P01,v1,zero,1,1,1,13\n");
  try {
    parse_annotations(in, task_10x12());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Annotations, EmptyFileGivesNoRows) {
  std::istringstream in("");
  EXPECT_TRUE(parse_annotations(in, task_10x12()).empty());
}

TEST(Annotations, WriteThenParseRoundTrips) {
  std::vector<AnnotationRow> rows{segment("x", 1.5, 3, L(2, 3)), segment("y", 4, 7.125, L(0, 11))};
  std::stringstream s;
  write_annotations(s, rows);
  const auto back = parse_annotations(s, task_10x12());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].segment_id, "y");
  EXPECT_DOUBLE_EQ(back[1].stop, 7.125);
  EXPECT_EQ(back[0].label, rows[0].label);
}

TEST(Timeline, SegmentLabelsContainedClips) {
  const auto tl = build_timeline("v", Matrix::Zero(8, 2), {segment("s", 2, 5, L(3))}, task_10x12());
  for (int i = 0; i < 8; ++i) EXPECT_EQ(tl.clips[static_cast<std::size_t>(i)].label.has_value(), i >= 2 && i <= 4) << i;
}

TEST(Timeline, OverlapGoesToLaterStart) {
  const auto tl =
      build_timeline("v", Matrix::Zero(8, 2), {segment("late", 5, 6, L(2)), segment("early", 3, 7, L(1))}, task_10x12());
  EXPECT_EQ(tl.clips[5].label->verb, 2);
  EXPECT_EQ(tl.clips[4].label->verb, 1);
  EXPECT_EQ(tl.clips[6].label->verb, 1);
}

TEST(Timeline, OverlapTieRuleMatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 20);
    std::vector<AnnotationRow> segs;
    for (int s = 0; s < 4; ++s) {
      const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
      const int b = a + 1 + static_cast<int>(rng() % 4);
      segs.push_back(segment("s" + std::to_string(s), a, b, L(s)));
    }
    const auto tl = build_timeline("v", Matrix::Zero(n, 1), segs, task_10x12());
    for (int i = 0; i < n; ++i) {
      const double mid = i + 0.5;
      std::optional<ActionLabel> want;
      double best_start = -1;
      for (const auto& s : segs)
        if (mid >= s.start && mid < s.stop && s.start >= best_start) {
          want = s.label;
          best_start = s.start;
        }
      EXPECT_EQ(tl.clips[static_cast<std::size_t>(i)].label, want) << "trial " << trial << " clip " << i;
    }
  }
}

TEST(Timeline, NoAnnotationsLeavesAllUnlabeled) {
  const auto tl = bare_timeline(5);
  for (const auto& c : tl.clips) EXPECT_FALSE(c.label);
}

TEST(Timeline, FeatureCountMustMatchDuration) {
  EXPECT_THROW(build_timeline("v", Matrix::Zero(5, 2), {}, task_10x12(), 6.0), ShapeError);
  EXPECT_NO_THROW(build_timeline("v", Matrix::Zero(6, 2), {}, task_10x12(), 6.0));
}

TEST(Propagate, NearestLabelWins) {
  auto tl = bare_timeline(10);
  tl.clips[4].label = L(1);
  tl.clips[7].label = L(2);
  const auto p = propagate_labels(tl);
  EXPECT_EQ(p.clips[5].label->verb, 1);
  EXPECT_EQ(p.clips[0].label->verb, 1);
  EXPECT_EQ(p.clips[9].label->verb, 2);
}

TEST(Propagate, TieGoesToLaterClip) {
  auto tl = bare_timeline(8);
  tl.clips[4].label = L(1);
  tl.clips[6].label = L(2);
  EXPECT_EQ(propagate_labels(tl).clips[5].label->verb, 2);
}

TEST(Propagate, FullyLabeledUnchanged) {
  auto tl = bare_timeline(5);
  for (int i = 0; i < 5; ++i) tl.clips[static_cast<std::size_t>(i)].label = L(i);
  const auto p = propagate_labels(tl);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(p.clips[static_cast<std::size_t>(i)].label->verb, i);
}

TEST(Propagate, NoLabelsIsAnError) { EXPECT_THROW(propagate_labels(bare_timeline(4)), ValidationError); }

TEST(Propagate, MatchesExhaustiveSearchAndIsIdempotent) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    auto tl = bare_timeline(n, 1);
    std::vector<std::optional<ActionLabel>> raw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      if (rng() % 5 == 0) raw[static_cast<std::size_t>(i)] = L(static_cast<int>(rng() % 10));
    if (std::none_of(raw.begin(), raw.end(), [](const auto& x) { return x.has_value(); })) raw[0] = L(0);
    for (int i = 0; i < n; ++i) tl.clips[static_cast<std::size_t>(i)].label = raw[static_cast<std::size_t>(i)];
    const auto p = propagate_labels(tl);
    const auto want = oracle_propagate(raw);
    for (int i = 0; i < n; ++i) EXPECT_EQ(p.clips[static_cast<std::size_t>(i)].label, want[static_cast<std::size_t>(i)]);
    const auto pp = propagate_labels(p);
    for (int i = 0; i < n; ++i) EXPECT_EQ(pp.clips[static_cast<std::size_t>(i)].label, p.clips[static_cast<std::size_t>(i)].label);
  }
}

TEST(Instance, WindowArithmetic) {
  const TaskConfig task = task_10x12();
  const auto tl = build_timeline("v", Matrix::Zero(20, 2), {segment("s", 10, 12, L(4, 5))}, task);
  const auto inst = make_instance(tl, segment("s", 10, 12, L(4, 5)), task);
  ASSERT_TRUE(inst);
  ASSERT_EQ(inst->observed.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(inst->observed[static_cast<std::size_t>(k)].index, 5 + k);
  EXPECT_EQ(inst->gap_positions, 1);
  EXPECT_EQ(inst->target, L(4, 5));
}

TEST(Instance, InsufficientHistoryIsSkipped) {
  const TaskConfig task = task_10x12();
  const auto tl = bare_timeline(10);
  std::string why;
  EXPECT_FALSE(make_instance(tl, segment("s", 2, 3, L(1)), task, &why));
  EXPECT_NE(why.find("insufficient"), std::string::npos);
}

TEST(Instance, TwoSecondAnticipationGivesTwoGapClips) {
  TaskConfig task = task_10x12();
  task.anticipation_time = 2.0;
  EXPECT_EQ(task.gap_clips(), 2);
  const auto inst = make_instance(bare_timeline(20), segment("s", 10, 11, L(1)), task);
  ASSERT_TRUE(inst);
  EXPECT_EQ(inst->gap_positions, 2);
  EXPECT_EQ(inst->observed.back().index, 7);
}

TEST(Instance, ObservedNeverReachesIntoTheGap) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    TaskConfig task = task_10x12();
    task.clip_duration = 0.5 * static_cast<double>(1 + rng() % 3);
    task.anticipation_time = task.clip_duration * static_cast<double>(1 + rng() % 3);
    task.observed_duration = task.clip_duration * static_cast<double>(1 + rng() % 5);
    const auto tl = build_timeline("v", Matrix::Zero(40, 1), {}, task);
    const double start = static_cast<double>(rng() % 160) / 8.0;
    const auto inst = make_instance(tl, segment("s", start, start + 1, L(0)), task);
    if (!inst) continue;
    const Clip& last = inst->observed.back();
    EXPECT_LE(last.start_time + last.duration, start - task.anticipation_time + 1e-9);
  }
}

TEST(FullSequence, LengthAndGapLabel) {
  const TaskConfig task = task_10x12();
  // Previous action on clips 3..7, gap clip 8 unlabeled, target from 9.
  const std::vector<AnnotationRow> rows{segment("prev", 3, 8, L(1)), segment("s", 9, 11, L(6, 2))};
  Matrix f(14, 3);
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i).setConstant(static_cast<double>(i));
  const auto tl = propagate_labels(build_timeline("v", f, rows, task));
  const auto inst = make_instance(tl, rows[1], task);
  ASSERT_TRUE(inst);
  const auto seq = full_sequence(*inst, tl);
  EXPECT_EQ(seq.features.rows(), 5);
  EXPECT_EQ(seq.labels.size(), 5u);
  EXPECT_EQ(seq.labels.back(), L(6, 2));  // equidistant gap clip takes the later (target) label
  EXPECT_EQ(seq.features(4, 0), 8.0);
  const Example ex = make_example(*inst, tl);
  EXPECT_EQ(ex.observed.rows(), 4);
  EXPECT_EQ(ex.gap.rows(), 1);
  EXPECT_EQ(ex.gap(0, 1), 8.0);
}

TEST(Features, RoundTripThroughFloat32) {
  Matrix m(3, 4);
  m << 1, 2, 3, 4, 0.5, -0.25, 1e-3, 7, -1, 0, 2, 9;
  std::stringstream s;
  write_features(s, m);
  const std::string bytes = s.str();
  EXPECT_EQ(bytes.size(), 8u + 16u + 12u * 4u);
  EXPECT_EQ(bytes.substr(0, 8), "ANTFEAT1");
  const Matrix back = read_features(s);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(back.data()[i], static_cast<float>(m.data()[i]));
}

TEST(Features, RejectsBadMagicAndTruncation) {
  std::stringstream bad("NOTAFEAT........");
  EXPECT_THROW(read_features(bad), IoError);
  std::stringstream s;
  write_features(s, Matrix::Ones(2, 2));
  std::string cut = s.str();
  cut.resize(cut.size() - 3);
  std::stringstream t(cut);
  EXPECT_THROW(read_features(t), IoError);
}
