#include <gtest/gtest.h>

#include <memory>

#include "scribe/fixtures.hpp"
#include "scribe/session.hpp"

namespace scribe {
namespace {

struct Env {
  SyntheticCase c;
  std::shared_ptr<const FeatureSequence> features;
  std::shared_ptr<const ModelParams> model;

  explicit Env(std::uint64_t seed = 11, FixtureConfig cfg = {})
      : c(make_case(cfg, seed)),
        features(std::make_shared<const FeatureSequence>(c.features)),
        model(std::make_shared<const ModelParams>(ModelParams::init(cfg.dim, cfg.num_labels, 3))) {}

  std::unique_ptr<Session> session(SessionOptions opt = {}, bool with_init = true) const {
    auto s = std::make_unique<Session>(features, c.vocab, with_init ? std::optional(c.init) : std::nullopt, model, opt);
    s->attach_ground_truth(c.gt);
    return s;
  }
};

Stroke flat(int a, int b) {
  Stroke s;
  for (int t = a; t <= b; ++t) s.points.push_back({double(t), 0.0, double(t)});
  return s;
}

Stroke vertical(int t) { return {{{double(t), 0.0, double(t)}, {double(t), 40.0, double(t)}}}; }

TEST(Session, EmptyInitUsesReservedLabel) {
  Env env;
  auto s = env.session({}, false);
  EXPECT_EQ(s->num_labels(), 7);
  ASSERT_TRUE(s->reserved_label());
  EXPECT_EQ(*s->reserved_label(), 6);
  ASSERT_EQ(s->segments().size(), 1u);
  EXPECT_EQ(s->segments()[0].label, 6);
  EXPECT_EQ(s->label_name(6), kReservedLabel);
  EXPECT_DOUBLE_EQ(s->confidence()[10], 0.0);
}

TEST(Session, InitConfidence) {
  Env env;
  auto s = env.session();
  EXPECT_EQ(s->num_labels(), 6);
  EXPECT_FALSE(s->reserved_label());
  EXPECT_DOUBLE_EQ(s->confidence()[10], kInitConfidence);
  EXPECT_EQ(s->segments(), env.c.init);
}

TEST(Session, ShapeMismatchRejected) {
  Env env;
  auto bad = std::make_shared<const ModelParams>(ModelParams::init(8, 6, 1));
  EXPECT_THROW(Session(env.features, env.c.vocab, env.c.init, bad), Error);
  Segmentation short_init{{0, 100, 0}};
  EXPECT_THROW(Session(env.features, env.c.vocab, short_init, env.model), Error);
  EXPECT_THROW(Session(env.features, env.c.vocab, env.c.init, nullptr), Error);
  SessionOptions no_local;
  no_local.variant = PolicyVariant::NoLocalProp;
  EXPECT_NO_THROW(Session(env.features, env.c.vocab, env.c.init, nullptr, no_local));
}

TEST(Session, ZeroBudgetCompletesImmediately) {
  Env env;
  SessionOptions opt;
  opt.budget = 0;
  auto s = env.session(opt);
  EXPECT_FALSE(s->next_query());
  EXPECT_TRUE(s->complete());
  EXPECT_EQ(s->journal().events().back().kind, "complete");
  EXPECT_EQ(s->journal().events().back().payload.at("reason"), "budget");
  EXPECT_EQ(s->segments(), env.c.init);
}

TEST(Session, EditedVerdictWritesExactTuple) {
  Env env;
  auto s = env.session();
  const int g = env.c.gt[3].start;
  s->propose({flat(g - 5, g + 4)});
  const Anchor tuple{0, g - 6, g + 6, g, env.c.gt[2].label, env.c.gt[3].label};
  VerdictInput v;
  v.kind = VerdictKind::Edited;
  v.edited = tuple;
  const auto r = s->verdict(v);
  ASSERT_TRUE(r.anchor);
  EXPECT_EQ(r.anchor->id, 1);
  const auto& y = s->hypothesis();
  for (int t = g - 6; t < g; ++t) EXPECT_EQ(y[t], tuple.left_label);
  for (int t = g; t <= g + 6; ++t) EXPECT_EQ(y[t], tuple.right_label);
  for (int t = g - 6; t <= g + 6; ++t) EXPECT_DOUBLE_EQ(s->confidence()[t], 1.0);
  EXPECT_EQ(s->accepted(), 1);
  EXPECT_EQ(s->step(), 1);
  EXPECT_NO_THROW(s->check_invariants());
}

TEST(Session, RejectedVerdictKeepsHypothesis) {
  Env env;
  auto s = env.session();
  const auto q = s->next_query();
  ASSERT_TRUE(q);
  const auto before = s->hypothesis();
  s->propose({flat(q->t - 3, q->t + 3)});
  VerdictInput v;
  v.kind = VerdictKind::Rejected;
  s->verdict(v);
  EXPECT_EQ(s->hypothesis(), before);
  EXPECT_EQ(s->accepted(), 0);
  EXPECT_EQ(s->step(), 1);
  EXPECT_EQ(s->adaptation().history.size(), 1u);
  // A rejected position is not offered again.
  const auto q2 = s->next_query();
  if (q2) {
    EXPECT_GT(std::abs(q2->t - q->t), kAnchorExclusion);
  }
}

TEST(Session, VerdictWithoutProposalRejected) {
  Env env;
  auto s = env.session();
  EXPECT_THROW(s->verdict({}), Error);
  EXPECT_THROW(s->reject_query(), Error);
}

TEST(Session, EditCueOnlyScribbleIsGestureError) {
  Env env;
  auto s = env.session();
  try {
    s->propose({vertical(100)});
    FAIL() << "expected gesture error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Gesture);
  }
}

TEST(Session, EditSegmentMergesNearestBoundary) {
  Env env;
  auto s = env.session();
  const auto& init = env.c.init;
  const int b = init[2].start;
  const int left_len = init[1].end - init[1].start, right_len = init[2].end - init[2].start;
  const int keep = left_len >= right_len ? init[1].label : init[2].label;
  EXPECT_TRUE(s->edit_segment({vertical(b + 3)}));
  const auto segs = s->segments();
  EXPECT_EQ(segs.size(), init.size() - 1);
  EXPECT_EQ(s->hypothesis()[b - 1], keep);
  EXPECT_EQ(s->hypothesis()[b], keep);
  // Far from any boundary: journaled miss, no change.
  const int far = (init[0].start + init[0].end) / 2;
  if (init[0].end - far > kEditCueRadius) {
    EXPECT_FALSE(s->edit_segment({vertical(far)}));
    EXPECT_EQ(s->segments(), segs);
  }
}

TEST(Session, EditSegmentRefusesAnchorCut) {
  Env env;
  auto s = env.session();
  const int g = env.c.gt[2].start;
  s->propose({flat(g - 5, g + 4)});
  VerdictInput v;
  v.kind = VerdictKind::Edited;
  v.edited = Anchor{0, g - 4, g + 4, g, env.c.gt[1].label, env.c.gt[2].label};
  s->verdict(v);
  const auto before = s->hypothesis();
  EXPECT_THROW(s->edit_segment({vertical(g)}), ConstraintConflict);
  EXPECT_EQ(s->hypothesis(), before);
}

TEST(Session, ConflictingAnchorRollsBack) {
  Env env;
  auto s = env.session();
  const int g = env.c.gt[2].start;
  s->propose({flat(g - 5, g + 4)});
  VerdictInput v;
  v.kind = VerdictKind::Edited;
  v.edited = Anchor{0, g - 4, g + 4, g, 0, 1};
  s->verdict(v);
  const auto before = s->hypothesis();
  // Same cut, different labels: protected frames collide.
  s->propose({flat(g - 5, g + 4)});
  v.edited = Anchor{0, g - 4, g + 4, g, 2, 3};
  try {
    s->verdict(v);
    FAIL() << "expected conflict";
  } catch (const ConstraintConflict& e) {
    EXPECT_EQ(e.anchor_ids(), (std::vector<int>{1, 2}));
  }
  EXPECT_EQ(s->hypothesis(), before);
  EXPECT_EQ(s->anchors().size(), 1u);
  EXPECT_EQ(s->accepted(), 1);
  ASSERT_TRUE(s->pending_proposal());  // still awaiting a valid verdict
}

TEST(Session, LaterAnchorTrimsEarlierSpan) {
  Env env;
  auto s = env.session();
  const int g = env.c.gt[2].start;
  VerdictInput v;
  v.kind = VerdictKind::Edited;
  s->propose({flat(g - 5, g + 4)});
  v.edited = Anchor{0, g - 20, g + 20, g, 0, 1};
  s->verdict(v);
  s->propose({flat(g + 8, g + 14)});
  v.edited = Anchor{0, g + 5, g + 30, g + 10, 1, 2};
  s->verdict(v);
  ASSERT_EQ(s->anchors().size(), 2u);
  EXPECT_EQ(s->anchors()[0].end, g + 8);     // cut of the new anchor minus two
  EXPECT_EQ(s->anchors()[1].start, g + 5);   // already clear of the old cut's protected frames
  EXPECT_TRUE(anchor_violations(s->hypothesis(), s->anchors()).empty());
}

TEST(Session, SwapModelVersioning) {
  Env env;
  auto s = env.session();
  auto same = std::make_shared<const ModelParams>(*env.model);
  try {
    s->swap_model(same);
    FAIL() << "expected stale version";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StaleVersion);
  }
  auto newer = std::make_shared<ModelParams>(*env.model);
  newer->version = 5;
  const int g = env.c.gt[1].start;
  const auto& prop = s->propose({flat(g - 5, g + 4)});
  EXPECT_EQ(prop.model_version, 0u);
  s->swap_model(newer);
  EXPECT_EQ(s->model_version(), 0u);  // deferred while a draft is pending
  VerdictInput v;
  v.kind = VerdictKind::Rejected;
  s->verdict(v);
  EXPECT_EQ(s->model_version(), 5u);
  EXPECT_EQ(s->journal().events().back().kind, "swap");
}

TEST(Session, NoLocalProposalCutsAtStrokeCentre) {
  Env env;
  SessionOptions opt;
  opt.variant = PolicyVariant::NoLocalProp;
  auto s = env.session(opt);
  const auto& prop = s->propose({flat(100, 109)});
  ASSERT_EQ(prop.drafts.size(), 1u);
  EXPECT_EQ(prop.drafts[0].cut, 105);
  EXPECT_EQ(prop.drafts[0].left_label, s->hypothesis()[104]);
  EXPECT_EQ(prop.drafts[0].right_label, s->hypothesis()[105]);
  EXPECT_DOUBLE_EQ(prop.raw_confidence, 0.5);
  EXPECT_FALSE(prop.output);
}

TEST(Session, DraftCoversCutAndStaysInWindow) {
  Env env;
  auto s = env.session();
  for (std::size_t i = 1; i < env.c.gt.size(); ++i) {
    const int g = env.c.gt[i].start;
    const auto& prop = s->propose({flat(g - 5, g + 4)});
    ASSERT_EQ(prop.drafts.size(), 1u);
    const auto& d = prop.drafts[0];
    EXPECT_LE(d.start, d.cut);
    EXPECT_LE(d.cut, d.end);
    EXPECT_GE(d.start, prop.encoding.window.begin);
    EXPECT_LT(d.end, prop.encoding.window.end);
    EXPECT_NE(d.left_label, d.right_label);
    s->discard_pending();
  }
}

TEST(Oracle, TargetsNearestUnclaimedBoundary) {
  Segmentation gt{{0, 50, 0}, {50, 100, 1}, {100, 150, 2}};
  OracleAnswerer o{gt};
  Query q;
  q.t = 60;
  q.window = {20, 130};
  EXPECT_EQ(o.target_for(q, {}), 50);
  EXPECT_EQ(o.target_for(q, {Anchor{1, 45, 55, 52, 0, 1}}), 100);
  q.window = {60, 90};
  EXPECT_FALSE(o.target_for(q, {}));
  const auto strokes = o.stroke_for(50, 150);
  ASSERT_EQ(strokes.size(), 1u);
  EXPECT_EQ(project_stroke(strokes[0], 150), (FrameInterval{45, 55}));
}

TEST(Oracle, AcceptsOnlySnappedMatchingDraft) {
  Segmentation gt{{0, 50, 0}, {50, 100, 1}};
  OracleAnswerer o{gt};
  ProposalResult r;
  r.drafts = {Anchor{1, 40, 60, 53, 0, 1}};
  EXPECT_EQ(o.judge(r, 50).kind, VerdictKind::Accepted);
  r.drafts[0].cut = 56;
  auto v = o.judge(r, 50);
  EXPECT_EQ(v.kind, VerdictKind::Edited);
  EXPECT_EQ(*v.edited, (Anchor{1, 40, 60, 50, 0, 1}));
  r.drafts[0] = Anchor{1, 40, 60, 50, 2, 1};
  EXPECT_EQ(o.judge(r, 50).kind, VerdictKind::Edited);
}

TEST(RunBudgeted, OracleSessionsHonourAnchorsAndImprove) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Env env(seed);
    SessionOptions opt;
    opt.budget = interaction_budget(env.c.gt);
    opt.seed = seed;
    auto s = env.session(opt);
    const auto tr = run_budgeted(*s, OracleAnswerer{env.c.gt});
    EXPECT_EQ(tr.anchor_violations, 0);
    EXPECT_TRUE(s->complete());
    EXPECT_LE(tr.accepted, *opt.budget);
    ASSERT_FALSE(tr.trace.empty());
    for (std::size_t i = 1; i < tr.trace.size(); ++i) EXPECT_GE(tr.trace[i].f1[0] + 1e-12, tr.trace[i - 1].f1[0]);
    EXPECT_GE(tr.trace.back().f1[0], tr.trace.front().f1[0]);
    EXPECT_NO_THROW(s->check_invariants());
  }
}

TEST(RunBudgeted, SingleBoundaryReachesExactF1) {
  FixtureConfig cfg;
  cfg.num_segments = 2;
  Env env(21, cfg);
  SessionOptions opt;
  opt.budget = interaction_budget(env.c.gt);
  auto s = env.session(opt);
  const auto tr = run_budgeted(*s, OracleAnswerer{env.c.gt});
  EXPECT_DOUBLE_EQ(tr.trace.back().f1[0], 1.0);
  EXPECT_DOUBLE_EQ(tr.trace.back().edit, 1.0);
}

TEST(Replay, ReproducesSessionExactly) {
  Env env(4);
  SessionOptions opt;
  opt.budget = interaction_budget(env.c.gt);
  opt.seed = 9;
  auto s = env.session(opt);
  run_budgeted(*s, OracleAnswerer{env.c.gt});
  // Round trip through the line format as well.
  const auto events = Journal::parse_lines(s->journal().to_lines());
  auto r = replay(events, env.features, env.model);
  EXPECT_EQ(r->hypothesis(), s->hypothesis());
  EXPECT_EQ(r->anchors(), s->anchors());
  EXPECT_EQ(r->snapshot_json().dump(), s->snapshot_json().dump());
  EXPECT_EQ(r->journal().size(), s->journal().size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    EXPECT_EQ(r->journal().events()[i].kind, events[i].kind) << i;
    if (events[i].kind != "init") {
      EXPECT_EQ(r->journal().events()[i].payload, events[i].payload) << i;
    }
  }
}

TEST(Replay, RejectsDivergentQuery) {
  Env env;
  auto s = env.session();
  s->next_query();
  auto events = s->journal().events();
  events[1].payload["t_q"] = events[1].payload["t_q"].get<int>() + 1;
  EXPECT_THROW(replay(events, env.features, env.model), Error);
  events.erase(events.begin());
  EXPECT_THROW(replay(events, env.features, env.model), Error);
}

TEST(Replay, SwapMustMatchRefinement) {
  Env env;
  SessionOptions opt;
  opt.refinement = RefinementMode::Deferred;
  auto s = env.session(opt);
  EXPECT_THROW(s->apply_journaled_swap(1), Error);
}

TEST(Variants, RoundTripNames) {
  for (auto v : {PolicyVariant::Full, PolicyVariant::NoCQP, PolicyVariant::NoLocalProp, PolicyVariant::NoCDA,
                 PolicyVariant::NoDenseProp})
    EXPECT_EQ(policy_from_string(to_string(v)), v);
  EXPECT_THROW(policy_from_string("bogus"), Error);
}

TEST(Variants, RandomPlannerIsSeeded) {
  Env env;
  SessionOptions opt;
  opt.variant = PolicyVariant::NoCQP;
  opt.seed = 3;
  auto a = env.session(opt), b = env.session(opt);
  for (int i = 0; i < 5; ++i) {
    const auto qa = a->next_query(), qb = b->next_query();
    ASSERT_EQ(bool(qa), bool(qb));
    if (!qa) break;
    EXPECT_EQ(qa->t, qb->t);
    a->reject_query();
    b->reject_query();
  }
}

TEST(Variants, AblationsKeepAnchors) {
  for (auto v : {PolicyVariant::NoCQP, PolicyVariant::NoLocalProp, PolicyVariant::NoCDA, PolicyVariant::NoDenseProp}) {
    Env env(6);
    SessionOptions opt;
    opt.variant = v;
    opt.budget = interaction_budget(env.c.gt);
    auto s = env.session(opt);
    const auto tr = run_budgeted(*s, OracleAnswerer{env.c.gt});
    EXPECT_EQ(tr.anchor_violations, 0) << to_string(v);
    EXPECT_NO_THROW(s->check_invariants()) << to_string(v);
  }
}

}  // namespace
}  // namespace scribe
