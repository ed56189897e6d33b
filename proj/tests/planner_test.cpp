#include <gtest/gtest.h>

#include <random>

#include "scribe/planner.hpp"

namespace scribe {
namespace {

struct ViewFixture {
  std::vector<double> energy;
  DenseLabeling hyp;
  std::vector<double> conf;
  ConfusionMemory confusion{3};

  explicit ViewFixture(int T) : energy(static_cast<std::size_t>(T), 0.0), hyp(static_cast<std::size_t>(T), 0),
                                conf(static_cast<std::size_t>(T), 1.0) {}

  PlannerView view() const { return {&energy, &hyp, &conf, &confusion, {}, {}, {}}; }
};

TEST(Candidates, FlatEnergyNoLowConfidence) {
  ViewFixture f(100);
  EXPECT_TRUE(enumerate_candidates(f.view()).empty());
}

TEST(Candidates, SinglePeak) {
  ViewFixture f(100);
  f.energy[50] = 1.0;
  const auto qs = enumerate_candidates(f.view());
  ASSERT_EQ(qs.size(), 1u);
  EXPECT_EQ(qs[0].t, 50);
  EXPECT_EQ(qs[0].window, (FrameInterval{18, 83}));
  EXPECT_TRUE(qs[0].window.contains(qs[0].t));
  EXPECT_EQ(qs[0].source, QuerySource::EnergyPeak);
}

TEST(Candidates, AnchorExclusion) {
  ViewFixture f(100);
  f.energy[52] = 1.0;
  auto v = f.view();
  v.anchor_cuts = {50};
  EXPECT_TRUE(enumerate_candidates(v).empty());
  v.anchor_cuts = {46};
  EXPECT_EQ(enumerate_candidates(v).size(), 1u);
}

TEST(Candidates, NmsAndLowConfidenceBoundaries) {
  ViewFixture f(200);
  f.energy[40] = 1.0;
  f.energy[45] = 0.8;  // suppressed by 40
  f.energy[60] = 0.5;
  for (int t = 120; t < 200; ++t) f.hyp[static_cast<std::size_t>(t)] = 1;
  f.conf[120] = 0.3;
  const auto qs = enumerate_candidates(f.view());
  ASSERT_EQ(qs.size(), 3u);
  EXPECT_EQ(qs[0].t, 40);
  EXPECT_EQ(qs[1].t, 60);
  EXPECT_EQ(qs[2].t, 120);
  EXPECT_EQ(qs[2].source, QuerySource::LowConfidenceBoundary);
  f.conf[120] = 0.5;
  EXPECT_EQ(enumerate_candidates(f.view()).size(), 2u);
}

TEST(Utility, Examples) {
  UtilityVector zero{};
  EXPECT_EQ(utility(zero, UtilityWeights{}), 0.0);
  EXPECT_EQ(utility({1, 1, 1, 1}, UtilityWeights{}), 1.0);
  EXPECT_EQ(utility({0.6, 0.3, 0.2, 0.9}, UtilityWeights{{1, 0, 0, 0}}), 0.6);
}

TEST(Utility, Components) {
  ViewFixture f(128);
  f.energy[64] = 0.7;
  for (int t = 64; t < 128; ++t) f.hyp[static_cast<std::size_t>(t)] = 1;
  for (int t = 60; t < 70; ++t) f.conf[static_cast<std::size_t>(t)] = 0.1;
  f.confusion.add(0, 1);
  f.confusion.add(0, 1);
  f.confusion.add(1, 2);
  auto v = f.view();
  v.rejected = {0};
  Query q;
  q.t = 64;
  const auto c = utility_components(q, v);
  EXPECT_EQ(c[kAmbiguity], 0.7);
  EXPECT_DOUBLE_EQ(c[kDisagreement], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c[kGain], 10.0 / 128.0);
  EXPECT_DOUBLE_EQ(c[kHistory], std::exp(-1.0));
  v.rejected.clear();
  EXPECT_EQ(utility_components(q, v)[kHistory], 0.0);
  // Equal flanking labels: disagreement fires only when the confusion row is non-empty.
  q.t = 30;
  EXPECT_EQ(utility_components(q, v)[kDisagreement], 1.0);
  q.t = 100;
  EXPECT_EQ(utility_components(q, v)[kDisagreement], 1.0);
  ConfusionMemory fresh(3);
  v.confusion = &fresh;
  EXPECT_EQ(utility_components(q, v)[kDisagreement], 0.0);
}

TEST(Cost, Examples) {
  Query q;
  q.window = {0, 128};
  q.components[kAmbiguity] = 0.4;
  EXPECT_EQ(estimate_cost(q, CostModel{{0.2, 0, 0}}), 0.2);
  EXPECT_EQ(estimate_cost(q, CostModel{{0, 1, 0}}), 0.5);
  EXPECT_EQ(estimate_cost(q, CostModel{{-1, 0.1, 0.1}}), 0.0);
}

TEST(Priority, Examples) {
  EXPECT_DOUBLE_EQ(priority(0.6, 0.2, 0.1), 2.0);
  EXPECT_EQ(priority(0.0, 3.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(priority(1.0, 0.0, 0.1), 10.0);
  EXPECT_THROW(priority(1.0, 0.0, 0.0), Error);
}

TEST(Priority, Monotone) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double U = u(rng), C = u(rng), d = u(rng);
    EXPECT_GT(priority(U, C), priority(U, C + d));
    EXPECT_LT(priority(U, C), priority(U + d, C));
  }
}

TEST(Select, ArgmaxAndTies) {
  Query a, b;
  a.t = 90;
  a.priority = 2.0;
  b.t = 40;
  b.priority = 1.5;
  EXPECT_EQ(select_next({a, b})->t, 90);
  b.priority = 2.0;
  EXPECT_EQ(select_next({a, b})->t, 40);
  EXPECT_FALSE(select_next({}).has_value());
}

TEST(Select, ScaleInvariant) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Query> qs(6);
    for (int i = 0; i < 6; ++i) {
      qs[static_cast<std::size_t>(i)].t = i * 10;
      qs[static_cast<std::size_t>(i)].priority = std::round(u(rng) * 4) / 4;
    }
    const int best = select_next(qs)->t;
    for (auto& q : qs) q.priority *= 3.5;
    EXPECT_EQ(select_next(qs)->t, best);
  }
}

TEST(Planner, DeterministicAndNeverNearAnchors) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    ViewFixture f(150);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& e : f.energy) e = u(rng) < 0.1 ? u(rng) : 0.0;
    for (auto& c : f.conf) c = u(rng);
    int lab = 0;
    for (auto& y : f.hyp) {
      if (u(rng) < 0.05) lab = (lab + 1) % 3;
      y = lab;
    }
    auto v = f.view();
    v.anchor_cuts = {static_cast<int>(u(rng) * 150), static_cast<int>(u(rng) * 150)};
    auto a = enumerate_candidates(v), b = enumerate_candidates(v);
    score_candidates(a, v, UtilityWeights{}, CostModel{});
    score_candidates(b, v, UtilityWeights{}, CostModel{});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].t, b[i].t);
      EXPECT_EQ(a[i].priority, b[i].priority);
      EXPECT_EQ(a[i].priority, a[i].utility / (a[i].cost + kPriorityTau));
      for (double c : a[i].components) {
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 1.0);
      }
    }
    if (const auto q = select_next(a)) {
      for (int cut : v.anchor_cuts) EXPECT_GT(std::abs(q->t - cut), kAnchorExclusion);
    }
  }
}

TEST(Query, JsonRoundTrip) {
  Query q;
  q.t = 57;
  q.window = {25, 90};
  q.utility = 0.25;
  q.cost = 0.5;
  q.priority = 0.25 / 0.6;
  q.source = QuerySource::LowConfidenceBoundary;
  q.components = {0.1, 0.2, 0.3, 0.4};
  const auto back = query_from_json(nlohmann::json::parse(to_json(q).dump()));
  EXPECT_EQ(back.t, q.t);
  EXPECT_EQ(back.window, q.window);
  EXPECT_EQ(back.priority, q.priority);
  EXPECT_EQ(back.source, q.source);
  EXPECT_EQ(back.components, q.components);
}

}  // namespace
}  // namespace scribe
