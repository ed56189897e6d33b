#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "scribe/scribble.hpp"

namespace scribe {
namespace {

Stroke flat(int t0, int t1, double y = 0.0, double height = 1.0) {
  Stroke s;
  for (int t = t0; t <= t1; ++t) s.points.push_back({static_cast<double>(t), y + (t % 2) * height, static_cast<double>(t)});
  return s;
}

Stroke tall(int t, double height) { return Stroke{{{double(t), 0.0, double(t)}, {double(t + 1), height, double(t + 1)}}}; }

const Segmentation kHyp{{0, 40, 0}, {40, 55, 1}, {55, 200, 2}};

TEST(Project, Supports) {
  Stroke s;
  for (int t = 14; t <= 22; ++t) s.points.push_back({0, 0, double(t)});
  EXPECT_EQ(project_stroke(s, 100), (FrameInterval{14, 23}));
  EXPECT_EQ(project_stroke(Stroke{{{0, 0, 7}, {1, 1, 7}}}, 100), (FrameInterval{7, 8}));
  try {
    project_stroke(Stroke{{{0, 0, -3}, {0, 0, -1}}}, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Rejection);
  }
  EXPECT_EQ(project_stroke(Stroke{{{0, 0, -4}, {0, 0, 5}}}, 100), (FrameInterval{0, 6}));
}

TEST(Gesture, Classification) {
  // 30 frames wide, 5 units tall, covering one boundary.
  Stroke wide = flat(30, 59, 0.0, 5.0);
  EXPECT_EQ(classify_gesture({wide}, 200, {45}), GestureKind::UncertainBoundary);
  EXPECT_EQ(classify_gesture({tall(100, 80.0)}, 200, boundaries_of(kHyp)), GestureKind::EditCue);
  EXPECT_EQ(classify_gesture({flat(35, 60)}, 200, {40, 55}), GestureKind::MultiBoundary);
  // Ambiguous ratio defaults to uncertain.
  EXPECT_EQ(classify_gesture({flat(10, 19, 0.0, 10.0)}, 200, {}), GestureKind::UncertainBoundary);
}

TEST(Window, ContextRadius) {
  EXPECT_EQ(make_window({100, 110}, 1000), (FrameInterval{68, 142}));
  EXPECT_EQ(make_window({5, 10}, 1000), (FrameInterval{0, 42}));
  EXPECT_EQ(make_window({980, 990}, 1000), (FrameInterval{948, 1000}));
  EXPECT_THROW(make_window({3, 3}, 1000), Error);
}

TEST(Encode, SingleUncertainStroke) {
  const auto enc = encode_use({flat(50, 59)}, 200, kHyp);
  EXPECT_EQ(enc.uncertain, (FrameInterval{50, 60}));
  EXPECT_EQ(enc.window, (FrameInterval{18, 92}));
  for (int t = enc.window.begin; t < enc.window.end; ++t) {
    EXPECT_EQ(enc.channel(0, t), enc.uncertain.contains(t) ? 1.0 : 0.0);
    EXPECT_EQ(enc.channel(1, t), 0.0);
    EXPECT_EQ(enc.channel(2, t), 0.0);
  }
  EXPECT_EQ(enc.covered_boundaries, (BoundarySet{55}));
}

TEST(Encode, SideStrokes) {
  const auto enc = encode_use({flat(50, 59), flat(30, 39)}, 200, Segmentation{{0, 55, 0}, {55, 200, 1}});
  EXPECT_EQ(enc.uncertain, (FrameInterval{50, 60}));
  for (int t = enc.window.begin; t < enc.window.end; ++t) EXPECT_EQ(enc.channel(1, t), (t >= 30 && t < 40) ? 1.0 : 0.0);

  // A right stroke overlapping I+ is clipped away from I+.
  const auto enc2 = encode_supports({50, 60}, {}, {{55, 70}}, 200);
  for (int t = enc2.window.begin; t < enc2.window.end; ++t) {
    EXPECT_EQ(enc2.channel(2, t), (t >= 60 && t < 70) ? 1.0 : 0.0);
    EXPECT_EQ(enc2.channel(2, t) * enc2.channel(0, t), 0.0);
  }
}

TEST(Encode, EditCueOnlyIsGestureError) {
  try {
    encode_use({tall(100, 80.0)}, 200, kHyp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Gesture);
  }
}

TEST(Encode, MultiBoundaryRecordsCovered) {
  const auto enc = encode_use({flat(35, 60)}, 200, kHyp);
  EXPECT_EQ(enc.gesture, GestureKind::MultiBoundary);
  EXPECT_EQ(enc.covered_boundaries, (BoundarySet{40, 55}));
}

TEST(Encode, PropertiesOnRandomStrokeSets) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = std::uniform_int_distribution<int>(20, 400)(rng);
    std::uniform_int_distribution<int> pos(0, T - 1), len(0, 25), count(1, 4);
    std::vector<Stroke> strokes;
    const int k = count(rng);
    for (int i = 0; i < k; ++i) {
      const int a = pos(rng);
      strokes.push_back(flat(a, std::min(T - 1, a + len(rng))));
    }
    Segmentation hyp{{0, T / 2, 0}, {T / 2, T, 1}};
    const auto enc = encode_use(strokes, T, hyp);
    EXPECT_TRUE(enc.window.contains(enc.uncertain));
    EXPECT_GE(enc.window.begin, 0);
    EXPECT_LE(enc.window.end, T);
    FrameInterval hull = enc.uncertain;
    for (const auto* g : {&enc.left_supports, &enc.right_supports})
      for (const auto& s : *g) hull = {std::min(hull.begin, s.begin), std::max(hull.end, s.end)};
    EXPECT_LE(enc.window.length(), hull.length() + 2 * kContextRadius);
    for (const auto& ch : enc.channels)
      for (double v : ch) EXPECT_TRUE(v == 0.0 || v == 1.0);

    auto shuffled = strokes;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto enc2 = encode_use(shuffled, T, hyp);
    EXPECT_EQ(enc2.window, enc.window);
    EXPECT_EQ(enc2.uncertain, enc.uncertain);
    EXPECT_EQ(enc2.channels, enc.channels);
  }
}

}  // namespace
}  // namespace scribe
