#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <tuple>
#include <vector>

#include "scribe/error.hpp"
#include "scribe/feature_store.hpp"
#include "scribe/labels.hpp"

namespace scribe {

struct StrokePoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;  // frame index; the client maps timeline x to frames

  friend bool operator==(const StrokePoint&, const StrokePoint&) = default;
};

struct Stroke {
  std::vector<StrokePoint> points;

  friend bool operator==(const Stroke&, const Stroke&) = default;
};

enum class GestureKind { UncertainBoundary, EditCue, MultiBoundary };

inline const char* to_string(GestureKind g) {
  switch (g) {
    case GestureKind::UncertainBoundary: return "uncertain_boundary";
    case GestureKind::EditCue: return "edit_cue";
    case GestureKind::MultiBoundary: return "multi_boundary";
  }
  return "?";
}

inline constexpr int kContextRadius = 32;
inline constexpr double kWideRatio = 2.0;
inline constexpr double kTallRatio = 0.5;

struct GestureOptions {
  double frame_to_canvas = 1.0;  // canvas units per frame on the time axis
};

struct ScribbleEncoding {
  FrameInterval window;
  std::array<std::vector<double>, 3> channels;  // uncertain, left, right; each |W| long
  FrameInterval uncertain;                      // I+
  GestureKind gesture = GestureKind::UncertainBoundary;
  BoundarySet covered_boundaries;  // hypothesis boundaries inside I+ (merged correction targets)
  std::vector<FrameInterval> left_supports;
  std::vector<FrameInterval> right_supports;

  double channel(int c, int t) const {
    return channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(t - window.begin)];
  }
};

inline FrameInterval project_stroke(const Stroke& s, int num_frames) {
  if (s.points.empty()) throw Error(ErrorKind::Rejection, "stroke without points");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : s.points) {
    if (!std::isfinite(p.t)) throw Error(ErrorKind::Rejection, "non-finite stroke time");
    lo = std::min(lo, p.t);
    hi = std::max(hi, p.t);
  }
  const long a = std::lround(lo), b = std::lround(hi) + 1;
  const FrameInterval clipped{static_cast<int>(std::max(0L, a)),
                              static_cast<int>(std::min<long>(num_frames, b))};
  if (clipped.empty()) throw Error(ErrorKind::Rejection, "stroke lies outside [0," + std::to_string(num_frames) + ")");
  return clipped;
}

inline std::vector<FrameInterval> project_strokes(const std::vector<Stroke>& strokes, int num_frames) {
  if (strokes.empty()) throw Error(ErrorKind::Rejection, "no strokes");
  std::vector<FrameInterval> out;
  out.reserve(strokes.size());
  for (const auto& s : strokes) out.push_back(project_stroke(s, num_frames));
  return out;
}

inline int count_covered(const FrameInterval& support, const BoundarySet& boundaries) {
  return static_cast<int>(std::count_if(boundaries.begin(), boundaries.end(),
                                        [&](int b) { return support.contains(b); }));
}

inline GestureKind classify_stroke(const Stroke& s, const FrameInterval& support, const BoundarySet& boundaries,
                                   const GestureOptions& opt = {}) {
  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  for (const auto& p : s.points) {
    ylo = std::min(ylo, p.y);
    yhi = std::max(yhi, p.y);
  }
  const double vertical = yhi - ylo;
  const double horizontal = support.length() * opt.frame_to_canvas;
  const double ratio = vertical > 0.0 ? horizontal / vertical : std::numeric_limits<double>::infinity();
  if (ratio <= kTallRatio) return GestureKind::EditCue;
  if (count_covered(support, boundaries) >= 2) return GestureKind::MultiBoundary;
  return GestureKind::UncertainBoundary;
}

inline GestureKind classify_gesture(const std::vector<Stroke>& strokes, int num_frames,
                                    const BoundarySet& boundaries, const GestureOptions& opt = {}) {
  const auto supports = project_strokes(strokes, num_frames);
  bool any_uncertain = false;
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    const auto k = classify_stroke(strokes[i], supports[i], boundaries, opt);
    if (k == GestureKind::MultiBoundary) return k;
    any_uncertain |= k == GestureKind::UncertainBoundary;
  }
  return any_uncertain ? GestureKind::UncertainBoundary : GestureKind::EditCue;
}

inline FrameInterval make_window(const FrameInterval& support, int num_frames, int radius = kContextRadius) {
  if (support.empty()) throw Error(ErrorKind::Argument, "empty scribble support");
  return {std::max(0, support.begin - radius), std::min(num_frames, support.end + radius)};
}

namespace detail {

// Order-independent key for picking the uncertain stroke among several boundary-like strokes:
// most covered hypothesis boundaries, then centre closest to a hypothesis boundary, then widest,
// then earliest.
inline auto uncertain_rank(const FrameInterval& s, const BoundarySet& boundaries) {
  const int covered = count_covered(s, boundaries);
  double best = std::numeric_limits<double>::infinity();
  const double centre = 0.5 * (s.begin + s.end);
  for (int b : boundaries) best = std::min(best, std::abs(centre - b));
  return std::make_tuple(-covered, best, -s.length(), s.begin, s.end);
}

}  // namespace detail

// Builds the 3-channel encoding from already-projected supports. Side channels never overlap I+.
inline ScribbleEncoding encode_supports(const FrameInterval& uncertain, std::vector<FrameInterval> lefts,
                                        std::vector<FrameInterval> rights, int num_frames) {
  ScribbleEncoding enc;
  enc.uncertain = uncertain;
  FrameInterval hull = uncertain;
  for (const auto* group : {&lefts, &rights})
    for (const auto& s : *group) {
      hull.begin = std::min(hull.begin, s.begin);
      hull.end = std::max(hull.end, s.end);
    }
  auto by_pos = [](const FrameInterval& a, const FrameInterval& b) {
    return std::tie(a.begin, a.end) < std::tie(b.begin, b.end);
  };
  std::sort(lefts.begin(), lefts.end(), by_pos);
  std::sort(rights.begin(), rights.end(), by_pos);
  enc.left_supports = std::move(lefts);
  enc.right_supports = std::move(rights);

  enc.window = make_window(hull, num_frames);
  const auto n = static_cast<std::size_t>(enc.window.length());
  for (auto& ch : enc.channels) ch.assign(n, 0.0);
  const auto at = [&](int t) { return static_cast<std::size_t>(t - enc.window.begin); };
  for (int t = uncertain.begin; t < uncertain.end; ++t) enc.channels[0][at(t)] = 1.0;
  auto fill_side = [&](std::size_t c, const std::vector<FrameInterval>& sides) {
    for (const auto& s : sides)
      for (int t = std::max(s.begin, enc.window.begin); t < std::min(s.end, enc.window.end); ++t)
        if (!uncertain.contains(t)) enc.channels[c][at(t)] = 1.0;
  };
  fill_side(1, enc.left_supports);
  fill_side(2, enc.right_supports);
  return enc;
}

inline ScribbleEncoding encode_use(const std::vector<Stroke>& strokes, int num_frames, const Segmentation& hypothesis,
                                   const GestureOptions& opt = {}) {
  const auto supports = project_strokes(strokes, num_frames);
  const auto boundaries = boundaries_of(hypothesis);

  std::vector<std::size_t> boundary_like;
  std::vector<GestureKind> kinds(strokes.size());
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    kinds[i] = classify_stroke(strokes[i], supports[i], boundaries, opt);
    if (kinds[i] != GestureKind::EditCue) boundary_like.push_back(i);
  }
  if (boundary_like.empty()) throw Error(ErrorKind::Gesture, "no uncertain boundary stroke in scribble");

  const auto chosen = *std::min_element(boundary_like.begin(), boundary_like.end(), [&](auto a, auto b) {
    return detail::uncertain_rank(supports[a], boundaries) < detail::uncertain_rank(supports[b], boundaries);
  });

  const double centre = 0.5 * (supports[chosen].begin + supports[chosen].end);
  std::vector<FrameInterval> lefts, rights;
  for (std::size_t i : boundary_like) {
    if (i == chosen) continue;
    const auto& s = supports[i];
    const double c = 0.5 * (s.begin + s.end);
    if (c < centre)
      lefts.push_back(s);
    else if (c > centre)
      rights.push_back(s);
  }
  auto enc = encode_supports(supports[chosen], std::move(lefts), std::move(rights), num_frames);
  enc.gesture = kinds[chosen];
  for (int b : boundaries)
    if (enc.uncertain.contains(b)) enc.covered_boundaries.push_back(b);
  return enc;
}

}  // namespace scribe
