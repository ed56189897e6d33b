#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scribe/error.hpp"
#include "scribe/labels.hpp"

namespace scribe {

// Accepted correction: span [start, end] (inclusive), cut, and confirmed side labels.
struct Anchor {
  int id = 0;
  int start = 0;
  int end = 0;
  int cut = 0;
  int left_label = 0;
  int right_label = 0;

  // Equal side labels record a confirmed "no boundary here"; the cut is then unused.
  bool is_merge() const { return left_label == right_label; }

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct PropagationParams {
  double w_prev = 1.0;
  double w_prop = 1.0;
  double w_anchor = 5.0;
  double gamma_base = 0.8;
  double kappa = 1.0;
};

struct ProtectedCut {
  int cut = 0;
  int left_label = 0;
  int right_label = 0;
  int anchor_id = 0;
};

struct DecodeProblem {
  int num_frames = 0;
  int num_labels = 0;
  Eigen::MatrixXd emissions;       // T x L, anchor bonuses already folded in
  std::vector<double> transition;  // gamma_t, index 0 unused
  std::vector<ProtectedCut> protected_cuts;

  double emission(int t, int y) const { return emissions(t, y); }
};

// Side-label posteriors of the proposal behind the most recent accepted anchor.
struct SidePosteriors {
  Eigen::VectorXd p_left;
  Eigen::VectorXd p_right;
  Anchor anchor;
};

inline void validate_anchor(const Anchor& a, int num_frames, int num_labels) {
  const bool labels_ok = a.left_label >= 0 && a.left_label < num_labels && a.right_label >= 0 &&
                         a.right_label < num_labels;
  const bool span_ok = 0 <= a.start && a.start <= a.cut && a.cut <= a.end && a.end < num_frames;
  const bool cut_ok = a.is_merge() || (a.cut >= 1 && a.cut < num_frames);
  if (!labels_ok || !span_ok || !cut_ok)
    throw Error(ErrorKind::Structure, "anchor " + std::to_string(a.id) + " (" + std::to_string(a.start) + "," +
                                          std::to_string(a.end) + ",cut " + std::to_string(a.cut) +
                                          ") is outside [0," + std::to_string(num_frames) + ")");
}

inline DecodeProblem build_problem(const DenseLabeling& hypothesis, const std::vector<double>& confidence,
                                   const std::vector<Anchor>& anchors, int num_labels,
                                   const std::optional<SidePosteriors>& recent, const PropagationParams& prm = {}) {
  const int T = static_cast<int>(hypothesis.size());
  if (static_cast<int>(confidence.size()) != T) throw Error(ErrorKind::Structure, "confidence length differs from T");
  DecodeProblem p;
  p.num_frames = T;
  p.num_labels = num_labels;
  p.emissions = Eigen::MatrixXd::Zero(T, num_labels);
  for (int t = 0; t < T; ++t) {
    const int y = hypothesis[static_cast<std::size_t>(t)];
    if (y < 0 || y >= num_labels) throw Error(ErrorKind::Structure, "hypothesis label outside vocabulary");
    p.emissions(t, y) += prm.w_prev;
  }
  if (recent) {
    const auto& a = recent->anchor;
    validate_anchor(a, T, num_labels);
    for (int t = a.start; t <= a.end; ++t) {
      const auto& post = t < a.cut ? recent->p_left : recent->p_right;
      for (int y = 0; y < num_labels; ++y) {
        const double prob = y < post.size() ? post(y) : 0.0;
        p.emissions(t, y) += prm.w_prop * std::log(std::max(prob, 1e-12));
      }
    }
  }
  p.transition.assign(static_cast<std::size_t>(T), 0.0);
  for (int t = 1; t < T; ++t)
    p.transition[static_cast<std::size_t>(t)] =
        prm.gamma_base * (1.0 + prm.kappa * std::clamp(confidence[static_cast<std::size_t>(t)], 0.0, 1.0));
  for (const auto& a : anchors) {
    validate_anchor(a, T, num_labels);
    for (int t = a.start; t <= a.end; ++t) p.emissions(t, t < a.cut ? a.left_label : a.right_label) += prm.w_anchor;
    if (!a.is_merge()) p.protected_cuts.push_back({a.cut, a.left_label, a.right_label, a.id});
  }
  return p;
}

namespace detail {

struct ForcedLabel {
  int label = -1;
  int anchor_id = -1;
};

inline std::vector<ForcedLabel> forced_labels(const DecodeProblem& p) {
  std::vector<ForcedLabel> forced(static_cast<std::size_t>(p.num_frames));
  auto force = [&](int t, int label, int id) {
    auto& f = forced[static_cast<std::size_t>(t)];
    if (f.label >= 0 && f.label != label)
      throw ConstraintConflict({f.anchor_id, id}, "anchors " + std::to_string(f.anchor_id) + " and " +
                                                      std::to_string(id) + " force different labels at frame " +
                                                      std::to_string(t));
    f = {label, f.anchor_id >= 0 ? f.anchor_id : id};
  };
  for (const auto& c : p.protected_cuts) {
    if (c.cut < 1 || c.cut >= p.num_frames) throw Error(ErrorKind::Structure, "protected cut outside (0,T)");
    force(c.cut - 1, c.left_label, c.anchor_id);
    force(c.cut, c.right_label, c.anchor_id);
  }
  return forced;
}

}  // namespace detail

// Objective value of a labeling; -inf when it breaks a protected cut.
inline double objective(const DecodeProblem& p, const DenseLabeling& y) {
  const auto forced = detail::forced_labels(p);
  double s = 0.0;
  for (int t = 0; t < p.num_frames; ++t) {
    const int lab = y[static_cast<std::size_t>(t)];
    const auto f = forced[static_cast<std::size_t>(t)].label;
    if (f >= 0 && f != lab) return -std::numeric_limits<double>::infinity();
    s += p.emissions(t, lab);
    if (t > 0 && lab != y[static_cast<std::size_t>(t - 1)]) s -= p.transition[static_cast<std::size_t>(t)];
  }
  return s;
}

// Exact first-order Viterbi. Ties prefer staying on the same label, then the lowest index.
inline DenseLabeling decode(const DecodeProblem& p) {
  const int T = p.num_frames, L = p.num_labels;
  if (T < 1 || L < 1) throw Error(ErrorKind::Structure, "empty decode problem");
  const auto forced = detail::forced_labels(p);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  auto emit = [&](int t, int y) {
    const int f = forced[static_cast<std::size_t>(t)].label;
    return (f >= 0 && f != y) ? kNegInf : p.emissions(t, y);
  };

  std::vector<double> prev(static_cast<std::size_t>(L)), cur(static_cast<std::size_t>(L));
  std::vector<int> back(static_cast<std::size_t>(T) * static_cast<std::size_t>(L), 0);
  for (int y = 0; y < L; ++y) prev[static_cast<std::size_t>(y)] = emit(0, y);
  for (int t = 1; t < T; ++t) {
    const double gamma = p.transition[static_cast<std::size_t>(t)];
    for (int y = 0; y < L; ++y) {
      int best = y;
      double best_v = prev[static_cast<std::size_t>(y)];
      for (int q = 0; q < L; ++q) {
        if (q == y) continue;
        const double v = prev[static_cast<std::size_t>(q)] - gamma;
        if (v > best_v) {
          best_v = v;
          best = q;
        }
      }
      cur[static_cast<std::size_t>(y)] = best_v + emit(t, y);
      back[static_cast<std::size_t>(t) * L + y] = best;
    }
    std::swap(prev, cur);
  }
  int last = 0;
  for (int y = 1; y < L; ++y)
    if (prev[static_cast<std::size_t>(y)] > prev[static_cast<std::size_t>(last)]) last = y;
  if (prev[static_cast<std::size_t>(last)] == kNegInf) {
    std::vector<int> ids;
    for (const auto& c : p.protected_cuts) ids.push_back(c.anchor_id);
    throw ConstraintConflict(ids, "protected cuts admit no labeling");
  }
  DenseLabeling y(static_cast<std::size_t>(T));
  y[static_cast<std::size_t>(T - 1)] = last;
  for (int t = T - 1; t > 0; --t)
    y[static_cast<std::size_t>(t - 1)] = back[static_cast<std::size_t>(t) * L + y[static_cast<std::size_t>(t)]];
  return y;
}

// Returns ids of anchors whose cut or side labels are not honoured by the labeling.
inline std::vector<int> anchor_violations(const DenseLabeling& y, const std::vector<Anchor>& anchors) {
  std::vector<int> bad;
  for (const auto& a : anchors) {
    if (a.is_merge()) continue;
    const auto b = static_cast<std::size_t>(a.cut);
    if (b < 1 || b >= y.size() || y[b - 1] != a.left_label || y[b] != a.right_label) bad.push_back(a.id);
  }
  return bad;
}

// Direct overwrite of an anchor's span, used when dense propagation is disabled.
inline void overwrite_span(DenseLabeling& y, const Anchor& a) {
  for (int t = a.start; t <= a.end; ++t) y[static_cast<std::size_t>(t)] = t < a.cut ? a.left_label : a.right_label;
}

}  // namespace scribe
