#pragma once

// Cost-aware query planning: candidates come from boundary-energy peaks and low-confidence
// hypothesis boundaries, and are ranked by utility / (cost + tau).

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/error.hpp"
#include "scribe/feature_store.hpp"
#include "scribe/labels.hpp"
#include "scribe/memory.hpp"
#include "scribe/scribble.hpp"

namespace scribe {

inline constexpr double kPriorityTau = 0.1;
inline constexpr int kNmsRadius = 8;
inline constexpr double kLowConfidence = 0.5;
inline constexpr int kAnchorExclusion = 5;
inline constexpr double kHistoryScale = 64.0;
inline constexpr double kCostWindowNorm = 256.0;

enum class QuerySource { EnergyPeak, LowConfidenceBoundary };

inline const char* to_string(QuerySource s) {
  return s == QuerySource::EnergyPeak ? "energy_peak" : "low_confidence_boundary";
}

enum UtilityComponent { kAmbiguity = 0, kDisagreement = 1, kGain = 2, kHistory = 3 };
using UtilityVector = std::array<double, 4>;

struct Query {
  int t = 0;
  FrameInterval window;
  double utility = 0.0;
  double cost = 0.0;
  double priority = 0.0;
  QuerySource source = QuerySource::EnergyPeak;
  UtilityVector components{};
};

struct UtilityWeights {
  UtilityVector w{0.25, 0.25, 0.25, 0.25};

  double sum() const { return w[0] + w[1] + w[2] + w[3]; }
  friend bool operator==(const UtilityWeights&, const UtilityWeights&) = default;
};

struct CostModel {
  std::array<double, 3> c{0.3, 0.5, 0.2};
  double step = 0.05;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

// Read-only slice of session state the planner scores against.
struct PlannerView {
  const std::vector<double>* energy = nullptr;  // full-sequence normalized boundary energy
  const DenseLabeling* hypothesis = nullptr;
  const std::vector<double>* confidence = nullptr;
  const ConfusionMemory* confusion = nullptr;
  std::vector<int> anchor_cuts;
  std::vector<int> queried;   // positions already put to the annotator
  std::vector<int> rejected;  // positions whose query was rejected

  int num_frames() const { return static_cast<int>(hypothesis->size()); }
};

namespace detail {

inline bool near_any(int t, const std::vector<int>& pts, int radius) {
  return std::any_of(pts.begin(), pts.end(), [&](int p) { return std::abs(p - t) <= radius; });
}

}  // namespace detail

inline std::vector<int> energy_peaks(const std::vector<double>& e, int nms_radius = kNmsRadius) {
  const int T = static_cast<int>(e.size());
  std::vector<int> raw;
  for (int t = 1; t < T; ++t) {
    const double v = e[static_cast<std::size_t>(t)];
    if (v <= 0.0) continue;
    const bool left_ok = v >= e[static_cast<std::size_t>(t - 1)];
    const bool right_ok = t + 1 >= T || v >= e[static_cast<std::size_t>(t + 1)];
    if (left_ok && right_ok) raw.push_back(t);
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [&](int a, int b) { return e[static_cast<std::size_t>(a)] > e[static_cast<std::size_t>(b)]; });
  std::vector<int> kept;
  for (int t : raw)
    if (!detail::near_any(t, kept, nms_radius)) kept.push_back(t);
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline std::vector<Query> enumerate_candidates(const PlannerView& v) {
  const int T = v.num_frames();
  std::vector<Query> out;
  auto admit = [&](int t, QuerySource src) {
    if (t < 1 || t >= T) return;
    if (detail::near_any(t, v.anchor_cuts, kAnchorExclusion) || detail::near_any(t, v.queried, kAnchorExclusion)) return;
    if (std::any_of(out.begin(), out.end(), [&](const Query& q) { return q.t == t; })) return;
    Query q;
    q.t = t;
    q.window = make_window({t, t + 1}, T);
    q.source = src;
    out.push_back(q);
  };
  for (int t : energy_peaks(*v.energy)) admit(t, QuerySource::EnergyPeak);
  for (int b : boundaries_of(*v.hypothesis))
    if ((*v.confidence)[static_cast<std::size_t>(b)] < kLowConfidence) admit(b, QuerySource::LowConfidenceBoundary);
  std::sort(out.begin(), out.end(), [](const Query& a, const Query& b) { return a.t < b.t; });
  return out;
}

inline UtilityVector utility_components(const Query& q, const PlannerView& v) {
  const int T = v.num_frames();
  const auto& y = *v.hypothesis;
  const auto& conf = *v.confidence;
  UtilityVector c{};
  c[kAmbiguity] = std::clamp((*v.energy)[static_cast<std::size_t>(q.t)], 0.0, 1.0);

  const int yl = y[static_cast<std::size_t>(q.t - 1)], yr = y[static_cast<std::size_t>(q.t)];
  if (v.confusion) {
    if (yl == yr)
      c[kDisagreement] = v.confusion->row_total(yl) > 0 ? 1.0 : 0.0;
    else
      c[kDisagreement] = v.confusion->pair_probability(yl, yr);
  }

  if (conf[static_cast<std::size_t>(q.t)] < kLowConfidence) {
    int a = q.t, b = q.t;
    while (a > 0 && conf[static_cast<std::size_t>(a - 1)] < kLowConfidence) --a;
    while (b + 1 < T && conf[static_cast<std::size_t>(b + 1)] < kLowConfidence) ++b;
    c[kGain] = static_cast<double>(b - a + 1) / T;
  }

  if (!v.rejected.empty()) {
    int d = T;
    for (int r : v.rejected) d = std::min(d, std::abs(r - q.t));
    c[kHistory] = std::exp(-d / kHistoryScale);
  }
  return c;
}

inline double utility(const UtilityVector& comp, const UtilityWeights& w) {
  double u = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i) u += w.w[i] * comp[i];
  return u;
}

inline std::array<double, 3> cost_features(const Query& q) {
  return {1.0, q.window.length() / kCostWindowNorm, q.components[kAmbiguity]};
}

inline double estimate_cost(const Query& q, const CostModel& m) {
  const auto x = cost_features(q);
  return std::max(0.0, m.c[0] * x[0] + m.c[1] * x[1] + m.c[2] * x[2]);
}

inline double priority(double u, double c, double tau = kPriorityTau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::Argument, "tau must be positive");
  return u / (c + tau);
}

inline void score_candidates(std::vector<Query>& qs, const PlannerView& v, const UtilityWeights& w, const CostModel& m) {
  for (auto& q : qs) {
    q.components = utility_components(q, v);
    q.utility = utility(q.components, w);
    q.cost = estimate_cost(q, m);
    q.priority = priority(q.utility, q.cost);
  }
}

inline std::optional<Query> select_next(const std::vector<Query>& qs) {
  if (qs.empty()) return std::nullopt;
  const Query* best = &qs.front();
  for (const auto& q : qs)
    if (q.priority > best->priority || (q.priority == best->priority && q.t < best->t)) best = &q;
  return *best;
}

inline nlohmann::json to_json(const Query& q) {
  return {{"t_q", q.t},
          {"window", {q.window.begin, q.window.end}},
          {"utility", q.utility},
          {"cost", q.cost},
          {"priority", q.priority},
          {"provenance", to_string(q.source)},
          {"components", q.components}};
}

inline Query query_from_json(const nlohmann::json& j) {
  Query q;
  q.t = j.at("t_q").get<int>();
  q.window = {j.at("window").at(0).get<int>(), j.at("window").at(1).get<int>()};
  q.utility = j.value("utility", 0.0);
  q.cost = j.value("cost", 0.0);
  q.priority = j.value("priority", 0.0);
  q.source = j.value("provenance", std::string("energy_peak")) == "energy_peak" ? QuerySource::EnergyPeak
                                                                                : QuerySource::LowConfidenceBoundary;
  if (j.contains("components")) q.components = j.at("components").get<UtilityVector>();
  return q;
}

}  // namespace scribe
