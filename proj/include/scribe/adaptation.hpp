#pragma once

// Correction-driven adaptation. Fast-timescale statistics are updated after every outcome; the
// proposal model is refined on a cloned snapshot once enough confident accepts are buffered.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/feature_store.hpp"
#include "scribe/memory.hpp"
#include "scribe/planner.hpp"
#include "scribe/proposal.hpp"
#include "scribe/propagation.hpp"

namespace scribe {

inline constexpr double kUtilityStep = 0.1;
inline constexpr int kCalibrationBins = 10;
inline constexpr double kRefineConfidence = 0.7;
inline constexpr std::size_t kRefineBatch = 32;

enum class VerdictKind { Accepted, Rejected, Edited };

inline const char* to_string(VerdictKind v) {
  switch (v) {
    case VerdictKind::Accepted: return "accepted";
    case VerdictKind::Rejected: return "rejected";
    case VerdictKind::Edited: return "edited";
  }
  return "?";
}

inline VerdictKind verdict_from_string(const std::string& s) {
  if (s == "accepted") return VerdictKind::Accepted;
  if (s == "rejected") return VerdictKind::Rejected;
  if (s == "edited") return VerdictKind::Edited;
  throw Error(ErrorKind::Argument, "unknown verdict '" + s + "'");
}

struct ProposalSummary {
  int cut = 0;
  double raw_confidence = 0.5;
  int left_label = 0;
  int right_label = 0;
};

struct OutcomeRecord {
  int query_t = 0;
  int query_window = 0;  // |W_q|
  UtilityVector components{};
  ProposalSummary proposal;
  VerdictKind verdict = VerdictKind::Accepted;
  std::optional<Anchor> final_anchor;  // accepted or edited tuple
  int hyp_left = 0;                    // hypothesis labels at cut-1 / cut before the step
  int hyp_right = 0;
  double realized_gain = 0.0;
  double effort = 0.0;
  std::int64_t ts_ms = 0;
};

struct CalibrationTable {
  std::array<long, kCalibrationBins> accepts{};
  std::array<long, kCalibrationBins> totals{};

  static int bin(double raw) {
    return std::clamp(static_cast<int>(std::floor(raw * kCalibrationBins)), 0, kCalibrationBins - 1);
  }

  double calibrated(double raw) const {
    const int b = bin(raw);
    return (accepts[static_cast<std::size_t>(b)] + 1.0) / (totals[static_cast<std::size_t>(b)] + 2.0);
  }

  long recorded() const {
    long s = 0;
    for (long t : totals) s += t;
    return s;
  }

  friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;
};

struct BufferedCorrection {
  TrainExample example;
  double calibrated_confidence = 0.0;
};

struct AdaptationState {
  UtilityWeights weights;
  CostModel cost;
  CalibrationTable calibration;
  PrototypeMemory prototypes;
  ConfusionMemory confusion;
  std::vector<OutcomeRecord> history;
  std::vector<BufferedCorrection> buffer;

  AdaptationState() = default;
  AdaptationState(int num_labels, int dim) : prototypes(num_labels, dim), confusion(num_labels) {}
};

inline UtilityWeights update_utility_weights(UtilityWeights w, const OutcomeRecord& rec, double eta = kUtilityStep) {
  double z = 0.0;
  for (std::size_t i = 0; i < w.w.size(); ++i) {
    w.w[i] *= std::exp(eta * rec.realized_gain * rec.components[i]);
    z += w.w[i];
  }
  if (z > 0.0 && std::isfinite(z))
    for (auto& x : w.w) x /= z;
  return w;
}

inline std::array<double, 3> cost_features(const OutcomeRecord& rec) {
  return {1.0, rec.query_window / kCostWindowNorm, rec.components[kAmbiguity]};
}

// Normalized LMS toward the observed effort.
inline CostModel update_cost_model(CostModel m, const OutcomeRecord& rec) {
  const auto x = cost_features(rec);
  double pred = 0.0, norm2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    pred += m.c[i] * x[i];
    norm2 += x[i] * x[i];
  }
  const double r = rec.effort - pred;
  const double mu = m.step / (1.0 + norm2);
  for (std::size_t i = 0; i < 3; ++i) m.c[i] += mu * r * x[i];
  return m;
}

inline CalibrationTable update_calibration(CalibrationTable t, double raw_c, bool accepted) {
  const auto b = static_cast<std::size_t>(CalibrationTable::bin(raw_c));
  ++t.totals[b];
  if (accepted) ++t.accepts[b];
  return t;
}

inline std::vector<double> mean_feature(const FeatureSequence& f, int begin, int end) {
  std::vector<double> m(static_cast<std::size_t>(f.dim()), 0.0);
  if (end <= begin) return m;
  for (int t = begin; t < end; ++t) {
    const auto r = f.row(t);
    for (int j = 0; j < f.dim(); ++j) m[static_cast<std::size_t>(j)] += r[static_cast<std::size_t>(j)];
  }
  for (auto& v : m) v /= (end - begin);
  return m;
}

inline void update_memories(PrototypeMemory& p, ConfusionMemory& c, const OutcomeRecord& rec, const FeatureSequence& f) {
  const auto& prop = rec.proposal;
  switch (rec.verdict) {
    case VerdictKind::Accepted: {
      if (!rec.final_anchor) break;
      const auto& a = *rec.final_anchor;
      if (a.cut > a.start) p.add(a.left_label, mean_feature(f, a.start, a.cut));
      if (a.end >= a.cut) p.add(a.right_label, mean_feature(f, a.cut, a.end + 1));
      break;
    }
    case VerdictKind::Edited:
      if (rec.final_anchor) {
        c.add(prop.left_label, rec.final_anchor->left_label);
        c.add(prop.right_label, rec.final_anchor->right_label);
      }
      break;
    case VerdictKind::Rejected:
      // No boundary here: the proposed side labels should have been the hypothesis labels.
      c.add(prop.left_label, rec.hyp_left);
      c.add(prop.right_label, rec.hyp_right);
      break;
  }
}

// Fast-timescale update: weights, cost, calibration, memories, in that order.
inline void record_outcome(AdaptationState& s, const OutcomeRecord& rec, const FeatureSequence& f) {
  s.history.push_back(rec);
  s.weights = update_utility_weights(s.weights, rec);
  s.cost = update_cost_model(s.cost, rec);
  s.calibration = update_calibration(s.calibration, rec.proposal.raw_confidence, rec.verdict == VerdictKind::Accepted);
  update_memories(s.prototypes, s.confusion, rec, f);
}

struct RefinementTask {
  ModelParams base;
  std::vector<TrainExample> examples;
  TrainConfig config;

  struct Outcome {
    std::optional<ModelParams> model;  // empty when training diverged
    int steps_run = 0;
  };

  Outcome run() const {
    auto res = train(base, examples, config);
    if (res.diverged) return {std::nullopt, res.steps_run};
    return {std::move(res.params), res.steps_run};
  }
};

inline TrainConfig default_refine_config(std::uint64_t seed) {
  TrainConfig c;
  c.steps = 50;
  c.seed = seed;
  return c;
}

// Emits a refinement task once the confident-accept buffer is full, clearing the buffer.
inline std::optional<RefinementTask> maybe_refine(AdaptationState& s, const ModelParams& live, std::uint64_t seed) {
  if (s.buffer.size() < kRefineBatch) return std::nullopt;
  RefinementTask task{live, {}, default_refine_config(seed)};
  for (auto& b : s.buffer) task.examples.push_back(std::move(b.example));
  s.buffer.clear();
  return task;
}

// --- serialization -----------------------------------------------------------------------------

inline nlohmann::json anchor_to_json(const Anchor& a) {
  return {{"id", a.id}, {"s", a.start}, {"e", a.end}, {"b", a.cut}, {"y_L", a.left_label}, {"y_R", a.right_label}};
}

inline Anchor anchor_from_json(const nlohmann::json& j) {
  return {j.at("id").get<int>(), j.at("s").get<int>(), j.at("e").get<int>(), j.at("b").get<int>(),
          j.at("y_L").get<int>(), j.at("y_R").get<int>()};
}

inline nlohmann::json outcome_to_json(const OutcomeRecord& r) {
  nlohmann::json j = {{"query_t", r.query_t},
                      {"query_window", r.query_window},
                      {"components", r.components},
                      {"proposal",
                       {{"cut", r.proposal.cut},
                        {"raw_confidence", r.proposal.raw_confidence},
                        {"y_L", r.proposal.left_label},
                        {"y_R", r.proposal.right_label}}},
                      {"verdict", to_string(r.verdict)},
                      {"hyp_left", r.hyp_left},
                      {"hyp_right", r.hyp_right},
                      {"realized_gain", r.realized_gain},
                      {"effort", r.effort},
                      {"ts_ms", r.ts_ms}};
  j["final_anchor"] = r.final_anchor ? anchor_to_json(*r.final_anchor) : nlohmann::json(nullptr);
  return j;
}

inline OutcomeRecord outcome_from_json(const nlohmann::json& j) {
  OutcomeRecord r;
  r.query_t = j.at("query_t").get<int>();
  r.query_window = j.at("query_window").get<int>();
  r.components = j.at("components").get<UtilityVector>();
  const auto& p = j.at("proposal");
  r.proposal = {p.at("cut").get<int>(), p.at("raw_confidence").get<double>(), p.at("y_L").get<int>(),
                p.at("y_R").get<int>()};
  r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
  r.hyp_left = j.at("hyp_left").get<int>();
  r.hyp_right = j.at("hyp_right").get<int>();
  r.realized_gain = j.at("realized_gain").get<double>();
  r.effort = j.at("effort").get<double>();
  r.ts_ms = j.at("ts_ms").get<std::int64_t>();
  if (!j.at("final_anchor").is_null()) r.final_anchor = anchor_from_json(j.at("final_anchor"));
  return r;
}

// Statistics only (no wall-clock fields), so replayed sessions serialize identically.
inline nlohmann::json statistics_to_json(const AdaptationState& s) {
  return {{"weights", s.weights.w},
          {"cost", s.cost.c},
          {"calibration", {{"accepts", s.calibration.accepts}, {"totals", s.calibration.totals}}},
          {"prototypes", s.prototypes},
          {"confusion", s.confusion},
          {"history_length", s.history.size()},
          {"buffer_length", s.buffer.size()}};
}

inline void statistics_from_json(const nlohmann::json& j, AdaptationState& s) {
  s.weights.w = j.at("weights").get<UtilityVector>();
  s.cost.c = j.at("cost").get<std::array<double, 3>>();
  s.calibration.accepts = j.at("calibration").at("accepts").get<std::array<long, kCalibrationBins>>();
  s.calibration.totals = j.at("calibration").at("totals").get<std::array<long, kCalibrationBins>>();
  s.prototypes = j.at("prototypes").get<PrototypeMemory>();
  s.confusion = j.at("confusion").get<ConfusionMemory>();
}

}  // namespace scribe
