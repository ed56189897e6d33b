#pragma once

// Offline analysis: run policy variants over case sets under the oracle, then summarize as budget
// curves and latency statistics.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/fixtures.hpp"
#include "scribe/session.hpp"

namespace scribe {

struct CaseData {
  std::string name;
  std::shared_ptr<const FeatureSequence> features;
  LabelVocab vocab;
  Segmentation gt;
  std::optional<Segmentation> init;
};

inline CaseData case_from_synthetic(const SyntheticCase& c, bool with_init = true) {
  return {c.name, std::make_shared<const FeatureSequence>(c.features), c.vocab, c.gt,
          with_init ? std::optional(c.init) : std::nullopt};
}

inline std::vector<CaseData> cases_from_synthetic(const std::vector<SyntheticCase>& cs, bool with_init = true) {
  std::vector<CaseData> out;
  for (const auto& c : cs) out.push_back(case_from_synthetic(c, with_init));
  return out;
}

// --- case directories: <features>/<name>.fts, <labels>/<name>.json, <init>/<name>.json --------

inline std::vector<CaseData> load_cases(const std::string& features_dir, const std::string& labels_dir,
                                        const std::optional<std::string>& init_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(features_dir)) throw Error(ErrorKind::Io, "not a directory: " + features_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(features_dir))
    if (e.is_regular_file() && e.path().extension() == ".fts") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<CaseData> out;
  for (const auto& f : files) {
    const auto name = f.stem().string();
    auto feats = std::make_shared<const FeatureSequence>(load_features(f.string()));
    auto gt = load_label_file((fs::path(labels_dir) / (name + ".json")).string());
    validate_segmentation(gt.segments, feats->num_frames(), gt.vocab.size());
    CaseData c{name, std::move(feats), gt.vocab, gt.segments, std::nullopt};
    if (init_dir) {
      auto init = load_label_file((fs::path(*init_dir) / (name + ".json")).string());
      if (!(init.vocab == gt.vocab)) throw Error(ErrorKind::Structure, name + ": init vocabulary differs from labels");
      c.init = init.segments;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline void write_cases(const std::string& root, const std::vector<SyntheticCase>& cases) {
  namespace fs = std::filesystem;
  for (const char* sub : {"features", "labels", "init"}) fs::create_directories(fs::path(root) / sub);
  for (const auto& c : cases) {
    write_features((fs::path(root) / "features" / (c.name + ".fts")).string(), c.features);
    write_label_file((fs::path(root) / "labels" / (c.name + ".json")).string(), c.vocab, c.gt);
    write_label_file((fs::path(root) / "init" / (c.name + ".json")).string(), c.vocab, c.init);
  }
}

// --- pretraining -------------------------------------------------------------------------------

struct PretrainConfig {
  int examples_per_case = 32;
  TrainConfig train;
  SynthConfig synth;
  std::uint64_t init_seed = 1;
};

inline std::vector<TrainExample> synthesize_examples(const std::vector<CaseData>& cases, int per_case,
                                                     std::uint64_t seed, const SynthConfig& synth = {}) {
  std::mt19937_64 rng(seed);
  std::vector<TrainExample> out;
  for (const auto& c : cases) {
    if (c.gt.size() < 2) continue;
    for (int i = 0; i < per_case; ++i) out.push_back(synthesize_scribble(*c.features, c.gt, rng, synth));
  }
  return out;
}

inline TrainResult pretrain(const std::vector<CaseData>& cases, const PretrainConfig& cfg) {
  if (cases.empty()) throw Error(ErrorKind::Argument, "pretraining needs cases");
  const int dim = cases.front().features->dim(), L = cases.front().vocab.size();
  for (const auto& c : cases)
    if (c.features->dim() != dim || c.vocab.size() != L) throw Error(ErrorKind::Structure, c.name + ": shape differs");
  const auto examples = synthesize_examples(cases, cfg.examples_per_case, cfg.train.seed, cfg.synth);
  return train(ModelParams::init(dim, L, cfg.init_seed), examples, cfg.train);
}

// --- runs --------------------------------------------------------------------------------------

struct RunOptions {
  PolicyVariant variant = PolicyVariant::Full;
  std::uint64_t seed = 0;
  double budget_mult = 1.5;
  unsigned threads = 0;  // 0 = hardware concurrency
};

struct CaseResult {
  std::string name;
  std::optional<std::string> error;
  int budget = 0;
  RunTrace run;
  std::vector<StepTimings> timings;
};

struct LatencyStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
};

struct LatencyReport {
  LatencyStats feature_lookup, proposal, scoring, decode, total, adaptation;
};

struct RunReport {
  PolicyVariant variant = PolicyVariant::Full;
  std::uint64_t seed = 0;
  double budget_mult = 1.5;
  std::vector<CaseResult> cases;
  SegmentationMetrics final_mean;
  int accepted_steps = 0;
  int total_steps = 0;
  int failed = 0;
};

// Nearest rank: the ceil(p/100 * n)-th smallest sample.
inline double percentile_nearest_rank(std::vector<double> xs, double p) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(xs.size()) - 1e-9));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

inline LatencyStats latency_stats(const std::vector<double>& xs) {
  LatencyStats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  s.p95 = percentile_nearest_rank(xs, 95.0);
  s.p99 = percentile_nearest_rank(xs, 99.0);
  return s;
}

inline LatencyReport latency_report(const std::vector<StepTimings>& ts) {
  auto col = [&](auto f) {
    std::vector<double> v;
    for (const auto& t : ts) v.push_back(f(t));
    return latency_stats(v);
  };
  return {col([](const StepTimings& t) { return t.feature_lookup_ms; }),
          col([](const StepTimings& t) { return t.proposal_ms; }),
          col([](const StepTimings& t) { return t.scoring_ms; }),
          col([](const StepTimings& t) { return t.decode_ms; }),
          col([](const StepTimings& t) { return t.total_ms(); }),
          col([](const StepTimings& t) { return t.adaptation_ms; })};
}

inline LatencyReport latency_report(const RunReport& r) {
  std::vector<StepTimings> all;
  for (const auto& c : r.cases) all.insert(all.end(), c.timings.begin(), c.timings.end());
  return latency_report(all);
}

inline CaseResult run_case(const CaseData& c, std::shared_ptr<const ModelParams> model, const RunOptions& opt) {
  CaseResult res;
  res.name = c.name;
  try {
    SessionOptions so;
    so.variant = opt.variant;
    so.seed = opt.seed;
    so.budget = interaction_budget_for(static_cast<int>(boundaries_of(c.gt).size()), opt.budget_mult);
    res.budget = *so.budget;
    Session s(c.features, c.vocab, c.init, std::move(model), so);
    s.attach_ground_truth(c.gt);
    res.run = run_budgeted(s, OracleAnswerer{c.gt});
    res.timings = s.timings();
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

// Cases run on a small worker pool; results are stored by case index so the report does not
// depend on scheduling.
inline RunReport run_policy(const std::vector<CaseData>& cases, std::shared_ptr<const ModelParams> model,
                            const RunOptions& opt) {
  RunReport r;
  r.variant = opt.variant;
  r.seed = opt.seed;
  r.budget_mult = opt.budget_mult;
  r.cases.resize(cases.size());
  const unsigned hw = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_workers = std::min<unsigned>(hw, static_cast<unsigned>(cases.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) r.cases[i] = run_case(cases[i], model, opt);
  };
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  int ok = 0;
  for (const auto& c : r.cases) {
    if (c.error) {
      ++r.failed;
      continue;
    }
    ++ok;
    const auto& last = c.run.trace.back();
    for (std::size_t i = 0; i < last.f1.size(); ++i) r.final_mean.f1[i] += last.f1[i];
    r.final_mean.edit += last.edit;
    r.accepted_steps += c.run.accepted;
    r.total_steps += c.run.total_steps;
  }
  if (ok > 0) {
    for (auto& v : r.final_mean.f1) v /= ok;
    r.final_mean.edit /= ok;
  }
  return r;
}

// --- curves ------------------------------------------------------------------------------------

enum class Metric { F1_5, F1_10, F1_25, F1_50, Edit };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::F1_5: return "f1@5";
    case Metric::F1_10: return "f1@10";
    case Metric::F1_25: return "f1@25";
    case Metric::F1_50: return "f1@50";
    case Metric::Edit: return "edit";
  }
  return "?";
}

inline Metric metric_from_string(const std::string& s) {
  for (auto m : {Metric::F1_5, Metric::F1_10, Metric::F1_25, Metric::F1_50, Metric::Edit})
    if (s == to_string(m)) return m;
  throw Error(ErrorKind::Argument, "unknown metric '" + s + "'");
}

inline double metric_value(const SegmentationMetrics& m, Metric which) {
  return which == Metric::Edit ? m.edit : m.f1[static_cast<std::size_t>(which)];
}

// Per-step mean over traces; shorter traces carry their final value forward.
inline std::vector<std::pair<int, double>> budget_curve(const std::vector<std::vector<double>>& traces,
                                                        std::size_t min_length = 0) {
  std::size_t len = min_length;
  std::size_t used = 0;
  for (const auto& t : traces)
    if (!t.empty()) {
      len = std::max(len, t.size());
      ++used;
    }
  std::vector<std::pair<int, double>> out;
  if (used == 0) return out;
  for (std::size_t k = 0; k < len; ++k) {
    double s = 0.0;
    for (const auto& t : traces)
      if (!t.empty()) s += t[std::min(k, t.size() - 1)];
    out.emplace_back(static_cast<int>(k), s / static_cast<double>(used));
  }
  return out;
}

inline std::vector<std::vector<double>> metric_traces(const RunReport& r, Metric which) {
  std::vector<std::vector<double>> out;
  for (const auto& c : r.cases) {
    if (c.error) continue;
    std::vector<double> t;
    for (const auto& m : c.run.trace) t.push_back(metric_value(m, which));
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<std::pair<int, double>> budget_curve(const RunReport& r, Metric which, std::size_t min_length = 0) {
  return budget_curve(metric_traces(r, which), min_length);
}

// Mean height of the curve over steps 0..n-1: a normalized area under the budget curve.
inline double curve_area(const std::vector<std::pair<int, double>>& curve) {
  if (curve.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, v] : curve) s += v;
  return s / static_cast<double>(curve.size());
}

// --- report serialization ----------------------------------------------------------------------

inline nlohmann::json metrics_to_json(const SegmentationMetrics& m) {
  return {{"f1@5", m.f1[0]}, {"f1@10", m.f1[1]}, {"f1@25", m.f1[2]}, {"f1@50", m.f1[3]}, {"edit", m.edit}};
}

inline SegmentationMetrics metrics_from_json(const nlohmann::json& j) {
  SegmentationMetrics m;
  m.f1 = {j.at("f1@5").get<double>(), j.at("f1@10").get<double>(), j.at("f1@25").get<double>(),
          j.at("f1@50").get<double>()};
  m.edit = j.at("edit").get<double>();
  return m;
}

inline nlohmann::json stats_to_json(const LatencyStats& s) {
  return {{"n", s.n}, {"mean_ms", s.mean}, {"std_ms", s.std}, {"p95_ms", s.p95}, {"p99_ms", s.p99}};
}

inline nlohmann::json latency_to_json(const LatencyReport& l) {
  return {{"feature_lookup", stats_to_json(l.feature_lookup)}, {"proposal", stats_to_json(l.proposal)},
          {"scoring", stats_to_json(l.scoring)},               {"decode", stats_to_json(l.decode)},
          {"total", stats_to_json(l.total)},                   {"adaptation", stats_to_json(l.adaptation)}};
}

inline StepTimings timings_from_json(const nlohmann::json& j) {
  StepTimings t;
  t.feature_lookup_ms = j.at("feature_lookup_ms").get<double>();
  t.proposal_ms = j.at("proposal_ms").get<double>();
  t.scoring_ms = j.at("scoring_ms").get<double>();
  t.decode_ms = j.at("decode_ms").get<double>();
  t.adaptation_ms = j.at("adaptation_ms").get<double>();
  return t;
}

// Wall-clock timings are only included on request so that seeded reports stay byte-identical.
inline nlohmann::json report_to_json(const RunReport& r, bool include_timings = false) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    nlohmann::json j = {{"name", c.name}, {"budget", c.budget}};
    if (c.error) {
      j["error"] = *c.error;
    } else {
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& m : c.run.trace) trace.push_back(metrics_to_json(m));
      j["trace"] = trace;
      j["accepted"] = c.run.accepted;
      j["edited"] = c.run.edited;
      j["rejected"] = c.run.rejected;
      j["total_steps"] = c.run.total_steps;
      j["anchor_violations"] = c.run.anchor_violations;
    }
    if (include_timings) {
      nlohmann::json ts = nlohmann::json::array();
      for (const auto& t : c.timings)
        ts.push_back({{"feature_lookup_ms", t.feature_lookup_ms}, {"proposal_ms", t.proposal_ms},
                      {"scoring_ms", t.scoring_ms}, {"decode_ms", t.decode_ms}, {"adaptation_ms", t.adaptation_ms}});
      j["timings"] = ts;
    }
    cases.push_back(std::move(j));
  }
  nlohmann::json out = {{"variant", to_string(r.variant)},
                        {"seed", r.seed},
                        {"budget_mult", r.budget_mult},
                        {"final_mean", metrics_to_json(r.final_mean)},
                        {"accepted_steps", r.accepted_steps},
                        {"total_steps", r.total_steps},
                        {"failed", r.failed},
                        {"cases", cases}};
  if (include_timings) out["latency"] = latency_to_json(latency_report(r));
  return out;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.variant = policy_from_string(j.at("variant").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.budget_mult = j.at("budget_mult").get<double>();
  r.final_mean = metrics_from_json(j.at("final_mean"));
  r.accepted_steps = j.at("accepted_steps").get<int>();
  r.total_steps = j.at("total_steps").get<int>();
  r.failed = j.at("failed").get<int>();
  for (const auto& cj : j.at("cases")) {
    CaseResult c;
    c.name = cj.at("name").get<std::string>();
    c.budget = cj.at("budget").get<int>();
    if (cj.contains("error")) {
      c.error = cj.at("error").get<std::string>();
    } else {
      for (const auto& m : cj.at("trace")) c.run.trace.push_back(metrics_from_json(m));
      c.run.accepted = cj.at("accepted").get<int>();
      c.run.edited = cj.at("edited").get<int>();
      c.run.rejected = cj.at("rejected").get<int>();
      c.run.total_steps = cj.at("total_steps").get<int>();
      c.run.anchor_violations = cj.at("anchor_violations").get<int>();
    }
    if (cj.contains("timings"))
      for (const auto& t : cj.at("timings")) c.timings.push_back(timings_from_json(t));
    r.cases.push_back(std::move(c));
  }
  return r;
}

}  // namespace scribe
