#pragma once

// The interaction loop: plan a query, interpret a scribble, apply the annotator's verdict through
// anchored propagation, adapt, and journal every step so the session can be replayed.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <future>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/adaptation.hpp"
#include "scribe/error.hpp"
#include "scribe/feature_store.hpp"
#include "scribe/journal.hpp"
#include "scribe/labels.hpp"
#include "scribe/planner.hpp"
#include "scribe/propagation.hpp"
#include "scribe/proposal.hpp"
#include "scribe/scribble.hpp"

namespace scribe {

inline constexpr double kPlateauEnergy = 0.5;  // draft spans grow while window energy stays below this
inline constexpr double kMemoryBias = 0.1;
inline constexpr int kEditCueRadius = 8;
inline constexpr double kInitConfidence = 0.25;  // per-frame confidence of an external initialization
inline constexpr double kEffortFrames = 64.0;    // oracle effort proxy: |I+| / 64
inline constexpr const char* kReservedLabel = "__unlabeled__";

enum class PolicyVariant { Full, NoCQP, NoLocalProp, NoCDA, NoDenseProp };

inline const char* to_string(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::Full: return "full";
    case PolicyVariant::NoCQP: return "no-cqp";
    case PolicyVariant::NoLocalProp: return "no-local";
    case PolicyVariant::NoCDA: return "no-cda";
    case PolicyVariant::NoDenseProp: return "no-dense";
  }
  return "?";
}

inline PolicyVariant policy_from_string(const std::string& s) {
  for (auto v : {PolicyVariant::Full, PolicyVariant::NoCQP, PolicyVariant::NoLocalProp, PolicyVariant::NoCDA,
                 PolicyVariant::NoDenseProp})
    if (s == to_string(v)) return v;
  throw Error(ErrorKind::Argument, "unknown policy variant '" + s + "'");
}

// Synchronous: refinement runs inside the verdict (oracle runs). Background: a worker thread,
// swapped in between interactions. Deferred: computed inline but applied only when the journal
// says the swap happened (replay).
enum class RefinementMode { Synchronous, Background, Deferred };

struct SessionOptions {
  std::optional<int> budget;  // accepted corrections; empty = unlimited
  PolicyVariant variant = PolicyVariant::Full;
  std::uint64_t seed = 0;
  RefinementMode refinement = RefinementMode::Synchronous;
  PropagationParams propagation;
  GestureOptions gesture;
};

struct StepTimings {
  double feature_lookup_ms = 0.0;
  double proposal_ms = 0.0;
  double scoring_ms = 0.0;
  double decode_ms = 0.0;
  double adaptation_ms = 0.0;  // reported separately, not part of the system path

  double total_ms() const { return feature_lookup_ms + proposal_ms + scoring_ms + decode_ms; }
};

struct ProposalResult {
  ScribbleEncoding encoding;
  std::optional<ProposalInput> input;
  std::optional<ProposalOutput> output;  // empty for the no-local-proposal variant
  std::vector<Anchor> drafts;
  double raw_confidence = 0.5;
  double calibrated_confidence = 0.5;
  std::uint32_t model_version = 0;
};

struct VerdictInput {
  VerdictKind kind = VerdictKind::Accepted;
  std::size_t draft_index = 0;
  std::optional<Anchor> edited;           // required for Edited
  std::optional<double> effort;           // seconds when live; oracle proxy otherwise
  std::optional<double> realized_gain;    // replay supplies the journaled value
  std::optional<std::int64_t> ts_ms;
};

struct VerdictResult {
  VerdictKind kind = VerdictKind::Accepted;
  std::optional<Anchor> anchor;
  double realized_gain = 0.0;
};

struct SessionSnapshot {
  int step = 0;
  int accepted = 0;
  std::optional<int> budget;
  Segmentation segments;
  std::vector<Anchor> anchors;
  std::optional<Query> pending_query;
  std::uint32_t model_version = 0;
  bool complete = false;
};

// --- wire helpers ------------------------------------------------------------------------------

inline nlohmann::json strokes_to_json(const std::vector<Stroke>& strokes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : strokes) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.points) pts.push_back({{"x", p.x}, {"y", p.y}, {"t", p.t}});
    out.push_back(std::move(pts));
  }
  return out;
}

inline std::vector<Stroke> strokes_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Argument, "strokes must be an array");
  std::vector<Stroke> out;
  for (const auto& s : j) {
    if (!s.is_array()) throw Error(ErrorKind::Argument, "stroke must be an array of points");
    Stroke st;
    for (const auto& p : s) st.points.push_back({p.at("x").get<double>(), p.at("y").get<double>(), p.at("t").get<double>()});
    out.push_back(std::move(st));
  }
  return out;
}

inline nlohmann::json segments_to_json(const Segmentation& s) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& seg : s) out.push_back({{"start", seg.start}, {"end", seg.end}, {"label", seg.label}});
  return out;
}

inline Segmentation segments_from_json(const nlohmann::json& j) {
  Segmentation s;
  for (const auto& seg : j) s.push_back({seg.at("start").get<int>(), seg.at("end").get<int>(), seg.at("label").get<int>()});
  return s;
}

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

// Metric bundle used by traces: F1 at 5/10/25/50 frames plus Edit.
inline constexpr std::array<int, 4> kF1Tolerances{5, 10, 25, 50};

struct SegmentationMetrics {
  std::array<double, 4> f1{};
  double edit = 0.0;
};

inline SegmentationMetrics evaluate(const Segmentation& pred, const Segmentation& gt) {
  SegmentationMetrics m;
  const auto pb = boundaries_of(pred), gb = boundaries_of(gt);
  for (std::size_t i = 0; i < kF1Tolerances.size(); ++i) m.f1[i] = boundary_f1(pb, gb, kF1Tolerances[i]);
  m.edit = edit_score(pred, gt);
  return m;
}

class Session {
 public:
  Session(std::shared_ptr<const FeatureSequence> features, LabelVocab vocab, std::optional<Segmentation> init,
          std::shared_ptr<const ModelParams> model, SessionOptions opt = {})
      : features_(std::move(features)), vocab_(std::move(vocab)), model_(std::move(model)), opt_(opt),
        rng_(opt.seed) {
    if (!features_) throw Error(ErrorKind::Argument, "session needs features");
    const int T = features_->num_frames();
    const int L = vocab_.size();
    if (L < 1) throw Error(ErrorKind::Argument, "empty label vocabulary");
    if (opt_.variant != PolicyVariant::NoLocalProp) {
      if (!model_) throw Error(ErrorKind::Argument, "session needs a proposal model");
      if (model_->dim != features_->dim() || model_->num_labels != L)
        throw Error(ErrorKind::Argument, "model shape (D=" + std::to_string(model_->dim) + ", L=" +
                                             std::to_string(model_->num_labels) + ") does not match case");
    }
    if (init) {
      if (segmentation_length(*init) != T)
        throw Error(ErrorKind::Argument, "initial labeling covers " + std::to_string(segmentation_length(*init)) +
                                             " frames, features have " + std::to_string(T));
      validate_segmentation(*init, T, L);
      hyp_ = dense_from_segments(*init);
      num_labels_ = L;
      conf_.assign(static_cast<std::size_t>(T), kInitConfidence);
    } else {
      reserved_ = L;
      num_labels_ = L + 1;
      hyp_.assign(static_cast<std::size_t>(T), L);
      conf_.assign(static_cast<std::size_t>(T), 0.0);
    }
    energy_ = boundary_energy(*features_, features_->full_range()).values;
    adapt_ = AdaptationState(L, features_->dim());
    journal_.append("init", {{"T", T},
                             {"D", features_->dim()},
                             {"vocab", vocab_.names()},
                             {"init", init ? segments_to_json(*init) : nlohmann::json(nullptr)},
                             {"budget", opt_.budget ? nlohmann::json(*opt_.budget) : nlohmann::json(nullptr)},
                             {"variant", to_string(opt_.variant)},
                             {"seed", opt_.seed},
                             {"model_version", model_ ? model_->version : 0u}});
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // --- accessors ------------------------------------------------------------------------------
  const FeatureSequence& features() const { return *features_; }
  std::shared_ptr<const FeatureSequence> features_ptr() const { return features_; }
  const LabelVocab& vocab() const { return vocab_; }
  int num_frames() const { return features_->num_frames(); }
  int num_labels() const { return num_labels_; }  // includes the reserved label when present
  std::optional<int> reserved_label() const { return reserved_; }
  std::string label_name(int l) const { return reserved_ && l == *reserved_ ? kReservedLabel : vocab_.name(l); }
  const DenseLabeling& hypothesis() const { return hyp_; }
  Segmentation segments() const { return segments_from_dense(hyp_); }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  const std::vector<double>& confidence() const { return conf_; }
  const std::vector<double>& energy() const { return energy_; }
  const AdaptationState& adaptation() const { return adapt_; }
  const Journal& journal() const { return journal_; }
  Journal& journal() { return journal_; }
  const std::vector<StepTimings>& timings() const { return timings_; }
  const SessionOptions& options() const { return opt_; }
  std::shared_ptr<const ModelParams> model() const { return model_; }
  std::uint32_t model_version() const { return model_ ? model_->version : 0u; }
  int step() const { return step_; }
  int accepted() const { return accepted_; }
  std::optional<int> budget() const { return opt_.budget; }
  bool complete() const { return complete_; }
  const std::optional<Query>& pending_query() const { return pending_query_; }
  const std::optional<ProposalResult>& pending_proposal() const { return pending_; }
  int refinements() const { return refinements_; }

  // Ground truth, when attached, turns realized gain into the F1@10 improvement of each step.
  void attach_ground_truth(Segmentation gt) {
    validate_segmentation(gt, num_frames(), vocab_.size());
    gt_ = std::move(gt);
  }

  SessionSnapshot snapshot() const {
    return {step_, accepted_, opt_.budget, segments(), anchors_, pending_query_, model_version(), complete_};
  }

  // --- planning -------------------------------------------------------------------------------
  std::optional<Query> next_query() {
    poll_refinement();
    if (complete_) return std::nullopt;
    if (opt_.budget && accepted_ >= *opt_.budget) {
      finish("budget");
      return std::nullopt;
    }
    const auto t0 = std::chrono::steady_clock::now();
    PlannerView v{&energy_, &hyp_, &conf_, &adapt_.confusion, anchor_cuts(), queried_, rejected_};
    auto cands = enumerate_candidates(v);
    if (cands.empty()) {
      finish("no_candidates");
      return std::nullopt;
    }
    score_candidates(cands, v, adapt_.weights, adapt_.cost);
    Query q;
    if (opt_.variant == PolicyVariant::NoCQP) {
      std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
      q = cands[pick(rng_)];
    } else {
      q = *select_next(cands);
    }
    timing_.scoring_ms += detail::elapsed_ms(t0);
    pending_query_ = q;
    queried_.push_back(q.t);
    journal_.append("query", to_json(q));
    return q;
  }

  // The planner's query was answered with "no boundary here"; no proposal was made.
  void reject_query() {
    if (!pending_query_) throw Error(ErrorKind::Argument, "no pending query to reject");
    rejected_.push_back(pending_query_->t);
    ++step_;
    journal_.append("verdict", {{"verdict", "rejected"}, {"query_only", true}, {"t_q", pending_query_->t}});
    pending_query_.reset();
    pending_.reset();
  }

  // --- proposal -------------------------------------------------------------------------------
  const ProposalResult& propose(const std::vector<Stroke>& strokes) {
    poll_refinement();
    if (complete_) throw Error(ErrorKind::Argument, "session is complete");
    journal_.append("scribble", {{"route", "use"}, {"strokes", strokes_to_json(strokes)}});
    const auto enc = encode_use(strokes, num_frames(), segments(), opt_.gesture);

    ProposalResult r;
    r.encoding = enc;
    if (opt_.variant != PolicyVariant::NoLocalProp) {
      const auto model = model_;  // snapshot: a swap mid-interaction cannot affect this proposal
      auto t0 = std::chrono::steady_clock::now();
      r.input = assemble_input(*features_, enc);
      timing_.feature_lookup_ms += detail::elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
      r.output = forward(*model, *r.input);
      timing_.proposal_ms += detail::elapsed_ms(t0);
      r.raw_confidence = r.output->confidence;
      r.model_version = model->version;
    }
    r.calibrated_confidence = adapt_.calibration.calibrated(r.raw_confidence);
    r.drafts = build_drafts(r);
    pending_ = std::move(r);

    nlohmann::json drafts = nlohmann::json::array();
    for (const auto& d : pending_->drafts) drafts.push_back(anchor_to_json(d));
    journal_.append("proposal", {{"drafts", drafts},
                                 {"gesture", to_string(enc.gesture)},
                                 {"uncertain", {enc.uncertain.begin, enc.uncertain.end}},
                                 {"window", {enc.window.begin, enc.window.end}},
                                 {"raw_confidence", pending_->raw_confidence},
                                 {"calibrated_confidence", pending_->calibrated_confidence},
                                 {"model_version", pending_->model_version}});
    return *pending_;
  }

  void discard_pending() {
    if (!pending_) return;
    pending_.reset();
    journal_.append("discard", nlohmann::json::object());
    apply_deferred_swap();
  }

  // --- verdicts -------------------------------------------------------------------------------
  VerdictResult verdict(const VerdictInput& in) {
    if (!pending_) throw Error(ErrorKind::Argument, "no pending proposal");
    if (in.draft_index >= pending_->drafts.size()) throw Error(ErrorKind::Argument, "draft index out of range");
    if (in.kind == VerdictKind::Edited && !in.edited) throw Error(ErrorKind::Argument, "edited verdict needs an anchor");
    const ProposalResult& prop = *pending_;
    const Anchor& draft = prop.drafts[in.draft_index];
    const int T = num_frames();

    OutcomeRecord rec;
    rec.query_t = pending_query_ ? pending_query_->t : draft.cut;
    rec.query_window = pending_query_ ? pending_query_->window.length() : prop.encoding.window.length();
    if (pending_query_) rec.components = pending_query_->components;
    rec.proposal = {draft.cut, prop.raw_confidence, draft.left_label, draft.right_label};
    rec.verdict = in.kind;
    rec.hyp_left = hyp_[static_cast<std::size_t>(std::clamp(draft.cut - 1, 0, T - 1))];
    rec.hyp_right = hyp_[static_cast<std::size_t>(std::clamp(draft.cut, 0, T - 1))];
    rec.effort = in.effort ? *in.effort : prop.encoding.uncertain.length() / kEffortFrames;
    rec.ts_ms = in.ts_ms ? *in.ts_ms : wall_clock_ms();

    const double f1_before = gt_ ? boundary_f1(boundaries_of(hyp_), boundaries_of(*gt_), 10) : 0.0;
    nlohmann::json derived = nlohmann::json::array();
    if (in.kind != VerdictKind::Rejected) {
      Anchor a = in.kind == VerdictKind::Accepted ? draft : *in.edited;
      a.id = next_anchor_id_;
      clip_span_to_cuts(a, anchors_);
      validate_anchor(a, T, num_labels_);
      std::optional<SidePosteriors> recent;
      if (in.kind == VerdictKind::Accepted && prop.output) recent = SidePosteriors{prop.output->p_left, prop.output->p_right, a};
      try {
        derived = apply_anchor(a, recent);
      } catch (const ConstraintConflict& e) {
        journal_.append("verdict", {{"verdict", to_string(in.kind)}, {"draft_index", in.draft_index},
                                    {"conflict", e.anchor_ids()}});
        throw;
      }
      rec.final_anchor = a;
      ++accepted_;
      ++next_anchor_id_;
      for (int t = a.start; t <= a.end; ++t) conf_[static_cast<std::size_t>(t)] = 1.0;
      for (int t = prop.encoding.window.begin; t < prop.encoding.window.end; ++t)
        if (t < a.start || t > a.end)
          conf_[static_cast<std::size_t>(t)] = std::max(conf_[static_cast<std::size_t>(t)], prop.calibrated_confidence);
    } else {
      rejected_.push_back(rec.query_t);
    }
    if (in.realized_gain)
      rec.realized_gain = *in.realized_gain;
    else if (gt_)
      rec.realized_gain = boundary_f1(boundaries_of(hyp_), boundaries_of(*gt_), 10) - f1_before;
    else
      rec.realized_gain = in.kind == VerdictKind::Accepted ? 1.0 : 0.0;
    ++step_;

    journal_.append("verdict", {{"verdict", to_string(in.kind)},
                                {"draft_index", in.draft_index},
                                {"edited", in.edited ? anchor_to_json(*in.edited) : nlohmann::json(nullptr)},
                                {"effort", rec.effort},
                                {"realized_gain", rec.realized_gain},
                                {"ts_ms", rec.ts_ms}});
    for (auto& ev : derived) journal_.append(ev.at("kind").get<std::string>(), ev.at("payload"));

    const auto t_adapt = std::chrono::steady_clock::now();
    if (opt_.variant != PolicyVariant::NoCDA) {
      record_outcome(adapt_, rec, *features_);
      if (in.kind == VerdictKind::Accepted && prop.input && prop.calibrated_confidence >= kRefineConfidence)
        adapt_.buffer.push_back({buffered_example(prop, *rec.final_anchor), prop.calibrated_confidence});
      journal_.append("adapt", {{"weights", adapt_.weights.w},
                                {"cost", adapt_.cost.c},
                                {"recorded", adapt_.calibration.recorded()},
                                {"buffer", adapt_.buffer.size()}});
    }
    timing_.adaptation_ms += detail::elapsed_ms(t_adapt);
    timings_.push_back(timing_);
    timing_ = {};
    pending_.reset();
    pending_query_.reset();
    if (opt_.variant != PolicyVariant::NoCDA) schedule_refinement();
    apply_deferred_swap();
    return {in.kind, rec.final_anchor, rec.realized_gain};
  }

  // A vertical edit cue deletes the nearest hypothesis boundary within 8 frames, keeping the
  // longer side's label. Returns false (journaled miss) when no boundary is close enough.
  bool edit_segment(const std::vector<Stroke>& strokes) {
    if (complete_) throw Error(ErrorKind::Argument, "session is complete");
    journal_.append("scribble", {{"route", "edit"}, {"strokes", strokes_to_json(strokes)}});
    const auto supports = project_strokes(strokes, num_frames());
    int lo = supports.front().begin, hi = supports.front().end;
    for (const auto& s : supports) {
      lo = std::min(lo, s.begin);
      hi = std::max(hi, s.end);
    }
    const int cue = (lo + hi - 1) / 2;
    int best = -1;
    for (int b : boundaries_of(hyp_))
      if (std::abs(b - cue) <= kEditCueRadius && (best < 0 || std::abs(b - cue) < std::abs(best - cue))) best = b;
    if (best < 0) {
      journal_.append("verdict", {{"verdict", "edited"}, {"edit_cue", {{"frame", cue}, {"miss", true}}}});
      return false;
    }
    for (const auto& a : anchors_)
      if (!a.is_merge() && a.cut == best)
        throw ConstraintConflict({a.id}, "edit cue would delete the protected cut of anchor " + std::to_string(a.id));
    int a0 = best, a1 = best;
    const int left = hyp_[static_cast<std::size_t>(best - 1)], right = hyp_[static_cast<std::size_t>(best)];
    while (a0 > 0 && hyp_[static_cast<std::size_t>(a0 - 1)] == left) --a0;
    while (a1 < num_frames() && hyp_[static_cast<std::size_t>(a1)] == right) ++a1;
    const int keep = (best - a0) >= (a1 - best) ? left : right;
    DenseLabeling y = hyp_;
    for (int t = a0; t < a1; ++t) y[static_cast<std::size_t>(t)] = keep;
    if (const auto bad = anchor_violations(y, anchors_); !bad.empty())
      throw ConstraintConflict(bad, "edit cue would break existing anchors");
    hyp_ = std::move(y);
    ++step_;
    journal_.append("verdict", {{"verdict", "edited"}, {"edit_cue", {{"frame", cue}, {"boundary", best}, {"label", keep}}}});
    journal_.append("writeback", {{"segments", segments_to_json(segments())}});
    return true;
  }

  // --- model lifecycle ------------------------------------------------------------------------
  // Replaces the live model. Deferred while a proposal is awaiting its verdict.
  void swap_model(std::shared_ptr<const ModelParams> m) {
    if (!m) throw Error(ErrorKind::Argument, "null model");
    const auto cur = model_version();
    if (m->version <= cur)
      throw Error(ErrorKind::StaleVersion, "model version " + std::to_string(m->version) +
                                               " is not newer than live version " + std::to_string(cur));
    if (model_ && (m->dim != model_->dim || m->num_labels != model_->num_labels))
      throw Error(ErrorKind::Argument, "swapped model has a different shape");
    if (pending_) {
      deferred_swap_ = std::move(m);
      return;
    }
    model_ = std::move(m);
    journal_.append("swap", {{"version", model_->version}});
  }

  // Replay hook: applies a refinement computed in Deferred mode at its journaled position.
  void apply_journaled_swap(std::uint32_t version) {
    if (!deferred_refinement_ || !*deferred_refinement_ || (*deferred_refinement_)->version != version)
      throw Error(ErrorKind::Invariant, "journal swap to version " + std::to_string(version) +
                                           " does not match the replayed refinement");
    auto m = std::make_shared<const ModelParams>(std::move(**deferred_refinement_));
    deferred_refinement_.reset();
    swap_model(std::move(m));
  }

  void discard_journaled_refinement() { deferred_refinement_.reset(); }

  // Blocks until an in-flight background refinement finishes and applies it.
  void wait_for_refinement() {
    if (background_.valid()) {
      background_.wait();
      poll_refinement();
    }
  }

  void finish(const std::string& reason) {
    if (complete_) return;
    complete_ = true;
    journal_.append("complete", {{"reason", reason}, {"accepted", accepted_}, {"steps", step_}});
  }

  void check_invariants() const {
    if (static_cast<int>(hyp_.size()) != num_frames()) throw Error(ErrorKind::Invariant, "hypothesis length differs from T");
    for (int y : hyp_)
      if (y < 0 || y >= num_labels_) throw Error(ErrorKind::Invariant, "hypothesis label outside vocabulary");
    if (const auto bad = anchor_violations(hyp_, anchors_); !bad.empty())
      throw Error(ErrorKind::Invariant, "anchor " + std::to_string(bad.front()) + " not honoured by hypothesis");
  }

  nlohmann::json snapshot_json() const {
    nlohmann::json anchors = nlohmann::json::array();
    for (const auto& a : anchors_) anchors.push_back(anchor_to_json(a));
    return {{"step", step_},
            {"accepted", accepted_},
            {"budget", opt_.budget ? nlohmann::json(*opt_.budget) : nlohmann::json(nullptr)},
            {"segments", segments_to_json(segments())},
            {"anchors", anchors},
            {"model_version", model_version()},
            {"complete", complete_},
            {"adaptation", statistics_to_json(adapt_)}};
  }

 private:
  std::vector<int> anchor_cuts() const {
    std::vector<int> cuts;
    for (const auto& a : anchors_) cuts.push_back(a.cut);
    return cuts;
  }

  // Keeps an anchor's span from reaching across another anchor's protected frames.
  static void clip_span_to_cuts(Anchor& a, const std::vector<Anchor>& others) {
    for (const auto& o : others) {
      if (o.is_merge() || o.cut == a.cut) continue;
      if (o.cut < a.cut)
        a.start = std::max(a.start, std::min(a.cut, o.cut + 1));
      else
        a.end = std::min(a.end, std::max(a.cut, o.cut - 2));
    }
  }

  // Appends the anchor (trimming older spans that straddle its cut), propagates, and writes back.
  // Throws ConstraintConflict without mutating state. Returns the derived journal events.
  nlohmann::json apply_anchor(const Anchor& a, const std::optional<SidePosteriors>& recent) {
    std::vector<Anchor> next = anchors_;
    if (!a.is_merge())
      for (auto& o : next) {
        if (a.cut < o.start || a.cut > o.end || a.cut == o.cut) continue;
        if (a.cut < o.cut)
          o.start = std::min(o.cut, a.cut + 1);
        else
          o.end = std::max(o.cut, a.cut - 2);
      }
    next.push_back(a);

    const auto t0 = std::chrono::steady_clock::now();
    DenseLabeling y;
    if (opt_.variant == PolicyVariant::NoDenseProp) {
      DecodeProblem cuts_only;
      cuts_only.num_frames = num_frames();
      for (const auto& o : next)
        if (!o.is_merge()) cuts_only.protected_cuts.push_back({o.cut, o.left_label, o.right_label, o.id});
      detail::forced_labels(cuts_only);  // throws on conflicting protected frames
      y = hyp_;
      overwrite_span(y, a);
    } else {
      y = decode(build_problem(hyp_, conf_, next, num_labels_, recent, opt_.propagation));
    }
    timing_.decode_ms += detail::elapsed_ms(t0);
    if (const auto bad = anchor_violations(y, next); !bad.empty())
      throw Error(ErrorKind::Invariant, "propagation left anchor " + std::to_string(bad.front()) + " unsatisfied");

    anchors_ = std::move(next);
    hyp_ = std::move(y);
    check_invariants();
    recent_ = recent;
    return nlohmann::json::array(
        {{{"kind", "anchor"}, {"payload", anchor_to_json(a)}},
         {{"kind", "decode"},
          {"payload", {{"mode", opt_.variant == PolicyVariant::NoDenseProp ? "overwrite" : "viterbi"},
                       {"anchors", anchors_.size()}}}},
         {{"kind", "writeback"}, {"payload", {{"segments", segments_to_json(segments())}}}}});
  }

  std::vector<double> biased_posterior(const Vec& post, const FrameInterval& region) const {
    const int L = static_cast<int>(post.size());
    int raw = 0;
    for (int y = 1; y < L; ++y)
      if (post(y) > post(raw)) raw = y;
    const auto feat = mean_feature(*features_, region.begin, region.end);
    std::vector<double> out(static_cast<std::size_t>(L));
    double z = 0.0;
    for (int y = 0; y < L; ++y) {
      const double score = (region.empty() ? 0.0 : adapt_.prototypes.similarity(y, feat)) +
                           adapt_.confusion.correction_rate(raw, y);
      out[static_cast<std::size_t>(y)] = post(y) * (1.0 + kMemoryBias * score);
      z += out[static_cast<std::size_t>(y)];
    }
    for (auto& v : out) v /= z;
    return out;
  }

  static int argmax_of(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }

  // Grows [a, b) outward while the window-normalized energy stays below the plateau threshold.
  FrameInterval plateau_span(const FrameInterval& seed, const FrameInterval& window, const EnergySignal& e) const {
    int s = seed.begin, last = seed.end - 1;
    while (s > window.begin && e.at(s) < kPlateauEnergy) --s;
    while (last + 1 < window.end && e.at(last + 1) < kPlateauEnergy) ++last;
    return {s, last + 1};
  }

  std::vector<Anchor> build_drafts(const ProposalResult& r) const {
    const auto& enc = r.encoding;
    const int T = num_frames();
    const auto e = boundary_energy(*features_, enc.window.length() >= 2 ? enc.window : features_->full_range());

    // Sub-intervals of I+: one per covered boundary for multi-boundary gestures.
    std::vector<FrameInterval> subs;
    if (enc.gesture == GestureKind::MultiBoundary && enc.covered_boundaries.size() >= 2) {
      int start = enc.uncertain.begin;
      for (std::size_t i = 0; i < enc.covered_boundaries.size(); ++i) {
        const int end = i + 1 < enc.covered_boundaries.size()
                            ? (enc.covered_boundaries[i] + enc.covered_boundaries[i + 1] + 1) / 2
                            : enc.uncertain.end;
        subs.push_back({start, end});
        start = end;
      }
    } else {
      subs.push_back(enc.uncertain);
    }

    std::vector<int> cuts;
    for (const auto& sub : subs) {
      int b;
      if (!r.output) {
        b = (sub.begin + sub.end) / 2;
      } else if (subs.size() == 1) {
        b = enc.window.begin + r.output->boundary_argmax;
      } else {
        const int off = sub.begin - enc.window.begin;
        Eigen::Index k = 0;
        r.output->p_boundary.segment(off, sub.length()).maxCoeff(&k);
        b = sub.begin + static_cast<int>(k);
      }
      cuts.push_back(std::clamp(b, 1, T - 1));
    }

    std::vector<Anchor> drafts;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      const int b = cuts[i];
      FrameInterval span = plateau_span(subs[i], enc.window, e);
      span.begin = std::min(span.begin, b - 1 >= 0 ? b - 1 : 0);
      span.end = std::max(span.end, b + 1);
      if (i > 0) span.begin = std::max(span.begin, std::min(b, cuts[i - 1] + 1));
      if (i + 1 < subs.size()) span.end = std::min(span.end, std::max(b + 1, cuts[i + 1] - 1));
      Anchor d{next_anchor_id_ + static_cast<int>(i), span.begin, span.end - 1, b, 0, 0};
      clip_span_to_cuts(d, anchors_);

      if (!r.output) {
        d.left_label = hyp_[static_cast<std::size_t>(b - 1)];
        d.right_label = hyp_[static_cast<std::size_t>(b)];
      } else {
        const auto pl = biased_posterior(r.output->p_left, {d.start, b});
        const auto pr = biased_posterior(r.output->p_right, {b, d.end + 1});
        if (subs.size() == 1) {
          // Best pair with distinct sides.
          double best = -1.0;
          for (std::size_t yl = 0; yl < pl.size(); ++yl)
            for (std::size_t yr = 0; yr < pr.size(); ++yr)
              if (yl != yr && pl[yl] * pr[yr] > best) {
                best = pl[yl] * pr[yr];
                d.left_label = static_cast<int>(yl);
                d.right_label = static_cast<int>(yr);
              }
          if (pl.size() == 1) d.left_label = d.right_label = 0;
        } else {
          const int mid_left = i > 0 ? hyp_[static_cast<std::size_t>((cuts[i - 1] + b) / 2)] : -1;
          const int mid_right = i + 1 < subs.size() ? hyp_[static_cast<std::size_t>((b + cuts[i + 1]) / 2)] : -1;
          d.left_label = i == 0 ? argmax_of(pl) : mid_left;
          d.right_label = i + 1 == subs.size() ? argmax_of(pr) : mid_right;
        }
      }
      drafts.push_back(d);
    }
    return drafts;
  }

  TrainExample buffered_example(const ProposalResult& prop, const Anchor& a) const {
    TrainExample ex;
    ex.input = *prop.input;
    const auto& w = prop.encoding.window;
    ex.target = {std::max(w.begin, a.cut - kProtectedRadius), std::min(w.end, a.cut + kProtectedRadius + 1)};
    if (ex.target.empty()) ex.target = {std::clamp(a.cut, w.begin, w.end - 1), std::clamp(a.cut, w.begin, w.end - 1) + 1};
    ex.left_label = std::min(a.left_label, vocab_.size() - 1);
    ex.right_label = std::min(a.right_label, vocab_.size() - 1);
    std::vector<int> others;
    for (const auto& o : anchors_)
      if (o.id != a.id && !o.is_merge() && w.contains(o.cut)) others.push_back(o.cut);
    if (!others.empty()) {
      ex.penalties.protected_mask = protected_mask_for(w, others);
      ex.penalties.side_disagreement = a.left_label != a.right_label;
    }
    return ex;
  }

  std::uint64_t refinement_seed() const {
    return opt_.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(refinements_ + 1);
  }

  void schedule_refinement() {
    if (!model_ || background_.valid() || deferred_refinement_) return;
    auto task = maybe_refine(adapt_, *model_, refinement_seed());
    if (!task) return;
    ++refinements_;
    journal_.append("adapt", {{"refinement", "started"}, {"examples", task->examples.size()}, {"base_version", model_->version}});
    switch (opt_.refinement) {
      case RefinementMode::Synchronous: finish_refinement(task->run().model); break;
      case RefinementMode::Deferred: deferred_refinement_ = task->run().model; break;
      case RefinementMode::Background:
        background_ = std::async(std::launch::async, [t = std::move(*task)] { return t.run().model; });
        break;
    }
  }

  void finish_refinement(std::optional<ModelParams> m) {
    if (!m) {
      journal_.append("adapt", {{"refinement", "diverged"}, {"live_version", model_version()}});
      return;
    }
    swap_model(std::make_shared<const ModelParams>(std::move(*m)));
  }

  void poll_refinement() {
    if (background_.valid() && background_.wait_for(std::chrono::seconds(0)) == std::future_status::ready)
      finish_refinement(background_.get());
  }

  void apply_deferred_swap() {
    if (pending_ || !deferred_swap_) return;
    auto m = std::move(deferred_swap_);
    deferred_swap_.reset();
    swap_model(std::move(m));
  }

  std::shared_ptr<const FeatureSequence> features_;
  LabelVocab vocab_;
  std::shared_ptr<const ModelParams> model_;
  SessionOptions opt_;
  std::mt19937_64 rng_;

  int num_labels_ = 0;
  std::optional<int> reserved_;
  DenseLabeling hyp_;
  std::vector<double> conf_;
  std::vector<double> energy_;
  std::vector<Anchor> anchors_;
  int next_anchor_id_ = 1;
  int step_ = 0;
  int accepted_ = 0;
  bool complete_ = false;
  std::vector<int> queried_;
  std::vector<int> rejected_;
  std::optional<Query> pending_query_;
  std::optional<ProposalResult> pending_;
  std::optional<SidePosteriors> recent_;
  std::optional<Segmentation> gt_;

  AdaptationState adapt_;
  int refinements_ = 0;
  std::future<std::optional<ModelParams>> background_;
  std::optional<std::optional<ModelParams>> deferred_refinement_;
  std::shared_ptr<const ModelParams> deferred_swap_;

  Journal journal_;
  StepTimings timing_;
  std::vector<StepTimings> timings_;
};

// --- oracle ------------------------------------------------------------------------------------

struct OracleAnswerer {
  Segmentation gt;
  int snap = 5;
  int stroke_width = 10;

  // Nearest GT boundary to t_q inside the query window that no anchor already claims.
  std::optional<int> target_for(const Query& q, const std::vector<Anchor>& anchors) const {
    std::optional<int> best;
    for (int g : boundaries_of(gt)) {
      if (!q.window.contains(g)) continue;
      const bool claimed = std::any_of(anchors.begin(), anchors.end(), [&](const Anchor& a) {
        return !a.is_merge() && std::abs(a.cut - g) <= snap;
      });
      if (claimed) continue;
      if (!best || std::abs(g - q.t) < std::abs(*best - q.t)) best = g;
    }
    return best;
  }

  // Flat stroke of stroke_width frames centred on g.
  std::vector<Stroke> stroke_for(int g, int num_frames) const {
    Stroke s;
    const int a = std::max(0, g - stroke_width / 2), b = std::min(num_frames - 1, g + (stroke_width + 1) / 2 - 1);
    for (int t = a; t <= b; ++t) s.points.push_back({static_cast<double>(t), (t % 2) * 0.5, static_cast<double>(t)});
    return {s};
  }

  int label_at(int t) const {
    for (const auto& s : gt)
      if (t >= s.start && t < s.end) return s.label;
    throw Error(ErrorKind::Argument, "frame outside ground truth");
  }

  // Picks the draft nearest g; accepts it when the cut snaps and both labels match, otherwise
  // supplies the exact GT tuple over the draft's span.
  VerdictInput judge(const ProposalResult& r, int g) const {
    std::size_t idx = 0;
    for (std::size_t i = 1; i < r.drafts.size(); ++i)
      if (std::abs(r.drafts[i].cut - g) < std::abs(r.drafts[idx].cut - g)) idx = i;
    const Anchor& d = r.drafts[idx];
    const int yl = label_at(g - 1), yr = label_at(g);
    VerdictInput v;
    v.draft_index = idx;
    if (std::abs(d.cut - g) <= snap && d.left_label == yl && d.right_label == yr) {
      v.kind = VerdictKind::Accepted;
    } else {
      v.kind = VerdictKind::Edited;
      v.edited = Anchor{d.id, std::min(d.start, g - 1), std::max(d.end, g), g, yl, yr};
    }
    return v;
  }
};

struct RunTrace {
  std::vector<SegmentationMetrics> trace;  // step 0 plus one entry per accepted correction
  int accepted = 0;
  int edited = 0;
  int rejected = 0;
  int total_steps = 0;
  int anchor_violations = 0;  // checked after every accepted verdict
  Segmentation final_segments;
};

// Drives the session with the oracle until the budget of accepted corrections is spent or the
// planner runs out of candidates. Rejections do not consume budget.
inline RunTrace run_budgeted(Session& s, const OracleAnswerer& oracle) {
  RunTrace out;
  out.trace.push_back(evaluate(s.segments(), oracle.gt));
  const int guard = 4 * s.num_frames() + 16;
  for (int iter = 0; iter < guard && !s.complete(); ++iter) {
    const auto q = s.next_query();
    if (!q) break;
    const auto g = oracle.target_for(*q, s.anchors());
    if (!g) {
      s.reject_query();
      ++out.rejected;
      continue;
    }
    const auto& prop = s.propose(oracle.stroke_for(*g, s.num_frames()));
    const auto v = oracle.judge(prop, *g);
    try {
      s.verdict(v);
    } catch (const ConstraintConflict&) {
      s.discard_pending();
      continue;
    }
    if (v.kind == VerdictKind::Edited) ++out.edited;
    out.anchor_violations += static_cast<int>(anchor_violations(s.hypothesis(), s.anchors()).size());
    out.trace.push_back(evaluate(s.segments(), oracle.gt));
  }
  if (!s.complete()) s.finish("guard");
  out.accepted = s.accepted();
  out.total_steps = s.step();
  out.final_segments = s.segments();
  return out;
}

// --- replay ------------------------------------------------------------------------------------

// Rebuilds a session from its journal by re-issuing every recorded interaction. Refinements are
// recomputed and applied at their journaled swap points.
inline std::unique_ptr<Session> replay(const std::vector<JournalEvent>& events,
                                       std::shared_ptr<const FeatureSequence> features,
                                       std::shared_ptr<const ModelParams> model) {
  if (events.empty() || events.front().kind != "init") throw Error(ErrorKind::Format, "journal must start with init");
  const auto& init = events.front().payload;
  SessionOptions opt;
  if (!init.at("budget").is_null()) opt.budget = init.at("budget").get<int>();
  opt.variant = policy_from_string(init.at("variant").get<std::string>());
  opt.seed = init.at("seed").get<std::uint64_t>();
  opt.refinement = RefinementMode::Deferred;
  std::optional<Segmentation> seg;
  if (!init.at("init").is_null()) seg = segments_from_json(init.at("init"));
  if (model && model->version != init.at("model_version").get<std::uint32_t>())
    throw Error(ErrorKind::Argument, "replay model version differs from the journaled one");
  auto s = std::make_unique<Session>(std::move(features), LabelVocab(init.at("vocab").get<std::vector<std::string>>()),
                                     seg, std::move(model), opt);

  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& e = events[i];
    const auto& p = e.payload;
    if (e.kind == "query") {
      const auto q = s->next_query();
      if (!q || q->t != p.at("t_q").get<int>())
        throw Error(ErrorKind::Invariant, "replay diverged at journal event " + std::to_string(e.seq));
    } else if (e.kind == "scribble") {
      const auto strokes = strokes_from_json(p.at("strokes"));
      if (p.at("route") == "edit")
        s->edit_segment(strokes);
      else
        s->propose(strokes);
    } else if (e.kind == "verdict") {
      if (p.contains("query_only")) {
        s->reject_query();
      } else if (p.contains("conflict") || p.contains("edit_cue")) {
        continue;  // no state change, or already applied by the edit route
      } else {
        VerdictInput v;
        v.kind = verdict_from_string(p.at("verdict").get<std::string>());
        v.draft_index = p.at("draft_index").get<std::size_t>();
        if (!p.at("edited").is_null()) v.edited = anchor_from_json(p.at("edited"));
        v.effort = p.at("effort").get<double>();
        v.realized_gain = p.at("realized_gain").get<double>();
        v.ts_ms = p.at("ts_ms").get<std::int64_t>();
        s->verdict(v);
      }
    } else if (e.kind == "swap") {
      s->apply_journaled_swap(p.at("version").get<std::uint32_t>());
    } else if (e.kind == "adapt" && p.value("refinement", "") == "diverged") {
      s->discard_journaled_refinement();
    } else if (e.kind == "discard") {
      s->discard_pending();
    } else if (e.kind == "complete") {
      s->finish(p.at("reason").get<std::string>());
    }
  }
  return s;
}

}  // namespace scribe
