#pragma once

// Live session service: a message protocol over a registry of sessions. Transport-agnostic; every
// client message yields a JSON array of one or more server messages.

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/harness.hpp"
#include "scribe/session.hpp"

namespace scribe {

inline const std::vector<std::string>& client_message_types() {
  static const std::vector<std::string> t{"open_session", "request_query", "submit_scribble",
                                          "submit_verdict", "edit_cue", "save"};
  return t;
}

inline const std::vector<std::string>& server_message_types() {
  static const std::vector<std::string> t{"session_state", "query", "proposal", "labeling_update",
                                          "conflict", "completed", "error"};
  return t;
}

struct ProtocolMessage {
  std::string type;
  std::optional<std::string> session_id;
  std::optional<std::string> request_id;  // echoed on every response
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const ProtocolMessage&, const ProtocolMessage&) = default;
};

inline nlohmann::json to_json(const ProtocolMessage& m) {
  nlohmann::json j = {{"type", m.type}, {"payload", m.payload}};
  if (m.session_id) j["session_id"] = *m.session_id;
  if (m.request_id) j["request_id"] = *m.request_id;
  return j;
}

// Structural validation only; type-specific payload checks happen in the handler.
inline ProtocolMessage message_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Argument, "message must be an object");
  if (!j.contains("type") || !j.at("type").is_string()) throw Error(ErrorKind::Argument, "message needs a string 'type'");
  ProtocolMessage m;
  m.type = j.at("type").get<std::string>();
  const auto known = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), m.type) != v.end(); };
  if (!known(client_message_types()) && !known(server_message_types()))
    throw Error(ErrorKind::Argument, "unknown message type '" + m.type + "'");
  if (j.contains("payload")) {
    if (!j.at("payload").is_object()) throw Error(ErrorKind::Argument, "payload must be an object");
    m.payload = j.at("payload");
  }
  for (const char* key : {"session_id", "request_id"})
    if (j.contains(key)) {
      if (!j.at(key).is_string()) throw Error(ErrorKind::Argument, std::string(key) + " must be a string");
      (key[0] == 's' ? m.session_id : m.request_id) = j.at(key).get<std::string>();
    }
  return m;
}

inline ProtocolMessage parse_message(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Argument, std::string("malformed message: ") + e.what());
  }
  return message_from_json(j);
}

struct ServiceConfig {
  std::vector<CaseData> cases;
  std::shared_ptr<const ModelParams> model;
  std::string save_dir = ".";
  RefinementMode refinement = RefinementMode::Background;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

  std::vector<std::string> case_names() const {
    std::vector<std::string> out;
    for (const auto& c : cfg_.cases) out.push_back(c.name);
    return out;
  }

  // Parses one wire message and returns the serialized response array.
  nlohmann::json handle_text(const std::string& text) {
    ProtocolMessage m;
    try {
      m = parse_message(text);
    } catch (const Error& e) {
      return nlohmann::json::array({to_json(error_message(std::nullopt, std::nullopt, "bad_request", e.what()))});
    }
    return serialize(handle(m));
  }

  static nlohmann::json serialize(const std::vector<ProtocolMessage>& ms) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& m : ms) out.push_back(to_json(m));
    return out;
  }

  std::vector<ProtocolMessage> handle(const ProtocolMessage& m) {
    try {
      if (m.type == "open_session") return {open_session(m)};
      const auto known = client_message_types();
      if (std::find(known.begin(), known.end(), m.type) == known.end())
        return {error_message(m.session_id, m.request_id, "bad_request", "'" + m.type + "' is not a client message")};
      auto entry = find(m.session_id);
      if (!entry) return {error_message(m.session_id, m.request_id, "no_session", "unknown session")};
      std::lock_guard lock(entry->mu);
      auto out = dispatch(*entry, m);
      for (auto& r : out) {
        r.session_id = m.session_id;
        r.request_id = m.request_id;
      }
      return out;
    } catch (const ConstraintConflict& e) {
      return {with_ids(m, {"conflict", {}, {}, {{"anchor_ids", e.anchor_ids()}, {"message", e.what()}}})};
    } catch (const nlohmann::json::exception& e) {
      return {error_message(m.session_id, m.request_id, "bad_request", e.what())};
    } catch (const Error& e) {
      const bool client_fault = e.kind() == ErrorKind::Argument || e.kind() == ErrorKind::Gesture ||
                                e.kind() == ErrorKind::Rejection || e.kind() == ErrorKind::Structure;
      return {error_message(m.session_id, m.request_id, client_fault ? "bad_request" : to_string(e.kind()), e.what())};
    }
  }

  // Line-delimited journal of a session, or nullopt for an unknown id.
  std::optional<std::string> journal_lines(const std::string& id) {
    auto e = find(id);
    if (!e) return std::nullopt;
    std::lock_guard lock(e->mu);
    return e->session->journal().to_lines();
  }

  // Runs f on the session under its writer lock (tests and tooling).
  template <typename F>
  bool with_session(const std::string& id, F&& f) {
    auto e = find(id);
    if (!e) return false;
    std::lock_guard lock(e->mu);
    f(*e->session);
    return true;
  }

  const CaseData* find_case(const std::string& name) const {
    for (const auto& c : cfg_.cases)
      if (c.name == name) return &c;
    return nullptr;
  }

  std::shared_ptr<const ModelParams> model() const { return cfg_.model; }

 private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<Session> session;
    std::string case_name;
  };

  static ProtocolMessage error_message(std::optional<std::string> sid, std::optional<std::string> rid,
                                       const std::string& code, const std::string& msg) {
    return {"error", std::move(sid), std::move(rid), {{"code", code}, {"message", msg}}};
  }

  static ProtocolMessage with_ids(const ProtocolMessage& req, ProtocolMessage m) {
    m.session_id = req.session_id;
    m.request_id = req.request_id;
    return m;
  }

  std::shared_ptr<Entry> find(const std::optional<std::string>& id) {
    if (!id) return nullptr;
    std::lock_guard lock(registry_mu_);
    const auto it = sessions_.find(*id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  static nlohmann::json labeled_segments(const Session& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& seg : s.segments())
      out.push_back({{"start", seg.start}, {"end", seg.end}, {"label", seg.label}, {"name", s.label_name(seg.label)}});
    return out;
  }

  static nlohmann::json anchors_json(const Session& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : s.anchors()) out.push_back(anchor_to_json(a));
    return out;
  }

  static nlohmann::json budget_remaining(const Session& s) {
    return s.budget() ? nlohmann::json(std::max(0, *s.budget() - s.accepted())) : nlohmann::json(nullptr);
  }

  static ProtocolMessage state_message(const Session& s, const std::string& id, bool full) {
    nlohmann::json p = {{"session_id", id},
                        {"segments", labeled_segments(s)},
                        {"anchors", anchors_json(s)},
                        {"pending_query", s.pending_query() ? to_json(*s.pending_query()) : nlohmann::json(nullptr)},
                        {"budget_remaining", budget_remaining(s)},
                        {"model_version", s.model_version()},
                        {"k", s.step()},
                        {"accepted", s.accepted()},
                        {"complete", s.complete()}};
    if (full) {
      p["T"] = s.num_frames();
      std::vector<std::string> names;
      for (int l = 0; l < s.num_labels(); ++l) names.push_back(s.label_name(l));
      p["vocab"] = names;
      p["energy"] = s.energy();
    }
    return {"session_state", id, {}, p};
  }

  static ProtocolMessage update_message(const Session& s, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json p = {{"segments", labeled_segments(s)},
                        {"anchors", anchors_json(s)},
                        {"k", s.step()},
                        {"accepted", s.accepted()},
                        {"budget_remaining", budget_remaining(s)},
                        {"model_version", s.model_version()}};
    p.update(extra);
    return {"labeling_update", {}, {}, p};
  }

  static ProtocolMessage completed_message(const Session& s) {
    const auto& last = s.journal().events().back();
    return {"completed", {}, {},
            {{"reason", last.kind == "complete" ? last.payload.at("reason") : nlohmann::json("complete")},
             {"accepted", s.accepted()},
             {"k", s.step()}}};
  }

  static nlohmann::json top_labels(const Session& s, const Vec& p, int k) {
    std::vector<int> idx(static_cast<std::size_t>(p.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p(a) > p(b); });
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < std::min<int>(k, static_cast<int>(idx.size())); ++i)
      out.push_back({{"label", idx[static_cast<std::size_t>(i)]}, {"name", s.label_name(idx[static_cast<std::size_t>(i)])},
                     {"p", p(idx[static_cast<std::size_t>(i)])}});
    return out;
  }

  static int label_field(const Session& s, const nlohmann::json& v) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
      const auto name = v.get<std::string>();
      if (s.reserved_label() && name == kReservedLabel) return *s.reserved_label();
      return s.vocab().index_of(name);
    }
    throw Error(ErrorKind::Argument, "label must be an index or a name");
  }

  static const nlohmann::json& require(const nlohmann::json& p, const char* key) {
    if (!p.contains(key)) throw Error(ErrorKind::Argument, std::string("missing field '") + key + "'");
    return p.at(key);
  }

  ProtocolMessage open_session(const ProtocolMessage& m) {
    const auto& p = m.payload;
    const auto name = require(p, "case").get<std::string>();
    const CaseData* c = find_case(name);
    if (!c) throw Error(ErrorKind::Argument, "unknown case '" + name + "'");
    SessionOptions opt;
    opt.variant = policy_from_string(p.value("variant", std::string("full")));
    opt.seed = p.value("seed", std::uint64_t{0});
    opt.refinement = cfg_.refinement;
    const double mult = p.value("budget_mult", 0.0);
    if (mult > 0.0) opt.budget = interaction_budget_for(static_cast<int>(boundaries_of(c->gt).size()), mult);
    const bool use_init = p.value("use_init", true);
    auto session = std::make_unique<Session>(c->features, c->vocab, use_init ? c->init : std::nullopt, cfg_.model, opt);
    std::string id;
    auto entry = std::make_shared<Entry>();
    entry->session = std::move(session);
    entry->case_name = name;
    {
      std::lock_guard lock(registry_mu_);
      id = "s" + std::to_string(++next_id_);
      sessions_[id] = entry;
    }
    std::lock_guard lock(entry->mu);
    return with_ids({"", id, m.request_id, {}}, state_message(*entry->session, id, true));
  }

  std::vector<ProtocolMessage> dispatch(Entry& e, const ProtocolMessage& m) {
    Session& s = *e.session;
    const auto& p = m.payload;
    const std::string& id = *m.session_id;
    if (m.type == "request_query") {
      const auto q = s.next_query();
      if (!q) return {completed_message(s)};
      return {{"query", {}, {}, to_json(*q)}};
    }
    if (m.type == "submit_scribble") {
      // Vertical edit cues travel as edit_cue messages; here they are a gesture error.
      const auto& r = s.propose(strokes_from_json(require(p, "strokes")));
      nlohmann::json drafts = nlohmann::json::array();
      for (const auto& d : r.drafts) drafts.push_back(anchor_to_json(d));
      nlohmann::json pp = {{"drafts", drafts},
                           {"gesture", to_string(r.encoding.gesture)},
                           {"window", {r.encoding.window.begin, r.encoding.window.end}},
                           {"uncertain", {r.encoding.uncertain.begin, r.encoding.uncertain.end}},
                           {"raw_confidence", r.raw_confidence},
                           {"calibrated_confidence", r.calibrated_confidence},
                           {"model_version", r.model_version}};
      if (r.output) {
        pp["p_b"] = std::vector<double>(r.output->p_boundary.data(), r.output->p_boundary.data() + r.output->p_boundary.size());
        pp["left_top3"] = top_labels(s, r.output->p_left, 3);
        pp["right_top3"] = top_labels(s, r.output->p_right, 3);
      } else {
        pp["p_b"] = nullptr;
      }
      return {{"proposal", {}, {}, pp}};
    }
    if (m.type == "submit_verdict") {
      VerdictInput v;
      v.kind = verdict_from_string(require(p, "verdict").get<std::string>());
      v.draft_index = p.value("draft_index", std::size_t{0});
      if (p.contains("edited") && !p.at("edited").is_null()) {
        const auto& a = p.at("edited");
        v.edited = Anchor{0, require(a, "s").get<int>(), require(a, "e").get<int>(), require(a, "b").get<int>(),
                          label_field(s, require(a, "y_L")), label_field(s, require(a, "y_R"))};
      }
      if (p.contains("effort_s")) v.effort = p.at("effort_s").get<double>();
      // Rejecting a query before scribbling: no boundary anywhere in its window.
      if (v.kind == VerdictKind::Rejected && !s.pending_proposal() && s.pending_query()) {
        s.reject_query();
        return {update_message(s, {{"verdict", "rejected"}})};
      }
      const auto r = s.verdict(v);
      return {update_message(s, {{"verdict", to_string(r.kind)}})};
    }
    if (m.type == "edit_cue") return edit_cue(s, strokes_from_json(require(p, "strokes")));
    if (m.type == "save") {
      namespace fs = std::filesystem;
      fs::create_directories(cfg_.save_dir);
      const auto base = fs::path(cfg_.save_dir) / id;
      {
        std::ofstream snap(base.string() + ".snapshot.json");
        auto j = s.snapshot_json();
        j["case"] = e.case_name;
        snap << j.dump(2) << '\n';
        if (!snap) throw Error(ErrorKind::Io, "cannot write snapshot to " + cfg_.save_dir);
      }
      {
        std::ofstream jr(base.string() + ".journal");
        jr << s.journal().to_lines();
        if (!jr) throw Error(ErrorKind::Io, "cannot write journal to " + cfg_.save_dir);
      }
      auto st = state_message(s, id, false);
      st.payload["saved"] = {{"snapshot", base.string() + ".snapshot.json"}, {"journal", base.string() + ".journal"}};
      return {st};
    }
    throw Error(ErrorKind::Argument, "unhandled message type '" + m.type + "'");
  }

  static std::vector<ProtocolMessage> edit_cue(Session& s, const std::vector<Stroke>& strokes) {
    const bool hit = s.edit_segment(strokes);
    return {update_message(s, {{"edit", hit ? "merged" : "miss"}})};
  }

  ServiceConfig cfg_;
  std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  long next_id_ = 0;
};

// Persistent line-delimited transport: one message per input line, one response per output line.
inline void serve_stream(Service& svc, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    for (const auto& r : svc.handle_text(line)) out << r.dump() << '\n';
    out << std::flush;
  }
}

}  // namespace scribe
