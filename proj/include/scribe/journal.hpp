#pragma once

// Line-delimited session journal: one {"seq","ts_ms","kind","payload"} object per line.

#include <chrono>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/error.hpp"

namespace scribe {

struct JournalEvent {
  long seq = 0;
  std::int64_t ts_ms = 0;
  std::string kind;
  nlohmann::json payload;
};

inline std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

inline nlohmann::json to_json(const JournalEvent& e) {
  return {{"seq", e.seq}, {"ts_ms", e.ts_ms}, {"kind", e.kind}, {"payload", e.payload}};
}

inline JournalEvent journal_event_from_json(const nlohmann::json& j) {
  return {j.at("seq").get<long>(), j.at("ts_ms").get<std::int64_t>(), j.at("kind").get<std::string>(),
          j.at("payload")};
}

class Journal {
 public:
  // Optional sink receives every event as it is appended (flushed per line).
  void set_sink(std::ostream* sink) { sink_ = sink; }

  const JournalEvent& append(const std::string& kind, nlohmann::json payload) {
    events_.push_back({static_cast<long>(events_.size()), wall_clock_ms(), kind, std::move(payload)});
    if (sink_) *sink_ << to_json(events_.back()).dump() << '\n' << std::flush;
    return events_.back();
  }

  const std::vector<JournalEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  std::string to_lines() const {
    std::string out;
    for (const auto& e : events_) out += to_json(e).dump() + "\n";
    return out;
  }

  static std::vector<JournalEvent> parse_lines(std::istream& in) {
    std::vector<JournalEvent> out;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        out.push_back(journal_event_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, "journal line " + std::to_string(out.size()) + ": " + e.what());
      }
      if (out.back().seq != static_cast<long>(out.size()) - 1)
        throw Error(ErrorKind::Format, "journal sequence gap at line " + std::to_string(out.size() - 1));
    }
    return out;
  }

  static std::vector<JournalEvent> parse_lines(const std::string& text) {
    std::istringstream in(text);
    return parse_lines(in);
  }

 private:
  std::vector<JournalEvent> events_;
  std::ostream* sink_ = nullptr;
};

}  // namespace scribe
