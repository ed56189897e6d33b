#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace scribe {

enum class ErrorKind {
  Format,
  Truncation,
  Data,
  Argument,
  Structure,
  Rejection,
  Gesture,
  Numeric,
  Training,
  ConstraintConflict,
  Invariant,
  StaleVersion,
  Io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncation: return "truncation";
    case ErrorKind::Data: return "data";
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Structure: return "structure";
    case ErrorKind::Rejection: return "rejection";
    case ErrorKind::Gesture: return "gesture";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Training: return "training";
    case ErrorKind::ConstraintConflict: return "constraint_conflict";
    case ErrorKind::Invariant: return "invariant";
    case ErrorKind::StaleVersion: return "stale_version";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when protected cuts of two or more anchors cannot be satisfied together.
class ConstraintConflict : public Error {
 public:
  ConstraintConflict(std::vector<int> anchor_ids, const std::string& what)
      : Error(ErrorKind::ConstraintConflict, what), anchor_ids_(std::move(anchor_ids)) {}

  const std::vector<int>& anchor_ids() const noexcept { return anchor_ids_; }

 private:
  std::vector<int> anchor_ids_;
};

}  // namespace scribe
