#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "scribe/error.hpp"

namespace scribe {

class LabelVocab {
 public:
  LabelVocab() = default;

  explicit LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw Error(ErrorKind::Structure, "label vocabulary is empty");
    std::unordered_set<std::string> seen;
    for (const auto& n : names_)
      if (!seen.insert(n).second) throw Error(ErrorKind::Structure, "duplicate label '" + n + "'");
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& names() const { return names_; }

  int index_of(const std::string& n) const {
    const auto it = std::find(names_.begin(), names_.end(), n);
    if (it == names_.end()) throw Error(ErrorKind::Structure, "unknown label '" + n + "'");
    return static_cast<int>(it - names_.begin());
  }

  bool contains(const std::string& n) const {
    return std::find(names_.begin(), names_.end(), n) != names_.end();
  }

  friend bool operator==(const LabelVocab&, const LabelVocab&) = default;

 private:
  std::vector<std::string> names_;
};

using DenseLabeling = std::vector<int>;

struct Segment {
  int start = 0;  // inclusive
  int end = 0;    // exclusive
  int label = 0;

  int length() const { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

using Segmentation = std::vector<Segment>;

// Sorted interior boundary frames; each is the first frame of a non-first segment.
using BoundarySet = std::vector<int>;

inline Segmentation segments_from_dense(const DenseLabeling& y) {
  if (y.empty()) throw Error(ErrorKind::Structure, "empty labeling");
  Segmentation out;
  int start = 0;
  for (int t = 1; t <= static_cast<int>(y.size()); ++t) {
    if (t == static_cast<int>(y.size()) || y[static_cast<std::size_t>(t)] != y[static_cast<std::size_t>(start)]) {
      out.push_back({start, t, y[static_cast<std::size_t>(start)]});
      start = t;
    }
  }
  return out;
}

inline int segmentation_length(const Segmentation& s) { return s.empty() ? 0 : s.back().end; }

inline void validate_segmentation(const Segmentation& s, int num_frames = -1, int num_labels = -1) {
  if (s.empty()) throw Error(ErrorKind::Structure, "segmentation has no segments");
  int cursor = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& seg = s[i];
    if (seg.start != cursor)
      throw Error(ErrorKind::Structure, seg.start < cursor ? "overlapping segments" : "gap between segments");
    if (seg.end <= seg.start) throw Error(ErrorKind::Structure, "empty segment");
    if (num_labels >= 0 && (seg.label < 0 || seg.label >= num_labels))
      throw Error(ErrorKind::Structure, "segment label outside vocabulary");
    cursor = seg.end;
  }
  if (num_frames >= 0 && cursor != num_frames)
    throw Error(ErrorKind::Structure, "segmentation covers " + std::to_string(cursor) + " frames, expected " +
                                          std::to_string(num_frames));
}

// Adjacent equal-label segments are accepted and simply collapse in the dense form.
inline DenseLabeling dense_from_segments(const Segmentation& s) {
  validate_segmentation(s);
  DenseLabeling y(static_cast<std::size_t>(s.back().end));
  for (const auto& seg : s) std::fill(y.begin() + seg.start, y.begin() + seg.end, seg.label);
  return y;
}

inline BoundarySet boundaries_of(const Segmentation& s) {
  BoundarySet b;
  for (std::size_t i = 1; i < s.size(); ++i) b.push_back(s[i].start);
  return b;
}

inline BoundarySet boundaries_of(const DenseLabeling& y) {
  BoundarySet b;
  for (std::size_t t = 1; t < y.size(); ++t)
    if (y[t] != y[t - 1]) b.push_back(static_cast<int>(t));
  return b;
}

// Maximum one-to-one matching within +-delta frames; the in-order two-pointer sweep is optimal
// for equal-width tolerance windows on a line.
inline int boundary_matches(const BoundarySet& pred, const BoundarySet& gt, int delta) {
  std::size_t i = 0, j = 0;
  int matched = 0;
  while (i < pred.size() && j < gt.size()) {
    const int p = pred[i], g = gt[j];
    if (p < g - delta) {
      ++i;
    } else if (g < p - delta) {
      ++j;
    } else {
      ++matched;
      ++i;
      ++j;
    }
  }
  return matched;
}

inline double boundary_f1(const BoundarySet& pred, const BoundarySet& gt, int delta) {
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  const int m = boundary_matches(pred, gt, delta);
  return 2.0 * m / static_cast<double>(pred.size() + gt.size());
}

inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::vector<int> label_sequence(const Segmentation& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& seg : s) out.push_back(seg.label);
  return out;
}

inline double edit_score(const Segmentation& pred, const Segmentation& gt) {
  if (pred.empty() || gt.empty()) throw Error(ErrorKind::Argument, "edit score needs non-empty segmentations");
  const auto a = label_sequence(pred), b = label_sequence(gt);
  const int lev = levenshtein(a, b);
  return 1.0 - lev / static_cast<double>(std::max(a.size(), b.size()));
}

// ceil(1.5 * |B_GT|)
inline int interaction_budget(const Segmentation& gt) {
  const int n = gt.empty() ? 0 : static_cast<int>(gt.size()) - 1;
  return (3 * n + 1) / 2;
}

inline int interaction_budget_for(int num_boundaries, double multiplier) {
  return static_cast<int>(std::ceil(multiplier * num_boundaries - 1e-9));
}

// --- label file: {"vocab": [...], "segments": [{"start","end","label"}]} -------------------

struct LabelFile {
  LabelVocab vocab;
  Segmentation segments;
};

inline nlohmann::json to_json(const LabelVocab& vocab, const Segmentation& s) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& seg : s)
    segs.push_back({{"start", seg.start}, {"end", seg.end}, {"label", vocab.name(seg.label)}});
  return {{"vocab", vocab.names()}, {"segments", std::move(segs)}};
}

inline LabelFile label_file_from_json(const nlohmann::json& j) {
  try {
    LabelFile out{LabelVocab(j.at("vocab").get<std::vector<std::string>>()), {}};
    for (const auto& s : j.at("segments")) {
      const auto& lab = s.at("label");
      const int idx = lab.is_number_integer() ? lab.get<int>() : out.vocab.index_of(lab.get<std::string>());
      out.segments.push_back({s.at("start").get<int>(), s.at("end").get<int>(), idx});
    }
    validate_segmentation(out.segments, -1, out.vocab.size());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("label file: ") + e.what());
  }
}

inline LabelFile load_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, path + ": " + e.what());
  }
  return label_file_from_json(j);
}

inline void write_label_file(const std::string& path, const LabelVocab& vocab, const Segmentation& s) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << to_json(vocab, s).dump(2) << '\n';
}

}  // namespace scribe
