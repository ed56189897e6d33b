#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace scribe {

// Per-label running mean of accepted segment features.
struct PrototypeMemory {
  int dim = 0;
  std::vector<std::vector<double>> means;  // L x D
  std::vector<long> counts;

  PrototypeMemory() = default;
  PrototypeMemory(int num_labels, int dim_)
      : dim(dim_), means(static_cast<std::size_t>(num_labels), std::vector<double>(static_cast<std::size_t>(dim_), 0.0)),
        counts(static_cast<std::size_t>(num_labels), 0) {}

  void add(int label, std::span<const double> feature) {
    auto& m = means[static_cast<std::size_t>(label)];
    auto& n = counts[static_cast<std::size_t>(label)];
    ++n;
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += (feature[j] - m[j]) / static_cast<double>(n);
  }

  // exp(-||f - mu||^2 / D) in [0,1]; 0 for labels never seen.
  double similarity(int label, std::span<const double> feature) const {
    if (label < 0 || label >= static_cast<int>(counts.size()) || counts[static_cast<std::size_t>(label)] == 0) return 0.0;
    const auto& m = means[static_cast<std::size_t>(label)];
    double ss = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) ss += (feature[j] - m[j]) * (feature[j] - m[j]);
    return std::exp(-ss / std::max(1, dim));
  }

  friend bool operator==(const PrototypeMemory&, const PrototypeMemory&) = default;
};

// counts[proposed][corrected]
struct ConfusionMemory {
  std::vector<std::vector<long>> counts;

  ConfusionMemory() = default;
  explicit ConfusionMemory(int num_labels)
      : counts(static_cast<std::size_t>(num_labels), std::vector<long>(static_cast<std::size_t>(num_labels), 0)) {}

  int size() const { return static_cast<int>(counts.size()); }

  void add(int proposed, int corrected) {
    if (proposed == corrected || proposed < 0 || corrected < 0 || proposed >= size() || corrected >= size()) return;
    ++counts[static_cast<std::size_t>(proposed)][static_cast<std::size_t>(corrected)];
  }

  long row_total(int a) const {
    if (a < 0 || a >= size()) return 0;
    long s = 0;
    for (long c : counts[static_cast<std::size_t>(a)]) s += c;
    return s;
  }

  long at(int a, int b) const {
    if (a < 0 || b < 0 || a >= size() || b >= size()) return 0;
    return counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
  }

  // Probability that a proposal of `a` gets corrected to `b`.
  double correction_rate(int a, int b) const {
    const long tot = row_total(a);
    return tot > 0 ? static_cast<double>(at(a, b)) / static_cast<double>(tot) : 0.0;
  }

  // Symmetric confusion probability of an adjacent label pair.
  double pair_probability(int a, int b) const {
    const long tot = row_total(a) + row_total(b);
    return tot > 0 ? static_cast<double>(at(a, b) + at(b, a)) / static_cast<double>(tot) : 0.0;
  }

  friend bool operator==(const ConfusionMemory&, const ConfusionMemory&) = default;
};

inline void to_json(nlohmann::json& j, const PrototypeMemory& p) {
  j = {{"dim", p.dim}, {"means", p.means}, {"counts", p.counts}};
}
inline void from_json(const nlohmann::json& j, PrototypeMemory& p) {
  p.dim = j.at("dim").get<int>();
  p.means = j.at("means").get<std::vector<std::vector<double>>>();
  p.counts = j.at("counts").get<std::vector<long>>();
}
inline void to_json(nlohmann::json& j, const ConfusionMemory& c) { j = c.counts; }
inline void from_json(const nlohmann::json& j, ConfusionMemory& c) { c.counts = j.get<std::vector<std::vector<long>>>(); }

}  // namespace scribe
