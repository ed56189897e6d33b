#pragma once

// Seeded synthetic cases: piecewise-constant label prototypes plus Gaussian noise, and an
// initial labeling derived from the ground truth by boundary jitter.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scribe/feature_store.hpp"
#include "scribe/labels.hpp"

namespace scribe {

struct FixtureConfig {
  int num_frames = 300;
  int num_segments = 7;
  int num_labels = 6;
  int dim = 16;
  int min_segment = 24;
  double noise = 0.2;
  int min_jitter = 6;  // init boundary offset magnitude range
  int max_jitter = 12;
  std::uint64_t world_seed = 7;  // label prototypes are shared by every case built from one config
};

struct SyntheticCase {
  std::string name;
  FeatureSequence features;
  LabelVocab vocab;
  Segmentation gt;
  Segmentation init;
};

inline LabelVocab synthetic_vocab(int num_labels) {
  std::vector<std::string> names;
  for (int i = 0; i < num_labels; ++i) names.push_back("action_" + std::to_string(i));
  return LabelVocab(std::move(names));
}

// Segment boundaries with every segment at least min_segment long.
inline Segmentation random_segmentation(const FixtureConfig& cfg, std::mt19937_64& rng) {
  const int k = cfg.num_segments;
  if (k < 1 || k * cfg.min_segment > cfg.num_frames)
    throw Error(ErrorKind::Argument, "fixture cannot fit " + std::to_string(k) + " segments");
  if (k > 1 && cfg.num_labels < 2) throw Error(ErrorKind::Argument, "fixture needs at least two labels");
  // Distribute the slack over k segments (stars and bars on sorted uniform draws).
  const int slack = cfg.num_frames - k * cfg.min_segment;
  std::uniform_int_distribution<int> u(0, slack);
  std::vector<int> cuts;
  for (int i = 0; i + 1 < k; ++i) cuts.push_back(u(rng));
  std::sort(cuts.begin(), cuts.end());
  Segmentation s;
  std::uniform_int_distribution<int> lab(0, cfg.num_labels - 1);
  int start = 0;
  for (int i = 0; i < k; ++i) {
    const int end = i + 1 < k ? cuts[static_cast<std::size_t>(i)] + (i + 1) * cfg.min_segment : cfg.num_frames;
    int l = lab(rng);
    while (!s.empty() && l == s.back().label) l = lab(rng);
    s.push_back({start, end, l});
    start = end;
  }
  return s;
}

inline std::vector<std::vector<double>> label_prototypes(int num_labels, int dim, std::uint64_t world_seed) {
  std::mt19937_64 rng(world_seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> proto(static_cast<std::size_t>(num_labels), std::vector<double>(static_cast<std::size_t>(dim)));
  for (auto& p : proto)
    for (auto& v : p) v = n01(rng);
  return proto;
}

inline FeatureSequence synthetic_features(const Segmentation& gt, const std::vector<std::vector<double>>& proto,
                                          double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const int T = segmentation_length(gt);
  const auto dim = proto.at(0).size();
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(T) * dim);
  for (const auto& seg : gt)
    for (int t = seg.start; t < seg.end; ++t)
      for (std::size_t j = 0; j < dim; ++j)
        values.push_back(static_cast<float>(proto[static_cast<std::size_t>(seg.label)][j] + noise * n01(rng)));
  return FeatureSequence(T, static_cast<int>(dim), std::move(values));
}

// Moves every interior boundary by a random signed offset, keeping segments non-empty.
inline Segmentation jitter_boundaries(const Segmentation& gt, int min_jitter, int max_jitter, std::mt19937_64& rng) {
  Segmentation s = gt;
  std::uniform_int_distribution<int> mag(min_jitter, max_jitter);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 1; i < s.size(); ++i) {
    const int off = sign(rng) ? mag(rng) : -mag(rng);
    const int lo = s[i - 1].start + 1, hi = s[i].end - 1;
    const int b = std::clamp(s[i].start + off, lo, hi);
    s[i - 1].end = b;
    s[i].start = b;
  }
  return s;
}

inline SyntheticCase make_case(const FixtureConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticCase c{"case_" + std::to_string(seed), FeatureSequence(), synthetic_vocab(cfg.num_labels), {}, {}};
  c.gt = random_segmentation(cfg, rng);
  c.features = synthetic_features(c.gt, label_prototypes(cfg.num_labels, cfg.dim, cfg.world_seed), cfg.noise, rng);
  c.init = jitter_boundaries(c.gt, cfg.min_jitter, cfg.max_jitter, rng);
  return c;
}

inline std::vector<SyntheticCase> make_cases(const FixtureConfig& cfg, int count, std::uint64_t seed) {
  std::vector<SyntheticCase> out;
  for (int i = 0; i < count; ++i) out.push_back(make_case(cfg, seed * 1000003ULL + static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace scribe
