#pragma once

// Central finite-difference check of the analytic proposal-model gradient.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "scribe/proposal.hpp"

namespace scribe::oracle {

struct GradCheckResult {
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU kink or moved the boundary argmax
  double worst_relative_error = 0.0;
};

// A small instance with non-empty side channels so pooling never takes the argmax fallback,
// and both consistency penalties active so every loss term contributes.
inline TrainExample gradcheck_instance(int dim, int window, int labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  TrainExample ex;
  ex.input.window = {100, 100 + window};
  ex.input.features = Mat(window, dim);
  for (Eigen::Index i = 0; i < ex.input.features.size(); ++i) ex.input.features.data()[i] = n01(rng);
  ex.input.scribble = Mat::Zero(window, 3);
  const int mid = window / 2;
  for (int t = mid - 2; t < mid + 2; ++t) ex.input.scribble(t, 0) = 1.0;
  for (int t = 1; t < mid - 4; ++t) ex.input.scribble(t, 1) = 1.0;
  for (int t = mid + 4; t < window - 1; ++t) ex.input.scribble(t, 2) = 1.0;
  ex.input.energy = Vec(window);
  for (int t = 0; t < window; ++t) ex.input.energy(t) = std::abs(n01(rng)) / 3.0;
  ex.target = {100 + mid - 2, 100 + mid + 2};
  ex.left_label = 0;
  ex.right_label = labels - 1;
  ex.penalties.protected_mask.assign(static_cast<std::size_t>(window), 0.0);
  for (int t = 0; t < 3; ++t) ex.penalties.protected_mask[static_cast<std::size_t>(t)] = 1.0;
  ex.penalties.side_disagreement = true;
  return ex;
}

inline ModelParams random_point(int dim, int labels, std::uint64_t seed) {
  auto m = ModelParams::init(dim, labels, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> small(0.0, 0.1);
  for (Eigen::Index i = 0; i < m.conv1_b.size(); ++i) m.conv1_b(i) = small(rng);
  for (Eigen::Index i = 0; i < m.conv2_b.size(); ++i) m.conv2_b(i) = small(rng);
  for (Eigen::Index i = 0; i < m.side_b.size(); ++i) m.side_b(i) = small(rng);
  m.boundary_b = small(rng);
  return m;
}

namespace detail {

struct Pattern {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> r1, r2;
  int argmax = 0;
  bool operator==(const Pattern& o) const { return (r1 == o.r1).all() && (r2 == o.r2).all() && argmax == o.argmax; }
};

inline std::pair<double, Pattern> eval(const ModelParams& m, const TrainExample& ex) {
  ForwardCache c;
  const auto out = forward(m, ex.input, &c);
  return {total_loss(ex, out), Pattern{c.z1.array() > 0.0, c.z2.array() > 0.0, out.boundary_argmax}};
}

}  // namespace detail

// Checks every parameter of the heads and biases plus `conv_samples` random entries of each
// convolution weight matrix.
inline GradCheckResult check_gradient(const ModelParams& m, const TrainExample& ex, int conv_samples,
                                      std::uint64_t seed, double h = 1e-4, double floor = 1e-6) {
  ModelParams g;
  backward(m, ex, g, 0.0);
  const auto theta = m.flatten();
  const auto grad = g.flatten();
  const auto base = detail::eval(m, ex).second;

  // Offsets of each tensor inside the flat vector.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t off = 0;
  m.for_each([&](const char*, Eigen::Index r, Eigen::Index c, const double*) {
    ranges.emplace_back(off, static_cast<std::size_t>(r * c));
    off += static_cast<std::size_t>(r * c);
  });
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const auto [o, n] = ranges[k];
    const bool conv_weight = k == 0 || k == 2;
    if (!conv_weight) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(o + i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int s = 0; s < conv_samples; ++s) idx.push_back(o + pick(rng));
    }
  }

  GradCheckResult res;
  ModelParams probe = m;
  auto theta_p = theta;
  for (std::size_t i : idx) {
    theta_p[i] = theta[i] + h;
    probe.unflatten(theta_p);
    const auto [fp, pp] = detail::eval(probe, ex);
    theta_p[i] = theta[i] - h;
    probe.unflatten(theta_p);
    const auto [fm, pm] = detail::eval(probe, ex);
    theta_p[i] = theta[i];
    if (!(pp == base) || !(pm == base)) {
      ++res.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), floor});
    res.worst_relative_error = std::max(res.worst_relative_error, err);
    ++res.checked;
  }
  return res;
}

}  // namespace scribe::oracle
