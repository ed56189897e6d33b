#pragma once

// Exhaustive reference for the constrained decoder, plus the random instances it is checked on.

#include <functional>
#include <limits>
#include <random>

#include "scribe/propagation.hpp"

namespace scribe::oracle {

// Enumerates all L^T labelings; returns the best objective value (-inf if none is feasible).
inline double brute_force_best(const DecodeProblem& p) {
  double best = -std::numeric_limits<double>::infinity();
  DenseLabeling y(static_cast<std::size_t>(p.num_frames), 0);
  std::function<void(int)> rec = [&](int t) {
    if (t == p.num_frames) {
      best = std::max(best, objective(p, y));
      return;
    }
    for (int l = 0; l < p.num_labels; ++l) {
      y[static_cast<std::size_t>(t)] = l;
      rec(t + 1);
    }
  };
  rec(0);
  return best;
}

// Random problem with values on a 1/8 grid so objective sums are exact in binary floating point.
inline DecodeProblem random_problem(std::mt19937& rng, bool with_cut) {
  std::uniform_int_distribution<int> T_d(1, 8), L_d(1, 3), v(-16, 16), g(1, 16);
  DecodeProblem p;
  p.num_frames = T_d(rng);
  p.num_labels = L_d(rng);
  p.emissions = Eigen::MatrixXd(p.num_frames, p.num_labels);
  for (int t = 0; t < p.num_frames; ++t)
    for (int y = 0; y < p.num_labels; ++y) p.emissions(t, y) = v(rng) / 8.0;
  p.transition.assign(static_cast<std::size_t>(p.num_frames), 0.0);
  for (int t = 1; t < p.num_frames; ++t) p.transition[static_cast<std::size_t>(t)] = g(rng) / 8.0;
  if (with_cut && p.num_frames >= 2 && p.num_labels >= 2) {
    std::uniform_int_distribution<int> b(1, p.num_frames - 1), l(0, p.num_labels - 1);
    const int yl = l(rng);
    int yr = l(rng);
    while (yr == yl) yr = l(rng);
    p.protected_cuts.push_back({b(rng), yl, yr, 1});
  }
  return p;
}

}  // namespace scribe::oracle
