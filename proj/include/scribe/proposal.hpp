#pragma once

// Local proposal model: a two-layer dilated 1-D conv refiner over the interaction window with
// boundary, side-label and confidence heads, plus the interval-marginal training objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scribe/error.hpp"
#include "scribe/feature_store.hpp"
#include "scribe/labels.hpp"
#include "scribe/scribble.hpp"

namespace scribe {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr int kKernel = 9;
inline constexpr int kHidden = 64;
inline constexpr int kDilation1 = 1;
inline constexpr int kDilation2 = 2;
inline constexpr double kLogFloor = 1e-12;
inline constexpr double kBoundaryWeight = 1.0;
inline constexpr double kSideWeight = 1.0;
inline constexpr double kConsistencyWeight = 0.3;
inline constexpr double kConfidenceAuxWeight = 0.1;
inline constexpr int kProtectedRadius = 2;

struct ProposalInput {
  FrameInterval window;
  Mat features;  // |W| x D
  Mat scribble;  // |W| x 3
  Vec energy;    // |W|

  int length() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

struct ProposalOutput {
  Vec p_boundary;  // over window frames
  Vec p_left;      // over labels
  Vec p_right;
  double confidence = 0.5;
  int boundary_argmax = 0;  // window-relative
};

inline ProposalInput assemble_input(const FeatureSequence& f, const ScribbleEncoding& enc) {
  const auto& w = enc.window;
  if (w.empty()) throw Error(ErrorKind::Argument, "empty interaction window");
  if (w.begin < 0 || w.end > f.num_frames()) throw Error(ErrorKind::Argument, "window exceeds feature range");
  if (static_cast<int>(enc.channels[0].size()) != w.length())
    throw Error(ErrorKind::Argument, "scribble channels do not match window");
  ProposalInput x;
  x.window = w;
  const int n = w.length(), d = f.dim();
  x.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const auto row = f.row(w.begin + i);
    for (int j = 0; j < d; ++j) x.features(i, j) = row[static_cast<std::size_t>(j)];
  }
  x.scribble.resize(n, 3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i) x.scribble(i, c) = enc.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
  x.energy = Vec::Zero(n);
  if (n >= 2) {
    const auto e = boundary_energy(f, w);
    for (int i = 0; i < n; ++i) x.energy(i) = e.values[static_cast<std::size_t>(i)];
  }
  return x;
}

// ---------------------------------------------------------------------------------------------
// Parameters

struct ModelParams {
  int dim = 0;
  int num_labels = 0;
  std::uint32_t version = 0;

  Mat conv1_w;  // (K * (D + 4)) x H
  Vec conv1_b;
  Mat conv2_w;  // (K * H) x H
  Vec conv2_b;
  Vec boundary_w;  // H
  double boundary_b = 0.0;
  Mat side_w;  // H x L
  Vec side_b;  // L
  Vec conf_w;  // H
  double conf_b = 0.0;

  int in_channels() const { return dim + 4; }

  static ModelParams zeros(int dim, int num_labels) {
    ModelParams m;
    m.dim = dim;
    m.num_labels = num_labels;
    m.conv1_w = Mat::Zero(kKernel * (dim + 4), kHidden);
    m.conv1_b = Vec::Zero(kHidden);
    m.conv2_w = Mat::Zero(kKernel * kHidden, kHidden);
    m.conv2_b = Vec::Zero(kHidden);
    m.boundary_w = Vec::Zero(kHidden);
    m.side_w = Mat::Zero(kHidden, num_labels);
    m.side_b = Vec::Zero(num_labels);
    m.conf_w = Vec::Zero(kHidden);
    return m;
  }

  static ModelParams init(int dim, int num_labels, std::uint64_t seed) {
    auto m = zeros(dim, num_labels);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& a, double std_dev) {
      std::normal_distribution<double> nd(0.0, std_dev);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
    };
    fill(m.conv1_w, std::sqrt(2.0 / (kKernel * m.in_channels())));
    fill(m.conv2_w, std::sqrt(2.0 / (kKernel * kHidden)));
    fill(m.boundary_w, std::sqrt(1.0 / kHidden));
    fill(m.side_w, std::sqrt(1.0 / kHidden));
    fill(m.conf_w, std::sqrt(1.0 / kHidden));
    return m;
  }

  // Visits every trainable tensor as (name, rows, cols, data pointer), in checkpoint order.
  template <typename F>
  void for_each(F&& f) {
    f("conv1.weight", conv1_w.rows(), conv1_w.cols(), conv1_w.data());
    f("conv1.bias", conv1_b.rows(), Eigen::Index{1}, conv1_b.data());
    f("conv2.weight", conv2_w.rows(), conv2_w.cols(), conv2_w.data());
    f("conv2.bias", conv2_b.rows(), Eigen::Index{1}, conv2_b.data());
    f("boundary.weight", boundary_w.rows(), Eigen::Index{1}, boundary_w.data());
    f("boundary.bias", Eigen::Index{1}, Eigen::Index{1}, &boundary_b);
    f("side.weight", side_w.rows(), side_w.cols(), side_w.data());
    f("side.bias", side_b.rows(), Eigen::Index{1}, side_b.data());
    f("confidence.weight", conf_w.rows(), Eigen::Index{1}, conf_w.data());
    f("confidence.bias", Eigen::Index{1}, Eigen::Index{1}, &conf_b);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const char* name, Eigen::Index r, Eigen::Index c, double* p) {
      f(name, r, c, static_cast<const double*>(p));
    });
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for_each([&](const char*, Eigen::Index r, Eigen::Index c, const double*) { n += static_cast<std::size_t>(r * c); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(num_params());
    for_each([&](const char*, Eigen::Index r, Eigen::Index c, const double* p) { out.insert(out.end(), p, p + r * c); });
    return out;
  }

  void unflatten(const std::vector<double>& v) {
    std::size_t off = 0;
    for_each([&](const char*, Eigen::Index r, Eigen::Index c, double* p) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), r * c, p);
      off += static_cast<std::size_t>(r * c);
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const char*, Eigen::Index r, Eigen::Index c, const double* p) {
      for (Eigen::Index i = 0; i < r * c; ++i) ok = ok && std::isfinite(p[i]);
    });
    return ok;
  }
};

// ---------------------------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline Mat im2col(const Mat& x, int dilation) {
  const Eigen::Index n = x.rows(), c = x.cols();
  const int half = kKernel / 2;
  Mat col = Mat::Zero(n, kKernel * c);
  for (int j = 0; j < kKernel; ++j) {
    const Eigen::Index shift = static_cast<Eigen::Index>(j - half) * dilation;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -shift), hi = std::min<Eigen::Index>(n, n - shift);
    if (hi > lo) col.block(lo, j * c, hi - lo, c) = x.block(lo + shift, 0, hi - lo, c);
  }
  return col;
}

inline Mat col2im(const Mat& dcol, Eigen::Index channels, int dilation) {
  const Eigen::Index n = dcol.rows();
  const int half = kKernel / 2;
  Mat dx = Mat::Zero(n, channels);
  for (int j = 0; j < kKernel; ++j) {
    const Eigen::Index shift = static_cast<Eigen::Index>(j - half) * dilation;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -shift), hi = std::min<Eigen::Index>(n, n - shift);
    if (hi > lo) dx.block(lo + shift, 0, hi - lo, channels) += dcol.block(lo, j * channels, hi - lo, channels);
  }
  return dx;
}

inline Vec softmax(const Vec& z) {
  const double m = z.maxCoeff();
  Vec e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

inline int first_argmax(const Vec& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

// Pooling weights for one side: the scribble side channel when it has support, otherwise the
// frames on that side of the boundary argmax.
inline Vec side_pool_weights(const Mat& scribble, int channel, int argmax, bool left) {
  const Eigen::Index n = scribble.rows();
  Vec w = scribble.col(channel);
  if (w.sum() <= 0.0) {
    w.setZero();
    if (left) {
      const Eigen::Index stop = std::max<Eigen::Index>(1, argmax);
      w.head(stop).setOnes();
    } else {
      const Eigen::Index start = std::min<Eigen::Index>(argmax, n - 1);
      w.tail(n - start).setOnes();
    }
  }
  return w / w.sum();
}

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace detail

struct ForwardCache {
  Mat x0, col1, z1, h1, col2, z2, h2;
  Vec pool_left, pool_right, pooled_left, pooled_right, pooled_mean;
};

inline ProposalOutput forward(const ModelParams& m, const ProposalInput& x, ForwardCache* cache = nullptr) {
  const Eigen::Index n = x.length();
  if (n < 1) throw Error(ErrorKind::Argument, "empty proposal input");
  if (x.dim() != m.dim) throw Error(ErrorKind::Argument, "feature dim " + std::to_string(x.dim()) +
                                                             " does not match model dim " + std::to_string(m.dim));
  if (x.scribble.rows() != n || x.energy.size() != n) throw Error(ErrorKind::Argument, "input parts differ in length");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.x0.resize(n, m.in_channels());
  c.x0.leftCols(m.dim) = x.features;
  c.x0.middleCols(m.dim, 3) = x.scribble;
  c.x0.col(m.dim + 3) = x.energy;

  c.col1 = detail::im2col(c.x0, kDilation1);
  c.z1 = (c.col1 * m.conv1_w).rowwise() + m.conv1_b.transpose();
  c.h1 = c.z1.cwiseMax(0.0);
  c.col2 = detail::im2col(c.h1, kDilation2);
  c.z2 = (c.col2 * m.conv2_w).rowwise() + m.conv2_b.transpose();
  c.h2 = c.z2.cwiseMax(0.0);

  ProposalOutput out;
  const Vec logits = (c.h2 * m.boundary_w).array() + m.boundary_b;
  out.p_boundary = detail::softmax(logits);
  out.boundary_argmax = detail::first_argmax(out.p_boundary);

  c.pool_left = detail::side_pool_weights(x.scribble, 1, out.boundary_argmax, true);
  c.pool_right = detail::side_pool_weights(x.scribble, 2, out.boundary_argmax, false);
  c.pooled_left = c.h2.transpose() * c.pool_left;
  c.pooled_right = c.h2.transpose() * c.pool_right;
  out.p_left = detail::softmax(m.side_w.transpose() * c.pooled_left + m.side_b);
  out.p_right = detail::softmax(m.side_w.transpose() * c.pooled_right + m.side_b);

  c.pooled_mean = c.h2.colwise().mean().transpose();
  out.confidence = detail::sigmoid(m.conf_w.dot(c.pooled_mean) + m.conf_b);

  if (!out.p_boundary.allFinite() || !out.p_left.allFinite() || !out.p_right.allFinite() ||
      !std::isfinite(out.confidence))
    throw Error(ErrorKind::Numeric, "non-finite activation in proposal forward");
  return out;
}

// ---------------------------------------------------------------------------------------------
// Objective

struct ConsistencyPenalties {
  // (a) window-relative 0/1 mask of frames protected by previously accepted anchors; empty = inactive.
  std::vector<double> protected_mask;
  // (b) side-label disagreement around a confirmed neighbouring correction.
  bool side_disagreement = false;

  int count() const { return (protected_mask.empty() ? 0 : 1) + (side_disagreement ? 1 : 0); }
};

struct TrainExample {
  ProposalInput input;
  FrameInterval target;  // I+ in global frames
  int left_label = 0;
  int right_label = 0;
  ConsistencyPenalties penalties;
};

inline double interval_mass(const ProposalOutput& out, const FrameInterval& window, const FrameInterval& iplus) {
  if (iplus.empty() || !window.contains(iplus)) throw Error(ErrorKind::Argument, "I+ must be a non-empty subset of W");
  return out.p_boundary.segment(iplus.begin - window.begin, iplus.length()).sum();
}

inline double boundary_loss(const ProposalOutput& out, const FrameInterval& window, const FrameInterval& iplus,
                            bool* floored = nullptr) {
  const double mass = interval_mass(out, window, iplus);
  if (floored) *floored = mass < kLogFloor;
  return -std::log(std::max(mass, kLogFloor));
}

inline double side_loss(const ProposalOutput& out, int left_label, int right_label) {
  const auto n = out.p_left.size();
  if (left_label < 0 || left_label >= n || right_label < 0 || right_label >= n)
    throw Error(ErrorKind::Argument, "side label outside vocabulary");
  return -std::log(std::max(out.p_left(left_label), kLogFloor)) - std::log(std::max(out.p_right(right_label), kLogFloor));
}

inline double consistency_loss(const ProposalOutput& out, const ConsistencyPenalties& pen, int left_label,
                               int right_label) {
  const int k = pen.count();
  if (k == 0) return 0.0;
  double sum = 0.0;
  if (!pen.protected_mask.empty()) {
    const Eigen::Map<const Vec> mask(pen.protected_mask.data(), static_cast<Eigen::Index>(pen.protected_mask.size()));
    sum += out.p_boundary.dot(mask);
  }
  if (pen.side_disagreement) sum += out.p_left(right_label) + out.p_right(left_label);
  return sum / k;
}

struct LossTerms {
  double boundary = 0.0;
  double side = 0.0;
  double consistency = 0.0;
  double confidence_aux = 0.0;

  // Weighted local objective (boundary + side + 0.3 * consistency).
  double local() const { return kBoundaryWeight * boundary + kSideWeight * side + kConsistencyWeight * consistency; }
};

inline double total_loss(const LossTerms& t) { return t.local(); }

inline LossTerms loss_terms(const TrainExample& ex, const ProposalOutput& out) {
  LossTerms t;
  t.boundary = boundary_loss(out, ex.input.window, ex.target);
  t.side = side_loss(out, ex.left_label, ex.right_label);
  t.consistency = consistency_loss(out, ex.penalties, ex.left_label, ex.right_label);
  const bool hit = ex.target.contains(ex.input.window.begin + out.boundary_argmax);
  const double c = std::clamp(out.confidence, kLogFloor, 1.0 - kLogFloor);
  t.confidence_aux = hit ? -std::log(c) : -std::log(1.0 - c);
  return t;
}

inline double total_loss(const TrainExample& ex, const ProposalOutput& out) { return loss_terms(ex, out).local(); }

// Gradient of local() + aux_weight * confidence_aux with respect to every parameter.
inline LossTerms backward(const ModelParams& m, const TrainExample& ex, ModelParams& grad, double aux_weight = 0.0) {
  ForwardCache c;
  const auto out = forward(m, ex.input, &c);
  const LossTerms terms = loss_terms(ex, out);
  const Eigen::Index n = ex.input.length();
  const int L = m.num_labels;

  // d/d boundary logits
  Vec ds = Vec::Zero(n);
  {
    const int off = ex.target.begin - ex.input.window.begin;
    const double mass = out.p_boundary.segment(off, ex.target.length()).sum();
    if (mass >= kLogFloor) {
      ds = kBoundaryWeight * out.p_boundary;
      ds.segment(off, ex.target.length()) -= kBoundaryWeight * out.p_boundary.segment(off, ex.target.length()) / mass;
    }
  }
  Vec dzl = Vec::Zero(L), dzr = Vec::Zero(L);
  if (out.p_left(ex.left_label) >= kLogFloor) {
    dzl = kSideWeight * out.p_left;
    dzl(ex.left_label) -= kSideWeight;
  }
  if (out.p_right(ex.right_label) >= kLogFloor) {
    dzr = kSideWeight * out.p_right;
    dzr(ex.right_label) -= kSideWeight;
  }
  if (const int k = ex.penalties.count(); k > 0) {
    const double scale = kConsistencyWeight / k;
    if (!ex.penalties.protected_mask.empty()) {
      const Eigen::Map<const Vec> mask(ex.penalties.protected_mask.data(), n);
      const double phi = out.p_boundary.dot(mask);
      ds += scale * out.p_boundary.cwiseProduct((mask.array() - phi).matrix());
    }
    if (ex.penalties.side_disagreement) {
      Vec e = Vec::Zero(L);
      e(ex.right_label) = 1.0;
      dzl += scale * out.p_left(ex.right_label) * (e - out.p_left);
      e.setZero();
      e(ex.left_label) = 1.0;
      dzr += scale * out.p_right(ex.left_label) * (e - out.p_right);
    }
  }
  double dzc = 0.0;
  if (aux_weight != 0.0) {
    const bool hit = ex.target.contains(ex.input.window.begin + out.boundary_argmax);
    dzc = aux_weight * (out.confidence - (hit ? 1.0 : 0.0));
  }

  grad = ModelParams::zeros(m.dim, m.num_labels);
  grad.version = m.version;

  Mat dh2 = ds * m.boundary_w.transpose();
  grad.boundary_w = c.h2.transpose() * ds;
  grad.boundary_b = ds.sum();

  grad.side_w = c.pooled_left * dzl.transpose() + c.pooled_right * dzr.transpose();
  grad.side_b = dzl + dzr;
  dh2 += c.pool_left * (m.side_w * dzl).transpose();
  dh2 += c.pool_right * (m.side_w * dzr).transpose();

  grad.conf_w = dzc * c.pooled_mean;
  grad.conf_b = dzc;
  dh2.rowwise() += (dzc / static_cast<double>(n)) * m.conf_w.transpose();

  const Mat dz2 = dh2.cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  grad.conv2_w = c.col2.transpose() * dz2;
  grad.conv2_b = dz2.colwise().sum().transpose();
  const Mat dh1 = detail::col2im(dz2 * m.conv2_w.transpose(), kHidden, kDilation2);
  const Mat dz1 = dh1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  grad.conv1_w = c.col1.transpose() * dz1;
  grad.conv1_b = dz1.colwise().sum().transpose();
  return terms;
}

// ---------------------------------------------------------------------------------------------
// Synthetic scribbles

struct SynthConfig {
  int max_offset = 8;
  int min_width = 4;
  int max_width = 24;
  double side_probability = 0.5;
  int min_side = 3;
  int max_side = 12;
  double neighbour_penalty_probability = 0.5;
};

// Uncertain interval for a scribble centred at boundary + offset with the given width.
inline FrameInterval synthetic_interval(int boundary, int offset, int width, int num_frames) {
  int a = boundary + offset - width / 2;
  int b = boundary + offset + (width + 1) / 2;
  a = std::clamp(a, 0, num_frames - 1);
  b = std::clamp(b, a + 1, num_frames);
  return {a, b};
}

inline std::vector<double> protected_mask_for(const FrameInterval& window, const std::vector<int>& cuts) {
  std::vector<double> mask(static_cast<std::size_t>(window.length()), 0.0);
  for (int cut : cuts)
    for (int t = cut - kProtectedRadius; t <= cut + kProtectedRadius; ++t)
      if (window.contains(t)) mask[static_cast<std::size_t>(t - window.begin)] = 1.0;
  return mask;
}

inline TrainExample synthesize_scribble(const FeatureSequence& f, const Segmentation& gt, std::mt19937_64& rng,
                                        const SynthConfig& cfg = {}) {
  if (gt.size() < 2) throw Error(ErrorKind::Argument, "synthetic scribbles need at least one GT boundary");
  const int T = f.num_frames();
  std::uniform_int_distribution<std::size_t> pick(1, gt.size() - 1);
  const std::size_t bi = pick(rng);
  const int b = gt[bi].start;
  std::uniform_int_distribution<int> off_d(-cfg.max_offset, cfg.max_offset), width_d(cfg.min_width, cfg.max_width);
  const int offset = off_d(rng);
  const int width = width_d(rng);
  const FrameInterval iplus = synthetic_interval(b, offset, width, T);

  std::bernoulli_distribution coin(cfg.side_probability);
  auto side_stroke = [&](FrameInterval region) -> std::optional<FrameInterval> {
    if (region.empty()) return std::nullopt;
    std::uniform_int_distribution<int> len_d(cfg.min_side, cfg.max_side);
    const int len = std::min(len_d(rng), region.length());
    std::uniform_int_distribution<int> start_d(region.begin, region.end - len);
    const int s = start_d(rng);
    return FrameInterval{s, s + len};
  };
  std::vector<FrameInterval> lefts, rights;
  const bool want_left = coin(rng), want_right = coin(rng);
  if (want_left)
    if (auto s = side_stroke({gt[bi - 1].start, std::min(b, iplus.begin)})) lefts.push_back(*s);
  if (want_right)
    if (auto s = side_stroke({std::max(b, iplus.end), gt[bi].end})) rights.push_back(*s);

  const auto enc = encode_supports(iplus, lefts, rights, T);
  TrainExample ex;
  ex.input = assemble_input(f, enc);
  ex.target = iplus;
  ex.left_label = gt[bi - 1].label;
  ex.right_label = gt[bi].label;

  std::vector<int> neighbours;
  for (std::size_t j = 1; j < gt.size(); ++j)
    if (j != bi && enc.window.contains(gt[j].start)) neighbours.push_back(gt[j].start);
  std::bernoulli_distribution neighbour_coin(cfg.neighbour_penalty_probability);
  if (!neighbours.empty() && neighbour_coin(rng)) {
    ex.penalties.protected_mask = protected_mask_for(enc.window, neighbours);
    ex.penalties.side_disagreement = true;
  }
  return ex;
}

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch = 16;
  int steps = 500;
  double aux_weight = kConfidenceAuxWeight;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  bool diverged = false;
  int steps_run = 0;
  std::vector<double> batch_losses;
};

// Momentum SGD on the mean batch objective. The input params are never modified; on divergence
// the last finite parameters are returned with diverged set.
inline TrainResult train(const ModelParams& start, const std::vector<TrainExample>& examples, const TrainConfig& cfg) {
  if (examples.empty()) throw Error(ErrorKind::Argument, "training needs at least one example");
  TrainResult res{start, false, 0, {}};
  res.params.version = start.version + 1;
  if (cfg.steps <= 0) return res;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  ModelParams cur = res.params;
  std::vector<double> velocity(cur.num_params(), 0.0);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> g_sum(velocity.size(), 0.0);
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ex = examples[order[cursor++]];
      ModelParams g;
      LossTerms terms;
      try {
        terms = backward(cur, ex, g, cfg.aux_weight);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        res.params = std::move(cur);
        res.diverged = true;
        return res;
      }
      loss_sum += terms.local() + cfg.aux_weight * terms.confidence_aux;
      const auto gf = g.flatten();
      for (std::size_t i = 0; i < gf.size(); ++i) g_sum[i] += gf[i];
    }
    const double mean_loss = loss_sum / cfg.batch;
    if (!std::isfinite(mean_loss)) {
      res.params = std::move(cur);
      res.diverged = true;
      return res;
    }
    auto theta = cur.flatten();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * g_sum[i] / cfg.batch;
      theta[i] += velocity[i];
    }
    ModelParams next = cur;
    next.unflatten(theta);
    if (!next.all_finite()) {
      res.params = std::move(cur);
      res.diverged = true;
      return res;
    }
    cur = std::move(next);
    res.batch_losses.push_back(mean_loss);
    res.steps_run = step + 1;
  }
  res.params = std::move(cur);
  return res;
}

inline double mean_total_loss(const ModelParams& m, const std::vector<TrainExample>& examples) {
  double s = 0.0;
  for (const auto& ex : examples) s += total_loss(ex, forward(m, ex.input));
  return examples.empty() ? 0.0 : s / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------------------------
// MPK1 checkpoint: "MPK1", u32 version, u32 L, u32 D, u32 manifest bytes, manifest text
// ("name rows cols" per line), then float32 arrays in manifest order.

inline void save_checkpoint(std::ostream& os, const ModelParams& m) {
  std::ostringstream manifest;
  m.for_each([&](const char* name, Eigen::Index r, Eigen::Index c, const double*) {
    manifest << name << ' ' << r << ' ' << c << '\n';
  });
  const std::string text = manifest.str();
  os.write("MPK1", 4);
  detail::put_u32(os, m.version);
  detail::put_u32(os, static_cast<std::uint32_t>(m.num_labels));
  detail::put_u32(os, static_cast<std::uint32_t>(m.dim));
  detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  m.for_each([&](const char*, Eigen::Index r, Eigen::Index c, const double* p) {
    for (Eigen::Index i = 0; i < r * c; ++i) detail::put_f32(os, static_cast<float>(p[i]));
  });
}

inline void save_checkpoint(const std::string& path, const ModelParams& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  save_checkpoint(out, m);
}

inline ModelParams parse_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "MPK1", 4) != 0) throw Error(ErrorKind::Format, "bad MPK1 magic");
  const auto version = detail::get_u32(bytes.data() + 4);
  const auto labels = detail::get_u32(bytes.data() + 8);
  const auto dim = detail::get_u32(bytes.data() + 12);
  const auto text_len = detail::get_u32(bytes.data() + 16);
  if (bytes.size() < 20ull + text_len) throw Error(ErrorKind::Truncation, "checkpoint manifest truncated");
  auto m = ModelParams::zeros(static_cast<int>(dim), static_cast<int>(labels));
  m.version = version;
  std::istringstream manifest(std::string(reinterpret_cast<const char*>(bytes.data() + 20), text_len));
  std::size_t off = 20ull + text_len;
  m.for_each([&](const char* name, Eigen::Index r, Eigen::Index c, double* p) {
    std::string got;
    Eigen::Index gr = 0, gc = 0;
    if (!(manifest >> got >> gr >> gc) || got != name || gr != r || gc != c)
      throw Error(ErrorKind::Format, std::string("checkpoint manifest mismatch at ") + name);
    if (bytes.size() < off + static_cast<std::size_t>(4 * r * c)) throw Error(ErrorKind::Truncation, "checkpoint weights truncated");
    for (Eigen::Index i = 0; i < r * c; ++i, off += 4) p[i] = detail::get_f32(bytes.data() + off);
  });
  if (off != bytes.size()) throw Error(ErrorKind::Format, "trailing bytes after checkpoint weights");
  if (!m.all_finite()) throw Error(ErrorKind::Data, "non-finite checkpoint weight");
  return m;
}

inline ModelParams load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_all(path);
  return parse_checkpoint(bytes);
}

}  // namespace scribe
