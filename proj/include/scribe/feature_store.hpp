#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "scribe/error.hpp"

namespace scribe {

// Half-open frame range [begin, end).
struct FrameInterval {
  int begin = 0;
  int end = 0;

  int length() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(int t) const { return t >= begin && t < end; }
  bool contains(const FrameInterval& o) const { return o.begin >= begin && o.end <= end; }

  friend bool operator==(const FrameInterval&, const FrameInterval&) = default;
};

// Immutable T x D per-frame embedding matrix, row-major.
class FeatureSequence {
 public:
  FeatureSequence() = default;

  FeatureSequence(int num_frames, int dim, std::vector<float> values)
      : num_frames_(num_frames), dim_(dim), values_(std::move(values)) {
    if (num_frames_ < 2) throw Error(ErrorKind::Data, "feature sequence needs at least 2 frames");
    if (dim_ < 1) throw Error(ErrorKind::Data, "feature dimension must be positive");
    if (values_.size() != static_cast<std::size_t>(num_frames_) * static_cast<std::size_t>(dim_))
      throw Error(ErrorKind::Data, "feature payload does not match T*D");
    for (float v : values_)
      if (!std::isfinite(v)) throw Error(ErrorKind::Data, "non-finite feature value");
  }

  int num_frames() const { return num_frames_; }
  int dim() const { return dim_; }
  std::span<const float> values() const { return values_; }

  std::span<const float> row(int t) const {
    return {values_.data() + static_cast<std::size_t>(t) * dim_, static_cast<std::size_t>(dim_)};
  }

  FrameInterval full_range() const { return {0, num_frames_}; }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;

 private:
  int num_frames_ = 0;
  int dim_ = 0;
  std::vector<float> values_;
};

// Min-max normalized first-difference energy over a window. values[i] is frame window.begin + i.
struct EnergySignal {
  FrameInterval window;
  std::vector<double> values;

  double at(int t) const { return values.at(static_cast<std::size_t>(t - window.begin)); }
};

namespace detail {

inline void require_window(const FeatureSequence& f, const FrameInterval& w) {
  if (w.begin < 0 || w.end > f.num_frames() || w.empty())
    throw Error(ErrorKind::Argument, "frame interval [" + std::to_string(w.begin) + "," +
                                         std::to_string(w.end) + ") outside [0," +
                                         std::to_string(f.num_frames()) + ")");
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline constexpr char kFeatureMagic[4] = {'F', 'T', 'S', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline FeatureSequence parse_features(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0)
    throw Error(ErrorKind::Format, "bad FTS1 magic");
  if (detail::get_u32(bytes.data() + 4) != kFeatureVersion)
    throw Error(ErrorKind::Format, "unsupported FTS1 version");
  const std::uint64_t t = detail::get_u32(bytes.data() + 8);
  const std::uint64_t d = detail::get_u32(bytes.data() + 12);
  const std::uint64_t expected = t * d * 4;
  if (bytes.size() - 16 != expected)
    throw Error(ErrorKind::Truncation, "declared " + std::to_string(t) + "x" + std::to_string(d) +
                                           " floats but payload holds " +
                                           std::to_string((bytes.size() - 16) / 4));
  std::vector<float> values(t * d);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::get_f32(bytes.data() + 16 + 4 * i);
  return FeatureSequence(static_cast<int>(t), static_cast<int>(d), std::move(values));
}

inline FeatureSequence load_features(const std::string& path) {
  const auto bytes = detail::read_all(path);
  return parse_features(bytes);
}

inline void write_features(std::ostream& os, const FeatureSequence& f) {
  os.write(kFeatureMagic, 4);
  detail::put_u32(os, kFeatureVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(f.num_frames()));
  detail::put_u32(os, static_cast<std::uint32_t>(f.dim()));
  for (float v : f.values()) detail::put_f32(os, v);
}

inline void write_features(const std::string& path, const FeatureSequence& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  write_features(out, f);
}

inline EnergySignal boundary_energy(const FeatureSequence& f, FrameInterval window) {
  detail::require_window(f, window);
  if (window.length() < 2) throw Error(ErrorKind::Argument, "energy window needs at least 2 frames");
  EnergySignal out{window, std::vector<double>(static_cast<std::size_t>(window.length()), 0.0)};
  double hi = 0.0;
  for (int t = window.begin + 1; t < window.end; ++t) {
    const auto a = f.row(t - 1);
    const auto b = f.row(t);
    double ss = 0.0;
    for (int j = 0; j < f.dim(); ++j) {
      const double d = static_cast<double>(b[j]) - static_cast<double>(a[j]);
      ss += d * d;
    }
    const double e = std::sqrt(ss);
    out.values[static_cast<std::size_t>(t - window.begin)] = e;
    hi = std::max(hi, e);
  }
  // The first frame contributes 0, so the window minimum is always 0.
  if (hi > 0.0)
    for (double& v : out.values) v /= hi;
  return out;
}

inline FeatureSequence window_slice(const FeatureSequence& f, FrameInterval w) {
  detail::require_window(f, w);
  const auto d = static_cast<std::size_t>(f.dim());
  const auto first = f.values().begin() + static_cast<std::ptrdiff_t>(w.begin * d);
  std::vector<float> rows(first, first + static_cast<std::ptrdiff_t>(w.length() * d));
  if (w.length() < 2) {
    // A one-frame slice cannot satisfy the T >= 2 invariant; callers needing single rows use row().
    throw Error(ErrorKind::Argument, "slice must cover at least 2 frames");
  }
  return FeatureSequence(w.length(), f.dim(), std::move(rows));
}

}  // namespace scribe
