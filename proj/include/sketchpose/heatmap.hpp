#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <utility>
#include <vector>

#include "sketchpose/types.hpp"

namespace sketchpose {

/// K-channel joint heatmap stored row-major as float32.
///
/// Cell (r, c) covers input pixels [c*stride, (c+1)*stride) x
/// [r*stride, (r+1)*stride); its center is at ((c+0.5)*stride, (r+0.5)*stride).
struct Heatmap {
  int channels = kNumJoints;
  int height = 0;
  int width = 0;
  double stride = 4.0;  // input pixels per cell
  double sigma = 2.0;   // input pixels
  std::vector<float> data;

  float at(int k, int r, int c) const {
    return data[(static_cast<std::size_t>(k) * height + r) * width + c];
  }
  float& at(int k, int r, int c) {
    return data[(static_cast<std::size_t>(k) * height + r) * width + c];
  }

  double channel_sum(int k) const {
    double s = 0.0;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) s += at(k, r, c);
    return s;
  }
};

inline constexpr int kDefaultHeatmapHeight = kFrameHeight / 4;
inline constexpr int kDefaultHeatmapWidth = kFrameWidth / 4;

/// Renders one Gaussian per included joint; excluded joints give zero channels.
inline Heatmap encode_heatmap(const Pose2D& pose, const std::array<bool, kNumJoints>& included,
                              int height = kDefaultHeatmapHeight,
                              int width = kDefaultHeatmapWidth, double stride = 4.0,
                              double sigma = 2.0) {
  if (!(sigma > 0.0)) throw ValidationError("heatmap sigma must be positive");
  if (height <= 0 || width <= 0 || !(stride > 0.0))
    throw ValidationError("heatmap dimensions must be positive");
  Heatmap hm;
  hm.height = height;
  hm.width = width;
  hm.stride = stride;
  hm.sigma = sigma;
  hm.data.assign(static_cast<std::size_t>(kNumJoints) * height * width, 0.0f);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int k = 0; k < kNumJoints; ++k) {
    if (!included[k]) continue;
    const Vec2& j = pose.joints[k];
    // Separable: exp(-(du^2 + dv^2) * inv) = gx(c) * gy(r).
    std::vector<double> gx(width), gy(height);
    for (int c = 0; c < width; ++c) {
      const double du = (c + 0.5) * stride - j.x();
      gx[c] = std::exp(-du * du * inv);
    }
    for (int r = 0; r < height; ++r) {
      const double dv = (r + 0.5) * stride - j.y();
      gy[r] = std::exp(-dv * dv * inv);
    }
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) hm.at(k, r, c) = static_cast<float>(gy[r] * gx[c]);
  }
  return hm;
}

namespace detail {

// Sub-cell position of a peak at index `i` along one axis, given an accessor
// over that axis. A parabola through the log values of three consecutive
// cells recovers the mean of a sampled Gaussian exactly; when a value has
// underflowed to zero we fall back to a quarter-cell shift toward the larger
// neighbor.
template <typename Get>
double refine_peak(int i, int n, Get get) {
  if (n >= 3) {
    const int m = std::clamp(i, 1, n - 2);
    const double a = get(m - 1), b = get(m), c = get(m + 1);
    if (a > 0.0 && b > 0.0 && c > 0.0) {
      const double la = std::log(a), lb = std::log(b), lc = std::log(c);
      const double denom = la - 2.0 * lb + lc;
      if (denom < 0.0) {
        const double off = 0.5 * (la - lc) / denom;
        const double pos = m + off;
        if (std::abs(pos - i) <= 1.0) return pos;
      }
    }
  }
  const double left = i > 0 ? get(i - 1) : 0.0;
  const double right = i + 1 < n ? get(i + 1) : 0.0;
  if (right > left) return i + 0.25;
  if (left > right) return i - 0.25;
  return i;
}

}  // namespace detail

/// Per-channel argmax with sub-cell refinement, mapped back to input pixels.
/// Returns the joints and the peak value of each channel as confidence.
inline std::pair<Pose2D, std::array<double, kNumJoints>> decode_heatmap(const Heatmap& hm) {
  Pose2D pose;
  std::array<double, kNumJoints> conf{};
  for (int k = 0; k < hm.channels && k < kNumJoints; ++k) {
    int best_r = 0, best_c = 0;
    float best = 0.0f;
    for (int r = 0; r < hm.height; ++r)
      for (int c = 0; c < hm.width; ++c)
        if (hm.at(k, r, c) > best) {
          best = hm.at(k, r, c);
          best_r = r;
          best_c = c;
        }
    if (best <= 0.0f) {
      pose.joints[k] = Vec2::Zero();
      conf[k] = 0.0;
      continue;
    }
    const double cx = detail::refine_peak(best_c, hm.width,
                                          [&](int c) { return double(hm.at(k, best_r, c)); });
    const double cy = detail::refine_peak(best_r, hm.height,
                                          [&](int r) { return double(hm.at(k, r, best_c)); });
    pose.joints[k] = {(cx + 0.5) * hm.stride, (cy + 0.5) * hm.stride};
    conf[k] = best;
  }
  return {pose, conf};
}

// ---------------------------------------------------------------------------
// Binary blob: 16-byte header (uint32 K, uint32 H', uint32 W', float32 stride)
// followed by K*H'*W' float32 values, all little-endian, row-major.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF),
                     char((v >> 24) & 0xFF)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("heatmap blob truncated");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void write_heatmap_blob(std::ostream& os, const Heatmap& hm) {
  detail::put_u32(os, static_cast<std::uint32_t>(hm.channels));
  detail::put_u32(os, static_cast<std::uint32_t>(hm.height));
  detail::put_u32(os, static_cast<std::uint32_t>(hm.width));
  detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(hm.stride)));
  for (float v : hm.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw std::runtime_error("failed to write heatmap blob");
}

inline Heatmap read_heatmap_blob(std::istream& is) {
  Heatmap hm;
  hm.channels = static_cast<int>(detail::get_u32(is));
  hm.height = static_cast<int>(detail::get_u32(is));
  hm.width = static_cast<int>(detail::get_u32(is));
  hm.stride = std::bit_cast<float>(detail::get_u32(is));
  if (hm.channels != kNumJoints || hm.height <= 0 || hm.width <= 0 || !(hm.stride > 0.0))
    throw std::runtime_error("heatmap blob has an invalid header");
  hm.data.resize(static_cast<std::size_t>(hm.channels) * hm.height * hm.width);
  for (float& v : hm.data) v = std::bit_cast<float>(detail::get_u32(is));
  // sigma is not part of the blob.
  hm.sigma = 0.0;
  return hm;
}

}  // namespace sketchpose
