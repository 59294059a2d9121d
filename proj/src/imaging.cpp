#include "ordirank/imaging.hpp"

#include <algorithm>
#include <cmath>

namespace ordirank::imaging {

float sample_clamped(std::span<const float> src, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const auto fy = static_cast<float>(y - static_cast<double>(y0));
  const auto fx = static_cast<float>(x - static_cast<double>(x0));
  const float p00 = src[y0 * w + x0], p01 = src[y0 * w + x1];
  const float p10 = src[y1 * w + x0], p11 = src[y1 * w + x1];
  // a + (b - a) * f keeps constant regions exact.
  const float top = p00 + (p01 - p00) * fx;
  const float bottom = p10 + (p11 - p10) * fx;
  return top + (bottom - top) * fy;
}

void resample_corner_aligned(std::span<const float> src, std::size_t src_h, std::size_t src_w, std::span<float> dst,
                             std::size_t dst_h, std::size_t dst_w) {
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double sy = dst_h > 1 ? static_cast<double>(y * (src_h - 1)) / static_cast<double>(dst_h - 1) : 0.0;
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double sx = dst_w > 1 ? static_cast<double>(x * (src_w - 1)) / static_cast<double>(dst_w - 1) : 0.0;
      dst[y * dst_w + x] = sample_clamped(src, src_h, src_w, sy, sx);
    }
  }
}

void resample_half_pixel(std::span<const float> src, std::size_t src_h, std::size_t src_w, std::span<float> dst,
                         std::size_t dst_h, std::size_t dst_w) {
  const double ry = static_cast<double>(src_h) / static_cast<double>(dst_h);
  const double rx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double sy = (static_cast<double>(y) + 0.5) * ry - 0.5;
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) * rx - 0.5;
      dst[y * dst_w + x] = sample_clamped(src, src_h, src_w, sy, sx);
    }
  }
}

}  // namespace ordirank::imaging
