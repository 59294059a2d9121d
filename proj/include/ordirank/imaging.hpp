#pragma once

#include <cstddef>
#include <span>

namespace ordirank::imaging {

// Bilinear resampling of one plane. Corner-aligned: the four corner samples of
// source and destination coincide, so constants and same-size resampling are exact.
void resample_corner_aligned(std::span<const float> src, std::size_t src_h, std::size_t src_w, std::span<float> dst,
                             std::size_t dst_h, std::size_t dst_w);

// Bilinear resampling with pixel-centre alignment; used for shrinking, where a
// factor-2 reduction averages each 2x2 block.
void resample_half_pixel(std::span<const float> src, std::size_t src_h, std::size_t src_w, std::span<float> dst,
                         std::size_t dst_h, std::size_t dst_w);

// Bilinear sample at fractional (y, x), coordinates clamped into the plane (edge replication).
float sample_clamped(std::span<const float> src, std::size_t h, std::size_t w, double y, double x);

}  // namespace ordirank::imaging
