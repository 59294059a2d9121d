#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ordirank/ordinal.hpp"
#include "ordirank/random.hpp"
#include "ordirank/tensor.hpp"

namespace ordirank {

// Geometry the synthetic generator used for one image (pixel units).
struct SynthMeta {
  double cdr = 0.0;
  double center_x = 0.0, center_y = 0.0;
  double disc_rx = 0.0, disc_ry = 0.0;
};

struct LabeledImage {
  Tensor pixels;  // [3, H, W] in [0, 1]
  RankLabel label;
  std::string id;
  std::optional<SynthMeta> meta;
};

using Dataset = std::vector<LabeledImage>;

struct SplitSpec {
  double test_fraction = 0.2;
  double val_fraction_of_train = 0.15;
  std::uint64_t seed = 0;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitCounts&) const = default;
};

struct DatasetSplits {
  Dataset train, val, test;
};

// Class CDR ranges: normal [0.2,0.4), suspicious [0.4,0.6), glaucoma [0.6,0.85].
inline constexpr double kCdrBounds[4] = {0.2, 0.4, 0.6, 0.85};

/**
 * Desk-scale stand-in for fundus photographs: a low-frequency reddish
 * background, a bright elliptical "disc" at a jittered centre and a brighter
 * concentric "cup" whose radius is CDR times the disc radius, plus Gaussian
 * pixel noise. Labels cycle 0,1,2,... and each image is derived from its own
 * seed mix_seed(seed, index), so output depends only on the arguments.
 */
Dataset generate_synthetic(int count, int size, double noise_sigma, std::uint64_t seed);

// test = ceil(test_fraction*n), val = round(val_fraction*(n - test)), train = rest.
SplitCounts split_counts(std::size_t n, const SplitSpec& spec);
// Seeded shuffle, then partition by split_counts. Throws ArgumentError if a split would be empty.
DatasetSplits split(Dataset dataset, const SplitSpec& spec);

// Bilinear resampling of every channel; corner-aligned when enlarging, pixel-centre aligned when shrinking.
Tensor resize_pixels(const Tensor& pixels, std::size_t height, std::size_t width);
LabeledImage resize(const LabeledImage& image, int target);

// Scales content about the image centre by `factor` (>1 zooms in); edges replicate.
Tensor zoom(const Tensor& pixels, double factor);
Tensor flip_horizontal(const Tensor& pixels);

// Random zoom in [1-zoom_limit, 1+zoom_limit], then horizontal flip with probability flip_prob.
// Draws the zoom factor, then the flip decision, from rng.
LabeledImage augment(const LabeledImage& image, Rng& rng, double zoom_limit = 0.125, double flip_prob = 0.5);

struct LoadedDataset {
  Dataset images;
  std::vector<std::string> warnings;
};

// Reads root/{0,1,2}/*.ppm, sorted by filename. Missing or empty class
// directories produce warnings; an unreadable file throws IoError naming it.
LoadedDataset load_directory(const std::filesystem::path& root);

// Writes root/<rank>/<id>.ppm for every image ('/' in ids becomes '_').
void write_directory(const Dataset& dataset, const std::filesystem::path& root);

}  // namespace ordirank
