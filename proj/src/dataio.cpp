#include "ordirank/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ordirank/imaging.hpp"
#include "ordirank/netpbm.hpp"

namespace ordirank {

namespace {

constexpr float kBackground[3] = {0.45f, 0.20f, 0.10f};
constexpr float kDisc[3] = {0.88f, 0.62f, 0.38f};
constexpr float kCup[3] = {1.00f, 0.93f, 0.80f};
constexpr int kSupersample = 4;

// Fraction of the pixel (px, py) covered by the ellipse, by kSupersample^2 point sampling.
float ellipse_coverage(double px, double py, double cx, double cy, double rx, double ry) {
  int inside = 0;
  for (int sy = 0; sy < kSupersample; ++sy) {
    for (int sx = 0; sx < kSupersample; ++sx) {
      const double x = px + (sx + 0.5) / kSupersample - 0.5;
      const double y = py + (sy + 0.5) / kSupersample - 0.5;
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) ++inside;
    }
  }
  return static_cast<float>(inside) / (kSupersample * kSupersample);
}

LabeledImage synth_one(int index, int size, double noise_sigma, std::uint64_t seed) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int rank = index % kNumRanks;
  const double cdr = kCdrBounds[rank] + (kCdrBounds[rank + 1] - kCdrBounds[rank]) * uni(rng);

  struct Wave {
    double amp, fx, fy, phase;
  };
  Wave waves[3];
  for (auto& w : waves) {
    const double angle = 2.0 * std::numbers::pi * uni(rng);
    const double cycles = 0.5 + 1.5 * uni(rng);
    w = {0.02 + 0.03 * uni(rng), cycles * std::cos(angle), cycles * std::sin(angle), 2.0 * std::numbers::pi * uni(rng)};
  }

  const double s = static_cast<double>(size);
  SynthMeta meta;
  meta.cdr = cdr;
  meta.center_x = (s - 1.0) / 2.0 + (uni(rng) - 0.5) * 0.16 * s;
  meta.center_y = (s - 1.0) / 2.0 + (uni(rng) - 0.5) * 0.16 * s;
  meta.disc_rx = 0.18 * s;
  meta.disc_ry = meta.disc_rx * (0.95 + 0.10 * uni(rng));
  const double cup_rx = cdr * meta.disc_rx, cup_ry = cdr * meta.disc_ry;

  const auto n = static_cast<std::size_t>(size);
  const std::size_t plane = n * n;
  Tensor pixels(Shape{3, n, n});
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double texture = 0.0;
      for (const auto& w : waves) {
        texture += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / s + w.phase);
      }
      const auto px = static_cast<double>(x), py = static_cast<double>(y);
      const float disc = ellipse_coverage(px, py, meta.center_x, meta.center_y, meta.disc_rx, meta.disc_ry);
      const float cup = ellipse_coverage(px, py, meta.center_x, meta.center_y, cup_rx, cup_ry);
      for (std::size_t c = 0; c < 3; ++c) {
        const float bg = kBackground[c] + static_cast<float>(texture);
        const float rim = kDisc[c] + 0.3f * static_cast<float>(texture);
        float v = bg + (rim - bg) * disc;
        v = v + (kCup[c] - v) * cup;
        pixels[c * plane + y * n + x] = v;
      }
    }
  }
  // Noise is drawn after the geometry so that sigma only changes the noise, not the scene.
  if (noise_sigma > 0.0) {
    for (auto& v : pixels.mutable_data()) v += static_cast<float>(noise(rng));
  }
  for (auto& v : pixels.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);

  char id[32];
  std::snprintf(id, sizeof(id), "synth_%06d", index);
  return LabeledImage{pixels, RankLabel{rank}, id, meta};
}

}  // namespace

Dataset generate_synthetic(int count, int size, double noise_sigma, std::uint64_t seed) {
  if (count <= 0) throw ArgumentError("generate_synthetic: count must be > 0");
  if (size < 32) throw ArgumentError("generate_synthetic: size must be >= 32");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ArgumentError("generate_synthetic: noise_sigma must be finite and >= 0");
  }
  Dataset out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(synth_one(i, size, noise_sigma, seed));
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) ||
      !(spec.val_fraction_of_train > 0.0 && spec.val_fraction_of_train < 1.0)) {
    throw ArgumentError("split: fractions must lie in (0, 1)");
  }
  // The small slack keeps exact products such as 0.2*1000 from rounding up past an integer.
  const auto test = static_cast<std::size_t>(std::ceil(spec.test_fraction * static_cast<double>(n) - 1e-9));
  const std::size_t rest = n - std::min(test, n);
  const auto val = static_cast<std::size_t>(std::llround(spec.val_fraction_of_train * static_cast<double>(rest)));
  SplitCounts counts{rest - std::min(val, rest), val, test};
  if (counts.train == 0 || counts.val == 0 || counts.test == 0 || test > n || val > rest) {
    throw ArgumentError("split: " + std::to_string(n) + " items leave an empty split (train " +
                        std::to_string(counts.train) + ", val " + std::to_string(counts.val) + ", test " +
                        std::to_string(counts.test) + ")");
  }
  return counts;
}

DatasetSplits split(Dataset dataset, const SplitSpec& spec) {
  const SplitCounts counts = split_counts(dataset.size(), spec);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplits out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& item = dataset[order[i]];
    if (i < counts.test) {
      out.test.push_back(std::move(item));
    } else if (i < counts.test + counts.val) {
      out.val.push_back(std::move(item));
    } else {
      out.train.push_back(std::move(item));
    }
  }
  return out;
}

Tensor resize_pixels(const Tensor& pixels, std::size_t height, std::size_t width) {
  if (pixels.rank() != 3) throw DimensionError("resize: expected [C,H,W], got " + shape_str(pixels.shape()));
  const std::size_t channels = pixels.dim(0), sh = pixels.dim(1), sw = pixels.dim(2);
  Tensor out(Shape{channels, height, width});
  for (std::size_t c = 0; c < channels; ++c) {
    const auto src = pixels.data().subspan(c * sh * sw, sh * sw);
    auto dst = out.mutable_data().subspan(c * height * width, height * width);
    if (height >= sh && width >= sw) {
      imaging::resample_corner_aligned(src, sh, sw, dst, height, width);
    } else {
      imaging::resample_half_pixel(src, sh, sw, dst, height, width);
    }
  }
  return out;
}

LabeledImage resize(const LabeledImage& image, int target) {
  if (target < 8) throw ArgumentError("resize: target must be >= 8, got " + std::to_string(target));
  LabeledImage out = image;
  const auto t = static_cast<std::size_t>(target);
  out.pixels = resize_pixels(image.pixels, t, t);
  if (out.meta && image.pixels.dim(2) > 0) {
    const double sx = static_cast<double>(t) / static_cast<double>(image.pixels.dim(2));
    const double sy = static_cast<double>(t) / static_cast<double>(image.pixels.dim(1));
    out.meta->center_x *= sx;
    out.meta->center_y *= sy;
    out.meta->disc_rx *= sx;
    out.meta->disc_ry *= sy;
  }
  return out;
}

Tensor zoom(const Tensor& pixels, double factor) {
  if (!(factor > 0.0)) throw ArgumentError("zoom: factor must be > 0");
  if (pixels.rank() != 3) throw DimensionError("zoom: expected [C,H,W], got " + shape_str(pixels.shape()));
  const std::size_t channels = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out(pixels.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const auto src = pixels.data().subspan(c * h * w, h * w);
    for (std::size_t y = 0; y < h; ++y) {
      const double sy = cy + (static_cast<double>(y) - cy) / factor;
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = cx + (static_cast<double>(x) - cx) / factor;
        out[c * h * w + y * w + x] = imaging::sample_clamped(src, h, w, sy, sx);
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& pixels) {
  if (pixels.rank() != 3) throw DimensionError("flip: expected [C,H,W], got " + shape_str(pixels.shape()));
  const std::size_t rows = pixels.dim(0) * pixels.dim(1), w = pixels.dim(2);
  Tensor out(pixels.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = pixels[r * w + (w - 1 - x)];
  }
  return out;
}

LabeledImage augment(const LabeledImage& image, Rng& rng, double zoom_limit, double flip_prob) {
  if (!(zoom_limit >= 0.0 && zoom_limit < 0.5)) throw ArgumentError("augment: zoom_limit must be in [0, 0.5)");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double factor = 1.0 - zoom_limit + 2.0 * zoom_limit * uni(rng);
  const bool flip = uni(rng) < flip_prob;
  LabeledImage out;
  out.label = image.label;
  out.id = image.id;
  out.meta = image.meta;
  out.pixels = factor == 1.0 ? image.pixels : zoom(image.pixels, factor);
  if (flip) out.pixels = flip_horizontal(out.pixels);
  return out;
}

LoadedDataset load_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  LoadedDataset out;
  for (int rank = 0; rank < kNumRanks; ++rank) {
    const fs::path dir = root / std::to_string(rank);
    if (!fs::is_directory(dir)) {
      out.warnings.push_back("class directory " + dir.string() + " is missing");
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty()) out.warnings.push_back("class directory " + dir.string() + " has no .ppm files");
    for (const auto& file : files) {
      Tensor pixels;
      try {
        pixels = read_ppm(read_file(file));
      } catch (const Error& e) {
        throw IoError("cannot read image " + file.string() + ": " + e.what());
      }
      out.images.push_back({pixels, RankLabel{rank}, file.stem().string(), std::nullopt});
    }
  }
  return out;
}

void write_directory(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  for (int rank = 0; rank < kNumRanks; ++rank) fs::create_directories(root / std::to_string(rank));
  for (const auto& item : dataset) {
    std::string name = item.id;
    std::replace(name.begin(), name.end(), '/', '_');
    write_file(root / std::to_string(item.label.rank) / (name + ".ppm"), write_ppm(item.pixels));
  }
}

}  // namespace ordirank
