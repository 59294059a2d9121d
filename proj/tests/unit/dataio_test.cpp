#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ordirank/dataio.hpp"
#include "ordirank/netpbm.hpp"

using namespace ordirank;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ordirank_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RegionMeans {
  double cup = 0, ring = 0, background = 0;
};

// Mean intensity over pixels whose centre lies inside the cup, in the disc ring, or outside the disc.
RegionMeans region_means(const LabeledImage& img) {
  const auto& m = *img.meta;
  const std::size_t n = img.pixels.dim(1);
  const std::size_t plane = n * n;
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = (x - m.center_x) / m.disc_rx, dy = (y - m.center_y) / m.disc_ry;
      const double r = std::sqrt(dx * dx + dy * dy);
      const int region = r < m.cdr ? 0 : (r < 1.0 ? 1 : 2);
      double v = 0;
      for (std::size_t c = 0; c < 3; ++c) v += img.pixels[c * plane + y * n + x];
      sums[region] += v / 3.0;
      ++counts[region];
    }
  }
  for (std::size_t c : counts) EXPECT_GT(c, 0u);
  return {sums[0] / counts[0], sums[1] / counts[1], sums[2] / counts[2]};
}

Tensor smooth_image(std::size_t n) {
  Tensor t(Shape{3, n, n});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        t[(c * n + y) * n + x] =
            static_cast<float>(0.5 + 0.3 * std::sin(0.1 * x + 0.05 * c) * std::cos(0.08 * y));
      }
    }
  }
  return t;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST(Generator, ThreeImagesOnePerClass) {
  for (std::uint64_t seed : {0ull, 7ull, 123456789ull}) {
    const auto data = generate_synthetic(3, 32, 0.05, seed);
    ASSERT_EQ(data.size(), 3u);
    std::set<int> ranks;
    for (const auto& d : data) ranks.insert(d.label.rank);
    EXPECT_EQ(ranks, (std::set<int>{0, 1, 2}));
  }
}

TEST(Generator, SameSeedIsBitIdentical) {
  const auto a = generate_synthetic(9, 40, 0.1, 42);
  const auto b = generate_synthetic(9, 40, 0.1, 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pixels.values(), b[i].pixels.values());
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_EQ(a[i].id, b[i].id);
  }
}

TEST(Generator, DistinctSeedsDiffer) {
  const auto a = generate_synthetic(6, 32, 0.05, 1);
  const auto b = generate_synthetic(6, 32, 0.05, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NE(a[i].pixels.values(), b[i].pixels.values());
}

TEST(Generator, ValuesInUnitRangeAndCdrInClassRange) {
  for (const auto& img : generate_synthetic(30, 48, 0.2, 5)) {
    EXPECT_EQ(img.pixels.shape(), (Shape{3, 48, 48}));
    for (float v : img.pixels.data()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    const int r = img.label.rank;
    ASSERT_TRUE(img.meta.has_value());
    EXPECT_GE(img.meta->cdr, kCdrBounds[r]);
    EXPECT_LE(img.meta->cdr, kCdrBounds[r + 1]);
  }
}

TEST(Generator, NoiselessRegionsAreOrdered) {
  for (const auto& img : generate_synthetic(60, 64, 0.0, 11)) {
    const auto m = region_means(img);
    EXPECT_GT(m.cup, m.ring) << img.id;
    EXPECT_GT(m.ring, m.background) << img.id;
  }
}

TEST(Generator, NoiseOnlyChangesNoise) {
  const auto clean = generate_synthetic(3, 32, 0.0, 9);
  const auto noisy = generate_synthetic(3, 32, 0.05, 9);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(clean[i].meta->cdr, noisy[i].meta->cdr);
    EXPECT_LT(mean_abs_diff(clean[i].pixels, noisy[i].pixels), 0.06);
  }
}

TEST(Generator, RejectsBadArguments) {
  EXPECT_THROW(generate_synthetic(0, 64, 0.1, 1), ArgumentError);
  EXPECT_THROW(generate_synthetic(3, 31, 0.1, 1), ArgumentError);
  EXPECT_THROW(generate_synthetic(3, 64, -0.1, 1), ArgumentError);
  EXPECT_THROW(generate_synthetic(3, 64, NAN, 1), ArgumentError);
}

TEST(Split, ReferenceCounts) {
  EXPECT_EQ(split_counts(992, SplitSpec{}), (SplitCounts{674, 119, 199}));
  EXPECT_EQ(split_counts(10, SplitSpec{}), (SplitCounts{7, 1, 2}));
}

TEST(Split, PartitionPropertyForAllSizes) {
  for (std::size_t n = 10; n <= 2000; n += (n < 100 ? 1 : 37)) {
    Dataset data;
    for (std::size_t i = 0; i < n; ++i) {
      data.push_back({Tensor(Shape{1}), RankLabel{static_cast<int>(i % 3)}, std::to_string(i), std::nullopt});
    }
    const auto counts = split_counts(n, SplitSpec{});
    const auto s = split(data, SplitSpec{0.2, 0.15, n});
    ASSERT_EQ(s.train.size(), counts.train);
    ASSERT_EQ(s.val.size(), counts.val);
    ASSERT_EQ(s.test.size(), counts.test);
    EXPECT_EQ(counts.test, static_cast<std::size_t>(std::ceil(0.2 * n)));
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& d : *part) ids.insert(d.id);
    }
    ASSERT_EQ(ids.size(), n) << "n=" << n;
  }
}

TEST(Split, SeededAndDeterministic) {
  const auto data = generate_synthetic(30, 32, 0.0, 1);
  const auto a = split(data, SplitSpec{0.2, 0.15, 3});
  const auto b = split(data, SplitSpec{0.2, 0.15, 3});
  const auto c = split(data, SplitSpec{0.2, 0.15, 4});
  auto ids = [](const Dataset& d) {
    std::vector<std::string> out;
    for (const auto& x : d) out.push_back(x.id);
    return out;
  };
  EXPECT_EQ(ids(a.test), ids(b.test));
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_NE(ids(a.train), ids(c.train));
}

TEST(Split, RejectsEmptySplitsAndBadFractions) {
  Dataset tiny(3);
  EXPECT_THROW(split(tiny, SplitSpec{}), ArgumentError);
  EXPECT_THROW(split_counts(100, SplitSpec{0.0, 0.15, 0}), ArgumentError);
  EXPECT_THROW(split_counts(100, SplitSpec{0.2, 1.0, 0}), ArgumentError);
}

TEST(Resize, OwnSizeIsIdentity) {
  const auto img = generate_synthetic(1, 40, 0.1, 3).front();
  const auto r = resize(img, 40);
  EXPECT_EQ(r.pixels.values(), img.pixels.values());
  EXPECT_EQ(r.id, img.id);
  EXPECT_EQ(r.label, img.label);
}

TEST(Resize, ConstantStaysConstant) {
  const Tensor c(Shape{3, 13, 17}, 0.37f);
  for (std::size_t h : {8u, 13u, 31u, 64u}) {
    for (std::size_t w : {8u, 17u, 40u}) {
      const Tensor r = resize_pixels(c, h, w);
      ASSERT_EQ(r.shape(), (Shape{3, h, w}));
      for (float v : r.data()) ASSERT_NEAR(v, 0.37f, 1e-6);
    }
  }
}

TEST(Resize, HalvingBlockCheckerboardGivesMidGray) {
  const std::size_t n = 16;
  Tensor t(Shape{3, n, n});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        // 1-pixel cells tiled into 2x2 blocks: every 2x2 block holds two black and two white pixels.
        t[(c * n + y) * n + x] = ((x + y) % 2 == 0) ? 1.0f : 0.0f;
      }
    }
  }
  const Tensor r = resize_pixels(t, n / 2, n / 2);
  for (float v : r.data()) EXPECT_NEAR(v, 0.5f, 1e-6);
}

TEST(Resize, RejectsDegenerateTarget) {
  const auto img = generate_synthetic(1, 32, 0.0, 3).front();
  EXPECT_THROW(resize(img, 7), ArgumentError);
  EXPECT_THROW(resize_pixels(Tensor(Shape{4, 4}), 8, 8), DimensionError);
}

TEST(Augment, NoZoomNoFlipIsIdentity) {
  const auto img = generate_synthetic(1, 32, 0.1, 3).front();
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto out = augment(img, rng, 0.0, 0.0);
    EXPECT_EQ(out.pixels.values(), img.pixels.values());
  }
}

TEST(Augment, FlipIsInvolution) {
  const auto img = generate_synthetic(1, 32, 0.1, 3).front();
  EXPECT_EQ(flip_horizontal(flip_horizontal(img.pixels)).values(), img.pixels.values());
  EXPECT_NE(flip_horizontal(img.pixels).values(), img.pixels.values());
  Rng a(5), b(5);
  const auto once = augment(img, a, 0.0, 1.0);
  EXPECT_EQ(flip_horizontal(once.pixels).values(), img.pixels.values());
  const auto twice = augment(augment(img, b, 0.0, 1.0), b, 0.0, 1.0);
  EXPECT_EQ(twice.pixels.values(), img.pixels.values());
}

TEST(Augment, ZoomRoundTripOnSmoothImage) {
  const Tensor smooth = smooth_image(64);
  const Tensor back = zoom(zoom(smooth, 1.125), 1.0 / 1.125);
  // Zooming in discards the border, so compare the central region that survives.
  double err = 0;
  std::size_t cnt = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 8; y < 56; ++y) {
      for (std::size_t x = 8; x < 56; ++x) {
        const std::size_t i = (c * 64 + y) * 64 + x;
        err += std::abs(back[i] - smooth[i]);
        ++cnt;
      }
    }
  }
  EXPECT_LT(err / cnt, 0.02);
  EXPECT_LT(mean_abs_diff(back, smooth), 0.02);
}

TEST(Augment, ZoomOneIsIdentityAndKeepsShape) {
  const Tensor smooth = smooth_image(32);
  const Tensor same = zoom(smooth, 1.0);
  for (std::size_t i = 0; i < smooth.size(); ++i) EXPECT_NEAR(same[i], smooth[i], 1e-6);
  EXPECT_EQ(zoom(smooth, 0.9).shape(), smooth.shape());
  EXPECT_EQ(zoom(smooth, 1.1).shape(), smooth.shape());
}

TEST(Augment, PreservesLabelAndShape) {
  const auto data = generate_synthetic(12, 32, 0.1, 8);
  Rng rng(99);
  for (const auto& img : data) {
    for (int k = 0; k < 4; ++k) {
      const auto out = augment(img, rng);
      EXPECT_EQ(out.label, img.label);
      EXPECT_EQ(out.id, img.id);
      EXPECT_EQ(out.pixels.shape(), img.pixels.shape());
      for (float v : out.pixels.data()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Augment, RejectsZoomLimitOutOfRange) {
  const auto img = generate_synthetic(1, 32, 0.1, 3).front();
  Rng rng(1);
  EXPECT_THROW(augment(img, rng, 0.5), ArgumentError);
  EXPECT_THROW(augment(img, rng, -0.1), ArgumentError);
}

TEST(Loader, OnePpmPerClass) {
  const fs::path root = scratch_dir("one_per_class");
  for (int r = 0; r < 3; ++r) {
    fs::create_directories(root / std::to_string(r));
    write_file(root / std::to_string(r) / "img.ppm", write_ppm(Tensor(Shape{3, 2, 2}, 0.5f)));
  }
  const auto loaded = load_directory(root);
  ASSERT_EQ(loaded.images.size(), 3u);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(loaded.images[r].label.rank, r);
  EXPECT_TRUE(loaded.warnings.empty());
}

TEST(Loader, EmptyRootWarns) {
  const auto loaded = load_directory(scratch_dir("empty_root"));
  EXPECT_TRUE(loaded.images.empty());
  EXPECT_FALSE(loaded.warnings.empty());
}

TEST(Loader, EmptyClassDirectoryWarns) {
  const fs::path root = scratch_dir("empty_class");
  for (int r = 0; r < 3; ++r) fs::create_directories(root / std::to_string(r));
  write_file(root / "0" / "a.ppm", write_ppm(Tensor(Shape{3, 1, 1})));
  const auto loaded = load_directory(root);
  EXPECT_EQ(loaded.images.size(), 1u);
  EXPECT_EQ(loaded.warnings.size(), 2u);
}

TEST(Loader, UnreadableFileNamesPath) {
  const fs::path root = scratch_dir("bad_file");
  fs::create_directories(root / "1");
  write_file(root / "1" / "broken.ppm", "P6\n2 2\n255\n\x01");
  try {
    load_directory(root);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.ppm"), std::string::npos);
  }
}

TEST(Loader, MissingRootThrows) { EXPECT_THROW(load_directory("/nonexistent/ordirank/root"), IoError); }

TEST(Loader, WriteReadRoundTripWithinQuantization) {
  const fs::path root = scratch_dir("round_trip");
  const auto data = generate_synthetic(9, 32, 0.1, 4);
  write_directory(data, root);
  const auto loaded = load_directory(root);
  ASSERT_EQ(loaded.images.size(), data.size());
  for (const auto& img : loaded.images) {
    const auto it = std::find_if(data.begin(), data.end(), [&](const auto& d) { return d.id == img.id; });
    ASSERT_NE(it, data.end()) << img.id;
    EXPECT_EQ(img.label, it->label);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      ASSERT_LE(std::abs(img.pixels[i] - it->pixels[i]), 1.0 / 255.0);
    }
  }
}

TEST(Loader, SortedByFilename) {
  const fs::path root = scratch_dir("sorted");
  fs::create_directories(root / "2");
  for (const char* name : {"c", "a", "b"}) {
    write_file(root / "2" / (std::string(name) + ".ppm"), write_ppm(Tensor(Shape{3, 1, 1})));
  }
  const auto loaded = load_directory(root);
  ASSERT_EQ(loaded.images.size(), 3u);
  EXPECT_EQ(loaded.images[0].id, "a");
  EXPECT_EQ(loaded.images[1].id, "b");
  EXPECT_EQ(loaded.images[2].id, "c");
}
