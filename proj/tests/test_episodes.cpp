#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fpml/episodes.hpp"
#include "fpml/errors.hpp"

using namespace fpml;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec(const std::string& domain = "A") {
  SyntheticSpec s;
  s.domain = domain;
  s.num_classes = 6;
  s.samples_per_class = 20;
  s.image_size = 16;
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fpml_episodes_" + name);
  fs::remove_all(p);
  return p;
}

double channel_mean(const Dataset& ds, int c) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& cls : ds.samples) {
    for (const auto& img : cls) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          s += img.at(c, y, x);
          ++n;
        }
      }
    }
  }
  return s / n;
}

}  // namespace

TEST(Synthetic, SeededDeterminism) {
  auto spec = small_spec();
  spec.num_classes = 5;
  spec.samples_per_class = 40;
  const Dataset a = make_synthetic(spec, 7);
  const Dataset b = make_synthetic(spec, 7);
  ASSERT_EQ(a.num_classes(), 5);
  for (int c = 0; c < 5; ++c) {
    ASSERT_EQ(a.samples[c].size(), 40u);
    for (int i = 0; i < 40; ++i) EXPECT_EQ(a.samples[c][i].pixels, b.samples[c][i].pixels);
  }
  const Dataset d = make_synthetic(spec, 8);
  EXPECT_NE(a.samples[0][0].pixels, d.samples[0][0].pixels);
}

TEST(Synthetic, DomainsShareLayoutsButNotStyle) {
  auto a = small_spec("A");
  auto b = small_spec("B");
  for (auto* s : {&a, &b}) {
    s->texture_strength = 0;
    s->color_spread = 0;
  }
  a.background_mean[0] = a.background_mean[1] = a.background_mean[2] = 0.1;
  a.foreground_mean[0] = a.foreground_mean[1] = a.foreground_mean[2] = 0.9;
  b.background = Background::checker;
  b.background_mean[0] = 0.8;
  b.foreground_mean[0] = 0.2;
  const Dataset da = make_synthetic(a, 3);
  const Dataset db = make_synthetic(b, 3);
  for (int c = 0; c < a.num_classes; ++c) {
    for (int i = 0; i < 5; ++i) {
      const Image& ia = da.samples[c][i];
      const Image& ib = db.samples[c][i];
      EXPECT_NE(ia.pixels, ib.pixels);
      for (int y = 0; y < ia.height; ++y) {
        for (int x = 0; x < ia.width; ++x) {
          // Fully covered pixels sit at the foreground value in both domains.
          EXPECT_EQ(std::abs(ia.at(0, y, x) - 0.9) < 1e-9, std::abs(ib.at(0, y, x) - 0.2) < 1e-9);
        }
      }
    }
  }
}

TEST(Synthetic, BrightnessOffsetShiftsChannelMeans) {
  auto a = small_spec("A");
  auto b = small_spec("B");
  for (auto* s : {&a, &b}) {
    s->color_spread = 0.05;
    s->texture_strength = 0.05;
    for (int c = 0; c < 3; ++c) {
      s->background_mean[c] = 0.4;
      s->foreground_mean[c] = 0.55;
    }
  }
  // Same domain tag keeps the style draws equal, isolating the offset.
  b.domain = "A";
  b.brightness_offset = 0.1;
  const Dataset da = make_synthetic(a, 5);
  const Dataset db = make_synthetic(b, 5);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(channel_mean(db, c) - channel_mean(da, c), 0.1, 1e-9);
}

TEST(Synthetic, RejectsBadSpecs) {
  auto s = small_spec();
  s.num_classes = 3;
  s.episode_way = 5;
  EXPECT_THROW(make_synthetic(s, 1), ConfigError);
  s = small_spec();
  s.class_offset = 20;
  EXPECT_THROW(make_synthetic(s, 1), ConfigError);
  EXPECT_EQ(synthetic_class_name(0), synthetic_class_name(12).substr(5));
}

TEST(Sampling, PaperShapes) {
  const Dataset ds = make_synthetic(small_spec(), 1);
  Rng rng(1);
  const Episode e1 = sample_episode(ds, 5, 1, 15, rng);
  EXPECT_EQ(e1.support.size(), 5u);
  EXPECT_EQ(e1.query.size(), 75u);
  const Episode e5 = sample_episode(ds, 5, 5, 15, rng);
  EXPECT_EQ(e5.support.size(), 25u);
  EXPECT_EQ(e5.query.size(), 75u);
}

TEST(Sampling, BalanceDisjointnessAndBijection) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 5));
    const int k = 1 + static_cast<int>(uniform_index(rng, 5));
    const int m = 1 + static_cast<int>(uniform_index(rng, 20 - k));
    const Episode ep = sample_episode(ds, n, k, m, rng);
    std::vector<int> ks(n, 0), ms(n, 0);
    std::set<std::pair<int, int>> seen;
    std::map<int, int> local_to_class;
    for (const auto& it : ep.support) {
      ++ks[it.label];
      EXPECT_TRUE(seen.insert({it.ref.cls, it.ref.index}).second);
      local_to_class[it.label] = it.ref.cls;
    }
    for (const auto& it : ep.query) {
      ++ms[it.label];
      EXPECT_TRUE(seen.insert({it.ref.cls, it.ref.index}).second);
      EXPECT_EQ(local_to_class.at(it.label), it.ref.cls);
    }
    std::set<int> classes;
    for (int l = 0; l < n; ++l) {
      EXPECT_EQ(ks[l], k);
      EXPECT_EQ(ms[l], m);
      classes.insert(local_to_class.at(l));
      EXPECT_EQ(ep.class_map[l], ds.classes[local_to_class.at(l)]);
    }
    EXPECT_EQ(classes.size(), static_cast<std::size_t>(n));
  }
}

TEST(Sampling, SameSeedSameEpisode) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  Rng a(5), b(5);
  const Episode ea = sample_episode(ds, 5, 3, 4, a);
  const Episode eb = sample_episode(ds, 5, 3, 4, b);
  for (std::size_t i = 0; i < ea.support.size(); ++i) EXPECT_EQ(ea.support[i].ref, eb.support[i].ref);
  for (std::size_t i = 0; i < ea.query.size(); ++i) EXPECT_EQ(ea.query[i].ref, eb.query[i].ref);
}

TEST(Sampling, InsufficientDataRaises) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  Rng rng(1);
  EXPECT_THROW(sample_episode(ds, 7, 1, 1, rng), SamplingError);
  EXPECT_THROW(sample_episode(ds, 5, 10, 11, rng), SamplingError);
  EXPECT_THROW(ds.validate_for(5, 10, 11), SamplingError);
}

TEST(Augment, ForcedFlipTwiceIsIdentity) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  AugmentPolicy p = AugmentPolicy::resize_only(16, 16);
  p.hflip_prob = 1.0;
  Rng rng(3);
  const Image& src = ds.samples[0][0];
  const Image once = augment(src, p, rng);
  EXPECT_NE(once.pixels, src.pixels);
  const Image twice = augment(once, p, rng);
  EXPECT_EQ(twice.pixels, src.pixels);
}

TEST(Augment, DegeneratePolicyIsResize) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  const AugmentPolicy p = AugmentPolicy::resize_only(24, 20);
  Rng rng(3);
  const Image out = augment(ds.samples[1][2], p, rng);
  EXPECT_EQ(out.height, 24);
  EXPECT_EQ(out.width, 20);
  EXPECT_EQ(out.pixels, resize_bilinear(ds.samples[1][2], 24, 20).pixels);
}

TEST(Augment, BrightnessStaysInConfiguredRange) {
  const Dataset ds = make_synthetic(small_spec(), 2);
  AugmentPolicy p = AugmentPolicy::resize_only(16, 16);
  p.brightness = 0.3;
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Image& src = ds.samples[trial % 6][trial % 20];
    const Image out = augment(src, p, rng);
    for (std::size_t i = 0; i < src.pixels.size(); ++i) {
      EXPECT_GE(out.pixels[i], 0.0);
      EXPECT_LE(out.pixels[i], 1.0);
      EXPECT_GE(out.pixels[i], std::min(1.0, src.pixels[i] * 0.7) - 1e-12);
      EXPECT_LE(out.pixels[i], std::min(1.0, src.pixels[i] * 1.3) + 1e-12);
    }
  }
}

TEST(Augment, InvalidPolicy) {
  AugmentPolicy p;
  p.hflip_prob = 1.5;
  EXPECT_THROW(p.validate(), RangeError);
  p = AugmentPolicy();
  p.height = 0;
  EXPECT_THROW(p.validate(), RangeError);
}

TEST(Dataset, LoadFromDirectoryTree) {
  const fs::path root = scratch("load");
  auto spec = small_spec();
  spec.num_classes = 3;
  spec.samples_per_class = 10;
  Dataset ds = make_synthetic(spec, 4);
  ds.split = Split::train;
  write_dataset(ds, root);
  const Dataset a = load_dataset(root, Split::train);
  const Dataset b = load_dataset(root, Split::train);
  ASSERT_EQ(a.num_classes(), 3);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(a.samples[c].size(), 10u);
    EXPECT_EQ(a.classes[c], b.classes[c]);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.samples[c][i].source, b.samples[c][i].source);
  }
  EXPECT_TRUE(std::is_sorted(a.classes.begin(), a.classes.end()));
  EXPECT_LT(max_abs_diff(a.samples[0][0], ds.samples[0][0]), 0.5 / 255 + 1e-9);
}

TEST(Dataset, IngestionErrors) {
  EXPECT_THROW(load_dataset(scratch("missing"), Split::train), DataError);
  const fs::path root = scratch("empty_class");
  fs::create_directories(root / "train" / "zebra");
  try {
    load_dataset(root, Split::train);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zebra"), std::string::npos);
  }
  {
    std::ofstream(root / "train" / "zebra" / "broken.png") << "not a png";
  }
  try {
    load_dataset(root, Split::train);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}
