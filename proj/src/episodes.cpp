#include "fpml/episodes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "fpml/errors.hpp"

namespace fpml {

namespace fs = std::filesystem;

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::size_t Dataset::min_class_size() const {
  std::size_t m = samples.empty() ? 0 : samples.front().size();
  for (const auto& s : samples) m = std::min(m, s.size());
  return m;
}

std::size_t Dataset::total_samples() const {
  std::size_t t = 0;
  for (const auto& s : samples) t += s.size();
  return t;
}

void Dataset::validate_for(int n_way, int k_shot, int m_query) const {
  if (n_way < 1 || k_shot < 1 || m_query < 0) {
    throw SamplingError("episode shape must have n_way >= 1, k_shot >= 1, m_query >= 0");
  }
  if (num_classes() < n_way) {
    throw SamplingError("dataset '" + name + "' has " + std::to_string(num_classes()) +
                        " classes, episode needs " + std::to_string(n_way));
  }
  const auto need = static_cast<std::size_t>(k_shot + m_query);
  for (int c = 0; c < num_classes(); ++c) {
    if (samples[c].size() < need) {
      throw SamplingError("class '" + classes[c] + "' of dataset '" + name + "' has " +
                          std::to_string(samples[c].size()) + " samples, episode needs " +
                          std::to_string(need));
    }
  }
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

Dataset load_dataset(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' not found");
  const fs::path split_dir = root / to_string(split);
  if (!fs::is_directory(split_dir)) {
    throw DataError("dataset split directory '" + split_dir.string() + "' not found");
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("no class directories under '" + split_dir.string() + "'");

  Dataset ds;
  ds.name = root.filename().string();
  if (ds.name.empty()) ds.name = root.parent_path().filename().string();
  ds.domain = ds.name;
  ds.split = split;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    const std::string cls = dir.filename().string();
    if (files.empty()) throw DataError("class '" + cls + "' in '" + split_dir.string() + "' is empty");
    const int label = ds.num_classes();
    ds.classes.push_back(cls);
    auto& bucket = ds.samples.emplace_back();
    for (const auto& f : files) {
      Image img = read_image(f);
      img.label = label;
      img.domain = ds.domain;
      bucket.push_back(std::move(img));
    }
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& root) {
  const fs::path split_dir = root / to_string(dataset.split);
  for (int c = 0; c < dataset.num_classes(); ++c) {
    const fs::path dir = split_dir / dataset.classes[c];
    fs::create_directories(dir);
    for (std::size_t i = 0; i < dataset.samples[c].size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu.png", i);
      write_image(dataset.samples[c][i], dir / name);
    }
  }
}

Background parse_background(const std::string& s) {
  if (s == "smooth") return Background::smooth;
  if (s == "stripes") return Background::stripes;
  if (s == "noise") return Background::noise;
  if (s == "checker") return Background::checker;
  throw ConfigError("unknown background '" + s + "' (expected smooth|stripes|noise|checker)");
}

std::string to_string(Background b) {
  switch (b) {
    case Background::smooth: return "smooth";
    case Background::stripes: return "stripes";
    case Background::noise: return "noise";
    case Background::checker: return "checker";
  }
  return "smooth";
}

namespace {

constexpr std::array<const char*, 12> kShapeNames = {
    "disk", "ring", "square", "frame", "triangle", "plus",
    "cross", "hbar", "vbar", "diamond", "star", "crescent"};

// Membership test in shape-local coordinates, extent roughly [-1,1]^2.
bool inside_base(int kind, double u, double v) {
  const double r2 = u * u + v * v;
  switch (kind) {
    case 0: return r2 <= 1.0;
    case 1: return r2 <= 1.0 && r2 >= 0.36;
    case 2: return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 3: {
      const double m = std::max(std::abs(u), std::abs(v));
      return m <= 0.9 && m >= 0.55;
    }
    case 4: return v <= 0.7 && v >= -0.9 && std::abs(u) <= 0.9 * (v + 0.9) / 1.6;
    case 5:
      return (std::abs(u) <= 0.28 && std::abs(v) <= 0.95) ||
             (std::abs(v) <= 0.28 && std::abs(u) <= 0.95);
    case 6: {
      const double a = (u + v) * std::numbers::sqrt2 / 2;
      const double b = (u - v) * std::numbers::sqrt2 / 2;
      return (std::abs(a) <= 0.28 && std::abs(b) <= 0.95) ||
             (std::abs(b) <= 0.28 && std::abs(a) <= 0.95);
    }
    case 7: return std::abs(v) <= 0.3 && std::abs(u) <= 0.95;
    case 8: return std::abs(u) <= 0.3 && std::abs(v) <= 0.95;
    case 9: return std::abs(u) + std::abs(v) <= 1.0;
    case 10: {
      const double r = std::sqrt(r2);
      const double t = std::atan2(v, u);
      return r <= 0.55 + 0.4 * std::cos(5.0 * (t + std::numbers::pi / 2));
    }
    case 11: {
      const double du = u - 0.45;
      return r2 <= 1.0 && du * du + v * v > 0.64;
    }
    default: return false;
  }
}

bool inside_shape(int shape_class, double u, double v) {
  const int kind = shape_class % static_cast<int>(kShapeNames.size());
  if (shape_class / static_cast<int>(kShapeNames.size()) == 0) return inside_base(kind, u, v);
  // Second family: a pair of half-size copies side by side.
  constexpr double s = 0.47;
  return inside_base(kind, (u + 0.5) / s, v / s) || inside_base(kind, (u - 0.5) / s, v / s);
}

struct Layout {
  double cx, cy, scale, angle;
};

Layout draw_layout(Rng& rng) {
  Layout l;
  l.cx = uniform(rng, -0.12, 0.12);
  l.cy = uniform(rng, -0.12, 0.12);
  l.scale = uniform(rng, 0.55, 0.75);
  l.angle = uniform(rng, -0.3, 0.3);
  return l;
}

Image render_sample(const SyntheticSpec& spec, int shape_class, int sample, std::uint64_t seed) {
  const int size = spec.image_size;
  Rng layout_rng = make_rng(seed, "synthetic-layout",
                            {static_cast<std::uint64_t>(shape_class),
                             static_cast<std::uint64_t>(sample)});
  const Layout layout = draw_layout(layout_rng);
  Rng style_rng = make_rng(seed, "synthetic-style:" + spec.domain,
                           {static_cast<std::uint64_t>(shape_class),
                            static_cast<std::uint64_t>(sample)});

  double bg1[3], bg2[3], fg[3];
  for (int c = 0; c < 3; ++c) bg1[c] = spec.background_mean[c] + uniform(style_rng, -1, 1) * spec.color_spread;
  for (int c = 0; c < 3; ++c) bg2[c] = spec.background_mean[c] + uniform(style_rng, -1, 1) * spec.color_spread;
  for (int c = 0; c < 3; ++c) fg[c] = spec.foreground_mean[c] + uniform(style_rng, -1, 1) * spec.color_spread;
  const double dir = uniform(style_rng, 0.0, 2.0 * std::numbers::pi);
  const double freq = uniform(style_rng, 3.0, 6.0);
  const double phase = uniform(style_rng, 0.0, 2.0 * std::numbers::pi);
  const int cell = 3 + static_cast<int>(uniform_index(style_rng, 3));

  Image img(3, size, size);
  const double cos_a = std::cos(-layout.angle);
  const double sin_a = std::sin(-layout.angle);
  constexpr int kSuper = 3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double nx = (x + 0.5) / size * 2.0 - 1.0;
      const double ny = (y + 0.5) / size * 2.0 - 1.0;
      double base = 0.0;
      double t = 0.0;
      switch (spec.background) {
        case Background::smooth:
          t = 0.5 + 0.5 * (nx * std::cos(dir) + ny * std::sin(dir)) / std::numbers::sqrt2;
          break;
        case Background::stripes:
          base = spec.texture_strength *
                 std::sin(2 * std::numbers::pi * freq * 0.5 * (nx * std::cos(dir) + ny * std::sin(dir)) + phase);
          break;
        case Background::noise:
          base = spec.texture_strength * uniform(style_rng, -1.0, 1.0);
          break;
        case Background::checker:
          base = (((x / cell) + (y / cell)) % 2 == 0 ? 0.5 : -0.5) * spec.texture_strength;
          break;
      }
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = (x + (sx + 0.5) / kSuper) / size * 2.0 - 1.0 - layout.cx;
          const double py = (y + (sy + 0.5) / kSuper) / size * 2.0 - 1.0 - layout.cy;
          const double u = (px * cos_a - py * sin_a) / layout.scale;
          const double v = (px * sin_a + py * cos_a) / layout.scale;
          if (inside_shape(shape_class, u, v)) ++hits;
        }
      }
      const double alpha = static_cast<double>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c) {
        const double bg = (spec.background == Background::smooth)
                              ? bg1[c] + (bg2[c] - bg1[c]) * t
                              : bg1[c] + base;
        img.at(c, y, x) = bg * (1 - alpha) + fg[c] * alpha + spec.brightness_offset;
      }
    }
  }
  clamp01_inplace(img);
  img.domain = spec.domain;
  img.source = "synthetic:" + spec.name + "/" + spec.domain + "/" + std::to_string(shape_class) +
               "/" + std::to_string(sample);
  return img;
}

}  // namespace

std::string synthetic_class_name(int shape_class) {
  const int kinds = static_cast<int>(kShapeNames.size());
  std::string base = kShapeNames[shape_class % kinds];
  return shape_class / kinds == 0 ? base : "pair-" + base;
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.samples_per_class < 1 || spec.image_size < 4) {
    throw ConfigError("synthetic spec needs classes >= 1, samples >= 1, image_size >= 4");
  }
  if (spec.episode_way > 0 && spec.num_classes < spec.episode_way) {
    throw ConfigError("synthetic dataset '" + spec.name + "' has " +
                      std::to_string(spec.num_classes) + " classes, fewer than the episode way " +
                      std::to_string(spec.episode_way));
  }
  if (spec.class_offset < 0 || spec.class_offset + spec.num_classes > kSyntheticShapeClasses) {
    throw ConfigError("synthetic classes [" + std::to_string(spec.class_offset) + ", " +
                      std::to_string(spec.class_offset + spec.num_classes) +
                      ") exceed the " + std::to_string(kSyntheticShapeClasses) +
                      " available shape classes");
  }
  Dataset ds;
  ds.name = spec.name;
  ds.domain = spec.domain;
  ds.split = Split::train;
  for (int c = 0; c < spec.num_classes; ++c) {
    const int shape_class = spec.class_offset + c;
    ds.classes.push_back(synthetic_class_name(shape_class));
    auto& bucket = ds.samples.emplace_back();
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Image img = render_sample(spec, shape_class, i, seed);
      img.label = c;
      bucket.push_back(std::move(img));
    }
  }
  return ds;
}

Episode sample_episode(const Dataset& dataset, int n_way, int k_shot, int m_query, Rng& rng) {
  dataset.validate_for(n_way, k_shot, m_query);
  std::vector<int> classes(dataset.num_classes());
  for (int i = 0; i < dataset.num_classes(); ++i) classes[i] = i;
  // Partial Fisher-Yates: first n_way entries are the chosen classes.
  for (int i = 0; i < n_way; ++i) {
    const auto j = i + static_cast<int>(uniform_index(rng, classes.size() - i));
    std::swap(classes[i], classes[j]);
  }
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.m_query = m_query;
  std::vector<std::vector<int>> picks(n_way);
  for (int local = 0; local < n_way; ++local) {
    const int cls = classes[local];
    ep.class_map.push_back(dataset.classes[cls]);
    std::vector<int> idx(dataset.samples[cls].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    const int need = k_shot + m_query;
    for (int i = 0; i < need; ++i) {
      const auto j = i + static_cast<int>(uniform_index(rng, idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(need);
    picks[local] = std::move(idx);
  }
  for (int local = 0; local < n_way; ++local) {
    const int cls = classes[local];
    for (int i = 0; i < k_shot + m_query; ++i) {
      const int s = picks[local][i];
      EpisodeItem item{dataset.samples[cls][s], local, SampleRef{cls, s}};
      (i < k_shot ? ep.support : ep.query).push_back(std::move(item));
    }
  }
  return ep;
}

void AugmentPolicy::validate() const {
  if (height < 1 || width < 1) throw RangeError("augment: target size must be positive");
  if (brightness < 0 || contrast < 0 || saturation < 0 || brightness > 1 || contrast > 1 ||
      saturation > 1) {
    throw RangeError("augment: jitter ranges must lie in [0,1]");
  }
  if (!(hflip_prob >= 0 && hflip_prob <= 1)) throw RangeError("augment: hflip_prob outside [0,1]");
}

AugmentPolicy AugmentPolicy::resize_only(int height, int width) {
  AugmentPolicy p;
  p.height = height;
  p.width = width;
  p.brightness = p.contrast = p.saturation = 0.0;
  p.hflip_prob = 0.0;
  return p;
}

namespace {

double luminance(const Image& img, int y, int x) {
  if (img.channels < 3) return img.at(0, y, x);
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

}  // namespace

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  Image out = resize_bilinear(image, policy.height, policy.width);
  // Draws are consumed unconditionally so the stream position does not depend
  // on which jitters are enabled.
  const double fb = 1.0 + uniform(rng, -1.0, 1.0) * policy.brightness;
  const double fc = 1.0 + uniform(rng, -1.0, 1.0) * policy.contrast;
  const double fs = 1.0 + uniform(rng, -1.0, 1.0) * policy.saturation;
  const bool flip = uniform01(rng) < policy.hflip_prob;

  if (policy.brightness > 0) {
    for (auto& v : out.pixels) v *= fb;
  }
  if (policy.contrast > 0) {
    double mean = 0.0;
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) mean += luminance(out, y, x);
    mean /= static_cast<double>(out.plane_size());
    for (auto& v : out.pixels) v = fc * v + (1.0 - fc) * mean;
  }
  if (policy.saturation > 0 && out.channels >= 3) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double g = luminance(out, y, x);
        for (int c = 0; c < out.channels; ++c) out.at(c, y, x) = fs * out.at(c, y, x) + (1.0 - fs) * g;
      }
    }
  }
  if (flip) hflip_inplace(out);
  clamp01_inplace(out);
  return out;
}

void augment_episode(Episode& episode, const AugmentPolicy& policy, Rng& rng) {
  for (auto& item : episode.support) item.image = augment(item.image, policy, rng);
  for (auto& item : episode.query) item.image = augment(item.image, policy, rng);
}

}  // namespace fpml
