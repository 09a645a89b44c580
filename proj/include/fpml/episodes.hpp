#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpml/image.hpp"
#include "fpml/rng.hpp"

namespace fpml {

enum class Split { train, val, test };

Split parse_split(const std::string& s);
std::string to_string(Split s);

struct Dataset {
  std::string name;
  std::string domain;
  Split split = Split::train;
  std::vector<std::string> classes;
  std::vector<std::vector<Image>> samples;  // samples[class][i]; label == class index

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::size_t min_class_size() const;
  std::size_t total_samples() const;
  // Throws SamplingError unless every class can serve k support + m query.
  void validate_for(int n_way, int k_shot, int m_query) const;
};

// Reads <root>/<split>/<class>/<image files>; classes and files are sorted
// lexicographically so the result is deterministic.
Dataset load_dataset(const std::filesystem::path& root, Split split);

// Writes the dataset back out in the same layout as PNG files.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

enum class Background { smooth, stripes, noise, checker };
Background parse_background(const std::string& s);
std::string to_string(Background b);

// Procedural shape classes drawn over domain-specific backgrounds. The shape
// geometry of a (class, sample) pair depends only on the seed, so two domains
// built from the same seed show identical layouts and differ only in color
// statistics, background texture and brightness.
struct SyntheticSpec {
  std::string name = "synthetic";
  std::string domain = "A";
  int num_classes = 5;
  int class_offset = 0;  // first shape class; disjoint offsets give novel classes
  int samples_per_class = 40;
  int image_size = 32;
  Background background = Background::smooth;
  double texture_strength = 0.2;
  double brightness_offset = 0.0;
  double background_mean[3] = {0.45, 0.45, 0.45};
  double foreground_mean[3] = {0.6, 0.6, 0.6};
  double color_spread = 0.15;
  int episode_way = 0;  // when > 0, num_classes must cover it
};

inline constexpr int kSyntheticShapeClasses = 24;
std::string synthetic_class_name(int shape_class);

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct SampleRef {
  int cls = -1;
  int index = -1;
  bool operator==(const SampleRef&) const = default;
};

struct EpisodeItem {
  Image image;
  int label = -1;  // local label in [0, n_way)
  SampleRef ref;
};

struct Episode {
  int n_way = 0;
  int k_shot = 0;
  int m_query = 0;
  std::vector<EpisodeItem> support;  // grouped by local label, k_shot each
  std::vector<EpisodeItem> query;    // grouped by local label, m_query each
  std::vector<std::string> class_map;

  std::size_t size() const { return support.size() + query.size(); }
};

Episode sample_episode(const Dataset& dataset, int n_way, int k_shot, int m_query, Rng& rng);

struct AugmentPolicy {
  int height = 84;
  int width = 84;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hflip_prob = 0.5;

  void validate() const;
  static AugmentPolicy resize_only(int height, int width);
};

// Resize, color jitter (brightness, contrast, saturation in that order, each a
// factor drawn from [1-r, 1+r]), optional horizontal flip, clamp to [0,1].
Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

void augment_episode(Episode& episode, const AugmentPolicy& policy, Rng& rng);

}  // namespace fpml
