#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fpml {

// Planar (channel-major) raster. Values nominally lie in [0,1]; high-frequency
// components are allowed to go negative.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  int label = -1;
  std::string domain;
  std::string source;  // file path or synthetic id; identifies the sample

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return pixels.size(); }

  double& at(int ch, int y, int x) {
    return pixels[(static_cast<std::size_t>(ch) * height + y) * width + x];
  }
  double at(int ch, int y, int x) const {
    return pixels[(static_cast<std::size_t>(ch) * height + y) * width + x];
  }
  std::span<double> plane(int ch) { return {pixels.data() + ch * plane_size(), plane_size()}; }
  std::span<const double> plane(int ch) const {
    return {pixels.data() + ch * plane_size(), plane_size()};
  }

  bool same_dims(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

bool all_finite(const Image& img);
double max_abs_diff(const Image& a, const Image& b);

// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& img, int height, int width);
std::vector<double> resize_plane_bilinear(std::span<const double> plane, int h, int w, int out_h,
                                          int out_w);

void hflip_inplace(Image& img);
void clamp01_inplace(Image& img);

// 8-bit file I/O through OpenCV; loaded images are RGB scaled to [0,1].
Image read_image(const std::filesystem::path& path);
void write_image(const Image& img, const std::filesystem::path& path);
// 16-bit PNG variants, values in [0,1] quantized to 1/65535.
void write_image16(const Image& img, const std::filesystem::path& path);
Image read_image16(const std::filesystem::path& path);

}  // namespace fpml
