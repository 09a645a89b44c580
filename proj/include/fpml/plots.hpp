#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fpml/image.hpp"

namespace fpml::plots {

// Histogram of values in [lo, hi] drawn as a PNG.
void histogram(const std::vector<double>& values, int bins, double lo, double hi,
               const std::string& title, const std::filesystem::path& path);

void bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
               const std::string& title, const std::filesystem::path& path);

void line_chart(const std::vector<double>& values, const std::string& title,
                const std::filesystem::path& path);

// Heatmap in [0,1] blended over the image with a jet colormap.
void heatmap_overlay(const Image& image, const Image& heat, const std::filesystem::path& path,
                     double alpha = 0.5);

}  // namespace fpml::plots
