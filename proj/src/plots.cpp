#include "fpml/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fpml/errors.hpp"

namespace fpml::plots {

namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kLeft = 60;
constexpr int kRight = 20;
constexpr int kTop = 40;
constexpr int kBottom = 50;

const cv::Scalar kInk(40, 40, 40);
const cv::Scalar kBar(180, 120, 60);
const cv::Scalar kGrid(220, 220, 220);

cv::Mat canvas(const std::string& title) {
  cv::Mat m(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::putText(m, title, {kLeft, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, kInk, 1, cv::LINE_AA);
  cv::line(m, {kLeft, kHeight - kBottom}, {kWidth - kRight, kHeight - kBottom}, kInk);
  cv::line(m, {kLeft, kTop}, {kLeft, kHeight - kBottom}, kInk);
  return m;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void y_axis(cv::Mat& m, double lo, double hi) {
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int y = kHeight - kBottom - static_cast<int>((kHeight - kTop - kBottom) * t / 4.0);
    cv::line(m, {kLeft + 1, y}, {kWidth - kRight, y}, kGrid);
    cv::putText(m, fmt(v), {5, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  }
}

void save(const cv::Mat& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write plot '" + path.string() + "'");
}

}  // namespace

void histogram(const std::vector<double>& values, int bins, double lo, double hi,
               const std::string& title, const fs::path& path) {
  if (bins < 1 || !(hi > lo)) throw RangeError("histogram: need bins >= 1 and hi > lo");
  std::vector<int> counts(bins, 0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
    ++counts[b];
  }
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  cv::Mat m = canvas(title);
  y_axis(m, 0, peak);
  const double bw = static_cast<double>(kWidth - kLeft - kRight) / bins;
  const int plot_h = kHeight - kTop - kBottom;
  for (int b = 0; b < bins; ++b) {
    const int x0 = kLeft + static_cast<int>(b * bw) + 1;
    const int x1 = kLeft + static_cast<int>((b + 1) * bw) - 1;
    const int y0 = kHeight - kBottom - static_cast<int>(plot_h * counts[b] / static_cast<double>(peak));
    if (counts[b] > 0) cv::rectangle(m, {x0, y0}, {x1, kHeight - kBottom - 1}, kBar, cv::FILLED);
  }
  for (int t = 0; t <= 4; ++t) {
    const int x = kLeft + (kWidth - kLeft - kRight) * t / 4;
    cv::putText(m, fmt(lo + (hi - lo) * t / 4.0), {x - 10, kHeight - kBottom + 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  }
  save(m, path);
}

void bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
               const std::string& title, const fs::path& path) {
  if (labels.size() != values.size() || values.empty()) {
    throw ShapeError("bar_chart: labels and values must be non-empty and equal length");
  }
  const double peak = std::max(1e-12, *std::max_element(values.begin(), values.end()));
  cv::Mat m = canvas(title);
  y_axis(m, 0, peak);
  const int n = static_cast<int>(values.size());
  const double slot = static_cast<double>(kWidth - kLeft - kRight) / n;
  const int plot_h = kHeight - kTop - kBottom;
  for (int i = 0; i < n; ++i) {
    const int x0 = kLeft + static_cast<int>(i * slot + slot * 0.2);
    const int x1 = kLeft + static_cast<int>((i + 1) * slot - slot * 0.2);
    const int y0 = kHeight - kBottom - static_cast<int>(plot_h * std::max(0.0, values[i]) / peak);
    cv::rectangle(m, {x0, y0}, {x1, kHeight - kBottom - 1}, kBar, cv::FILLED);
    cv::putText(m, fmt(values[i]), {x0, std::max(kTop, y0 - 5)}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                kInk, 1, cv::LINE_AA);
    cv::putText(m, labels[i], {x0, kHeight - kBottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk,
                1, cv::LINE_AA);
  }
  save(m, path);
}

void line_chart(const std::vector<double>& values, const std::string& title, const fs::path& path) {
  if (values.empty()) throw ShapeError("line_chart: no values");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) hi = lo + 1.0;
  cv::Mat m = canvas(title);
  y_axis(m, lo, hi);
  const int plot_w = kWidth - kLeft - kRight;
  const int plot_h = kHeight - kTop - kBottom;
  std::vector<cv::Point> pts;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double fx = values.size() > 1 ? static_cast<double>(i) / (values.size() - 1) : 0.5;
    pts.emplace_back(kLeft + static_cast<int>(fx * plot_w),
                     kHeight - kBottom - static_cast<int>((values[i] - lo) / (hi - lo) * plot_h));
  }
  cv::polylines(m, pts, false, kBar, 2, cv::LINE_AA);
  cv::putText(m, "0", {kLeft, kHeight - kBottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1,
              cv::LINE_AA);
  cv::putText(m, std::to_string(values.size() - 1), {kWidth - kRight - 30, kHeight - kBottom + 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  save(m, path);
}

void heatmap_overlay(const Image& image, const Image& heat, const fs::path& path, double alpha) {
  if (heat.channels != 1 || heat.height != image.height || heat.width != image.width) {
    throw ShapeError("heatmap_overlay: heatmap must be single-channel with the image dims");
  }
  const int h = image.height, w = image.width;
  cv::Mat gray(h, w, CV_8UC1), base(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gray.at<unsigned char>(y, x) =
          cv::saturate_cast<unsigned char>(std::lround(255.0 * std::clamp(heat.at(0, y, x), 0.0, 1.0)));
      for (int c = 0; c < 3; ++c) {
        const int src = image.channels == 3 ? c : 0;
        base.at<cv::Vec3b>(y, x)[2 - c] =
            cv::saturate_cast<unsigned char>(std::lround(255.0 * std::clamp(image.at(src, y, x), 0.0, 1.0)));
      }
    }
  }
  cv::Mat colored, out;
  cv::applyColorMap(gray, colored, cv::COLORMAP_JET);
  cv::addWeighted(base, 1.0 - alpha, colored, alpha, 0.0, out);
  save(out, path);
}

}  // namespace fpml::plots
