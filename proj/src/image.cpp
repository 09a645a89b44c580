#include "fpml/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "fpml/errors.hpp"

namespace fpml {

bool all_finite(const Image& img) {
  return std::all_of(img.pixels.begin(), img.pixels.end(),
                     [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_dims(b)) throw ShapeError("max_abs_diff: image dimensions differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  }
  return m;
}

std::vector<double> resize_plane_bilinear(std::span<const double> plane, int h, int w, int out_h,
                                          int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, h - 1);
    double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, w - 1);
      double tx = fx - x0;
      double top = plane[y0 * w + x0] * (1 - tx) + plane[y0 * w + x1] * tx;
      double bot = plane[y1 * w + x0] * (1 - tx) + plane[y1 * w + x1] * tx;
      out[static_cast<std::size_t>(y) * out_w + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (height <= 0 || width <= 0) throw RangeError("resize: target size must be positive");
  if (img.height == height && img.width == width) return img;
  Image out(img.channels, height, width);
  out.label = img.label;
  out.domain = img.domain;
  out.source = img.source;
  for (int ch = 0; ch < img.channels; ++ch) {
    auto plane = resize_plane_bilinear(img.plane(ch), img.height, img.width, height, width);
    std::copy(plane.begin(), plane.end(), out.plane(ch).begin());
  }
  return out;
}

void hflip_inplace(Image& img) {
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int y = 0; y < img.height; ++y) {
      auto* row = &img.at(ch, y, 0);
      std::reverse(row, row + img.width);
    }
  }
}

void clamp01_inplace(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw DataError("cannot read image '" + path.string() + "'");
  Image img(3, mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<cv::Vec3b>(y);
    for (int x = 0; x < mat.cols; ++x) {
      // OpenCV stores BGR.
      img.at(0, y, x) = row[x][2] / 255.0;
      img.at(1, y, x) = row[x][1] / 255.0;
      img.at(2, y, x) = row[x][0] / 255.0;
    }
  }
  img.source = path.string();
  return img;
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw InvalidInputError("write_image: only 1 or 3 channel images are supported");
  }
  auto to_byte = [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  cv::Mat mat(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 3) {
        mat.at<cv::Vec3b>(y, x) =
            cv::Vec3b(to_byte(img.at(2, y, x)), to_byte(img.at(1, y, x)), to_byte(img.at(0, y, x)));
      } else {
        mat.at<unsigned char>(y, x) = to_byte(img.at(0, y, x));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) {
    throw DataError("cannot write image '" + path.string() + "'");
  }
}

void write_image16(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw InvalidInputError("write_image16: only 1 or 3 channel images are supported");
  }
  auto to_word = [](double v) {
    return static_cast<unsigned short>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
  };
  cv::Mat mat(img.height, img.width, img.channels == 3 ? CV_16UC3 : CV_16UC1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 3) {
        mat.at<cv::Vec3w>(y, x) =
            cv::Vec3w(to_word(img.at(2, y, x)), to_word(img.at(1, y, x)), to_word(img.at(0, y, x)));
      } else {
        mat.at<unsigned short>(y, x) = to_word(img.at(0, y, x));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) {
    throw DataError("cannot write image '" + path.string() + "'");
  }
}

Image read_image16(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DataError("cannot read image '" + path.string() + "'");
  if (mat.depth() != CV_16U || (mat.channels() != 1 && mat.channels() != 3)) {
    throw DataError("'" + path.string() + "' is not a 16-bit gray or color image");
  }
  Image img(mat.channels(), mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      if (mat.channels() == 3) {
        const auto v = mat.at<cv::Vec3w>(y, x);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = v[2 - c] / 65535.0;
      } else {
        img.at(0, y, x) = mat.at<unsigned short>(y, x) / 65535.0;
      }
    }
  }
  img.source = path.string();
  return img;
}

}  // namespace fpml
