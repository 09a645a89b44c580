#include "fpml/freq.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fpml/errors.hpp"

namespace fpml::freq {

namespace {

constexpr double kImagTolerance = 1e-6;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> roots;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    roots.resize(half);
    for (std::size_t k = 0; k < half; ++k) {
      roots[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                                     static_cast<double>(len));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex t = a[i + k + half] * roots[k];
        a[i + k] = u + t;
        a[i + k + half] = u - t;
      }
    }
  }
}

// Chirp-z rewrite of an arbitrary-length DFT as a power-of-two convolution.
void fft_bluestein(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle small and exact.
    const std::size_t k2 = (k * k) % (2 * n);
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) /
                                   static_cast<double>(n));
  }
  std::vector<Complex> fa(m), fb(m);
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
  fft_radix2(fa, false);
  fft_radix2(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  fft_radix2(fa, true);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * scale * chirp[k];
}

// Transforms every row then every column of each channel plane in place.
void fft2_inplace(Spectrum& s, bool inverse) {
  const int h = s.height;
  const int w = s.width;
  const int rows = s.channels * h;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    fft1d(std::span<Complex>(s.coeffs.data() + static_cast<std::size_t>(r) * w, w), inverse);
  }
  const int cols = s.channels * w;
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < cols; ++idx) {
    const int ch = idx / w;
    const int v = idx % w;
    std::vector<Complex> column(h);
    for (int u = 0; u < h; ++u) column[u] = s.at(ch, u, v);
    fft1d(column, inverse);
    for (int u = 0; u < h; ++u) s.at(ch, u, v) = column[u];
  }
}

int centered_to_natural(int c, int n) { return ((c - n / 2) % n + n) % n; }

Image copy_meta(const Image& src, Image img) {
  img.label = src.label;
  img.domain = src.domain;
  img.source = src.source;
  return img;
}

}  // namespace

const Complex& Spectrum::centered(int ch, int cy, int cx) const {
  return at(ch, centered_to_natural(cy, height), centered_to_natural(cx, width));
}

double Spectrum::energy() const {
  double e = 0.0;
  for (const auto& z : coeffs) e += std::norm(z);
  return e;
}

MaskShape parse_mask_shape(const std::string& s) {
  if (s == "circular") return MaskShape::circular;
  if (s == "square") return MaskShape::square;
  throw ConfigError("unknown mask shape '" + s + "' (expected circular|square)");
}

Method parse_method(const std::string& s) {
  if (s == "fft") return Method::fft;
  if (s == "haar") return Method::haar;
  throw ConfigError("unknown decomposition method '" + s + "' (expected fft|haar)");
}

std::string to_string(MaskShape s) { return s == MaskShape::circular ? "circular" : "square"; }
std::string to_string(Method m) { return m == Method::fft ? "fft" : "haar"; }

bool FrequencyMask::passes(int u, int v) const {
  const int cy = (u + height / 2) % height;
  const int cx = (v + width / 2) % width;
  return passes_centered(cy, cx);
}

FrequencyMask FrequencyMask::complement() const {
  FrequencyMask m = *this;
  for (auto& x : m.weights) x = x ? 0 : 1;
  return m;
}

std::size_t FrequencyMask::count() const {
  return static_cast<std::size_t>(std::count(weights.begin(), weights.end(), 1));
}

void fft1d(std::span<Complex> data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_radix2(data, inverse);
  } else {
    fft_bluestein(data, inverse);
  }
}

Spectrum fft2(const Image& image) {
  if (!all_finite(image)) throw InvalidInputError("fft2: image contains non-finite pixels");
  Spectrum s(image.channels, image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) s.coeffs[i] = image.pixels[i];
  fft2_inplace(s, false);
  return s;
}

std::vector<Complex> ifft2_complex(const Spectrum& spectrum) {
  if (spectrum.height <= 0 || spectrum.width <= 0 || spectrum.channels <= 0 ||
      spectrum.coeffs.size() !=
          static_cast<std::size_t>(spectrum.channels) * spectrum.height * spectrum.width) {
    throw ShapeError("ifft2: invalid spectrum dimensions");
  }
  Spectrum s = spectrum;
  fft2_inplace(s, true);
  const double scale = 1.0 / (static_cast<double>(s.height) * s.width);
  for (auto& z : s.coeffs) z *= scale;
  return std::move(s.coeffs);
}

double max_imaginary_residue(const Spectrum& spectrum) {
  double m = 0.0;
  for (const auto& z : ifft2_complex(spectrum)) m = std::max(m, std::abs(z.imag()));
  return m;
}

Image ifft2(const Spectrum& spectrum) {
  auto values = ifft2_complex(spectrum);
  Image img(spectrum.channels, spectrum.height, spectrum.width);
  double residue = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    residue = std::max(residue, std::abs(values[i].imag()));
    img.pixels[i] = values[i].real();
  }
  if (residue >= kImagTolerance) {
    throw SymmetryError("ifft2: spectrum is not conjugate-symmetric (imaginary residue " +
                        std::to_string(residue) + ")");
  }
  return img;
}

FrequencyMask make_mask(int height, int width, double cutoff, MaskShape shape) {
  if (height < 1 || width < 1) throw RangeError("make_mask: dimensions must be >= 1");
  if (!(cutoff >= 0.0 && cutoff <= 1.0)) {
    throw RangeError("make_mask: cutoff " + std::to_string(cutoff) + " outside [0,1]");
  }
  FrequencyMask mask;
  mask.height = height;
  mask.width = width;
  mask.cutoff = cutoff;
  mask.shape = shape;
  mask.weights.assign(static_cast<std::size_t>(height) * width, 0);
  const double ny = std::max(1, height / 2);
  const double nx = std::max(1, width / 2);
  const double c2 = cutoff * cutoff;
  for (int cy = 0; cy < height; ++cy) {
    const double fy = (cy - height / 2) / ny;
    for (int cx = 0; cx < width; ++cx) {
      const double fx = (cx - width / 2) / nx;
      bool pass = false;
      if (shape == MaskShape::circular) {
        // Squared comparison keeps exact-boundary bins stable.
        pass = (fy * fy + fx * fx) / 2.0 <= c2;
      } else {
        pass = std::max(std::abs(fy), std::abs(fx)) <= cutoff;
      }
      mask.weights[static_cast<std::size_t>(cy) * width + cx] = pass ? 1 : 0;
    }
  }
  return mask;
}

Spectrum apply_mask(const Spectrum& spectrum, const FrequencyMask& mask) {
  if (mask.height != spectrum.height || mask.width != spectrum.width) {
    throw ShapeError("apply_mask: mask " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width) + " vs spectrum " +
                     std::to_string(spectrum.height) + "x" + std::to_string(spectrum.width));
  }
  Spectrum out = spectrum;
  for (int ch = 0; ch < out.channels; ++ch) {
    for (int u = 0; u < out.height; ++u) {
      for (int v = 0; v < out.width; ++v) {
        if (!mask.passes(u, v)) out.at(ch, u, v) = 0.0;
      }
    }
  }
  return out;
}

FrequencyPair decompose(const Image& image, const FrequencyMask& mask) {
  if (mask.height != image.height || mask.width != image.width) {
    throw ShapeError("decompose: mask " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width) + " does not match image " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const Spectrum spectrum = fft2(image);
  FrequencyPair pair;
  pair.method = Method::fft;
  pair.cutoff = mask.cutoff;
  pair.low = copy_meta(image, ifft2(apply_mask(spectrum, mask)));
  pair.high = copy_meta(image, ifft2(apply_mask(spectrum, mask.complement())));
  return pair;
}

FrequencyPair haar_decompose(const Image& image, int levels) {
  const int min_side = std::min(image.height, image.width);
  if (levels < 1 || min_side < 1 || (1 << std::min(levels, 30)) > min_side) {
    throw RangeError("haar_decompose: " + std::to_string(levels) + " levels infeasible for a " +
                     std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " image");
  }
  if (!all_finite(image)) throw InvalidInputError("haar_decompose: non-finite pixels");
  const int block = 1 << levels;
  const int ph = (image.height + block - 1) / block * block;
  const int pw = (image.width + block - 1) / block * block;

  Image low(image.channels, image.height, image.width);
  for (int ch = 0; ch < image.channels; ++ch) {
    // Edge-replicated padding up to a multiple of 2^levels.
    std::vector<double> ll(static_cast<std::size_t>(ph) * pw);
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        ll[static_cast<std::size_t>(y) * pw + x] =
            image.at(ch, std::min(y, image.height - 1), std::min(x, image.width - 1));
      }
    }
    // Orthonormal analysis, keeping the approximation band only.
    int h = ph;
    int w = pw;
    for (int l = 0; l < levels; ++l) {
      const int h2 = h / 2;
      const int w2 = w / 2;
      std::vector<double> next(static_cast<std::size_t>(h2) * w2);
      for (int y = 0; y < h2; ++y) {
        for (int x = 0; x < w2; ++x) {
          const double a = ll[static_cast<std::size_t>(2 * y) * w + 2 * x];
          const double b = ll[static_cast<std::size_t>(2 * y) * w + 2 * x + 1];
          const double c = ll[static_cast<std::size_t>(2 * y + 1) * w + 2 * x];
          const double d = ll[static_cast<std::size_t>(2 * y + 1) * w + 2 * x + 1];
          next[static_cast<std::size_t>(y) * w2 + x] = 0.5 * (a + b + c + d);
        }
      }
      ll = std::move(next);
      h = h2;
      w = w2;
    }
    // Synthesis with all detail bands zeroed.
    for (int l = 0; l < levels; ++l) {
      const int h2 = h * 2;
      const int w2 = w * 2;
      std::vector<double> up(static_cast<std::size_t>(h2) * w2);
      for (int y = 0; y < h2; ++y) {
        for (int x = 0; x < w2; ++x) {
          up[static_cast<std::size_t>(y) * w2 + x] =
              0.5 * ll[static_cast<std::size_t>(y / 2) * w + x / 2];
        }
      }
      ll = std::move(up);
      h = h2;
      w = w2;
    }
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        low.at(ch, y, x) = ll[static_cast<std::size_t>(y) * pw + x];
      }
    }
  }

  FrequencyPair pair;
  pair.method = Method::haar;
  pair.levels = levels;
  pair.high = Image(image.channels, image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    pair.high.pixels[i] = image.pixels[i] - low.pixels[i];
  }
  pair.low = copy_meta(image, std::move(low));
  pair.high = copy_meta(image, std::move(pair.high));
  return pair;
}

FrequencyPair decompose(const Image& image, const DecompositionSettings& settings) {
  if (settings.method == Method::haar) return haar_decompose(image, settings.levels);
  return decompose(image, make_mask(image.height, image.width, settings.cutoff, settings.shape));
}

}  // namespace fpml::freq
