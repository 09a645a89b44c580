#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fpml/image.hpp"

namespace fpml::freq {

using Complex = std::complex<double>;

// Per-channel 2D DFT coefficients in natural (unshifted) bin order: bin (0,0)
// is DC. `centered()` addresses the shifted grid whose DC sits at
// (height/2, width/2).
struct Spectrum {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<Complex> coeffs;

  Spectrum() = default;
  Spectrum(int c, int h, int w)
      : channels(c), height(h), width(w), coeffs(static_cast<std::size_t>(c) * h * w) {}

  Complex& at(int ch, int u, int v) {
    return coeffs[(static_cast<std::size_t>(ch) * height + u) * width + v];
  }
  const Complex& at(int ch, int u, int v) const {
    return coeffs[(static_cast<std::size_t>(ch) * height + u) * width + v];
  }
  const Complex& centered(int ch, int cy, int cx) const;

  double energy() const;
};

enum class MaskShape { circular, square };
enum class Method { fft, haar };

MaskShape parse_mask_shape(const std::string& s);
Method parse_method(const std::string& s);
std::string to_string(MaskShape s);
std::string to_string(Method m);

// Ideal binary low-pass mask on the DC-centered grid. A bin passes iff its
// normalized distance from DC is <= cutoff: per-axis offsets are divided by
// max(1, size/2); circular uses the Euclidean radius divided by sqrt(2) (so the
// corner bin sits at 1), square uses the Chebyshev radius.
struct FrequencyMask {
  int height = 0;
  int width = 0;
  double cutoff = 0.0;
  MaskShape shape = MaskShape::circular;
  std::vector<unsigned char> weights;  // centered layout, row-major

  bool passes_centered(int cy, int cx) const {
    return weights[static_cast<std::size_t>(cy) * width + cx] != 0;
  }
  // Natural-order bin (u, v) as stored in Spectrum.
  bool passes(int u, int v) const;
  FrequencyMask complement() const;
  std::size_t count() const;
};

struct FrequencyPair {
  Image low;
  Image high;
  Method method = Method::fft;
  double cutoff = 0.0;  // fft only
  int levels = 0;       // haar only
};

// Knobs that pick between the FFT mask path and the Haar path.
struct DecompositionSettings {
  Method method = Method::fft;
  double cutoff = 0.15;
  MaskShape shape = MaskShape::circular;
  int levels = 2;
};

// Unnormalized forward transform; the inverse divides by height*width.
Spectrum fft2(const Image& image);

// Complex inverse; no realness check.
std::vector<Complex> ifft2_complex(const Spectrum& spectrum);

// Real inverse. Throws SymmetryError when the imaginary residue is >= 1e-6,
// i.e. the spectrum was not conjugate-symmetric.
Image ifft2(const Spectrum& spectrum);

double max_imaginary_residue(const Spectrum& spectrum);

FrequencyMask make_mask(int height, int width, double cutoff, MaskShape shape);

Spectrum apply_mask(const Spectrum& spectrum, const FrequencyMask& mask);

FrequencyPair decompose(const Image& image, const FrequencyMask& mask);
FrequencyPair haar_decompose(const Image& image, int levels);
FrequencyPair decompose(const Image& image, const DecompositionSettings& settings);

// 1D in-place transform of arbitrary length (radix-2, Bluestein otherwise);
// exposed for tests and benchmarks. `inverse` flips the exponent sign but does
// not scale.
void fft1d(std::span<Complex> data, bool inverse);

}  // namespace fpml::freq
