#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpml/image.hpp"
#include "fpml/kernels.hpp"
#include "fpml/rng.hpp"
#include "fpml/tensor.hpp"

namespace fpml {

enum class ArchKind { conv4, resnet10 };

// Architecture descriptor shared by every branch.
//  conv4:    `blocks` x [conv3x3 -> norm -> relu -> maxpool2], global average pool,
//            feature dim = width.
//  resnet10: 7x7/2 stem + maxpool, four basic residual blocks with widths
//            width, 2w, 4w, 8w, global average pool, feature dim = 8 * width.
// Normalization is per-sample layer normalization over (C,H,W) with a
// per-channel affine, so features never depend on batch composition.
struct ArchSpec {
  ArchKind kind = ArchKind::conv4;
  int in_channels = 3;
  int width = 64;
  int blocks = 4;

  int feature_dim() const { return kind == ArchKind::conv4 ? width : 8 * width; }
  std::string describe() const;
  static ArchSpec parse(const std::string& text);
  bool operator==(const ArchSpec&) const = default;
};

std::string to_string(ArchKind k);
ArchKind parse_arch_kind(const std::string& s);

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

// One backbone instance's parameters. All branches share one ArchSpec.
struct EmbeddingParams {
  ArchSpec arch;
  std::vector<Param> params;

  std::size_t count() const;
  bool same_layout(const EmbeddingParams& o) const;
  bool all_finite() const;
};

// Gradient buffers aligned with EmbeddingParams::params.
using ParamGrads = std::vector<std::vector<double>>;
ParamGrads zero_grads(const EmbeddingParams& p);

EmbeddingParams init_embedding(const ArchSpec& arch, Rng& rng);

// Activations kept for the backward pass.
struct ForwardTrace {
  std::vector<Tensor> slots;
  std::vector<std::vector<double>> aux_real;  // per-op saved statistics
  std::vector<std::vector<int>> aux_index;    // per-op argmax indices
};

class Backbone {
 public:
  explicit Backbone(const ArchSpec& arch);

  const ArchSpec& arch() const { return arch_; }

  // Input (B, in_channels, H, W) -> features (B, d, 1, 1).
  Tensor forward(const EmbeddingParams& params, const Tensor& input,
                 ForwardTrace* trace = nullptr) const;

  // Accumulates parameter gradients for d(loss)/d(features).
  void backward(const EmbeddingParams& params, const ForwardTrace& trace, const Tensor& dfeatures,
                ParamGrads& grads) const;

  // Last spatial map before global pooling, (B, C, h, w).
  Tensor spatial_features(const EmbeddingParams& params, const Tensor& input) const;

 private:
  enum class OpKind { conv, norm, relu, maxpool, add, avgpool };
  struct Op {
    OpKind kind;
    int in0 = 0;
    int in1 = -1;
    int out = 0;
    int param0 = -1;
    int param1 = -1;
    kernels::ConvGeometry conv{};
    int pool_kernel = 2;
    int pool_stride = 2;
    int pool_pad = 0;
  };

  void run(const EmbeddingParams& params, const Tensor& input, ForwardTrace& trace) const;
  void check_params(const EmbeddingParams& params) const;

  ArchSpec arch_;
  std::vector<Op> program_;
  int num_slots_ = 1;
  int spatial_slot_ = 0;
  std::vector<std::pair<std::string, std::vector<int>>> layout_;
  friend EmbeddingParams init_embedding(const ArchSpec& arch, Rng& rng);
};

// Pack images (all with the same dims) into an NCHW batch.
Tensor to_batch(const std::vector<const Image*>& images);

}  // namespace fpml
