#include "fpml/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fpml/errors.hpp"

namespace fpml {

namespace {

constexpr double kNormEps = 1e-5;

void accumulate(Tensor& into, Tensor&& g) {
  if (into.data.empty()) {
    into = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += g.data[i];
}

}  // namespace

std::string to_string(ArchKind k) { return k == ArchKind::conv4 ? "conv4" : "resnet10"; }

ArchKind parse_arch_kind(const std::string& s) {
  if (s == "conv4") return ArchKind::conv4;
  if (s == "resnet10") return ArchKind::resnet10;
  throw ConfigError("unknown architecture '" + s + "' (expected conv4|resnet10)");
}

std::string ArchSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind) << ":in" << in_channels << ":w" << width;
  if (kind == ArchKind::conv4) os << ":b" << blocks;
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec a;
  std::istringstream is(text);
  std::string tok;
  bool first = true;
  while (std::getline(is, tok, ':')) {
    if (first) {
      a.kind = parse_arch_kind(tok);
      first = false;
      continue;
    }
    try {
      if (tok.rfind("in", 0) == 0) {
        a.in_channels = std::stoi(tok.substr(2));
      } else if (tok.rfind("w", 0) == 0) {
        a.width = std::stoi(tok.substr(1));
      } else if (tok.rfind("b", 0) == 0) {
        a.blocks = std::stoi(tok.substr(1));
      } else {
        throw FormatError("bad architecture token '" + tok + "'");
      }
    } catch (const std::logic_error&) {
      throw FormatError("bad architecture descriptor '" + text + "'");
    }
  }
  if (first) throw FormatError("empty architecture descriptor");
  return a;
}

std::size_t EmbeddingParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.values.size();
  return n;
}

bool EmbeddingParams::same_layout(const EmbeddingParams& o) const {
  if (!(arch == o.arch) || params.size() != o.params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape != o.params[i].shape || params[i].values.size() != o.params[i].values.size()) {
      return false;
    }
  }
  return true;
}

bool EmbeddingParams::all_finite() const {
  for (const auto& p : params) {
    for (double v : p.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ParamGrads zero_grads(const EmbeddingParams& p) {
  ParamGrads g;
  g.reserve(p.params.size());
  for (const auto& param : p.params) g.emplace_back(param.values.size(), 0.0);
  return g;
}

Backbone::Backbone(const ArchSpec& arch) : arch_(arch) {
  if (arch.in_channels < 1 || arch.width < 1) throw ConfigError("architecture: sizes must be >= 1");
  if (arch.kind == ArchKind::conv4 && arch.blocks < 1) {
    throw ConfigError("architecture: conv4 needs at least one block");
  }
  auto add_param = [&](std::string name, std::vector<int> shape) {
    layout_.emplace_back(std::move(name), std::move(shape));
    return static_cast<int>(layout_.size()) - 1;
  };
  auto new_slot = [&] { return num_slots_++; };
  auto conv = [&](int in, int cin, int cout, int k, int stride, int pad, const std::string& name) {
    Op op{OpKind::conv};
    op.in0 = in;
    op.out = new_slot();
    op.param0 = add_param(name + ".weight", {cout, cin, k, k});
    op.conv = kernels::ConvGeometry{cin, cout, k, stride, pad};
    program_.push_back(op);
    return op.out;
  };
  auto norm = [&](int in, int c, const std::string& name) {
    Op op{OpKind::norm};
    op.in0 = in;
    op.out = new_slot();
    op.param0 = add_param(name + ".gamma", {c});
    op.param1 = add_param(name + ".beta", {c});
    program_.push_back(op);
    return op.out;
  };
  auto relu = [&](int in) {
    Op op{OpKind::relu};
    op.in0 = in;
    op.out = new_slot();
    program_.push_back(op);
    return op.out;
  };
  auto maxpool = [&](int in, int k, int s, int p) {
    Op op{OpKind::maxpool};
    op.in0 = in;
    op.out = new_slot();
    op.pool_kernel = k;
    op.pool_stride = s;
    op.pool_pad = p;
    program_.push_back(op);
    return op.out;
  };
  auto add = [&](int a, int b) {
    Op op{OpKind::add};
    op.in0 = a;
    op.in1 = b;
    op.out = new_slot();
    program_.push_back(op);
    return op.out;
  };

  int x = 0;
  if (arch.kind == ArchKind::conv4) {
    int cin = arch.in_channels;
    for (int b = 0; b < arch.blocks; ++b) {
      const std::string name = "block" + std::to_string(b);
      x = conv(x, cin, arch.width, 3, 1, 1, name + ".conv");
      x = norm(x, arch.width, name + ".norm");
      x = relu(x);
      x = maxpool(x, 2, 2, 0);
      cin = arch.width;
    }
  } else {
    const int w = arch.width;
    x = conv(x, arch.in_channels, w, 7, 2, 3, "stem.conv");
    x = norm(x, w, "stem.norm");
    x = relu(x);
    x = maxpool(x, 3, 2, 1);
    int cin = w;
    const int widths[4] = {w, 2 * w, 4 * w, 8 * w};
    for (int s = 0; s < 4; ++s) {
      const std::string name = "layer" + std::to_string(s + 1);
      const int stride = s == 0 ? 1 : 2;
      int y = conv(x, cin, widths[s], 3, stride, 1, name + ".conv1");
      y = norm(y, widths[s], name + ".norm1");
      y = relu(y);
      y = conv(y, widths[s], widths[s], 3, 1, 1, name + ".conv2");
      y = norm(y, widths[s], name + ".norm2");
      int shortcut = x;
      if (stride != 1 || cin != widths[s]) {
        shortcut = conv(x, cin, widths[s], 1, stride, 0, name + ".down.conv");
        shortcut = norm(shortcut, widths[s], name + ".down.norm");
      }
      x = relu(add(y, shortcut));
      cin = widths[s];
    }
  }
  spatial_slot_ = x;
  Op pool{OpKind::avgpool};
  pool.in0 = x;
  pool.out = new_slot();
  program_.push_back(pool);
}

EmbeddingParams init_embedding(const ArchSpec& arch, Rng& rng) {
  const Backbone net(arch);
  EmbeddingParams p;
  p.arch = arch;
  for (const auto& [name, shape] : net.layout_) {
    Param param;
    param.name = name;
    param.shape = shape;
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    param.values.assign(n, 0.0);
    if (name.ends_with(".weight")) {
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : param.values) v = stddev * standard_normal(rng);
    } else if (name.ends_with(".gamma")) {
      std::fill(param.values.begin(), param.values.end(), 1.0);
    }
    p.params.push_back(std::move(param));
  }
  return p;
}

void Backbone::check_params(const EmbeddingParams& params) const {
  if (!(params.arch == arch_) || params.params.size() != layout_.size()) {
    throw ShapeError("backbone: parameters built for '" + params.arch.describe() +
                     "' used with '" + arch_.describe() + "'");
  }
}

void Backbone::run(const EmbeddingParams& params, const Tensor& input, ForwardTrace& trace) const {
  check_params(params);
  if (input.c != arch_.in_channels || input.n < 1) {
    throw ShapeError("embed: input " + input.shape_string() + " does not match " +
                     arch_.describe());
  }
  trace.slots.assign(num_slots_, Tensor{});
  trace.aux_real.assign(program_.size(), {});
  trace.aux_index.assign(program_.size(), {});
  trace.slots[0] = input;

  for (std::size_t oi = 0; oi < program_.size(); ++oi) {
    const Op& op = program_[oi];
    const Tensor& x = trace.slots[op.in0];
    Tensor y;
    switch (op.kind) {
      case OpKind::conv: {
        if (x.h + 2 * op.conv.pad < op.conv.kernel || x.w + 2 * op.conv.pad < op.conv.kernel) {
          throw ShapeError("embed: input spatially too small for " + arch_.describe());
        }
        y = kernels::conv2d_forward(x, params.params[op.param0].values, {}, op.conv);
        break;
      }
      case OpKind::norm: {
        const auto& gamma = params.params[op.param0].values;
        const auto& beta = params.params[op.param1].values;
        y = Tensor(x.n, x.c, x.h, x.w);
        auto& stats = trace.aux_real[oi];
        stats.assign(2 * static_cast<std::size_t>(x.n), 0.0);
        const std::size_t m = x.sample_size();
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
#pragma omp parallel for schedule(static)
        for (int b = 0; b < x.n; ++b) {
          auto xs = x.sample(b);
          double mean = 0.0;
          for (double v : xs) mean += v;
          mean /= static_cast<double>(m);
          double var = 0.0;
          for (double v : xs) var += (v - mean) * (v - mean);
          var /= static_cast<double>(m);
          const double inv = 1.0 / std::sqrt(var + kNormEps);
          stats[2 * b] = mean;
          stats[2 * b + 1] = inv;
          auto ys = y.sample(b);
          for (int c = 0; c < x.c; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = c * plane + p;
              ys[i] = gamma[c] * (xs[i] - mean) * inv + beta[c];
            }
          }
        }
        break;
      }
      case OpKind::relu: {
        y = x;
        for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
        break;
      }
      case OpKind::maxpool: {
        const int k = op.pool_kernel, s = op.pool_stride, pad = op.pool_pad;
        const int oh = (x.h + 2 * pad - k) / s + 1;
        const int ow = (x.w + 2 * pad - k) / s + 1;
        if (oh < 1 || ow < 1) throw ShapeError("embed: input spatially too small for pooling");
        y = Tensor(x.n, x.c, oh, ow);
        auto& arg = trace.aux_index[oi];
        arg.assign(y.size(), 0);
        const int planes = x.n * x.c;
#pragma omp parallel for schedule(static)
        for (int pc = 0; pc < planes; ++pc) {
          const double* src = x.data.data() + static_cast<std::size_t>(pc) * x.h * x.w;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              double best = -std::numeric_limits<double>::infinity();
              int best_i = -1;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s - pad + ky;
                if (iy < 0 || iy >= x.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * s - pad + kx;
                  if (ix < 0 || ix >= x.w) continue;
                  const double v = src[iy * x.w + ix];
                  if (v > best) {
                    best = v;
                    best_i = iy * x.w + ix;
                  }
                }
              }
              const std::size_t o = (static_cast<std::size_t>(pc) * oh + oy) * ow + ox;
              y.data[o] = best;
              arg[o] = best_i;
            }
          }
        }
        break;
      }
      case OpKind::add: {
        y = x;
        const Tensor& other = trace.slots[op.in1];
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += other.data[i];
        break;
      }
      case OpKind::avgpool: {
        y = Tensor(x.n, x.c, 1, 1);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int b = 0; b < x.n; ++b) {
          for (int c = 0; c < x.c; ++c) {
            const double* src = x.plane(b, c);
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += src[p];
            y.at(b, c, 0, 0) = s / static_cast<double>(plane);
          }
        }
        break;
      }
    }
    trace.slots[op.out] = std::move(y);
  }
}

Tensor Backbone::forward(const EmbeddingParams& params, const Tensor& input,
                         ForwardTrace* trace) const {
  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;
  run(params, input, t);
  return t.slots.back();
}

Tensor Backbone::spatial_features(const EmbeddingParams& params, const Tensor& input) const {
  ForwardTrace t;
  run(params, input, t);
  return t.slots[spatial_slot_];
}

void Backbone::backward(const EmbeddingParams& params, const ForwardTrace& trace,
                        const Tensor& dfeatures, ParamGrads& grads) const {
  check_params(params);
  if (trace.slots.size() != static_cast<std::size_t>(num_slots_)) {
    throw ShapeError("backbone backward: trace does not belong to this network");
  }
  const Tensor& out = trace.slots.back();
  if (dfeatures.n != out.n || dfeatures.cols() != out.cols()) {
    throw ShapeError("backbone backward: feature gradient " + dfeatures.shape_string() +
                     " vs features " + out.shape_string());
  }
  if (grads.size() != params.params.size()) grads = zero_grads(params);

  std::vector<Tensor> g(num_slots_);
  g.back() = dfeatures;
  g.back().c = out.c;
  g.back().h = out.h;
  g.back().w = out.w;

  for (std::size_t oi = program_.size(); oi-- > 0;) {
    const Op& op = program_[oi];
    if (g[op.out].data.empty()) continue;
    Tensor dy = std::move(g[op.out]);
    const Tensor& x = trace.slots[op.in0];
    switch (op.kind) {
      case OpKind::conv: {
        Tensor dx = kernels::conv2d_backward(x, params.params[op.param0].values, op.conv, dy,
                                             grads[op.param0], {}, op.in0 != 0);
        if (op.in0 != 0) accumulate(g[op.in0], std::move(dx));
        break;
      }
      case OpKind::norm: {
        const auto& gamma = params.params[op.param0].values;
        const auto& stats = trace.aux_real[oi];
        auto& dgamma = grads[op.param0];
        auto& dbeta = grads[op.param1];
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        const double m = static_cast<double>(x.sample_size());
        Tensor dx(x.n, x.c, x.h, x.w);
        for (int b = 0; b < x.n; ++b) {
          const double mean = stats[2 * b];
          const double inv = stats[2 * b + 1];
          auto xs = x.sample(b);
          auto dys = dy.sample(b);
          auto dxs = dx.sample(b);
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (int c = 0; c < x.c; ++c) {
            double dg = 0.0, db = 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = c * plane + p;
              const double xhat = (xs[i] - mean) * inv;
              dg += dys[i] * xhat;
              db += dys[i];
              const double dxhat = dys[i] * gamma[c];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            dgamma[c] += dg;
            dbeta[c] += db;
          }
          for (int c = 0; c < x.c; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = c * plane + p;
              const double xhat = (xs[i] - mean) * inv;
              const double dxhat = dys[i] * gamma[c];
              dxs[i] = inv / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
            }
          }
        }
        if (op.in0 != 0) accumulate(g[op.in0], std::move(dx));
        break;
      }
      case OpKind::relu: {
        const Tensor& y = trace.slots[op.out];
        for (std::size_t i = 0; i < dy.data.size(); ++i) {
          if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
        }
        if (op.in0 != 0) accumulate(g[op.in0], std::move(dy));
        break;
      }
      case OpKind::maxpool: {
        const auto& arg = trace.aux_index[oi];
        Tensor dx(x.n, x.c, x.h, x.w);
        const std::size_t in_plane = static_cast<std::size_t>(x.h) * x.w;
        const std::size_t out_plane = static_cast<std::size_t>(dy.h) * dy.w;
        for (std::size_t pc = 0; pc < static_cast<std::size_t>(x.n) * x.c; ++pc) {
          for (std::size_t o = 0; o < out_plane; ++o) {
            const int src = arg[pc * out_plane + o];
            if (src >= 0) dx.data[pc * in_plane + src] += dy.data[pc * out_plane + o];
          }
        }
        if (op.in0 != 0) accumulate(g[op.in0], std::move(dx));
        break;
      }
      case OpKind::add: {
        Tensor copy = dy;
        if (op.in0 != 0) accumulate(g[op.in0], std::move(copy));
        if (op.in1 != 0) accumulate(g[op.in1], std::move(dy));
        break;
      }
      case OpKind::avgpool: {
        Tensor dx(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        for (int b = 0; b < x.n; ++b) {
          for (int c = 0; c < x.c; ++c) {
            const double v = dy.at(b, c, 0, 0) / static_cast<double>(plane);
            double* dst = dx.plane(b, c);
            for (std::size_t p = 0; p < plane; ++p) dst[p] = v;
          }
        }
        if (op.in0 != 0) accumulate(g[op.in0], std::move(dx));
        break;
      }
    }
  }
}

Tensor to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_batch: empty image list");
  const Image& first = *images.front();
  Tensor t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i]->same_dims(first)) {
      throw ShapeError("to_batch: image " + std::to_string(i) + " has different dimensions");
    }
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(),
              t.sample(static_cast<int>(i)).begin());
  }
  return t;
}

}  // namespace fpml
