#include "fpml/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "fpml/errors.hpp"

namespace fpml {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'F', 'P', 'M', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : buf_(std::move(bytes)), origin_(std::move(origin)) {}
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = length(1);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> vec() {
    const auto n = length(sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::size_t length(std::size_t elem) {
    const auto n = u64();
    if (n > (buf_.size() - pos_) / elem) fail("truncated payload");
    return static_cast<std::size_t>(n);
  }
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated payload");
  }

  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

fs::path meta_path(const fs::path& path) { return path.string() + ".meta"; }

void write_meta(const fs::path& path, CheckpointMeta meta) {
  std::string text;
  for (const auto& [k, v] : meta) text += k + "=" + v + "\n";
  write_atomic(meta_path(path), text);
}

void header(Writer& w, CheckpointKind kind) {
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(to_string(kind));
}

Reader open_checkpoint(const fs::path& path, CheckpointKind& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  const std::string k = r.str();
  if (k == "embedding") {
    kind = CheckpointKind::embedding;
  } else if (k == "train_state") {
    kind = CheckpointKind::train_state;
  } else {
    r.fail("unknown checkpoint kind '" + k + "'");
  }
  return r;
}

void put_embedding(Writer& w, const EmbeddingParams& p) {
  w.str(p.arch.describe());
  w.u64(p.params.size());
  for (const auto& t : p.params) {
    w.str(t.name);
    w.u64(t.shape.size());
    for (int s : t.shape) w.i64(s);
    w.vec(t.values);
  }
}

EmbeddingParams get_embedding(Reader& r, const ArchSpec* expected) {
  EmbeddingParams p;
  const std::string arch = r.str();
  try {
    p.arch = ArchSpec::parse(arch);
  } catch (const Error& e) {
    r.fail(std::string("bad architecture descriptor: ") + e.what());
  }
  if (expected && !(p.arch == *expected)) {
    r.fail("architecture mismatch: checkpoint has " + arch + ", config expects " +
           expected->describe());
  }
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Param t;
    t.name = r.str();
    const auto dims = r.u64();
    if (dims > 8) r.fail("bad tensor rank");
    for (std::uint64_t d = 0; d < dims; ++d) t.shape.push_back(static_cast<int>(r.i64()));
    t.values = r.vec();
    p.params.push_back(std::move(t));
  }
  // Cross-check the stored layout against a freshly built network.
  Rng probe(0);
  const EmbeddingParams ref = init_embedding(p.arch, probe);
  if (!ref.same_layout(p)) r.fail("parameter layout does not match architecture " + arch);
  return p;
}

void put_projector(Writer& w, const Projector& eta) {
  w.i64(eta.in_dim);
  w.i64(eta.out_dim);
  w.vec(eta.weight);
  w.vec(eta.bias);
}

Projector get_projector(Reader& r) {
  Projector eta;
  eta.in_dim = static_cast<int>(r.i64());
  eta.out_dim = static_cast<int>(r.i64());
  eta.weight = r.vec();
  eta.bias = r.vec();
  if (eta.weight.size() != static_cast<std::size_t>(eta.in_dim) * eta.out_dim ||
      eta.bias.size() != static_cast<std::size_t>(eta.out_dim)) {
    r.fail("projector shape mismatch");
  }
  return eta;
}

void put_buffers(Writer& w, const std::vector<std::vector<double>>& bufs) {
  w.u64(bufs.size());
  for (const auto& b : bufs) w.vec(b);
}

std::vector<std::vector<double>> get_buffers(Reader& r) {
  const auto n = r.u64();
  if (n > 1u << 20) r.fail("bad buffer count");
  std::vector<std::vector<double>> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(r.vec());
  return out;
}

}  // namespace

std::string to_string(CheckpointKind k) {
  return k == CheckpointKind::embedding ? "embedding" : "train_state";
}

void save_embedding(const EmbeddingParams& params, const fs::path& path, const CheckpointMeta& extra) {
  Writer w;
  header(w, CheckpointKind::embedding);
  put_embedding(w, params);
  write_atomic(path, w.bytes());
  CheckpointMeta meta = extra;
  meta["format_version"] = std::to_string(kCheckpointVersion);
  meta["kind"] = "embedding";
  meta["arch"] = params.arch.describe();
  meta["feature_dim"] = std::to_string(params.arch.feature_dim());
  meta["parameters"] = std::to_string(params.count());
  write_meta(path, meta);
}

EmbeddingParams load_embedding(const fs::path& path, const ArchSpec* expected) {
  CheckpointKind kind;
  Reader r = open_checkpoint(path, kind);
  // A meta-training state stores theta first, so both kinds yield an embedding.
  EmbeddingParams p = get_embedding(r, expected);
  if (kind == CheckpointKind::embedding && !r.done()) r.fail("trailing bytes");
  return p;
}

void save_train_state(const TrainState& state, const fs::path& path, const CheckpointMeta& extra) {
  Writer w;
  header(w, CheckpointKind::train_state);
  const auto& b = state.branches;
  put_embedding(w, b.theta);
  put_embedding(w, b.phi);
  put_embedding(w, b.varphi);
  put_projector(w, b.eta);
  w.f64(b.m1);
  w.f64(b.m2);
  w.str(to_string(state.optimizer.kind()));
  w.f64(state.optimizer.learning_rate());
  w.i64(state.optimizer.steps());
  put_buffers(w, state.optimizer.first_moments());
  put_buffers(w, state.optimizer.second_moments());
  w.i64(state.step);
  w.i64(state.epoch);
  w.u64(state.history.size());
  for (const auto& h : state.history) {
    w.i64(h.step);
    w.i64(h.epoch);
    w.f64(h.loss.ce);
    w.f64(h.loss.align);
    w.f64(h.loss.recon);
    w.f64(h.loss.total);
    w.f64(h.wall_clock);
  }
  write_atomic(path, w.bytes());
  CheckpointMeta meta = extra;
  meta["format_version"] = std::to_string(kCheckpointVersion);
  meta["kind"] = "train_state";
  meta["arch"] = b.theta.arch.describe();
  meta["feature_dim"] = std::to_string(b.theta.arch.feature_dim());
  meta["latent_dim"] = std::to_string(b.eta.out_dim);
  meta["m1"] = format_double(b.m1);
  meta["m2"] = format_double(b.m2);
  meta["step"] = std::to_string(state.step);
  meta["epoch"] = std::to_string(state.epoch);
  write_meta(path, meta);
}

TrainState load_train_state(const fs::path& path, const ArchSpec* expected) {
  CheckpointKind kind;
  Reader r = open_checkpoint(path, kind);
  if (kind != CheckpointKind::train_state) {
    r.fail("expected a train_state checkpoint, found " + to_string(kind));
  }
  TrainState s;
  auto& b = s.branches;
  b.theta = get_embedding(r, expected);
  b.phi = get_embedding(r, expected);
  b.varphi = get_embedding(r, expected);
  b.eta = get_projector(r);
  b.m1 = r.f64();
  b.m2 = r.f64();
  OptimizerKind okind;
  try {
    okind = parse_optimizer(r.str());
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  const double lr = r.f64();
  s.optimizer = Optimizer(okind, lr);
  s.optimizer.set_steps(r.i64());
  s.optimizer.first_moments() = get_buffers(r);
  s.optimizer.second_moments() = get_buffers(r);
  s.step = r.i64();
  s.epoch = static_cast<int>(r.i64());
  const auto n = r.u64();
  if (n > (1u << 30)) r.fail("bad history length");
  for (std::uint64_t i = 0; i < n; ++i) {
    StepRecord h;
    h.step = r.i64();
    h.epoch = static_cast<int>(r.i64());
    h.loss.ce = r.f64();
    h.loss.align = r.f64();
    h.loss.recon = r.f64();
    h.loss.total = r.f64();
    h.wall_clock = r.f64();
    s.history.push_back(h);
  }
  if (!r.done()) r.fail("trailing bytes");
  if (b.eta.in_dim != b.theta.arch.feature_dim()) r.fail("projector input does not match backbone");
  return s;
}

CheckpointKind peek_checkpoint_kind(const fs::path& path) {
  CheckpointKind kind;
  open_checkpoint(path, kind);
  return kind;
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  std::ifstream in(meta_path(path));
  if (!in) throw FormatError("missing sidecar '" + meta_path(path).string() + "'");
  CheckpointMeta meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace fpml
