#include "fpml/config.hpp"

#include <cmath>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "fpml/errors.hpp"
#include "fpml/rng.hpp"

namespace fpml {

namespace fs = std::filesystem;

namespace {

using Defaults = std::vector<std::pair<std::string, std::string>>;

// Desk scale: small synthetic domains, conv4 at 32x32, runs in minutes on one core.
const Defaults kDesk = {
    {"preset", "desk"},
    {"seed", "1"},
    {"run.name", "desk"},
    {"run.output_dir", "runs"},
    {"data.image_size", "32"},
    {"data.source.path", ""},
    {"data.source.split", "train"},
    {"data.source.domain", "A"},
    {"data.source.classes", "12"},
    {"data.source.class_offset", "0"},
    {"data.source.samples_per_class", "40"},
    {"data.source.background", "smooth"},
    {"data.source.texture", "0.15"},
    {"data.source.brightness", "0.0"},
    {"data.source.background_mean", "0.35,0.45,0.55"},
    {"data.source.foreground_mean", "0.75,0.65,0.55"},
    {"data.source.color_spread", "0.15"},
    {"data.target.path", ""},
    {"data.target.split", "test"},
    {"data.target.domain", "B"},
    {"data.target.classes", "12"},
    {"data.target.class_offset", "12"},
    {"data.target.samples_per_class", "30"},
    {"data.target.background", "checker"},
    {"data.target.texture", "0.15"},
    {"data.target.brightness", "0.0"},
    {"data.target.background_mean", "0.30,0.35,0.30"},
    {"data.target.foreground_mean", "0.75,0.70,0.80"},
    {"data.target.color_spread", "0.2"},
    {"model.arch", "conv4"},
    {"model.width", "32"},
    {"model.blocks", "4"},
    {"model.distance", "euclidean"},
    {"decomposition.method", "fft"},
    {"decomposition.cutoff", "0.15"},
    {"decomposition.shape", "circular"},
    {"decomposition.levels", "2"},
    {"pretrain.epochs", "15"},
    {"pretrain.batch_size", "32"},
    {"pretrain.learning_rate", "0.002"},
    {"meta.epochs", "4"},
    {"meta.episodes_per_epoch", "25"},
    {"meta.n_way", "5"},
    {"meta.k_shot", "5"},
    {"meta.m_query", "10"},
    {"meta.learning_rate", "0.001"},
    {"meta.optimizer", "adam"},
    {"meta.m1", "0.997"},
    {"meta.m2", "0.999"},
    {"meta.divergence_threshold", "10000"},
    {"losses.ce_weight", "1"},
    {"losses.align_weight", "1"},
    {"losses.recon_weight", "1"},
    {"augment.brightness", "0.4"},
    {"augment.contrast", "0.4"},
    {"augment.saturation", "0.4"},
    {"augment.hflip_prob", "0.5"},
    {"eval.tasks", "200"},
    {"eval.n_way", "5"},
    {"eval.k_shot", "1"},
    {"eval.m_query", "15"},
    {"eval.transductive", "false"},
    {"eval.pseudo_top", "0"},
    {"eval.min_confidence", "0"},
    {"eval.l2", "1"},
};

Defaults paper_preset() {
  Defaults d = kDesk;
  const Defaults over = {
      {"preset", "paper"},
      {"run.name", "paper"},
      {"data.image_size", "84"},
      {"data.source.path", "data/mini-imagenet"},
      {"data.source.domain", "mini-imagenet"},
      {"data.target.path", "data/cub"},
      {"data.target.domain", "cub"},
      {"model.arch", "resnet10"},
      {"model.width", "64"},
      {"pretrain.epochs", "400"},
      {"pretrain.batch_size", "64"},
      {"pretrain.learning_rate", "0.001"},
      {"meta.epochs", "50"},
      {"meta.episodes_per_epoch", "100"},
      {"meta.n_way", "5"},
      {"meta.k_shot", "5"},
      {"meta.m_query", "15"},
      {"meta.learning_rate", "0.001"},
      {"meta.m1", "0.997"},
      {"meta.m2", "0.999"},
      {"eval.tasks", "600"},
      {"eval.n_way", "5"},
      {"eval.k_shot", "5"},
      {"eval.m_query", "15"},
  };
  for (const auto& [k, v] : over) {
    for (auto& e : d) {
      if (e.first == k) e.second = v;
    }
  }
  return d;
}

Defaults momentum_preset() {
  Defaults d = paper_preset();
  for (auto& e : d) {
    if (e.first == "preset") e.second = "appendix-momentum";
    if (e.first == "run.name") e.second = "appendix-momentum";
    if (e.first == "meta.m1") e.second = "0.9997";
    if (e.first == "meta.m2") e.second = "0.9999";
  }
  return d;
}

std::string origin_of(const std::string& file, const YAML::Mark& mark) {
  return file + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

void flatten(const YAML::Node& node, const std::string& prefix, const std::string& file,
             std::vector<std::pair<std::string, ConfigValue>>& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? key : prefix + "." + key, file, out);
    }
    return;
  }
  ConfigValue v;
  v.origin = origin_of(file, node.Mark());
  if (node.IsSequence()) {
    for (std::size_t i = 0; i < node.size(); ++i) {
      if (!node[i].IsScalar()) {
        throw ConfigError(origin_of(file, node[i].Mark()) + ": " + prefix +
                          ": list entries must be scalars");
      }
      v.value += (i ? "," : "") + node[i].as<std::string>();
    }
  } else if (node.IsScalar()) {
    v.value = node.as<std::string>();
  }
  out.emplace_back(prefix, v);
}

class Getter {
 public:
  explicit Getter(const FlatConfig& f) : f_(f) {}

  const ConfigValue& raw(const std::string& key) const {
    auto it = f_.find(key);
    if (it == f_.end()) throw ConfigError(key + ": missing key");
    return it->second;
  }
  std::string str(const std::string& key) const { return raw(key).value; }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto& v = raw(key);
    throw ConfigError(v.origin + ": " + key + ": " + what);
  }
  long long integer(const std::string& key) const {
    const auto& v = raw(key);
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(v.value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.value.size()) fail(key, "expected an integer, got '" + v.value + "'");
    return x;
  }
  int i32(const std::string& key) const {
    const long long x = integer(key);
    if (x < -2147483647LL || x > 2147483647LL) fail(key, "integer out of range");
    return static_cast<int>(x);
  }
  double real(const std::string& key) const {
    const auto& v = raw(key);
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(v.value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.value.size() || !std::isfinite(x)) {
      fail(key, "expected a finite number, got '" + v.value + "'");
    }
    return x;
  }
  bool boolean(const std::string& key) const {
    const auto s = str(key);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    fail(key, "expected true|false, got '" + s + "'");
  }
  std::vector<double> triple(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        fail(key, "expected three numbers, got '" + str(key) + "'");
      }
    }
    if (out.size() != 3) fail(key, "expected three numbers, got '" + str(key) + "'");
    return out;
  }
  template <class F>
  auto parsed(const std::string& key, F&& parse) const {
    try {
      return parse(str(key));
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

 private:
  const FlatConfig& f_;
};

DataSpec data_spec(const Getter& g, const std::string& role, int image_size, int n_way) {
  const std::string p = "data." + role + ".";
  DataSpec d;
  d.path = g.str(p + "path");
  d.split = g.parsed(p + "split", parse_split);
  auto& s = d.synthetic;
  s.name = "synthetic-" + role;
  s.domain = g.str(p + "domain");
  s.num_classes = g.i32(p + "classes");
  s.class_offset = g.i32(p + "class_offset");
  s.samples_per_class = g.i32(p + "samples_per_class");
  s.image_size = image_size;
  s.background = g.parsed(p + "background", parse_background);
  s.texture_strength = g.real(p + "texture");
  s.brightness_offset = g.real(p + "brightness");
  const auto bg = g.triple(p + "background_mean");
  const auto fg = g.triple(p + "foreground_mean");
  for (int c = 0; c < 3; ++c) {
    s.background_mean[c] = bg[c];
    s.foreground_mean[c] = fg[c];
  }
  s.color_spread = g.real(p + "color_spread");
  s.episode_way = n_way;
  if (!d.path.empty()) {
    if (!fs::exists(d.path)) g.fail(p + "path", "dataset directory '" + d.path.string() + "' does not exist");
  } else {
    if (s.num_classes < n_way) g.fail(p + "classes", "fewer synthetic classes than the episode way");
    if (s.class_offset < 0 || s.class_offset + s.num_classes > kSyntheticShapeClasses) {
      g.fail(p + "class_offset", "synthetic classes must lie in [0, " +
                                     std::to_string(kSyntheticShapeClasses) + ")");
    }
    if (s.samples_per_class < 1) g.fail(p + "samples_per_class", "must be >= 1");
  }
  return d;
}

}  // namespace

std::vector<std::string> preset_names() { return {"desk", "paper", "appendix-momentum"}; }

FlatConfig preset_defaults(const std::string& name) {
  Defaults d;
  if (name == "desk") {
    d = kDesk;
  } else if (name == "paper") {
    d = paper_preset();
  } else if (name == "appendix-momentum") {
    d = momentum_preset();
  } else {
    throw ConfigError("preset: unknown preset '" + name + "' (expected desk|paper|appendix-momentum)");
  }
  FlatConfig out;
  for (const auto& [k, v] : d) out[k] = {v, "preset " + name};
  return out;
}

FlatConfig load_flat_config(const std::optional<fs::path>& file, const std::string& preset_override,
                            const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, ConfigValue>> entries;
  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file '" + file->string() + "' does not exist");
    YAML::Node root;
    try {
      root = YAML::LoadFile(file->string());
    } catch (const YAML::Exception& e) {
      throw ConfigError(origin_of(file->string(), e.mark) + ": " + e.msg);
    }
    if (root.IsDefined() && !root.IsNull()) {
      if (!root.IsMap()) throw ConfigError(file->string() + ": top level must be a mapping");
      flatten(root, "", file->string(), entries);
    }
  }
  std::string preset = "desk";
  for (const auto& [k, v] : entries) {
    if (k == "preset") preset = v.value;
  }
  if (!preset_override.empty()) preset = preset_override;
  FlatConfig flat = preset_defaults(preset);
  for (auto& [k, v] : entries) {
    if (!flat.count(k)) throw ConfigError(v.origin + ": unknown key '" + k + "'");
    flat[k] = v;
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set " + o + ": expected key=value");
    }
    const std::string key = o.substr(0, eq);
    if (!flat.count(key)) throw ConfigError("--set " + o + ": unknown key '" + key + "'");
    if (key == "preset") throw ConfigError("--set " + o + ": use --preset to change presets");
    flat[key] = {o.substr(eq + 1), "--set " + key};
  }
  flat["preset"] = {preset, flat["preset"].origin};
  return flat;
}

RunConfig resolve_config(const FlatConfig& flat) {
  const Getter g(flat);
  RunConfig rc;
  rc.flat = flat;
  rc.preset = g.str("preset");
  rc.run_name = g.str("run.name");
  if (rc.run_name.empty() || rc.run_name.find('/') != std::string::npos) {
    g.fail("run.name", "must be a non-empty name without '/'");
  }
  rc.output_dir = g.str("run.output_dir");

  auto& t = rc.train;
  const long long seed = g.integer("seed");
  if (seed < 0) g.fail("seed", "must be >= 0");
  t.seed = static_cast<std::uint64_t>(seed);
  t.image_size = g.i32("data.image_size");
  t.arch.kind = g.parsed("model.arch", parse_arch_kind);
  t.arch.width = g.i32("model.width");
  t.arch.blocks = g.i32("model.blocks");
  if (t.arch.width < 1) g.fail("model.width", "must be >= 1");
  if (t.arch.blocks < 1) g.fail("model.blocks", "must be >= 1");
  t.distance = g.parsed("model.distance", parse_distance);
  t.decomposition.method = g.parsed("decomposition.method", freq::parse_method);
  t.decomposition.cutoff = g.real("decomposition.cutoff");
  t.decomposition.shape = g.parsed("decomposition.shape", freq::parse_mask_shape);
  t.decomposition.levels = g.i32("decomposition.levels");
  t.pretrain_epochs = g.i32("pretrain.epochs");
  t.pretrain_batch_size = g.i32("pretrain.batch_size");
  t.pretrain_learning_rate = g.real("pretrain.learning_rate");
  t.meta_epochs = g.i32("meta.epochs");
  t.episodes_per_epoch = g.i32("meta.episodes_per_epoch");
  t.n_way = g.i32("meta.n_way");
  t.k_shot = g.i32("meta.k_shot");
  t.m_query = g.i32("meta.m_query");
  t.learning_rate = g.real("meta.learning_rate");
  t.optimizer = g.parsed("meta.optimizer", parse_optimizer);
  t.m1 = g.real("meta.m1");
  t.m2 = g.real("meta.m2");
  t.divergence_threshold = g.real("meta.divergence_threshold");
  t.weights.ce = g.real("losses.ce_weight");
  t.weights.align = g.real("losses.align_weight");
  t.weights.recon = g.real("losses.recon_weight");
  t.augment.brightness = g.real("augment.brightness");
  t.augment.contrast = g.real("augment.contrast");
  t.augment.saturation = g.real("augment.saturation");
  t.augment.hflip_prob = g.real("augment.hflip_prob");
  t.augment.height = t.augment.width = t.image_size;

  auto& e = rc.eval;
  e.tasks = g.i32("eval.tasks");
  e.n_way = g.i32("eval.n_way");
  e.k_shot = g.i32("eval.k_shot");
  e.m_query = g.i32("eval.m_query");
  e.image_size = t.image_size;
  e.seed = t.seed;
  e.pseudo_top = g.i32("eval.pseudo_top");
  e.min_confidence = g.real("eval.min_confidence");
  e.head.l2 = g.real("eval.l2");
  rc.transductive = g.boolean("eval.transductive");

  // Re-anchor validation failures on the key that caused them.
  auto anchored = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& err) {
      const std::string msg = err.what();
      const std::string key = msg.substr(0, msg.find(' '));
      if (flat.count(key)) g.fail(key, msg.substr(msg.find(' ') + 1));
      throw;
    }
  };
  anchored([&] { t.validate(); });
  anchored([&] { e.validate(); });

  rc.source = data_spec(g, "source", t.image_size, t.n_way);
  rc.target = data_spec(g, "target", t.image_size, e.n_way);
  return rc;
}

std::string RunConfig::canonical() const {
  std::string s;
  for (const auto& [k, v] : flat) s += k + "=" + v.value + "\n";
  return s;
}

std::uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

Dataset load_data(const DataSpec& spec, std::uint64_t seed, const std::string& role) {
  if (spec.path.empty()) {
    return make_synthetic(spec.synthetic, derive_seed(seed, "synthetic-" + role));
  }
  return load_dataset(spec.path, spec.split);
}

}  // namespace fpml
