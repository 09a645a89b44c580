#include "fpml/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpml/checkpoint.hpp"
#include "fpml/config.hpp"
#include "fpml/errors.hpp"
#include "fpml/evaluation.hpp"
#include "fpml/freq.hpp"
#include "fpml/plots.hpp"
#include "fpml/training.hpp"

namespace fpml {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::string preset;
  std::vector<std::string> sets;
  bool check = false;
};

// Exclusive ownership of a run directory for the lifetime of a command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd, pid.data(), pid.size()) < 0) {
          ::close(fd);
          throw Error("cannot write lock file '" + path_.string() + "'");
        }
        ::close(fd);
        return;
      }
      long owner = 0;
      std::ifstream in(path_);
      in >> owner;
      if (owner > 0 && fs::exists("/proc/" + std::to_string(owner))) {
        throw Error("run directory '" + dir.string() + "' is locked by pid " + std::to_string(owner));
      }
      fs::remove(path_);  // stale lock from a dead process
    }
    throw Error("cannot acquire lock '" + path_.string() + "'");
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

RunConfig load_run_config(const GlobalOptions& g) {
  std::optional<fs::path> file;
  if (!g.config.empty()) file = g.config;
  return resolve_config(load_flat_config(file, g.preset, g.sets));
}

struct RunDirs {
  fs::path root, checkpoints, logs, reports, plots;
  explicit RunDirs(const fs::path& r)
      : root(r), checkpoints(r / "checkpoints"), logs(r / "logs"), reports(r / "reports"),
        plots(r / "plots") {}
  void create() const {
    for (const auto& d : {checkpoints, logs, reports, plots}) fs::create_directories(d);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

CheckpointMeta run_meta(const RunConfig& rc) {
  return {{"config_hash", hex(rc.hash())},
          {"preset", rc.preset},
          {"seed", std::to_string(rc.train.seed)}};
}

class Timing {
 public:
  explicit Timing(const fs::path& path) : out_(path, std::ios::app) {}
  void record(const json& j) {
    if (out_) out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string metrics_text(const std::vector<StepRecord>& history) {
  std::string s;
  for (const auto& h : history) {
    json j = {{"step", h.step},          {"epoch", h.epoch},
              {"ce", h.loss.ce},         {"align", h.loss.align},
              {"recon", h.loss.recon},   {"total", h.loss.total}};
    s += j.dump() + "\n";
  }
  return s;
}

int cmd_pretrain(const GlobalOptions& g, std::ostream& out) {
  const RunConfig rc = load_run_config(g);
  if (g.check) {
    out << "config ok (preset " << rc.preset << ", hash " << hex(rc.hash()) << ")\n";
    return kExitOk;
  }
  const RunDirs dirs(rc.run_dir());
  RunLock lock(dirs.root);
  dirs.create();
  write_text(dirs.root / "config.resolved", rc.canonical());
  const Dataset source = load_data(rc.source, rc.train.seed, "source");
  out << "pretrain: " << source.num_classes() << " classes, " << source.total_samples()
      << " images, " << rc.train.pretrain_epochs << " epochs\n";

  std::string log;
  Timing timing(dirs.logs / "timing.ndjson");
  const auto start = std::chrono::steady_clock::now();
  const auto result = pretrain(source, rc.train, [&](int epoch, double loss) {
    log += json({{"epoch", epoch}, {"loss", loss}}).dump() + "\n";
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing.record({{"phase", "pretrain"}, {"epoch", epoch}, {"wall_clock", secs}});
    out << "  epoch " << epoch << " loss " << loss << "\n";
  });
  write_text(dirs.logs / "pretrain.ndjson", log);
  auto meta = run_meta(rc);
  meta["head_classes"] = std::to_string(result.head_classes);
  meta["epochs"] = std::to_string(rc.train.pretrain_epochs);
  save_embedding(result.backbone, dirs.checkpoints / "pretrain.ckpt", meta);
  plots::line_chart(result.epoch_losses, "pre-training cross-entropy per epoch",
                    dirs.plots / "pretrain_loss.png");
  out << "wrote " << (dirs.checkpoints / "pretrain.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_metatrain(const GlobalOptions& g, const std::string& from, std::ostream& out) {
  const RunConfig rc = load_run_config(g);
  const RunDirs dirs(rc.run_dir());
  const fs::path start_path = from.empty() ? dirs.checkpoints / "pretrain.ckpt" : fs::path(from);
  if (!fs::exists(start_path)) {
    throw ConfigError("--from-checkpoint: '" + start_path.string() + "' does not exist");
  }
  if (g.check) {
    peek_checkpoint_kind(start_path);
    out << "config ok (preset " << rc.preset << ", hash " << hex(rc.hash()) << ")\n";
    return kExitOk;
  }
  RunLock lock(dirs.root);
  dirs.create();
  write_text(dirs.root / "config.resolved", rc.canonical());

  TrainState state;
  if (peek_checkpoint_kind(start_path) == CheckpointKind::train_state) {
    state = load_train_state(start_path, &rc.train.arch);
    out << "resuming from epoch " << state.epoch << " (step " << state.step << ")\n";
  } else {
    const auto pretrained = load_embedding(start_path, &rc.train.arch);
    state = make_train_state(init_branches(pretrained, rc.train), rc.train);
  }
  const Dataset source = load_data(rc.source, rc.train.seed, "source");
  Timing timing(dirs.logs / "timing.ndjson");

  MetaTrainOptions opts;
  opts.on_step = [&](const StepRecord& r) {
    timing.record({{"phase", "metatrain"}, {"step", r.step}, {"wall_clock", r.wall_clock}});
  };
  opts.on_epoch_end = [&](const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "meta_epoch_%03d.ckpt", s.epoch);
    const auto meta = run_meta(rc);
    save_train_state(s, dirs.checkpoints / name, meta);
    save_train_state(s, dirs.checkpoints / "meta_latest.ckpt", meta);
    write_text(dirs.logs / "metrics.ndjson", metrics_text(s.history));
    double sum = 0.0;
    int n = 0;
    for (const auto& h : s.history) {
      if (h.epoch == s.epoch - 1) {
        sum += h.loss.total;
        ++n;
      }
    }
    out << "  epoch " << s.epoch - 1 << " mean total loss " << (n ? sum / n : 0.0) << "\n";
  };
  meta_train(state, source, rc.train, opts);

  write_text(dirs.logs / "metrics.ndjson", metrics_text(state.history));
  save_train_state(state, dirs.checkpoints / "meta_final.ckpt", run_meta(rc));
  save_embedding(state.branches.theta, dirs.checkpoints / "theta.ckpt", run_meta(rc));
  if (!state.history.empty()) {
    std::vector<double> totals;
    for (const auto& h : state.history) totals.push_back(h.loss.total);
    plots::line_chart(totals, "meta-training total loss per episode", dirs.plots / "meta_loss.png");
  }
  out << "wrote " << (dirs.checkpoints / "theta.ckpt").string() << "\n";
  return kExitOk;
}

Tensor embed_sample(const EmbeddingParams& theta, const Dataset& ds, int per_class, int size) {
  const Embedder embed = backbone_embedder(theta);
  std::vector<Image> imgs;
  for (int c = 0; c < ds.num_classes(); ++c) {
    const int n = std::min<int>(per_class, static_cast<int>(ds.samples[c].size()));
    for (int i = 0; i < n; ++i) imgs.push_back(resize_bilinear(ds.samples[c][i], size, size));
  }
  Tensor all = Tensor::matrix(static_cast<int>(imgs.size()), theta.arch.feature_dim());
  for (std::size_t b = 0; b < imgs.size(); b += 64) {
    std::vector<const Image*> batch;
    for (std::size_t i = b; i < std::min(imgs.size(), b + 64); ++i) batch.push_back(&imgs[i]);
    const Tensor f = embed(batch);
    std::copy(f.data.begin(), f.data.end(), all.data.begin() + b * all.cols());
  }
  return all;
}

Tensor row_subset(const Tensor& m, int parity) {
  std::vector<int> rows;
  for (int r = parity; r < m.rows(); r += 2) rows.push_back(r);
  Tensor out = Tensor::matrix(static_cast<int>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

int cmd_metatest(const GlobalOptions& g, const std::string& checkpoint, bool transductive_flag,
                 int tasks, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  if (tasks > 0) rc.eval.tasks = tasks;
  const bool transductive = transductive_flag || rc.transductive;
  const RunDirs dirs(rc.run_dir());
  const fs::path ckpt = checkpoint.empty() ? dirs.checkpoints / "theta.ckpt" : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("--checkpoint: '" + ckpt.string() + "' does not exist");
  if (g.check) {
    peek_checkpoint_kind(ckpt);
    out << "config ok (preset " << rc.preset << ", hash " << hex(rc.hash()) << ")\n";
    return kExitOk;
  }
  RunLock lock(dirs.root);
  dirs.create();
  const EmbeddingParams theta = load_embedding(ckpt, &rc.train.arch);
  const std::uint64_t before = param_hash(theta);
  const Dataset target = load_data(rc.target, rc.train.seed, "target");
  const EvalReport report = transductive ? transductive_meta_test(theta, target, rc.eval)
                                         : meta_test(theta, target, rc.eval);
  if (param_hash(theta) != before) throw Error("meta-test mutated the embedding parameters");

  const std::string mode = to_string(report.mode);
  write_report(report, dirs.reports / ("metatest_" + mode + ".txt"));
  Timing timing(dirs.logs / "timing.ndjson");
  for (std::size_t t = 0; t < report.wall_clock_per_task.size(); ++t) {
    timing.record({{"phase", "metatest"}, {"task", t}, {"seconds", report.wall_clock_per_task[t]}});
  }
  plots::histogram(report.per_task_accuracy, 20, 0.0, 1.0, "per-task accuracy (" + mode + ")",
                   dirs.plots / ("accuracy_" + mode + ".png"));

  // First-order domain gap between source and target features, with the gap
  // between two halves of the target as a within-domain reference.
  const Dataset source = load_data(rc.source, rc.train.seed, "source");
  const int size = rc.train.image_size;
  const Tensor fs_src = embed_sample(theta, source, 10, size);
  const Tensor fs_tgt = embed_sample(theta, target, 10, size);
  const double cross = domain_gap(fs_src, fs_tgt);
  const double within = domain_gap(row_subset(fs_tgt, 0), row_subset(fs_tgt, 1));
  json gap = {{"source_target", cross}, {"target_halves", within}};
  write_text(dirs.reports / "domain_gap.json", gap.dump(2) + "\n");
  plots::bar_chart({"source-target", "target halves"}, {cross, within}, "feature-mean domain gap",
                   dirs.plots / "domain_gap.png");
  for (int c = 0; c < std::min(4, target.num_classes()); ++c) {
    const Image img = resize_bilinear(target.samples[c][0], size, size);
    char name[32];
    std::snprintf(name, sizeof name, "highlight_%02d.png", c);
    plots::heatmap_overlay(img, feature_highlight(theta, img), dirs.plots / name);
  }

  char line[96];
  std::snprintf(line, sizeof line, "%s %d-way %d-shot on %s: %.2f +- %.2f%% over %zu tasks\n",
                mode.c_str(), report.n_way, report.k_shot, report.domain.c_str(), 100 * report.mean,
                100 * report.ci95, report.per_task_accuracy.size());
  out << line;
  return kExitOk;
}

// Affine map of a component onto [0,1] for storage. High components use a
// symmetric range so zero lands on the midpoint.
json rescale(Image& img, bool symmetric) {
  double offset = 0.0, gain = 1.0;
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  if (symmetric) {
    const double a = std::max(std::abs(*lo), std::abs(*hi));
    if (a > 1e-12) {
      offset = -a;
      gain = 2 * a;
    } else {
      offset = -0.5;
    }
  } else {
    offset = *lo;
    if (*hi - *lo > 1e-12) gain = *hi - *lo;
  }
  for (auto& v : img.pixels) v = (v - offset) / gain;
  return {{"offset", offset}, {"gain", gain}};
}

int cmd_decompose(const GlobalOptions& g, const std::string& image_path, double cutoff,
                  const std::string& method, int levels, const std::string& shape,
                  const std::string& out_dir, std::ostream& out) {
  freq::DecompositionSettings s;
  try {
    s.method = freq::parse_method(method);
    s.shape = freq::parse_mask_shape(shape);
  } catch (const ConfigError& e) {
    throw CLI::ValidationError(e.what());
  }
  s.cutoff = cutoff;
  s.levels = levels;
  const Image img = read_image(image_path);
  if (g.check) {
    out << "ok: " << image_path << " " << img.width << "x" << img.height << "\n";
    return kExitOk;
  }
  auto pair = freq::decompose(img, s);
  const fs::path dir = out_dir.empty() ? fs::path(image_path).parent_path() : fs::path(out_dir);
  const std::string stem = fs::path(image_path).stem().string();
  json side = {{"method", freq::to_string(s.method)},
               {"cutoff", s.cutoff},
               {"shape", freq::to_string(s.shape)},
               {"levels", s.levels},
               {"encoding", "value = offset + gain * pixel / 65535"}};
  side["low"] = rescale(pair.low, false);
  side["high"] = rescale(pair.high, true);
  side["low"]["file"] = stem + "_low.png";
  side["high"]["file"] = stem + "_high.png";
  if (!dir.empty()) fs::create_directories(dir);
  write_image16(pair.low, dir / (stem + "_low.png"));
  write_image16(pair.high, dir / (stem + "_high.png"));
  write_text(dir / (stem + "_decompose.json"), side.dump(2) + "\n");
  out << "wrote " << (dir / (stem + "_low.png")).string() << " and "
      << (dir / (stem + "_high.png")).string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"frequency-prior meta-learning for cross-domain few-shot classification", "fpml"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("-c,--config", g.config, "YAML run config");
  app.add_option("--preset", g.preset, "desk | paper | appendix-momentum");
  app.add_option("--set", g.sets, "override a config key: key=value")->allow_extra_args(false);
  app.add_flag("--check", g.check, "validate only; write nothing");

  auto* pre = app.add_subcommand("pretrain", "supervised pre-training on the source domain");

  std::string from;
  auto* meta = app.add_subcommand("metatrain", "three-branch meta-training");
  meta->add_option("--from-checkpoint", from,
                   "pre-trained embedding or meta-training state to resume");

  std::string checkpoint;
  bool transductive = false;
  int tasks = 0;
  auto* test = app.add_subcommand("metatest", "evaluate on the target domain");
  test->add_option("--checkpoint", checkpoint, "embedding checkpoint (default <run>/checkpoints/theta.ckpt)");
  test->add_flag("--transductive", transductive, "expand support with pseudo-labelled queries");
  test->add_option("--tasks", tasks, "number of test tasks")->check(CLI::PositiveNumber);

  std::string image, method = "fft", shape = "circular", out_dir;
  double cutoff = 0.15;
  int levels = 2;
  auto* dec = app.add_subcommand("decompose", "split an image into low and high frequency parts");
  dec->add_option("image", image, "input image")->required();
  dec->add_option("--cutoff", cutoff, "normalized mask radius in [0,1]")->check(CLI::Range(0.0, 1.0));
  dec->add_option("--method", method, "fft | haar");
  dec->add_option("--levels", levels, "Haar levels")->check(CLI::PositiveNumber);
  dec->add_option("--shape", shape, "circular | square");
  dec->add_option("--out", out_dir, "output directory (default: next to the image)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*pre) return cmd_pretrain(g, out);
    if (*meta) return cmd_metatrain(g, from, out);
    if (*test) return cmd_metatest(g, checkpoint, transductive, tasks, out);
    if (*dec) return cmd_decompose(g, image, cutoff, method, levels, shape, out_dir, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fpml
