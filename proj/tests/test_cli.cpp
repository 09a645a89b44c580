#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fpml/cli.hpp"
#include "fpml/freq.hpp"
#include "fpml/image.hpp"
#include "fpml/rng.hpp"

using namespace fpml;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fpml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fpml_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small enough to run the whole pipeline in seconds.
std::vector<std::string> tiny_sets(const fs::path& out, const std::string& name) {
  return {"--set", "run.output_dir=" + out.string(), "--set", "run.name=" + name,
          "--set", "data.image_size=16",           "--set", "model.width=6",
          "--set", "model.blocks=2",               "--set", "data.source.classes=6",
          "--set", "data.source.samples_per_class=12", "--set", "data.target.classes=6",
          "--set", "data.target.samples_per_class=12", "--set", "pretrain.epochs=1",
          "--set", "meta.epochs=2",                "--set", "meta.episodes_per_epoch=2",
          "--set", "meta.m_query=3",               "--set", "eval.tasks=4",
          "--set", "eval.m_query=5"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

Image decode(const fs::path& png, const json& enc) {
  Image img = read_image16(png);
  const double offset = enc.at("offset"), gain = enc.at("gain");
  for (auto& v : img.pixels) v = offset + gain * v;
  return img;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"fly"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  EXPECT_EQ(run({"--set", "nope=1", "pretrain", "--check"}).code, kExitUsage);
  EXPECT_EQ(run({"--preset", "huge", "pretrain", "--check"}).code, kExitUsage);
  const Result r = run({"--preset", "paper", "pretrain", "--check"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("data.source.path"), std::string::npos) << r.err;
}

TEST(Cli, CheckWritesNothing) {
  const fs::path out = fresh_dir("check");
  const Result r = run(with({"--check", "pretrain"}, tiny_sets(out, "c")));
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("config ok"), std::string::npos);
  EXPECT_TRUE(fs::is_empty(out));
  EXPECT_EQ(run(with({"--check", "metatrain"}, tiny_sets(out, "c"))).code, kExitUsage);
  EXPECT_TRUE(fs::is_empty(out));
}

TEST(Cli, MissingCheckpointIsUsageError) {
  const fs::path out = fresh_dir("missing");
  const Result r = run(with({"metatest", "--checkpoint", (out / "none.ckpt").string()},
                            tiny_sets(out, "m")));
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
}

TEST(Cli, LockedRunDirectoryIsRuntimeError) {
  const fs::path out = fresh_dir("lock");
  fs::create_directories(out / "l");
  std::ofstream(out / "l" / ".lock") << ::getpid() << "\n";
  const Result r = run(with({"pretrain"}, tiny_sets(out, "l")));
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
  // A lock left by a process that no longer exists is taken over.
  std::ofstream(out / "l" / ".lock", std::ios::trunc) << 999999999 << "\n";
  EXPECT_EQ(run(with({"pretrain"}, tiny_sets(out, "l"))).code, kExitOk);
  EXPECT_FALSE(fs::exists(out / "l" / ".lock"));
}

TEST(Cli, DecomposeRoundTripsThroughFiles) {
  const fs::path dir = fresh_dir("decompose");
  Rng rng(4);
  Image img(3, 20, 24);
  for (auto& v : img.pixels) v = uniform01(rng);
  write_image(img, dir / "pic.png");
  const Image x = read_image(dir / "pic.png");
  for (const std::string method : {"fft", "haar"}) {
    const Result r = run({"decompose", (dir / "pic.png").string(), "--cutoff", "0.2", "--method",
                          method, "--out", (dir / method).string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const json side = json::parse(slurp(dir / method / "pic_decompose.json"));
    const Image low = decode(dir / method / "pic_low.png", side.at("low"));
    const Image high = decode(dir / method / "pic_high.png", side.at("high"));
    freq::DecompositionSettings s;
    s.method = freq::parse_method(method);
    s.cutoff = 0.2;
    const auto ref = freq::decompose(x, s);
    EXPECT_LT(max_abs_diff(low, ref.low), 1e-3);
    EXPECT_LT(max_abs_diff(high, ref.high), 1e-3);
    Image sum = low;
    for (std::size_t i = 0; i < sum.pixels.size(); ++i) sum.pixels[i] += high.pixels[i];
    EXPECT_LT(max_abs_diff(sum, x), 1e-3);
  }
}

TEST(Cli, ConstantImageHasMidpointHighComponent) {
  const fs::path dir = fresh_dir("constant");
  write_image(Image(3, 8, 8, 0.4), dir / "flat.png");
  ASSERT_EQ(run({"decompose", (dir / "flat.png").string()}).code, kExitOk);
  const Image high = read_image16(dir / "flat_high.png");
  for (double v : high.pixels) EXPECT_NEAR(v, 0.5, 1.0 / 65535);
}

TEST(Cli, DecomposeArgumentErrors) {
  const fs::path dir = fresh_dir("decompose_err");
  write_image(Image(3, 8, 8, 0.4), dir / "a.png");
  const std::string a = (dir / "a.png").string();
  EXPECT_EQ(run({"decompose", a, "--method", "dct"}).code, kExitUsage);
  EXPECT_EQ(run({"decompose", a, "--shape", "hex"}).code, kExitUsage);
  EXPECT_EQ(run({"decompose", a, "--cutoff", "1.5"}).code, kExitUsage);
  EXPECT_EQ(run({"decompose", (dir / "absent.png").string()}).code, kExitRuntime);
  EXPECT_EQ(run({"--check", "decompose", a}).code, kExitOk);
  EXPECT_FALSE(fs::exists(dir / "a_low.png"));
}

TEST(Cli, PipelineRerunIsByteIdentical) {
  const fs::path out = fresh_dir("pipeline");
  for (const std::string name : {"one", "two"}) {
    for (const std::string cmd : {"pretrain", "metatrain", "metatest"}) {
      const Result r = run(with({cmd}, tiny_sets(out, name)));
      ASSERT_EQ(r.code, kExitOk) << cmd << ": " << r.err;
    }
  }
  for (const char* file : {"logs/pretrain.ndjson", "logs/metrics.ndjson",
                           "reports/metatest_inductive.txt", "reports/domain_gap.json"}) {
    const std::string a = slurp(out / "one" / file);
    EXPECT_FALSE(a.empty()) << file;
    EXPECT_EQ(a, slurp(out / "two" / file)) << file;
  }
  std::istringstream metrics(slurp(out / "one" / "logs/metrics.ndjson"));
  std::string line;
  int rows = 0;
  while (std::getline(metrics, line)) {
    const json j = json::parse(line);
    for (const char* k : {"step", "epoch", "ce", "align", "recon", "total"}) EXPECT_TRUE(j.contains(k));
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  for (const char* f : {"checkpoints/theta.ckpt", "checkpoints/meta_epoch_001.ckpt",
                        "plots/pretrain_loss.png", "plots/meta_loss.png",
                        "plots/accuracy_inductive.png", "plots/highlight_00.png"}) {
    EXPECT_TRUE(fs::exists(out / "one" / f)) << f;
  }
  // Resuming from an epoch checkpoint reproduces the final state.
  const Result r = run(with({"metatrain", "--from-checkpoint",
                             (out / "one" / "checkpoints/meta_epoch_001.ckpt").string()},
                            tiny_sets(out, "one")));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(out / "one" / "logs/metrics.ndjson"), slurp(out / "two" / "logs/metrics.ndjson"));
  EXPECT_EQ(slurp(out / "one" / "checkpoints/theta.ckpt"),
            slurp(out / "two" / "checkpoints/theta.ckpt"));
}
