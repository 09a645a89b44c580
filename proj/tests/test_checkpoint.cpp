#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fpml/checkpoint.hpp"
#include "fpml/errors.hpp"
#include "tiny.hpp"

using namespace fpml;
using namespace fpml::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fpml_checkpoint_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << b;
}

}  // namespace

TEST(Checkpoint, EmbeddingRoundTripIsExact) {
  const TrainConfig c = tiny_config();
  Rng rng(3);
  const EmbeddingParams p = init_embedding(c.arch, rng);
  const fs::path path = scratch("emb.ckpt");
  save_embedding(p, path, {{"seed", "3"}});
  const EmbeddingParams q = load_embedding(path, &c.arch);
  EXPECT_EQ(param_hash(p), param_hash(q));
  EXPECT_EQ(peek_checkpoint_kind(path), CheckpointKind::embedding);
  const auto meta = read_checkpoint_meta(path);
  EXPECT_EQ(meta.at("seed"), "3");
  EXPECT_EQ(meta.at("arch"), c.arch.describe());
  EXPECT_EQ(meta.at("parameters"), std::to_string(p.count()));
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST(Checkpoint, TrainStateRoundTripResumesIdentically) {
  const TrainConfig c = tiny_config();
  const Dataset ds = tiny_dataset();
  TrainConfig first = c;
  first.meta_epochs = 1;
  TrainState s = make_train_state(tiny_branches(c), c);
  meta_train(s, ds, first);
  const fs::path path = scratch("state.ckpt");
  save_train_state(s, path);
  TrainState loaded = load_train_state(path, &c.arch);
  EXPECT_EQ(loaded.step, s.step);
  EXPECT_EQ(loaded.epoch, 1);
  EXPECT_EQ(loaded.optimizer, s.optimizer);
  EXPECT_EQ(loaded.branches.eta.weight, s.branches.eta.weight);
  ASSERT_EQ(loaded.history.size(), s.history.size());
  EXPECT_EQ(read_checkpoint_meta(path).at("step"), std::to_string(s.step));

  meta_train(s, ds, c);
  meta_train(loaded, ds, c);
  EXPECT_EQ(param_hash(loaded.branches.theta), param_hash(s.branches.theta));
  EXPECT_EQ(param_hash(loaded.branches.phi), param_hash(s.branches.phi));
  EXPECT_EQ(param_hash(loaded.branches.varphi), param_hash(s.branches.varphi));

  // A training state also serves as an embedding source.
  EXPECT_EQ(param_hash(load_embedding(path)), param_hash(load_train_state(path).branches.theta));
}

TEST(Checkpoint, ArchitectureMismatchIsFormatError) {
  const TrainConfig c = tiny_config();
  Rng rng(3);
  const fs::path path = scratch("arch.ckpt");
  save_embedding(init_embedding(c.arch, rng), path);
  ArchSpec other = c.arch;
  other.width = 5;
  try {
    load_embedding(path, &other);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("architecture mismatch"), std::string::npos);
  }
  EXPECT_THROW(load_train_state(path), FormatError);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const TrainConfig c = tiny_config();
  Rng rng(3);
  const fs::path path = scratch("corrupt.ckpt");
  save_embedding(init_embedding(c.arch, rng), path);
  const std::string good = read_bytes(path);

  std::string bad = good;
  bad[0] = 'X';
  write_bytes(path, bad);
  EXPECT_THROW(load_embedding(path), FormatError);

  bad = good;
  bad[8] = 99;
  write_bytes(path, bad);
  try {
    load_embedding(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }

  write_bytes(path, good.substr(0, good.size() - 5));
  EXPECT_THROW(load_embedding(path), FormatError);
  write_bytes(path, good + "x");
  EXPECT_THROW(load_embedding(path), FormatError);
  EXPECT_THROW(load_embedding(scratch("absent.ckpt")), FormatError);
}
