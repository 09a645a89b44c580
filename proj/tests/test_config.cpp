#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fpml/config.hpp"
#include "fpml/errors.hpp"

using namespace fpml;
namespace fs = std::filesystem;

namespace {

fs::path write_yaml(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("fpml_config_" + name + ".yaml");
  std::ofstream(p, std::ios::trunc) << text;
  return p;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Presets, EveryPresetDefinesTheSameKeys) {
  const auto desk = preset_defaults("desk");
  for (const auto& name : preset_names()) {
    const auto p = preset_defaults(name);
    ASSERT_EQ(p.size(), desk.size()) << name;
    for (const auto& [k, v] : desk) EXPECT_TRUE(p.count(k)) << name << " lacks " << k;
  }
  EXPECT_THROW(preset_defaults("huge"), ConfigError);
}

TEST(Presets, PaperValues) {
  const auto p = preset_defaults("paper");
  EXPECT_EQ(p.at("meta.epochs").value, "50");
  EXPECT_EQ(p.at("meta.episodes_per_epoch").value, "100");
  EXPECT_EQ(p.at("meta.learning_rate").value, "0.001");
  EXPECT_EQ(p.at("meta.m1").value, "0.997");
  EXPECT_EQ(p.at("meta.m2").value, "0.999");
  EXPECT_EQ(p.at("meta.k_shot").value, "5");
  EXPECT_EQ(p.at("meta.m_query").value, "15");
  EXPECT_EQ(p.at("pretrain.epochs").value, "400");
  EXPECT_EQ(p.at("model.arch").value, "resnet10");
  EXPECT_EQ(p.at("data.image_size").value, "84");
  EXPECT_EQ(p.at("eval.tasks").value, "600");
  const auto m = preset_defaults("appendix-momentum");
  EXPECT_EQ(m.at("meta.m1").value, "0.9997");
  EXPECT_EQ(m.at("meta.m2").value, "0.9999");
}

TEST(Presets, PaperPresetResolvesOnceDataExists) {
  const fs::path root = fs::temp_directory_path() / "fpml_config_data";
  fs::create_directories(root / "src");
  fs::create_directories(root / "tgt");
  const auto flat = load_flat_config(std::nullopt, "paper",
                                     {"data.source.path=" + (root / "src").string(),
                                      "data.target.path=" + (root / "tgt").string()});
  const RunConfig rc = resolve_config(flat);
  EXPECT_EQ(rc.train.meta_epochs * rc.train.episodes_per_epoch, 5000);
  EXPECT_EQ(rc.train.arch.kind, ArchKind::resnet10);
  EXPECT_DOUBLE_EQ(rc.train.m1, 0.997);
  EXPECT_EQ(rc.eval.tasks, 600);
  EXPECT_EQ(rc.train.optimizer, OptimizerKind::adam);
}

TEST(Presets, MissingDatasetNamesTheKey) {
  const std::string msg =
      error_of([] { resolve_config(load_flat_config(std::nullopt, "paper", {})); });
  EXPECT_NE(msg.find("data.source.path"), std::string::npos) << msg;
}

TEST(FlatConfig, FileOverridesPresetAndSetOverridesFile) {
  const fs::path f = write_yaml("layers", "preset: desk\nmeta:\n  epochs: 7\n  m1: 0.5\n");
  const auto flat = load_flat_config(f, "", {"meta.m1=0.25"});
  EXPECT_EQ(flat.at("meta.epochs").value, "7");
  EXPECT_NE(flat.at("meta.epochs").origin.find(":3:"), std::string::npos);
  EXPECT_EQ(flat.at("meta.m1").value, "0.25");
  const RunConfig rc = resolve_config(flat);
  EXPECT_EQ(rc.train.meta_epochs, 7);
  EXPECT_DOUBLE_EQ(rc.train.m1, 0.25);
}

TEST(FlatConfig, UnknownKeyReportsLine) {
  const fs::path f = write_yaml("unknown", "seed: 3\nmeta:\n  epochz: 7\n");
  const std::string msg = error_of([&] { load_flat_config(f, "", {}); });
  EXPECT_NE(msg.find("meta.epochz"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
}

TEST(FlatConfig, BadValuesPointAtTheirOrigin) {
  const fs::path f = write_yaml("badvalue", "meta:\n  n_way: zero\n");
  const std::string msg = error_of([&] { resolve_config(load_flat_config(f, "", {})); });
  EXPECT_NE(msg.find("meta.n_way"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;

  const std::string range =
      error_of([] { resolve_config(load_flat_config(std::nullopt, "", {"meta.m2=2"})); });
  EXPECT_NE(range.find("meta.m2"), std::string::npos) << range;
  EXPECT_NE(range.find("--set"), std::string::npos) << range;
}

TEST(FlatConfig, SetSyntaxErrors) {
  EXPECT_NE(error_of([] { load_flat_config(std::nullopt, "", {"novalue"}); }), "");
  EXPECT_NE(error_of([] { load_flat_config(std::nullopt, "", {"x.y=1"}); }).find("x.y"),
            std::string::npos);
  EXPECT_NE(error_of([] { load_flat_config(std::nullopt, "", {"preset=paper"}); }), "");
  EXPECT_NE(error_of([] { load_flat_config(write_yaml("syntax", "meta: [1, 2\n"), "", {}); }), "");
}

TEST(RunConfig, HashTracksEveryValue) {
  const RunConfig a = resolve_config(load_flat_config(std::nullopt, "", {}));
  const RunConfig b = resolve_config(load_flat_config(std::nullopt, "", {}));
  const RunConfig c = resolve_config(load_flat_config(std::nullopt, "", {"eval.l2=2"}));
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.run_dir(), fs::path("runs") / "desk");
}

TEST(LoadData, SyntheticRolesDiffer) {
  const RunConfig rc = resolve_config(load_flat_config(std::nullopt, "", {}));
  const Dataset src = load_data(rc.source, rc.train.seed, "source");
  const Dataset tgt = load_data(rc.target, rc.train.seed, "target");
  EXPECT_EQ(src.num_classes(), rc.source.synthetic.num_classes);
  for (const auto& c : src.classes) {
    EXPECT_EQ(std::find(tgt.classes.begin(), tgt.classes.end(), c), tgt.classes.end());
  }
}
