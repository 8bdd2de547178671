#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spvit/config.hpp"

using namespace spvit;
using namespace spvit::testing;

namespace {

std::string error_of(const std::string& text, const std::vector<ConfigOverride>& o = {}) {
  try {
    parse_config(text, "run.ini", o);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, DefaultsAreBaseVit) {
  auto c = default_config();
  EXPECT_EQ(c.model_kind, "vit");
  EXPECT_EQ(c.vit.dim, 768u);
  EXPECT_EQ(c.vit.depth, 12u);
  EXPECT_EQ(c.data.train_fraction, 0.95);
  EXPECT_EQ(c.sweep.learning_rates.size() * c.sweep.batch_sizes.size(), 10u);
}

TEST(Config, ParsesSectionsAndComments) {
  auto c = parse_config(
      "# leading comment\n"
      "[model]\n"
      "kind = sunset\n"
      "image_size = 32\n"
      "conv1_filters = 4\n"
      "; another comment\n"
      "[train]\n"
      "learning_rate = 5e-5\n"
      "batch_size = 10\n"
      "freeze = none\n"
      "[sweep]\n"
      "learning_rates = 1e-4, 1e-3\n"
      "batch_sizes = 8\n",
      "run.ini");
  EXPECT_EQ(c.model_kind, "sunset");
  EXPECT_EQ(c.train.model, "sunset");
  EXPECT_EQ(c.sunset.image_size, 32u);
  EXPECT_EQ(c.sunset.conv1.filters, 4u);
  EXPECT_EQ(c.train.learning_rate, 5e-5);
  EXPECT_EQ(c.train.batch_size, 10u);
  EXPECT_EQ(c.sweep.learning_rates, (std::vector<double>{1e-4, 1e-3}));
  EXPECT_EQ(c.sweep.batch_sizes, (std::vector<std::size_t>{8}));
  EXPECT_TRUE(std::holds_alternative<SunsetConfig>(c.model_spec()));
}

TEST(Config, RoundTripThroughIni) {
  auto c = parse_config("[model]\npreset = tiny-test\n[train]\nepochs = 7\nfreeze = custom\nfreeze_patterns = head.*, pooler.*\n"
                        "[synth]\ntrain_days = 5\nstart_date = 2023-01-30\n",
                        "run.ini");
  const auto text = to_ini(c);
  auto back = parse_config(text, "round.ini");
  EXPECT_EQ(to_ini(back), text);
  EXPECT_EQ(back.vit.dim, c.vit.dim);
  EXPECT_EQ(back.train.epochs, 7);
  EXPECT_EQ(back.train.freeze.patterns, (std::vector<std::string>{"head.*", "pooler.*"}));
  EXPECT_EQ(back.synth.base.start_date, "2023-01-30");
  EXPECT_EQ(back.synth.train_days, 5u);
}

TEST(Config, PresetAppliesBeforeExplicitKeys) {
  auto c = parse_config("[model]\ndepth = 3\npreset = tiny-test\n", "run.ini");
  EXPECT_EQ(c.vit.depth, 3u);
  EXPECT_EQ(c.vit.image_size, ViTConfig::preset("tiny-test").image_size);
  EXPECT_NE(error_of("[model]\npreset = huge\n").find("run.ini:2"), std::string::npos);
}

TEST(Config, UnknownKeyNamesFileLineAndKey) {
  const auto msg = error_of("[train]\nepochs = 3\nlearning_rat = 1e-3\n");
  EXPECT_NE(msg.find("run.ini:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("learning_rat"), std::string::npos) << msg;
  EXPECT_NE(error_of("[optim]\nx = 1\n").find("run.ini:1"), std::string::npos);
  EXPECT_NE(error_of("epochs = 3\n").find("outside"), std::string::npos);
  EXPECT_NE(error_of("[train\n").find("malformed"), std::string::npos);
  EXPECT_NE(error_of("[train]\nepochs\n").find("run.ini:2"), std::string::npos);
}

TEST(Config, BadValuesAreRejected) {
  EXPECT_NE(error_of("[train]\nlearning_rate = fast\n").find("learning_rate"), std::string::npos);
  EXPECT_NE(error_of("[train]\nbatch_size = -4\n").find("batch_size"), std::string::npos);
  EXPECT_NE(error_of("[train]\neval_clamp = maybe\n").find("eval_clamp"), std::string::npos);
  EXPECT_NE(error_of("[model]\nkind = resnet\n").find("kind"), std::string::npos);
  EXPECT_NE(error_of("[sweep]\nbatch_sizes =\n").find("batch_sizes"), std::string::npos);
  EXPECT_NE(error_of("[train]\nfreeze = custom\n").find("freeze_patterns"), std::string::npos);
  EXPECT_NE(error_of("[data]\ntrain_fraction = 1.5\n").find("train_fraction"), std::string::npos);
  EXPECT_NE(error_of("[synth]\ncloudy_min = 0.9\ncloudy_max = 0.2\n").find("cloudy"), std::string::npos);
  EXPECT_NE(error_of("[model]\ndim = 10\nheads = 3\n"), "<no error>");
}

TEST(Config, OverridesWinAndAreNamed) {
  auto o = ConfigOverride::parse("train.batch_size = 32");
  EXPECT_EQ(o.section, "train");
  EXPECT_EQ(o.key, "batch_size");
  EXPECT_EQ(o.value, "32");
  EXPECT_EQ(ConfigOverride::parse("synth.start_date=2024-01-01").value, "2024-01-01");
  EXPECT_THROW(ConfigOverride::parse("batch_size=32"), ConfigError);
  EXPECT_THROW(ConfigOverride::parse("train.batch_size"), ConfigError);

  auto c = parse_config("[train]\nbatch_size = 16\n", "run.ini", {o});
  EXPECT_EQ(c.train.batch_size, 32u);
  const auto msg = error_of("", {ConfigOverride::parse("train.bogus=1")});
  EXPECT_NE(msg.find("--set train.bogus"), std::string::npos) << msg;
}

TEST(Config, SweepGridAndSeed) {
  auto c = parse_config("[train]\nepochs = 9\nlearning_rate = 1e-2\n[sweep]\nepochs = 2\nbatch_sizes = 4, 8\n", "run.ini");
  auto g = c.sweep_grid();
  EXPECT_EQ(g.base.epochs, 2);
  EXPECT_EQ(g.base.freeze.mode, FreezePolicy::Mode::head_only);
  EXPECT_EQ(g.batch_sizes, (std::vector<std::size_t>{4, 8}));
  c.sweep.epochs = 0;
  EXPECT_EQ(c.sweep_grid().base.epochs, 9);
  c.set_seed(123);
  EXPECT_EQ(c.train.seed, 123u);
  EXPECT_EQ(c.synth.base.seed, 123u);
}

TEST(Config, LoadFromFile) {
  TempDir dir("config");
  write_file(dir / "a.ini", "[train]\nepochs = 4\nbogus = 1\n");
  try {
    load_config(dir / "a.ini");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "a.ini").string() + ":3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config(dir / "missing.ini"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"desk.ini", "sunset.ini"}) {
    const auto path = std::filesystem::path(SPVIT_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(path)) << name;
  }
  EXPECT_EQ(load_config(std::filesystem::path(SPVIT_SOURCE_DIR) / "configs/sunset.ini").model_kind, "sunset");
}
