#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "ctcd/app_config.hpp"

using namespace ctcd;

TEST(ConfigText, SkipsCommentsAndBlankLines) {
  const auto kv = parse_config_text("# header\n\n  k = 4  # trailing\nmode=sample\r\n   \nout = runs/a b\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"k", "4"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"mode", "sample"}));
  EXPECT_EQ(kv[2], (std::pair<std::string, std::string>{"out", "runs/a b"}));
}

TEST(ConfigText, ErrorsNameTheLine) {
  try {
    parse_config_text("k = 1\n\nnot a pair\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text(" = 5\n"), ConfigError);
}

TEST(AppConfigSet, EveryKeyAcceptsAValue) {
  const std::map<std::string, std::string> sample{
      {"seed", "9"},          {"mode", "sample"},       {"loss", "ce"},          {"draft_head", "linear"},
      {"k", "3"},             {"beam", "8"},            {"max_nodes", "6"},      {"collapse", "off"},
      {"temperature", "0.7"}, {"slots", "7"},           {"label_horizon", "4"},  {"d_model", "64"},
      {"n_layers", "2"},      {"n_heads", "2"},         {"max_seq_len", "128"},  {"base_lr", "1e-3"},
      {"draft_lr", "2e-3"},   {"clip", "1.5"},          {"base_epochs", "3"},    {"draft_epochs", "4"},
      {"batch_size", "2"},    {"anchor_stride", "2"},   {"max_new_tokens", "5"}, {"parallel", "2"},
      {"corpus_bytes", "100"}, {"num_prompts", "3"},    {"corpus", "c.txt"},     {"prompts", "p.txt"},
      {"prompt", "hello"},    {"base", "b.ckpt"},       {"draft", "d.ckpt"},     {"data", "x.bin"},
      {"out", "o"},           {"log", "l.jsonl"},       {"lr_decay", "off"}};
  for (const auto& key : config_keys()) {
    ASSERT_TRUE(sample.count(key)) << "no sample value for key " << key;
  }
  AppConfig c;
  for (const auto& [key, value] : sample) c.set(key, value);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.decode.seed, 9u);
  EXPECT_EQ(c.decode.mode, DecodeMode::Sample);
  EXPECT_EQ(c.loss, LossMode::Ce);
  EXPECT_EQ(c.model.draft_head, parse_draft_head("linear"));
  EXPECT_EQ(c.decode.k, 3u);
  EXPECT_EQ(c.decode.beam, 8u);
  EXPECT_EQ(c.decode.max_nodes, 6u);
  EXPECT_FALSE(c.decode.collapse);
  EXPECT_DOUBLE_EQ(c.decode.temperature, 0.7);
  EXPECT_EQ(c.model.draft_slots, 7u);
  EXPECT_EQ(c.model.label_horizon, 4u);
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.model.max_seq_len, 128u);
  EXPECT_DOUBLE_EQ(c.draft_lr, 2e-3);
  EXPECT_DOUBLE_EQ(c.clip, 1.5);
  EXPECT_EQ(c.anchor_stride, 2u);
  EXPECT_EQ(c.parallel, 2u);
  EXPECT_EQ(c.prompt, "hello");
  EXPECT_EQ(c.log, "l.jsonl");
  EXPECT_FALSE(c.lr_decay);
}

TEST(AppConfigSet, BadValuesThrow) {
  AppConfig c;
  EXPECT_THROW(c.set("k", "banana"), ConfigError);
  EXPECT_THROW(c.set("k", "-1"), ConfigError);
  EXPECT_THROW(c.set("k", "3x"), ConfigError);
  EXPECT_THROW(c.set("draft_lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("collapse", "maybe"), ConfigError);
  EXPECT_THROW(c.set("mode", "beam"), ConfigError);
  EXPECT_THROW(c.set("loss", "mse"), ConfigError);
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  EXPECT_EQ(c.decode.k, AppConfig{}.decode.k);
}

TEST(AppConfigJson, ReflectsSettings) {
  AppConfig c;
  c.set("beam", "12");
  c.set("collapse", "false");
  c.set("loss", "ce");
  const auto j = c.to_json();
  EXPECT_EQ(j.at("beam"), 12);
  EXPECT_EQ(j.at("collapse"), false);
  EXPECT_EQ(j.at("loss"), "ce");
  EXPECT_TRUE(j.at("model").contains("d_model"));
}

TEST(AppConfigFile, AppliesInOrder) {
  const auto path = std::filesystem::temp_directory_path() / ("ctcd_cfg_" + std::to_string(getpid()) + ".conf");
  {
    std::ofstream out(path);
    out << "# run settings\nk = 2\nbeam = 4\nk = 5\n";
  }
  AppConfig c;
  apply_config_file(c, path);
  EXPECT_EQ(c.decode.k, 5u);
  EXPECT_EQ(c.decode.beam, 4u);
  std::filesystem::remove(path);
  EXPECT_THROW(apply_config_file(c, path), ConfigError);
}
