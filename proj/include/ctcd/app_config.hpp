#pragma once

// Settings shared by every CLI subcommand. A config file holds `key = value`
// lines with `#` comments; command-line flags use the same keys and win.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcd/model_config.hpp"
#include "ctcd/spec_decode.hpp"
#include "ctcd/training.hpp"

namespace ctcd {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AppConfig {
  AppConfig() { decode.max_nodes = 5; }

  ModelConfig model;
  std::uint64_t seed = 0;
  DecodeOptions decode;
  LossMode loss = LossMode::Ctc;

  double base_lr = 1e-3;
  double draft_lr = 2e-3;
  double clip = 0.5;
  bool lr_decay = true;
  std::size_t base_epochs = 12;
  std::size_t draft_epochs = 12;
  std::size_t batch_size = 8;
  std::size_t anchor_stride = 1;

  std::size_t max_new_tokens = 64;
  std::size_t parallel = 1;
  std::size_t corpus_bytes = 50 * 1024;
  std::size_t num_prompts = 20;

  std::string corpus;   // text file; empty = synthesize a memorizable corpus
  std::string prompts;  // one prompt per line; empty = derived from the corpus
  std::string prompt;   // single prompt for `generate`
  std::string base;     // base checkpoint
  std::string draft;    // draft checkpoint
  std::string data;     // distilled dataset
  std::string out;
  std::string log;      // JSON-lines training log

  /// Sets one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
};

/// Every key accepted by AppConfig::set.
const std::vector<std::string>& config_keys();

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// anything else without '=' is an error naming the line.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Reads and applies a config file on top of `config`.
void apply_config_file(AppConfig& config, const std::filesystem::path& path);

}  // namespace ctcd
