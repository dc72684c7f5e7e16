#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace ctcd {

enum class DraftHead { Attention, Linear };

std::string to_string(DraftHead head);
DraftHead parse_draft_head(const std::string& text);

struct ModelConfig {
  std::size_t vocab_size = 259;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  std::size_t draft_slots = 5;    // L: raw alignment length per anchor
  std::size_t label_horizon = 3;  // m_max: longest distilled target per anchor
  DraftHead draft_head = DraftHead::Attention;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_width() const { return 4 * d_model; }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace ctcd
