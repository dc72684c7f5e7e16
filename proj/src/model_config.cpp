#include "ctcd/model_config.hpp"

#include <stdexcept>

#include "ctcd/vocab.hpp"

namespace ctcd {

std::string to_string(DraftHead head) {
  return head == DraftHead::Attention ? "attention" : "linear";
}

DraftHead parse_draft_head(const std::string& text) {
  if (text == "attention" || text == "transformer") return DraftHead::Attention;
  if (text == "linear") return DraftHead::Linear;
  throw std::invalid_argument("unknown draft head '" + text + "' (expected attention|linear)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (vocab_size != static_cast<std::size_t>(vocab::kSize)) {
    fail("vocab_size must be " + std::to_string(vocab::kSize));
  }
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (max_seq_len < 2) fail("max_seq_len must be >= 2");
  if (draft_slots == 0) fail("draft_slots must be >= 1");
  if (label_horizon == 0) fail("label_horizon must be >= 1");
  // Worst case m tokens all equal needs 2m - 1 slots.
  if (2 * label_horizon - 1 > draft_slots) {
    fail("label_horizon " + std::to_string(label_horizon) + " exceeds (draft_slots + 1) / 2 for " +
         std::to_string(draft_slots) + " slots");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
                        {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                        {"max_seq_len", c.max_seq_len}, {"draft_slots", c.draft_slots},
                        {"label_horizon", c.label_horizon}, {"draft_head", to_string(c.draft_head)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.draft_slots = j.at("draft_slots").get<std::size_t>();
  c.label_horizon = j.at("label_horizon").get<std::size_t>();
  c.draft_head = parse_draft_head(j.value("draft_head", std::string("attention")));
  return c;
}

}  // namespace ctcd
