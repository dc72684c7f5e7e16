#include "ctcd/app_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ctcd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool to_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected on|off, got '" + v + "'");
}

using Setter = std::function<void(AppConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto size_field = [](std::size_t AppConfig::*f) {
      return [f](AppConfig& c, const std::string& k, const std::string& v) { c.*f = to_size(k, v); };
    };
    auto model_field = [](std::size_t ModelConfig::*f) {
      return [f](AppConfig& c, const std::string& k, const std::string& v) { c.model.*f = to_size(k, v); };
    };
    auto text_field = [](std::string AppConfig::*f) {
      return [f](AppConfig& c, const std::string&, const std::string& v) { c.*f = v; };
    };
    auto real_field = [](double AppConfig::*f) {
      return [f](AppConfig& c, const std::string& k, const std::string& v) { c.*f = to_double(k, v); };
    };
    t["seed"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.seed = to_u64(k, v);
      c.decode.seed = c.seed;
    };
    t["mode"] = [](AppConfig& c, const std::string&, const std::string& v) {
      try {
        c.decode.mode = parse_decode_mode(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    };
    t["loss"] = [](AppConfig& c, const std::string&, const std::string& v) {
      try {
        c.loss = parse_loss_mode(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    };
    t["draft_head"] = [](AppConfig& c, const std::string&, const std::string& v) {
      try {
        c.model.draft_head = parse_draft_head(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    };
    t["k"] = [](AppConfig& c, const std::string& k, const std::string& v) { c.decode.k = to_size(k, v); };
    t["beam"] = [](AppConfig& c, const std::string& k, const std::string& v) { c.decode.beam = to_size(k, v); };
    t["max_nodes"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.decode.max_nodes = to_size(k, v);
    };
    t["collapse"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.decode.collapse = to_switch(k, v);
    };
    t["lr_decay"] = [](AppConfig& c, const std::string& k, const std::string& v) { c.lr_decay = to_switch(k, v); };
    t["temperature"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.decode.temperature = to_double(k, v);
    };
    t["slots"] = model_field(&ModelConfig::draft_slots);
    t["label_horizon"] = model_field(&ModelConfig::label_horizon);
    t["d_model"] = model_field(&ModelConfig::d_model);
    t["n_layers"] = model_field(&ModelConfig::n_layers);
    t["n_heads"] = model_field(&ModelConfig::n_heads);
    t["max_seq_len"] = model_field(&ModelConfig::max_seq_len);
    t["base_lr"] = real_field(&AppConfig::base_lr);
    t["draft_lr"] = real_field(&AppConfig::draft_lr);
    t["clip"] = real_field(&AppConfig::clip);
    t["base_epochs"] = size_field(&AppConfig::base_epochs);
    t["draft_epochs"] = size_field(&AppConfig::draft_epochs);
    t["batch_size"] = size_field(&AppConfig::batch_size);
    t["anchor_stride"] = size_field(&AppConfig::anchor_stride);
    t["max_new_tokens"] = size_field(&AppConfig::max_new_tokens);
    t["parallel"] = size_field(&AppConfig::parallel);
    t["corpus_bytes"] = size_field(&AppConfig::corpus_bytes);
    t["num_prompts"] = size_field(&AppConfig::num_prompts);
    t["corpus"] = text_field(&AppConfig::corpus);
    t["prompts"] = text_field(&AppConfig::prompts);
    t["prompt"] = text_field(&AppConfig::prompt);
    t["base"] = text_field(&AppConfig::base);
    t["draft"] = text_field(&AppConfig::draft);
    t["data"] = text_field(&AppConfig::data);
    t["out"] = text_field(&AppConfig::out);
    t["log"] = text_field(&AppConfig::log);
    return t;
  }();
  return table;
}

}  // namespace

void AppConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_config_file(AppConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  for (const auto& [key, value] : parse_config_text(buf.str())) config.set(key, value);
}

nlohmann::json AppConfig::to_json() const {
  return {{"model", ctcd::to_json(model)},
          {"seed", seed},
          {"mode", to_string(decode.mode)},
          {"k", decode.k},
          {"beam", decode.beam},
          {"max_nodes", decode.max_nodes},
          {"collapse", decode.collapse},
          {"temperature", decode.temperature},
          {"loss", to_string(loss)},
          {"base_lr", base_lr},
          {"draft_lr", draft_lr},
          {"lr_decay", lr_decay},
          {"max_new_tokens", max_new_tokens},
          {"parallel", parallel}};
}

}  // namespace ctcd
