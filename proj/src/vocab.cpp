#include "ctcd/vocab.hpp"

namespace ctcd::vocab {

TokenSeq encode(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

TokenSeq encode_prompt(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size() + 1);
  out.push_back(kBos);
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string decode(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  }
  return out;
}

std::string render(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (t == kBos) {
      out += "<bos>";
    } else if (t == kEos) {
      out += "<eos>";
    } else if (t == kBlank) {
      out += "<blank>";
    } else if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(t));
    } else {
      out += "<?" + std::to_string(t) + ">";
    }
  }
  return out;
}

}  // namespace ctcd::vocab
