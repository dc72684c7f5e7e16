#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctcd {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Byte-level vocabulary: ids 0..255 are raw bytes, then three specials.
namespace vocab {
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kBlank = 258;
inline constexpr int kSize = 259;

/// Bytes of `text` with no specials.
TokenSeq encode(std::string_view text);
/// BOS followed by the bytes of `text`.
TokenSeq encode_prompt(std::string_view text);
/// Bytes back to text; specials are dropped.
std::string decode(std::span<const TokenId> tokens);
/// Printable rendering for logs: specials as <bos>/<eos>/<blank>.
std::string render(std::span<const TokenId> tokens);
}  // namespace vocab

}  // namespace ctcd
