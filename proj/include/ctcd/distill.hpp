#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "ctcd/base_model.hpp"
#include "ctcd/vocab.hpp"

namespace ctcd {

struct DistilledExample {
  TokenSeq input;   // X
  TokenSeq labels;  // teacher argmax at each position of X

  bool operator==(const DistilledExample&) const = default;
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);

/// Splits a sequence into windows of at most `max_len` tokens, consecutive
/// windows sharing one token.
std::vector<TokenSeq> split_with_overlap(const TokenSeq& seq, std::size_t max_len);

/// One teacher-forced base forward per (chunked) corpus sequence.
std::vector<DistilledExample> make_distilled_dataset(const std::vector<TokenSeq>& corpus,
                                                     const BaseModel& base);

/// labels[t+1 .. t+m] with the largest m <= m_max that stays inside the
/// sequence and fits into `slots` alignment positions.
TokenSeq extract_anchor_targets(const DistilledExample& ex, std::size_t t, std::size_t m_max,
                                std::size_t slots);

/// First line: JSON header. Then per example: u32 n, n input ids, n label ids.
void write_distilled(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::vector<DistilledExample>& examples);
struct DistilledFile {
  nlohmann::json header;
  std::vector<DistilledExample> examples;
};
DistilledFile read_distilled(const std::filesystem::path& path);

}  // namespace ctcd
