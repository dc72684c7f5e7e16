#pragma once

// Synthetic text for desk-scale runs: a small pool of distinct sentences
// repeated in random order, so a small model can memorize every
// continuation after the first couple of words.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctcd {

/// `count` distinct sentences whose first two words are unique in the pool.
std::vector<std::string> sentence_pool(std::size_t count, std::uint64_t seed);

/// Lines drawn from the pool until the text reaches `bytes` (never exceeds it
/// by more than one line).
std::string memorizable_corpus(const std::vector<std::string>& pool, std::size_t bytes,
                               std::uint64_t seed);

/// Prompts made of the first three words (with the trailing space) of `count` pool sentences (cycling
/// when count exceeds the pool).
std::vector<std::string> pool_prompts(const std::vector<std::string>& pool, std::size_t count,
                                      std::uint64_t seed);

/// Distinct lines of a corpus, in first-seen order.
std::vector<std::string> distinct_lines(const std::string& text);

/// Prompts from an arbitrary corpus: the first three words of its distinct lines.
std::vector<std::string> corpus_prompts(const std::string& text, std::size_t count, std::uint64_t seed);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
/// Non-empty lines of a file.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace ctcd
