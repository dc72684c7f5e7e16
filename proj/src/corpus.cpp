#include "ctcd/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ctcd {

namespace {

constexpr std::array kAdjectives{"quiet", "golden", "small", "ancient", "bright", "heavy", "gentle",
                                 "hollow", "silver", "rapid", "patient", "crooked", "narrow", "warm"};
constexpr std::array kNouns{"river", "lantern", "harbor", "teacher", "garden", "engine", "falcon",
                            "library", "mountain", "baker", "window", "compass", "village", "sailor"};
constexpr std::array kVerbs{"carries", "follows", "watches", "repairs", "paints", "remembers",
                            "guards", "builds", "counts", "visits", "answers", "measures"};
constexpr std::array kPlaces{"near the old bridge", "before the long winter", "under a pale moon",
                             "across the market square", "behind the stone wall", "after the evening bell",
                             "inside the green tent", "along the northern road"};

template <class Words>
const char* pick(const Words& words, std::mt19937_64& rng) {
  return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
}

std::string first_words(const std::string& line, std::size_t n) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pos = line.find(' ', pos);
    if (pos == std::string::npos) return line;
    ++pos;
  }
  return line.substr(0, pos);
}

}  // namespace

std::vector<std::string> sentence_pool(std::size_t count, std::uint64_t seed) {
  if (count > kAdjectives.size() * kNouns.size()) {
    throw std::invalid_argument("sentence pool of " + std::to_string(count) + " is too large");
  }
  std::mt19937_64 rng(seed * 0x2545F4914F6CDD1DULL + 7);
  std::vector<std::string> pool;
  std::set<std::string> openings;
  while (pool.size() < count) {
    const std::string opening = std::string("the ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng);
    if (!openings.insert(opening).second) continue;
    std::ostringstream s;
    s << opening << ' ' << pick(kVerbs, rng) << " a " << pick(kAdjectives, rng) << ' ' << pick(kNouns, rng)
      << ' ' << pick(kPlaces, rng) << '.';
    pool.push_back(s.str());
  }
  return pool;
}

std::string memorizable_corpus(const std::vector<std::string>& pool, std::size_t bytes,
                               std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("empty sentence pool");
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 11);
  std::uniform_int_distribution<std::size_t> which(0, pool.size() - 1);
  std::string text;
  while (text.size() < bytes) {
    text += pool[which(rng)];
    text += '\n';
  }
  return text;
}

std::vector<std::string> pool_prompts(const std::vector<std::string>& pool, std::size_t count,
                                      std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("empty sentence pool");
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 13);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(first_words(pool[order[i % order.size()]], 3));
  }
  return out;
}

std::vector<std::string> distinct_lines(const std::string& text) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && seen.insert(line).second) out.push_back(line);
  }
  return out;
}

std::vector<std::string> corpus_prompts(const std::string& text, std::size_t count, std::uint64_t seed) {
  const auto lines = distinct_lines(text);
  if (lines.empty()) throw std::invalid_argument("corpus has no lines to prompt from");
  return pool_prompts(lines, count, seed);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace ctcd
