#include "ctcd/distill.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "ctcd/ctc.hpp"

namespace ctcd {

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<TokenSeq> split_with_overlap(const TokenSeq& seq, std::size_t max_len) {
  if (max_len < 2) throw UsageError("split_with_overlap: max_len must be >= 2");
  std::vector<TokenSeq> out;
  if (seq.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = std::min(seq.size(), start + max_len);
    out.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(start),
                     seq.begin() + static_cast<std::ptrdiff_t>(end));
    if (end == seq.size()) break;
    start = end - 1;
  }
  return out;
}

std::vector<DistilledExample> make_distilled_dataset(const std::vector<TokenSeq>& corpus,
                                                     const BaseModel& base) {
  const std::size_t V = base.config().vocab_size;
  std::vector<DistilledExample> out;
  KvCache cache(base.config());
  std::vector<std::size_t> positions;
  for (const TokenSeq& seq : corpus) {
    for (TokenSeq& chunk : split_with_overlap(seq, base.config().max_seq_len)) {
      positions.resize(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i) positions[i] = i;
      cache.truncate(0);
      const BaseOutput fwd = base.forward_cached(chunk, positions, cache);
      auto logits = fwd.logits.data();
      DistilledExample ex;
      ex.labels.resize(chunk.size());
      for (std::size_t t = 0; t < chunk.size(); ++t) {
        ex.labels[t] = static_cast<TokenId>(argmax(logits.subspan(t * V, V)));
      }
      ex.input = std::move(chunk);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

TokenSeq extract_anchor_targets(const DistilledExample& ex, std::size_t t, std::size_t m_max,
                                std::size_t slots) {
  const std::size_t n = ex.input.size();
  if (n < 2 || t >= n - 1) {
    throw UsageError("anchor " + std::to_string(t) + " needs a following position in a sequence of " +
                     std::to_string(n));
  }
  std::size_t m = std::min(m_max, n - 1 - t);
  while (m > 0) {
    std::span<const TokenId> y(ex.labels.data() + t + 1, m);
    if (min_alignment_length(y) <= slots) break;
    --m;
  }
  return TokenSeq(ex.labels.begin() + static_cast<std::ptrdiff_t>(t + 1),
                  ex.labels.begin() + static_cast<std::ptrdiff_t>(t + 1 + m));
}

void write_distilled(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::vector<DistilledExample>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out << header.dump() << '\n';
  auto put = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  for (const auto& ex : examples) {
    put(static_cast<std::uint32_t>(ex.input.size()));
    for (TokenId t : ex.input) put(static_cast<std::uint32_t>(t));
    for (TokenId t : ex.labels) put(static_cast<std::uint32_t>(t));
  }
  if (!out) throw std::runtime_error("write failed for dataset " + path.string());
}

DistilledFile read_distilled(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  DistilledFile file;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset " + path.string() + " has no header");
  file.header = nlohmann::json::parse(line);
  auto get = [&](std::uint32_t& v) { return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof v)); };
  std::uint32_t n = 0;
  while (get(n)) {
    DistilledExample ex;
    ex.input.resize(n);
    ex.labels.resize(n);
    for (auto* seq : {&ex.input, &ex.labels}) {
      for (auto& t : *seq) {
        std::uint32_t v = 0;
        if (!get(v)) throw std::runtime_error("dataset " + path.string() + " is truncated");
        t = static_cast<TokenId>(v);
      }
    }
    file.examples.push_back(std::move(ex));
  }
  return file;
}

}  // namespace ctcd
