#include "ctcd/draft_tree.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <string>

#include "ctcd/ctc.hpp"
#include "ctcd/tensor.hpp"
#include "ctcd/tensor_ops.hpp"

namespace ctcd {

std::vector<SlotChoices> topk_per_slot(std::span<const float> rows, std::size_t slots,
                                       std::size_t vocab, std::size_t k) {
  if (k < 1 || k > vocab) {
    throw UsageError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(vocab) + "]");
  }
  if (rows.size() != slots * vocab) throw ShapeError("top-k: rows do not match slots x vocab");
  std::vector<SlotChoices> out(slots);
  std::vector<int> idx(vocab);
  for (std::size_t s = 0; s < slots; ++s) {
    const float* row = rows.data() + s * vocab;
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [row](int a, int b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t i = 0; i < k; ++i) {
      out[s].tokens.push_back(idx[i]);
      out[s].scores.push_back(row[idx[i]]);
    }
  }
  return out;
}

std::vector<CandidatePath> enumerate_paths(const std::vector<SlotChoices>& choices, std::size_t beam,
                                           TokenId blank) {
  if (beam < 1) throw UsageError("enumerate_paths: beam must be >= 1");
  const std::size_t L = choices.size();
  std::vector<CandidatePath> out;
  if (L == 0) return out;
  for (const auto& c : choices) {
    if (c.tokens.empty()) return out;
  }
  struct Entry {
    double score;
    std::vector<std::size_t> idx;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.idx > b.idx;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  Entry first{0.0, std::vector<std::size_t>(L, 0)};
  for (std::size_t s = 0; s < L; ++s) first.score += choices[s].scores[0];
  heap.push(std::move(first));
  // Each state's parent decrements its last nonzero index, so children only
  // bump positions at or after that index: every state is reached once.
  while (!heap.empty() && out.size() < beam) {
    Entry e = heap.top();
    heap.pop();
    CandidatePath path;
    path.score = e.score;
    path.raw.resize(L);
    for (std::size_t s = 0; s < L; ++s) path.raw[s] = choices[s].tokens[e.idx[s]];
    Collapsed c = collapse(path.raw, blank);
    path.collapsed = std::move(c.tokens);
    path.keep = std::move(c.keep);
    out.push_back(std::move(path));

    std::size_t last = 0;
    for (std::size_t s = 0; s < L; ++s) {
      if (e.idx[s] > 0) last = s;
    }
    for (std::size_t s = last; s < L; ++s) {
      if (e.idx[s] + 1 >= choices[s].tokens.size()) continue;
      Entry child = e;
      ++child.idx[s];
      child.score = 0.0;
      for (std::size_t q = 0; q < L; ++q) child.score += choices[q].scores[child.idx[q]];
      heap.push(std::move(child));
    }
  }
  return out;
}

std::vector<CandidatePath> ctc_transform(const std::vector<CandidatePath>& paths) {
  std::map<TokenSeq, std::size_t> seen;
  std::vector<CandidatePath> out;
  for (const auto& p : paths) {
    if (p.collapsed.empty()) continue;
    auto [it, inserted] = seen.emplace(p.collapsed, out.size());
    if (inserted) {
      out.push_back(p);
    } else if (p.score > out[it->second].score) {
      out[it->second] = p;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CandidatePath& a, const CandidatePath& b) { return a.score > b.score; });
  return out;
}

std::vector<CandidatePath> raw_candidates(const std::vector<CandidatePath>& paths) {
  std::vector<CandidatePath> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    CandidatePath c = p;
    c.collapsed = p.raw;
    c.keep.resize(p.raw.size());
    std::iota(c.keep.begin(), c.keep.end(), std::size_t{0});
    out.push_back(std::move(c));
  }
  return ctc_transform(out);
}

std::vector<CandidatePath> fit_candidates(const std::vector<CandidatePath>& candidates,
                                          std::size_t node_budget) {
  std::vector<CandidatePath> out;
  if (node_budget == 0) return out;
  std::set<TokenSeq> prefixes;
  std::size_t used = 1;
  for (const auto& c : candidates) {
    TokenSeq prefix;
    std::size_t fitted = 0;
    for (TokenId t : c.collapsed) {
      prefix.push_back(t);
      if (!prefixes.count(prefix)) {
        if (used == node_budget) break;
        prefixes.insert(prefix);
        ++used;
      }
      ++fitted;
    }
    if (fitted == 0) break;
    out.push_back(c);
    if (fitted < c.collapsed.size()) {
      out.back().collapsed.resize(fitted);
      out.back().keep.resize(std::min(out.back().keep.size(), fitted));
      break;
    }
  }
  return out;
}

int DraftTrie::child(int node, TokenId token) const {
  for (int c : nodes[static_cast<std::size_t>(node)].children) {
    if (nodes[static_cast<std::size_t>(c)].token == token) return c;
  }
  return -1;
}

TokenSeq DraftTrie::path_tokens(int node) const {
  TokenSeq out;
  while (node > 0) {
    out.push_back(nodes[static_cast<std::size_t>(node)].token);
    node = nodes[static_cast<std::size_t>(node)].parent;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

DraftTrie build_trie(TokenId root_token, const std::vector<CandidatePath>& candidates,
                     std::size_t context_length) {
  // Insert into a pointer trie first, then renumber breadth-first.
  struct Raw {
    TokenId token;
    int parent;
    std::size_t depth;
    std::vector<int> children;
    int source;
  };
  std::vector<Raw> raw{{root_token, -1, 0, {}, -1}};
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    int cur = 0;
    for (TokenId t : candidates[ci].collapsed) {
      int next = -1;
      for (int c : raw[static_cast<std::size_t>(cur)].children) {
        if (raw[static_cast<std::size_t>(c)].token == t) next = c;
      }
      if (next < 0) {
        next = static_cast<int>(raw.size());
        raw.push_back({t, cur, raw[static_cast<std::size_t>(cur)].depth + 1, {}, -1});
        raw[static_cast<std::size_t>(cur)].children.push_back(next);
      }
      cur = next;
    }
    auto& end = raw[static_cast<std::size_t>(cur)];
    if (end.source < 0 && cur != 0) end.source = static_cast<int>(ci);
  }
  std::vector<int> order{0};
  std::vector<int> renum(raw.size(), -1);
  renum[0] = 0;
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (int c : raw[static_cast<std::size_t>(order[head])].children) {
      renum[static_cast<std::size_t>(c)] = static_cast<int>(order.size());
      order.push_back(c);
    }
  }
  DraftTrie trie;
  trie.context_length = context_length;
  trie.nodes.resize(raw.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Raw& r = raw[static_cast<std::size_t>(order[i])];
    auto& n = trie.nodes[i];
    n.token = r.token;
    n.parent = r.parent < 0 ? -1 : renum[static_cast<std::size_t>(r.parent)];
    n.depth = r.depth;
    n.source = r.source;
    for (int c : r.children) n.children.push_back(renum[static_cast<std::size_t>(c)]);
  }
  return trie;
}

VerifyBatch flatten_trie(const DraftTrie& trie) {
  const std::size_t n = trie.size();
  const std::size_t ctx = trie.context_length;
  const std::size_t cols = ctx + n;
  VerifyBatch batch;
  batch.tokens.resize(n);
  batch.positions.resize(n);
  batch.mask.assign(n * cols, kMaskedScore);
  for (std::size_t i = 0; i < n; ++i) {
    batch.tokens[i] = trie.nodes[i].token;
    batch.positions[i] = trie.position(i);
    float* row = batch.mask.data() + i * cols;
    std::fill(row, row + ctx, 0.0f);
    for (int a = static_cast<int>(i); a >= 0; a = trie.nodes[static_cast<std::size_t>(a)].parent) {
      row[ctx + static_cast<std::size_t>(a)] = 0.0f;
    }
  }
  return batch;
}

}  // namespace ctcd
