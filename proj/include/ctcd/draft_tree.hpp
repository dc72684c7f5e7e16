#pragma once

// From one anchor's slot distributions to a verification batch: per-slot
// top-k, exact best-first path enumeration, collapse + dedupe, and the
// prefix trie with its tree attention mask.

#include <cstddef>
#include <span>
#include <vector>

#include "ctcd/vocab.hpp"

namespace ctcd {

struct SlotChoices {
  std::vector<TokenId> tokens;  // descending log-prob, ties by lower id
  std::vector<double> scores;
};

struct CandidatePath {
  TokenSeq raw;
  double score = 0.0;  // sum of the chosen slot log-probs
  TokenSeq collapsed;
  std::vector<std::size_t> keep;
};

/// `rows` is slots x vocab log-probabilities.
std::vector<SlotChoices> topk_per_slot(std::span<const float> rows, std::size_t slots,
                                       std::size_t vocab, std::size_t k);

/// Top `beam` raw paths over the product of the per-slot lists, best first.
std::vector<CandidatePath> enumerate_paths(const std::vector<SlotChoices>& choices, std::size_t beam,
                                           TokenId blank = vocab::kBlank);

/// Merges paths with equal collapsed strings (keeping the best score) and
/// drops empty ones; result sorted by score, best first.
std::vector<CandidatePath> ctc_transform(const std::vector<CandidatePath>& paths);

/// Uses each raw path verbatim as its own candidate (the no-collapse ablation).
std::vector<CandidatePath> raw_candidates(const std::vector<CandidatePath>& paths);

/// Prefix trie whose root is the pending base token at position
/// `context_length` (the number of cached rows); a node at depth d sits at
/// position context_length + d. Nodes are stored in BFS order, root first.
struct DraftTrie {
  struct Node {
    TokenId token = 0;
    int parent = -1;
    std::size_t depth = 0;
    std::vector<int> children;
    int source = -1;  // index of the first candidate ending at this node, or -1
  };
  std::vector<Node> nodes;
  std::size_t context_length = 0;

  std::size_t size() const { return nodes.size(); }
  /// Child of `node` carrying `token`, or -1.
  int child(int node, TokenId token) const;
  std::size_t position(std::size_t node) const { return context_length + nodes[node].depth; }
  /// Token string from the first node below the root down to `node`.
  TokenSeq path_tokens(int node) const;
};

struct VerifyBatch {
  TokenSeq tokens;
  std::vector<std::size_t> positions;
  /// rows x (context_length + rows) additive mask.
  std::vector<float> mask;
};

/// Keeps candidates in order while the trie they form (root included) stays
/// within `node_budget` nodes; the first candidate that does not fit is cut
/// to the longest prefix that does, and later ones are dropped.
std::vector<CandidatePath> fit_candidates(const std::vector<CandidatePath>& candidates,
                                          std::size_t node_budget);

DraftTrie build_trie(TokenId root_token, const std::vector<CandidatePath>& candidates,
                     std::size_t context_length);
VerifyBatch flatten_trie(const DraftTrie& trie);

}  // namespace ctcd
