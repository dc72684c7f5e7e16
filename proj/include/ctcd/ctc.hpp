#pragma once

// Collapse, feasibility, and the CTC forward recursion.
//
// Slot distributions are L x V row-major log-probabilities. The blank id is
// a parameter so small synthetic vocabularies can be used in tests; the
// default is the byte vocabulary's BLANK.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "ctcd/tensor.hpp"
#include "ctcd/vocab.hpp"

namespace ctcd {

class InfeasibleTargetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ZeroProbabilityPrefixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Collapsed {
  TokenSeq tokens;
  /// For each output token, the first slot of the run it came from.
  std::vector<std::size_t> keep;
};

/// Merges runs of equal symbols, then drops blanks.
Collapsed collapse(std::span<const TokenId> alignment, TokenId blank = vocab::kBlank);

/// |y| plus the number of adjacent equal pairs (each needs a separating blank).
std::size_t min_alignment_length(std::span<const TokenId> y);

/// log sum over alignments of `slots` rows that collapse to `target`, via the
/// log-space recursion over the blank-interleaved target. Differentiable.
template <class T>
BasicTensor<T> ctc_log_prob(const BasicTensor<T>& slot_log_probs, std::span<const TokenId> target,
                            TokenId blank = vocab::kBlank);

/// Batched form: `log_probs` is [anchors * slots, V] anchor-major; returns
/// [anchors] log-probabilities, one per target.
template <class T>
BasicTensor<T> ctc_log_prob_batch(const BasicTensor<T>& log_probs, std::size_t slots,
                                  const std::vector<TokenSeq>& targets,
                                  TokenId blank = vocab::kBlank);

/// Exhaustive sum over all V^L alignments. Refuses (std::length_error) when
/// V^L exceeds one million.
double brute_force_log_prob(std::span<const double> slot_log_probs, std::size_t slots,
                            std::size_t vocab, std::span<const TokenId> target,
                            TokenId blank = vocab::kBlank);

struct PrefixMarginals {
  std::vector<double> next;  // size V; the blank entry is always 0
  double end = 0.0;
};

/// Distribution of the next collapsed token given that the collapsed output
/// starts with `prefix`, plus the probability that nothing follows.
PrefixMarginals collapsed_prefix_marginals(std::span<const double> slot_log_probs, std::size_t slots,
                                           std::size_t vocab, std::span<const TokenId> prefix,
                                           TokenId blank = vocab::kBlank);

}  // namespace ctcd
