#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ctcd/base_model.hpp"
#include "ctcd/draft_module.hpp"
#include "ctcd/draft_tree.hpp"
#include "ctcd/vocab.hpp"

namespace ctcd {

enum class DecodeMode { Greedy, Sample };

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& text);

struct DecodeOptions {
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t k = 3;
  std::size_t beam = 16;
  bool collapse = true;
  std::size_t max_nodes = 0;  // verification rows per step, root included; 0 = only the context bound
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct StageTimes {
  double base_forward = 0.0;
  double draft_forward = 0.0;
  double ctc_transform = 0.0;
  double tree_verify = 0.0;

  double total() const { return base_forward + draft_forward + ctc_transform + tree_verify; }
};

struct RunMetrics {
  std::size_t N = 0;  // tokens emitted
  std::size_t M = 0;  // decoding steps, prefill included
  double T = 0.0;     // wall seconds
  StageTimes stages;
};

struct AcceptanceResult {
  TokenSeq tokens;   // accepted draft tokens followed by the bonus token
  int node = 0;      // deepest accepted trie node (0 = root)
  bool rejected = false;
};

using Rng = std::mt19937_64;

/// Greedy walk: descend while the base argmax at the current node has a
/// matching child; the argmax at the stopping node is the bonus token.
/// `logits` holds one row of width `vocab` per trie node, BFS order.
AcceptanceResult greedy_accept(const DraftTrie& trie, std::span<const float> logits, std::size_t vocab);

/// Standard lossless test: accept iff u < min(1, p/q). Requires q > 0.
bool accept_token(double p_base, double q_draft, double u);

/// norm(max(0, P - Q)); falls back to P when the residual mass is < 1e-12.
std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q);

/// A linear draft sampled from the collapsed-prefix marginals. q[i] is the
/// distribution token i was drawn from (renormalized without "end").
struct DraftChain {
  TokenSeq tokens;
  std::vector<std::vector<double>> q;
};

DraftChain sample_draft_chain(std::span<const double> slot_log_probs, std::size_t slots,
                              std::size_t vocab, std::size_t max_len, TokenId blank, Rng& rng);

/// Token-by-token speculative sampling over a chain. p has chain.size() + 1
/// base distributions: p[i] is the distribution for the token after i chain
/// tokens.
AcceptanceResult sample_accept_path(const DraftChain& chain,
                                    const std::vector<std::vector<double>>& p, Rng& rng);

/// Draws an index from a normalized distribution.
std::size_t sample_index(std::span<const double> dist, Rng& rng);

/// Softmax of logits / temperature in double precision.
std::vector<double> base_distribution(std::span<const float> logits, double temperature);

enum class SessionStatus { Running, Eos, Overflow };

/// One decoding session. Without a draft module every step is a single
/// autoregressive base forward. The prompt forward counts as the first step
/// and emits the first token.
///
/// Cache convention: every committed token except the newest is cached; the
/// newest (pending) token is processed at the start of the next step, as the
/// root of the verification tree.
class DecodeSession {
 public:
  DecodeSession(const BaseModel& base, const DraftModule* draft, DecodeOptions options);

  void start(const TokenSeq& prompt);
  AcceptanceResult step();

  SessionStatus status() const { return status_; }
  const TokenSeq& committed() const { return committed_; }
  TokenSeq generated() const;
  const KvCache& cache() const { return cache_; }
  const RunMetrics& metrics() const { return metrics_; }
  /// Logits of the last cached row (the distribution that chose the pending token).
  const std::vector<float>& last_logits() const { return last_logits_; }

 private:
  AcceptanceResult vanilla_step();
  AcceptanceResult speculative_step();
  TokenId choose(std::span<const float> logits_row);
  void commit(const TokenSeq& tokens);

  const BaseModel& base_;
  const DraftModule* draft_;
  DecodeOptions options_;
  Rng rng_;
  KvCache cache_;
  DraftCache draft_cache_;
  TokenSeq committed_;
  std::size_t prompt_length_ = 0;
  std::vector<float> anchor_hidden_;
  std::vector<float> last_logits_;
  RunMetrics metrics_;
  SessionStatus status_ = SessionStatus::Running;
};

struct GenerateResult {
  TokenSeq tokens;  // generated tokens, ending with EOS when one was produced
  RunMetrics metrics;
  SessionStatus status = SessionStatus::Running;
};

/// `draft == nullptr` gives plain autoregressive decoding.
GenerateResult generate(const BaseModel& base, const DraftModule* draft, const TokenSeq& prompt,
                        std::size_t max_new_tokens, const DecodeOptions& options);

}  // namespace ctcd
