#include "ctcd/spec_decode.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <stdexcept>

#include "ctcd/ctc.hpp"
#include "ctcd/distill.hpp"

namespace ctcd {

namespace {

using Clock = std::chrono::steady_clock;

class StageTimer {
 public:
  explicit StageTimer(double& sink) : sink_(sink), start_(Clock::now()) {}
  ~StageTimer() { sink_ += std::chrono::duration<double>(Clock::now() - start_).count(); }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  double& sink_;
  Clock::time_point start_;
};

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

std::string to_string(DecodeMode mode) { return mode == DecodeMode::Greedy ? "greedy" : "sample"; }

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "greedy") return DecodeMode::Greedy;
  if (text == "sample") return DecodeMode::Sample;
  throw std::invalid_argument("unknown mode '" + text + "' (expected greedy|sample)");
}

AcceptanceResult greedy_accept(const DraftTrie& trie, std::span<const float> logits, std::size_t vocab) {
  if (logits.size() != trie.size() * vocab) throw ShapeError("greedy_accept: logits do not match trie size");
  AcceptanceResult out;
  int cur = 0;
  while (true) {
    const auto best = static_cast<TokenId>(argmax(logits.subspan(static_cast<std::size_t>(cur) * vocab, vocab)));
    out.tokens.push_back(best);
    const int next = trie.child(cur, best);
    if (next < 0) {
      out.rejected = !trie.nodes[static_cast<std::size_t>(cur)].children.empty();
      break;
    }
    cur = next;
  }
  out.node = cur;
  return out;
}

bool accept_token(double p_base, double q_draft, double u) {
  if (!(q_draft > 0.0)) throw UsageError("accept_token: drafted token must have q > 0");
  return u < std::min(1.0, p_base / q_draft);
}

std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("residual_distribution: support sizes differ");
  std::vector<double> r(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = std::max(0.0, p[i] - q[i]);
    total += r[i];
  }
  if (total < 1e-12) return {p.begin(), p.end()};
  for (double& v : r) v /= total;
  return r;
}

std::size_t sample_index(std::span<const double> dist, Rng& rng) {
  const double u = uniform(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    acc += dist[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

std::vector<double> base_distribution(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<double>(logits[i]) / temperature;
    mx = std::max(mx, p[i]);
  }
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

DraftChain sample_draft_chain(std::span<const double> slot_log_probs, std::size_t slots,
                              std::size_t vocab, std::size_t max_len, TokenId blank, Rng& rng) {
  DraftChain chain;
  std::vector<double> joint(vocab + 1);
  while (chain.tokens.size() < max_len) {
    PrefixMarginals m;
    try {
      m = collapsed_prefix_marginals(slot_log_probs, slots, vocab, chain.tokens, blank);
    } catch (const ZeroProbabilityPrefixError&) {
      break;
    }
    std::copy(m.next.begin(), m.next.end(), joint.begin());
    joint[vocab] = m.end;
    const std::size_t pick = sample_index(joint, rng);
    if (pick == vocab || m.end >= 1.0) break;
    for (double& v : m.next) v /= (1.0 - m.end);
    chain.tokens.push_back(static_cast<TokenId>(pick));
    chain.q.push_back(std::move(m.next));
  }
  return chain;
}

AcceptanceResult sample_accept_path(const DraftChain& chain, const std::vector<std::vector<double>>& p,
                                    Rng& rng) {
  if (p.size() != chain.tokens.size() + 1) throw ShapeError("sample_accept_path: need one more p than tokens");
  AcceptanceResult out;
  for (std::size_t i = 0; i < chain.tokens.size(); ++i) {
    const auto x = static_cast<std::size_t>(chain.tokens[i]);
    if (accept_token(p[i][x], chain.q[i][x], uniform(rng))) {
      out.tokens.push_back(chain.tokens[i]);
      continue;
    }
    const auto r = residual_distribution(p[i], chain.q[i]);
    out.tokens.push_back(static_cast<TokenId>(sample_index(r, rng)));
    out.node = static_cast<int>(i);
    out.rejected = true;
    return out;
  }
  out.tokens.push_back(static_cast<TokenId>(sample_index(p.back(), rng)));
  out.node = static_cast<int>(chain.tokens.size());
  return out;
}

DecodeSession::DecodeSession(const BaseModel& base, const DraftModule* draft, DecodeOptions options)
    : base_(base),
      draft_(draft),
      options_(options),
      rng_(options.seed),
      cache_(base.config()),
      draft_cache_(base.config()) {
  if (draft_ && draft_->config().d_model != base.config().d_model) {
    throw ShapeError("draft module width does not match the base model");
  }
}

TokenId DecodeSession::choose(std::span<const float> logits_row) {
  if (options_.mode == DecodeMode::Greedy) return static_cast<TokenId>(argmax(logits_row));
  return static_cast<TokenId>(sample_index(base_distribution(logits_row, options_.temperature), rng_));
}

void DecodeSession::commit(const TokenSeq& tokens) {
  for (TokenId t : tokens) {
    committed_.push_back(t);
    ++metrics_.N;
    if (t == vocab::kEos) {
      status_ = SessionStatus::Eos;
      break;
    }
  }
  ++metrics_.M;
}

TokenSeq DecodeSession::generated() const {
  return TokenSeq(committed_.begin() + static_cast<std::ptrdiff_t>(prompt_length_), committed_.end());
}

void DecodeSession::start(const TokenSeq& prompt) {
  if (prompt.empty()) throw UsageError("empty prompt");
  const std::size_t V = base_.config().vocab_size;
  const std::size_t d = base_.config().d_model;
  committed_ = prompt;
  prompt_length_ = prompt.size();
  // The first generated token also needs a row in the cache later.
  if (prompt.size() + 1 > base_.config().max_seq_len) {
    status_ = SessionStatus::Overflow;
    return;
  }
  std::vector<std::size_t> positions(prompt.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  BaseOutput out;
  {
    StageTimer t(metrics_.stages.base_forward);
    out = base_.forward_cached(prompt, positions, cache_);
  }
  auto logits = out.logits.data();
  last_logits_.assign(logits.end() - static_cast<std::ptrdiff_t>(V), logits.end());
  auto hidden = out.hidden.data();
  anchor_hidden_.assign(hidden.end() - static_cast<std::ptrdiff_t>(d), hidden.end());
  if (draft_) {
    StageTimer t(metrics_.stages.draft_forward);
    draft_->extend_cache(hidden, draft_cache_);
  }
  commit({choose(last_logits_)});
}

AcceptanceResult DecodeSession::step() {
  if (status_ != SessionStatus::Running) throw UsageError("step() on a finished session");
  if (cache_.length() + 1 > base_.config().max_seq_len) {
    status_ = SessionStatus::Overflow;
    return {};
  }
  return draft_ ? speculative_step() : vanilla_step();
}

AcceptanceResult DecodeSession::vanilla_step() {
  const std::size_t V = base_.config().vocab_size;
  const TokenId pending = committed_.back();
  const std::size_t pos = cache_.length();
  BaseOutput out;
  {
    StageTimer t(metrics_.stages.base_forward);
    out = base_.forward_cached(std::span<const TokenId>(&pending, 1), std::span<const std::size_t>(&pos, 1),
                               cache_);
  }
  auto logits = out.logits.data();
  last_logits_.assign(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(V));
  AcceptanceResult res;
  res.tokens.push_back(choose(last_logits_));
  commit(res.tokens);
  return res;
}

AcceptanceResult DecodeSession::speculative_step() {
  const ModelConfig& cfg = base_.config();
  const std::size_t V = cfg.vocab_size;
  const std::size_t L = draft_->config().draft_slots;
  const std::size_t context = cache_.length();
  const std::size_t max_depth = cfg.max_seq_len - context - 1;

  std::vector<float> slots;
  {
    StageTimer t(metrics_.stages.draft_forward);
    slots = draft_->draft_cached(anchor_hidden_, draft_cache_, base_.lm_head());
  }

  DraftTrie trie;
  DraftChain chain;
  {
    StageTimer t(metrics_.stages.ctc_transform);
    std::vector<CandidatePath> candidates;
    if (options_.mode == DecodeMode::Greedy) {
      auto paths = enumerate_paths(topk_per_slot(slots, L, V, options_.k), options_.beam);
      candidates = options_.collapse ? ctc_transform(paths) : raw_candidates(paths);
      std::size_t budget = max_depth + 1;
      if (options_.max_nodes > 0) budget = std::min(budget, options_.max_nodes);
      candidates = fit_candidates(candidates, budget);
    } else {
      std::vector<double> lp(slots.begin(), slots.end());
      std::size_t max_len = max_depth;
      if (options_.max_nodes > 0) max_len = std::min(max_len, options_.max_nodes - 1);
      chain = sample_draft_chain(lp, L, V, max_len, vocab::kBlank, rng_);
      if (!chain.tokens.empty()) {
        CandidatePath c;
        c.collapsed = chain.tokens;
        candidates.push_back(std::move(c));
      }
    }
    trie = build_trie(committed_.back(), candidates, context);
  }

  BaseOutput out;
  {
    StageTimer t(metrics_.stages.tree_verify);
    const VerifyBatch batch = flatten_trie(trie);
    out = base_.forward_cached(batch.tokens, batch.positions, cache_, batch.mask);
  }

  auto logits = out.logits.data();
  AcceptanceResult res;
  if (options_.mode == DecodeMode::Greedy) {
    res = greedy_accept(trie, logits, V);
  } else {
    // The chain trie is linear, so node i sits at depth i.
    std::vector<std::vector<double>> p;
    for (std::size_t i = 0; i < trie.size(); ++i) {
      p.push_back(base_distribution(logits.subspan(i * V, V), options_.temperature));
    }
    res = sample_accept_path(chain, p, rng_);
  }

  std::vector<std::size_t> keep;
  for (int n = res.node; n >= 0; n = trie.nodes[static_cast<std::size_t>(n)].parent) {
    keep.push_back(context + static_cast<std::size_t>(n));
  }
  std::reverse(keep.begin(), keep.end());
  cache_.retain(context, keep);

  const std::size_t d = cfg.d_model;
  auto hidden = out.hidden.data();
  std::vector<float> rows;
  rows.reserve(keep.size() * d);
  for (std::size_t r : keep) {
    auto h = hidden.subspan((r - context) * d, d);
    rows.insert(rows.end(), h.begin(), h.end());
  }
  {
    StageTimer t(metrics_.stages.draft_forward);
    draft_->extend_cache(rows, draft_cache_);
  }
  anchor_hidden_.assign(rows.end() - static_cast<std::ptrdiff_t>(d), rows.end());
  const auto node_logits = logits.subspan(static_cast<std::size_t>(res.node) * V, V);
  last_logits_.assign(node_logits.begin(), node_logits.end());
  commit(res.tokens);
  return res;
}

GenerateResult generate(const BaseModel& base, const DraftModule* draft, const TokenSeq& prompt,
                        std::size_t max_new_tokens, const DecodeOptions& options) {
  GenerateResult result;
  if (max_new_tokens == 0) return result;
  const auto t0 = Clock::now();
  DecodeSession session(base, draft, options);
  session.start(prompt);
  while (session.status() == SessionStatus::Running && session.metrics().N < max_new_tokens) {
    session.step();
  }
  result.metrics = session.metrics();
  result.metrics.T = std::chrono::duration<double>(Clock::now() - t0).count();
  result.status = session.status();
  result.tokens = session.generated();
  if (result.tokens.size() > max_new_tokens) result.tokens.resize(max_new_tokens);
  result.metrics.N = result.tokens.size();
  return result;
}

}  // namespace ctcd
