#include "ctcd/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "ctcd/base_model.hpp"
#include "ctcd/ctc.hpp"
#include "ctcd/distill.hpp"
#include "ctcd/draft_module.hpp"
#include "ctcd/draft_tree.hpp"
#include "ctcd/spec_decode.hpp"
#include "ctcd/tensor_ops.hpp"

namespace ctcd {

namespace {

using Rng64 = std::mt19937_64;

// Random L x V log-softmax rows.
std::vector<double> random_slots(std::size_t L, std::size_t V, Rng64& rng) {
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<double> out(L * V);
  for (std::size_t s = 0; s < L; ++s) {
    double mx = -1e300;
    for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, out[s * V + v] = g(rng));
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(out[s * V + v] - mx);
    for (std::size_t v = 0; v < V; ++v) out[s * V + v] -= mx + std::log(z);
  }
  return out;
}

TokenSeq random_feasible_target(std::size_t L, std::size_t V, TokenId blank, Rng64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, L);
  std::uniform_int_distribution<int> sym(0, static_cast<int>(V) - 2);
  while (true) {
    TokenSeq y(len(rng));
    for (auto& t : y) {
      t = sym(rng);
      if (t >= blank) ++t;
    }
    if (min_alignment_length(y) <= L) return y;
  }
}

CheckResult check_ctc_brute(Rng64& rng) {
  CheckResult r{"ctc-vs-enumeration", true, ""};
  double worst = 0.0;
  for (int i = 0; i < 60; ++i) {
    const std::size_t L = 1 + rng() % 4, V = 2 + rng() % 3;
    const TokenId blank = static_cast<TokenId>(V - 1);
    const auto lp = random_slots(L, V, rng);
    const auto y = random_feasible_target(L, V, blank, rng);
    const double got = ctc_log_prob(Tensor64(Shape{L, V}, lp), y, blank).item();
    const double want = brute_force_log_prob(lp, L, V, y, blank);
    worst = std::max(worst, std::abs(got - want));
  }
  r.passed = worst < 1e-6;
  r.detail = "max |diff| " + std::to_string(worst);
  return r;
}

CheckResult check_ctc_gradient(Rng64& rng) {
  CheckResult r{"ctc-gradient", true, ""};
  double worst = 0.0;
  for (int i = 0; i < 12; ++i) {
    const std::size_t L = 2 + rng() % 3, V = 3 + rng() % 2;
    const TokenId blank = static_cast<TokenId>(V - 1);
    const auto lp = random_slots(L, V, rng);
    const auto y = random_feasible_target(L, V, blank, rng);
    Tensor64 x(Shape{L, V}, lp, true);
    Tensor64 out = ctc_log_prob(x, y, blank);
    out.backward();
    const auto grad = x.grad();
    const double h = 1e-6;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      auto plus = lp, minus = lp;
      plus[j] += h;
      minus[j] -= h;
      NoGradGuard ng;
      const double fd = (ctc_log_prob(Tensor64(Shape{L, V}, plus), y, blank).item() -
                         ctc_log_prob(Tensor64(Shape{L, V}, minus), y, blank).item()) /
                        (2 * h);
      const double rel = std::abs(fd - grad[j]) / std::max(1e-3, std::abs(fd) + std::abs(grad[j]));
      worst = std::max(worst, rel);
    }
  }
  r.passed = worst < 1e-4;
  r.detail = "max relative error " + std::to_string(worst);
  return r;
}

CheckResult check_marginals(Rng64& rng) {
  CheckResult r{"collapsed-marginals", true, ""};
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t L = 1 + rng() % 4, V = 2 + rng() % 3;
    const TokenId blank = static_cast<TokenId>(V - 1);
    const auto lp = random_slots(L, V, rng);
    // Enumerate alignments: mass of every collapsed string.
    std::map<TokenSeq, double> mass;
    std::vector<TokenId> a(L, 0);
    while (true) {
      double lw = 0.0;
      for (std::size_t s = 0; s < L; ++s) lw += lp[s * V + static_cast<std::size_t>(a[s])];
      mass[collapse(a, blank).tokens] += std::exp(lw);
      std::size_t s = 0;
      while (s < L && ++a[s] == static_cast<TokenId>(V)) a[s++] = 0;
      if (s == L) break;
    }
    // Prefix: a random collapsed string with non-negligible mass, truncated.
    auto it = mass.begin();
    std::advance(it, static_cast<long>(rng() % mass.size()));
    TokenSeq prefix = it->first;
    prefix.resize(rng() % (prefix.size() + 1));
    double total = 0.0, end = 0.0;
    std::vector<double> next(V, 0.0);
    for (const auto& [y, m] : mass) {
      if (y.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), y.begin())) continue;
      total += m;
      if (y.size() == prefix.size()) {
        end += m;
      } else {
        next[static_cast<std::size_t>(y[prefix.size()])] += m;
      }
    }
    if (total < 1e-30) continue;
    const auto got = collapsed_prefix_marginals(lp, L, V, prefix, blank);
    worst = std::max(worst, std::abs(got.end - end / total));
    for (std::size_t v = 0; v < V; ++v) worst = std::max(worst, std::abs(got.next[v] - next[v] / total));
  }
  r.passed = worst < 1e-8;
  r.detail = "max |diff| " + std::to_string(worst);
  return r;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 64;
  return c;
}

CheckResult check_tree_mask(Rng64& rng) {
  CheckResult r{"tree-mask-equivalence", true, ""};
  const ModelConfig cfg = tiny_config();
  const BaseModel base(cfg, rng());
  const std::size_t V = cfg.vocab_size;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    TokenSeq context(3 + rng() % 6);
    for (auto& t : context) t = static_cast<TokenId>(rng() % 256);
    std::vector<CandidatePath> cands(4);
    for (auto& c : cands) {
      c.collapsed.resize(1 + rng() % 4);
      for (auto& t : c.collapsed) t = static_cast<TokenId>(97 + rng() % 3);
    }
    const TokenId root = static_cast<TokenId>(rng() % 256);
    const DraftTrie trie = build_trie(root, cands, context.size());
    const VerifyBatch batch = flatten_trie(trie);
    KvCache cache(cfg);
    std::vector<std::size_t> pos(context.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    base.forward_cached(context, pos, cache);
    const auto tree = base.forward_cached(batch.tokens, batch.positions, cache, batch.mask);
    for (std::size_t n = 0; n < trie.size(); ++n) {
      TokenSeq seq = context;
      seq.push_back(root);
      const auto path = trie.path_tokens(static_cast<int>(n));
      seq.insert(seq.end(), path.begin(), path.end());
      KvCache fresh(cfg);
      std::vector<std::size_t> p(seq.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
      const auto full = base.forward_cached(seq, p, fresh);
      const auto a = tree.logits.data().subspan(n * V, V);
      const auto b = full.logits.data().subspan((seq.size() - 1) * V, V);
      for (std::size_t v = 0; v < V; ++v) worst = std::max(worst, static_cast<double>(std::abs(a[v] - b[v])));
    }
  }
  r.passed = worst <= 1e-4;
  r.detail = "max |logit diff| " + std::to_string(worst);
  return r;
}

CheckResult check_greedy_lossless(Rng64& rng) {
  CheckResult r{"greedy-losslessness", true, ""};
  const ModelConfig cfg = tiny_config();
  const BaseModel base(cfg, rng());
  const DraftModule draft(cfg, rng());
  int mismatches = 0;
  for (int i = 0; i < 5; ++i) {
    TokenSeq prompt{vocab::kBos};
    for (std::size_t j = 0; j < 4; ++j) prompt.push_back(static_cast<TokenId>(rng() % 256));
    DecodeOptions o;
    const auto plain = generate(base, nullptr, prompt, 24, o);
    const auto fast = generate(base, &draft, prompt, 24, o);
    if (plain.tokens != fast.tokens) ++mismatches;
  }
  r.passed = mismatches == 0;
  r.detail = std::to_string(mismatches) + " of 5 prompts differ";
  return r;
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  Rng64 rng(seed);
  std::vector<CheckResult> out;
  for (auto fn : {check_ctc_brute, check_ctc_gradient, check_marginals, check_tree_mask, check_greedy_lossless}) {
    try {
      out.push_back(fn(rng));
    } catch (const std::exception& e) {
      out.push_back({"error", false, e.what()});
    }
  }
  return out;
}

}  // namespace ctcd
