// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
//   acceptance [--workdir DIR] [--reuse]
//
// --reuse loads checkpoints left in DIR by an earlier run instead of training.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctcd/bench.hpp"
#include "ctcd/checkpoint.hpp"
#include "ctcd/corpus.hpp"
#include "ctcd/ctc.hpp"
#include "ctcd/distill.hpp"
#include "ctcd/draft_tree.hpp"
#include "ctcd/spec_decode.hpp"
#include "ctcd/training.hpp"
#include "oracles.hpp"

using namespace ctcd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
  verdicts.push_back({id, pass, detail});
  std::cout << "  [" << id << "] " << detail << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> random_rows(std::size_t L, std::size_t V, std::mt19937_64& rng) {
  return oracle::random_log_probs(L, V, rng);
}

TokenSeq to_tokens(const oracle::Seq& s) { return TokenSeq(s.begin(), s.end()); }

// 1. CTC log-probability against alignment enumeration.
void criterion_ctc_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int n = 0;
  for (; n < 240; ++n) {
    const std::size_t L = 1 + rng() % 5, V = 2 + rng() % 4;
    const int blank = static_cast<int>(rng() % V);
    const auto lp = random_rows(L, V, rng);
    const auto y = oracle::random_feasible_target(L, V, blank, rng);
    const double want = oracle::log_prob(lp, L, V, y, blank);
    const double got = ctc_log_prob(Tensor64(Shape{L, V}, lp), to_tokens(y), blank).item();
    worst = std::max(worst, std::abs(got - want));
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-6 && secs < 10.0,
         std::to_string(n) + " instances, max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s");
}

// 2. CTC gradient against central differences.
void criterion_ctc_gradient() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0;
  int n = 0;
  for (; n < 60; ++n) {
    const std::size_t L = 2 + rng() % 4, V = 3 + rng() % 3;
    const int blank = static_cast<int>(V - 1);
    const auto lp = random_rows(L, V, rng);
    const TokenSeq y = to_tokens(oracle::random_feasible_target(L, V, blank, rng));
    Tensor64 x(Shape{L, V}, lp, true);
    ctc_log_prob(x, y, blank).backward();
    const auto grad = x.grad();
    const double h = 1e-6;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      auto plus = lp, minus = lp;
      plus[j] += h;
      minus[j] -= h;
      NoGradGuard guard;
      const double fd = (ctc_log_prob(Tensor64(Shape{L, V}, plus), y, blank).item() -
                         ctc_log_prob(Tensor64(Shape{L, V}, minus), y, blank).item()) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(fd - grad[j]) / std::max(1e-3, std::abs(fd) + std::abs(grad[j])));
    }
  }
  const double secs = seconds_since(t0);
  report(2, worst < 1e-4 && secs < 30.0,
         std::to_string(n) + " instances, max relative error " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) +
             " s");
}

// 3. Collapsed-prefix marginals against enumeration.
void criterion_marginals() {
  std::mt19937_64 rng(303);
  double worst = 0.0, worst_sum = 0.0;
  int n = 0;
  while (n < 120) {
    const std::size_t L = 1 + rng() % 5, V = 2 + rng() % 4;
    const int blank = static_cast<int>(rng() % V);
    const auto lp = random_rows(L, V, rng);
    const auto mass = oracle::collapsed_mass(lp, L, V, blank);
    auto it = mass.begin();
    std::advance(it, static_cast<long>(rng() % mass.size()));
    oracle::Seq prefix = it->first;
    prefix.resize(rng() % (prefix.size() + 1));
    const auto want = oracle::prefix_marginals(mass, V, prefix);
    if (want.total < 1e-30) continue;
    const auto got = collapsed_prefix_marginals(lp, L, V, to_tokens(prefix), blank);
    double sum = got.end;
    worst = std::max(worst, std::abs(got.end - want.end));
    for (std::size_t v = 0; v < V; ++v) {
      worst = std::max(worst, std::abs(got.next[v] - want.next[v]));
      sum += got.next[v];
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    ++n;
  }
  report(3, worst < 1e-8 && worst_sum < 1e-6,
         std::to_string(n) + " instances, max |diff| " + fmt("%.2e", worst) + ", max |sum - 1| " +
             fmt("%.2e", worst_sum));
}

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_seq_len = 96;
  return c;
}

// 4. Tree-masked verification against sequential recomputation.
void criterion_tree_mask() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  const ModelConfig cfg = small_config();
  const BaseModel base(cfg, 404);
  const std::size_t V = cfg.vocab_size;
  double worst = 0.0;
  std::size_t nodes = 0;
  int tries = 0;
  for (; tries < 40; ++tries) {
    TokenSeq context{vocab::kBos};
    for (std::size_t i = rng() % 20; i > 0; --i) context.push_back(static_cast<TokenId>(rng() % 256));
    std::vector<CandidatePath> cands(1 + rng() % 8);
    for (auto& c : cands) {
      c.collapsed.resize(1 + rng() % 5);
      for (auto& t : c.collapsed) t = static_cast<TokenId>(97 + rng() % 4);
    }
    const TokenId root = static_cast<TokenId>(rng() % 256);
    const DraftTrie trie = build_trie(root, fit_candidates(cands, 1 + rng() % 20), context.size());
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
      ++nodes;
    }
  }
  const double secs = seconds_since(t0);
  report(4, worst <= 1e-4 && secs < 60.0,
         std::to_string(tries) + " tries, " + std::to_string(nodes) + " nodes, max |logit diff| " +
             fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s");
}

// 6. Speculative sampling leaves the first-token law unchanged.
void criterion_sampling() {
  constexpr std::size_t V = 16, L = 4;
  constexpr TokenId blank = 15;
  constexpr int trials = 100000;
  std::mt19937_64 setup(606);
  std::vector<double> slots = oracle::random_log_probs(L, V, setup, 1.5);
  std::vector<std::vector<double>> p;
  for (std::size_t i = 0; i <= L; ++i) {
    const auto row = oracle::random_log_probs(1, V, setup, 1.5);
    std::vector<double> dist(V, 0.0);
    double z = 0.0;
    for (std::size_t v = 0; v + 1 < V; ++v) z += dist[v] = std::exp(row[v]);
    for (auto& d : dist) d /= z;
    p.push_back(dist);
  }
  Rng rng(6060);
  std::vector<double> hist(V, 0.0);
  for (int t = 0; t < trials; ++t) {
    const DraftChain chain = sample_draft_chain(slots, L, V, L, blank, rng);
    std::vector<std::vector<double>> pp(p.begin(), p.begin() + static_cast<long>(chain.tokens.size() + 1));
    const AcceptanceResult r = sample_accept_path(chain, pp, rng);
    hist[static_cast<std::size_t>(r.tokens.at(0))] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t v = 0; v < V; ++v) tv += std::abs(hist[v] / trials - p[0][v]);
  tv *= 0.5;
  report(6, tv < 0.01, std::to_string(trials) + " trials, TV " + fmt("%.4f", tv));
}

// 9. Metric arithmetic.
void criterion_metrics() {
  bool ok = compute_beta(355, 100) == 3.55;
  RunMetrics v, s;
  v.N = 120;
  v.M = 120;
  v.T = 0.036;
  s.N = 120;
  s.M = 40;
  s.T = 0.015;
  const double want = (0.036 / 120.0) / (0.015 / 120.0);
  ok = ok && std::abs(compute_gamma(v, s) - want) < 1e-12 && std::abs(compute_gamma(v, s) - 2.4) < 1e-12;
  s.N = 97;
  s.T = 0.0123;
  ok = ok && std::abs(compute_gamma(v, s) - (0.036 / 120.0) / (0.0123 / 97.0)) < 1e-12;
  bool threw = false;
  try {
    compute_beta(5, 0);
  } catch (const MetricError&) {
    threw = true;
  }
  report(9, ok && threw, "beta(355,100) = 3.55, gamma matches hand arithmetic, M = 0 rejected");
}

// ---- end-to-end pipeline (criteria 5, 7, 8, 10) ----

struct PipelineSettings {
  std::size_t corpus_bytes = 50 * 1024;
  std::size_t pool = 48;
  std::uint64_t seed = 1;
  double base_lr = 1e-3;
  std::size_t base_epochs = 12;
  double draft_lr = 2e-3;
  std::size_t draft_epochs = 12;
  std::size_t batch_size = 8;
  std::size_t slots = 7;
  std::size_t label_horizon = 4;
  std::size_t prompts = 40;
  std::size_t max_new_tokens = 64;
  DecodeOptions decode;
};

PipelineSettings pipeline_settings() {
  PipelineSettings s;
  s.decode.k = 3;
  s.decode.beam = 16;
  s.decode.max_nodes = 6;
  return s;
}

std::vector<BenchRow> all_rows;

void keep_rows(const BenchReport& r) { all_rows.insert(all_rows.end(), r.rows.begin(), r.rows.end()); }

BaseModel train_or_load_base(const fs::path& dir, bool reuse, const PipelineSettings& s,
                             const std::vector<TokenSeq>& seqs) {
  const fs::path path = dir / "base.ckpt";
  if (reuse && fs::exists(path)) {
    Checkpoint ck = load_checkpoint(path);
    return BaseModel(ck.config, std::move(ck.params));
  }
  ModelConfig cfg;
  cfg.d_model = 128;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  BaseModel base(cfg, s.seed);
  TrainConfig tc;
  tc.lr = s.base_lr;
  tc.epochs = s.base_epochs;
  tc.batch_size = s.batch_size;
  tc.seed = s.seed;
  tc.lr_decay = true;
  const auto t0 = Clock::now();
  const auto r = train_base(base, seqs, tc);
  std::cout << "  base: " << seqs.size() << " sequences, final loss " << fmt("%.4f", r.epoch_loss.back())
            << ", " << fmt("%.0f", seconds_since(t0)) << " s" << std::endl;
  save_checkpoint(path, base.params(), base.config());
  return base;
}

DraftModule train_or_load_draft(const fs::path& dir, bool reuse, const PipelineSettings& s, const BaseModel& base,
                                const std::vector<DistilledExample>& data, LossMode loss) {
  const fs::path path = dir / ("draft_" + to_string(loss) + ".ckpt");
  if (reuse && fs::exists(path)) {
    Checkpoint ck = load_checkpoint(path);
    return DraftModule(ck.config, std::move(ck.params));
  }
  ModelConfig cfg = base.config();
  cfg.draft_slots = s.slots;
  cfg.label_horizon = s.label_horizon;
  DraftModule draft(cfg, s.seed + 1);
  TrainConfig tc;
  tc.lr = s.draft_lr;
  tc.epochs = s.draft_epochs;
  tc.batch_size = s.batch_size;
  tc.seed = s.seed;
  tc.loss = loss;
  tc.lr_decay = true;
  const auto t0 = Clock::now();
  const auto r = train_draft(draft, base, data, tc);
  std::cout << "  draft (" << to_string(loss) << "): final loss " << fmt("%.4f", r.epoch_loss.back()) << ", "
            << fmt("%.0f", seconds_since(t0)) << " s" << std::endl;
  save_checkpoint(path, draft.params(), draft.config());
  return draft;
}

void perturb(DraftModule& draft, float scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, scale);
  for (const auto& name : draft.params().names()) {
    for (float& v : draft.params().at_mut(name).data()) v += g(rng);
  }
}

// 5. Greedy speculative output equals plain greedy output.
void criterion_greedy(const BaseModel& base, const DraftModule& trained) {
  const auto t0 = Clock::now();
  const DraftModule random_draft(base.config(), 505);
  DraftModule adversarial = trained;
  perturb(adversarial, 0.5f, 5050);
  std::mt19937_64 rng(55);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz .";
  std::vector<std::string> prompts;
  for (int i = 0; i < 100; ++i) {
    std::string p;
    for (std::size_t j = 1 + rng() % 24; j > 0; --j) p += alphabet[rng() % alphabet.size()];
    prompts.push_back(p);
  }
  std::size_t runs = 0, mismatches = 0;
  BenchOptions o;
  o.max_new_tokens = 48;
  for (const DraftModule* d : {&trained, &random_draft, static_cast<const DraftModule*>(&adversarial)}) {
    const BenchReport r = run_benchmark(base, *d, prompts, o);
    keep_rows(r);
    for (std::size_t i = 0; i < r.rows.size(); i += 2) {
      ++runs;
      if (r.rows[i].tokens != r.rows[i + 1].tokens) ++mismatches;
    }
  }
  report(5, runs == 300 && mismatches == 0,
         std::to_string(runs) + " runs, " + std::to_string(mismatches) + " mismatches, " +
             fmt("%.0f", seconds_since(t0)) + " s");
}

BenchReport bench(const BaseModel& base, const DraftModule& draft, const std::vector<std::string>& prompts,
                  const PipelineSettings& s, bool collapse, const fs::path& out) {
  BenchOptions o;
  o.decode = s.decode;
  o.decode.collapse = collapse;
  o.max_new_tokens = s.max_new_tokens;
  BenchReport r = run_benchmark(base, draft, prompts, o);
  write_text_file(out.string() + ".csv", bench_csv(r));
  write_text_file(out.string() + ".json", bench_json(r).dump(2) + "\n");
  keep_rows(r);
  return r;
}

void pipeline(const fs::path& dir, bool reuse) {
  const auto t0 = Clock::now();
  const PipelineSettings s = pipeline_settings();
  const auto pool = sentence_pool(s.pool, s.seed);
  const std::string text = memorizable_corpus(pool, s.corpus_bytes, s.seed);
  write_text_file(dir / "corpus.txt", text);
  const auto seqs = make_training_sequences(text, 256);
  const BaseModel base = train_or_load_base(dir, reuse, s, seqs);
  const auto data = make_distilled_dataset(seqs, base);
  const DraftModule ctc = train_or_load_draft(dir, reuse, s, base, data, LossMode::Ctc);
  const DraftModule ce = train_or_load_draft(dir, reuse, s, base, data, LossMode::Ce);

  const auto prompts = corpus_prompts(text, s.prompts, s.seed);
  const BenchReport r_ctc = bench(base, ctc, prompts, s, true, dir / "bench_ctc");
  const BenchReport r_ce = bench(base, ce, prompts, s, true, dir / "bench_ce");
  const BenchReport r_off = bench(base, ctc, prompts, s, false, dir / "bench_ctc_collapse_off");
  const double minutes = seconds_since(t0) / 60.0;

  const bool lossless = r_ctc.mismatches == 0 && r_ce.mismatches == 0 && r_off.mismatches == 0;
  report(7, r_ctc.beta >= 2.0 && r_ctc.gamma > 1.2 && r_ce.beta < r_ctc.beta && lossless && minutes < 120.0,
         "beta(ctc) " + fmt("%.3f", r_ctc.beta) + ", gamma(ctc) " + fmt("%.3f", r_ctc.gamma) + ", beta(ce) " +
             fmt("%.3f", r_ce.beta) + ", gamma(ce) " + fmt("%.3f", r_ce.gamma) + ", " + fmt("%.1f", minutes) +
             " min");
  report(8, r_off.beta <= r_ctc.beta,
         "beta collapse off " + fmt("%.3f", r_off.beta) + " vs on " + fmt("%.3f", r_ctc.beta));

  criterion_greedy(base, ctc);
}

void criterion_beta_floor() {
  std::size_t bad = 0, checked = 0;
  for (const auto& row : all_rows) {
    try {
      check_row(row);
      if (row.metrics.M > 0) {
        ++checked;
        if (compute_beta(row.metrics.N, row.metrics.M) < 1.0) ++bad;
      }
    } catch (const std::logic_error&) {
      ++bad;
    }
  }
  report(10, bad == 0 && checked > 0, std::to_string(checked) + " bench rows, " + std::to_string(bad) + " below 1");
}

}  // namespace

int main(int argc, char** argv) {
  fs::path dir = "acceptance_run";
  bool reuse = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      dir = argv[++i];
    } else if (a == "--reuse") {
      reuse = true;
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--reuse]\n";
      return 1;
    }
  }
  fs::create_directories(dir);

  auto guarded = [](int id, auto fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
  };
  guarded(1, criterion_ctc_oracle);
  guarded(2, criterion_ctc_gradient);
  guarded(3, criterion_marginals);
  guarded(4, criterion_tree_mask);
  guarded(7, [&] { pipeline(dir, reuse); });
  guarded(6, criterion_sampling);
  guarded(9, criterion_metrics);
  guarded(10, criterion_beta_floor);

  std::ofstream summary(dir / "summary.txt");
  bool all = true;
  for (int id = 1; id <= 10; ++id) {
    Verdict v{id, false, "not run"};
    for (const auto& got : verdicts) {
      if (got.id == id) v = got;
    }
    std::ostringstream line;
    line << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << '\n';
    std::cout << line.str();
    summary << line.str();
    all = all && v.pass;
  }
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
