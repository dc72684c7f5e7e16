#include "ctcd/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace ctcd {

double compute_beta(std::size_t N, std::size_t M) {
  if (M == 0) throw MetricError("beta is undefined for zero decoding steps");
  return static_cast<double>(N) / static_cast<double>(M);
}

double compute_gamma(const RunMetrics& vanilla, const RunMetrics& spec) {
  if (vanilla.N == 0 || spec.N == 0) throw MetricError("gamma is undefined for runs without tokens");
  if (!(vanilla.T > 0.0) || !(spec.T > 0.0)) throw MetricError("gamma is undefined for zero wall time");
  return (vanilla.T / static_cast<double>(vanilla.N)) / (spec.T / static_cast<double>(spec.N));
}

StageFractions stage_fractions(const RunMetrics& m) {
  StageFractions f;
  if (!(m.T > 0.0)) return f;
  f.base = m.stages.base_forward / m.T;
  f.draft = m.stages.draft_forward / m.T;
  f.transform = m.stages.ctc_transform / m.T;
  f.verify = m.stages.tree_verify / m.T;
  f.other = std::max(0.0, 1.0 - (f.base + f.draft + f.transform + f.verify));
  return f;
}

void check_row(const BenchRow& row) {
  if (row.metrics.M > 0 && row.metrics.N < row.metrics.M) {
    throw std::logic_error("bench row " + std::to_string(row.prompt_id) + "/" + row.mode + ": N=" +
                           std::to_string(row.metrics.N) + " < M=" + std::to_string(row.metrics.M));
  }
}

namespace {

void accumulate(RunMetrics& total, const RunMetrics& m) {
  total.N += m.N;
  total.M += m.M;
  total.T += m.T;
  total.stages.base_forward += m.stages.base_forward;
  total.stages.draft_forward += m.stages.draft_forward;
  total.stages.ctc_transform += m.stages.ctc_transform;
  total.stages.tree_verify += m.stages.tree_verify;
}

BenchRow run_one(const BaseModel& base, const DraftModule* draft, std::size_t id, const std::string& prompt,
                 const BenchOptions& options) {
  BenchRow row;
  row.prompt_id = id;
  row.mode = draft ? "spec" : "vanilla";
  const GenerateResult r = generate(base, draft, vocab::encode_prompt(prompt), options.max_new_tokens,
                                    options.decode);
  row.metrics = r.metrics;
  row.truncated = r.status == SessionStatus::Overflow;
  row.tokens = r.tokens;
  check_row(row);
  return row;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

BenchReport run_benchmark(const BaseModel& base, const DraftModule& draft,
                          const std::vector<std::string>& prompts, const BenchOptions& options) {
  if (options.parallel == 0) throw UsageError("parallel must be >= 1");
  BenchReport report;
  report.timing_comparable = options.parallel == 1;
  std::vector<BenchRow> vanilla(prompts.size()), spec(prompts.size());
  auto work = [&](std::size_t i) {
    vanilla[i] = run_one(base, nullptr, i, prompts[i], options);
    spec[i] = run_one(base, &draft, i, prompts[i], options);
  };
  if (options.parallel == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(options.parallel);
    for (std::size_t w = 0; w < options.parallel; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < prompts.size(); i = next++) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const bool truncated = vanilla[i].truncated || spec[i].truncated;
    if (truncated) {
      ++report.truncated;
    } else {
      accumulate(report.vanilla_total, vanilla[i].metrics);
      accumulate(report.spec_total, spec[i].metrics);
      if (options.decode.mode == DecodeMode::Greedy && vanilla[i].tokens != spec[i].tokens) ++report.mismatches;
    }
    report.rows.push_back(std::move(vanilla[i]));
    report.rows.push_back(std::move(spec[i]));
  }
  if (report.spec_total.M > 0) report.beta = compute_beta(report.spec_total.N, report.spec_total.M);
  if (report.spec_total.N > 0 && report.vanilla_total.N > 0) {
    report.gamma = compute_gamma(report.vanilla_total, report.spec_total);
  }
  return report;
}

std::string bench_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "prompt_id,mode,N,M,T_seconds,beta,frac_base,frac_draft,frac_transform,frac_verify,frac_other\n";
  for (const auto& row : report.rows) {
    check_row(row);
    const auto f = stage_fractions(row.metrics);
    out << row.prompt_id << ',' << row.mode << ',' << row.metrics.N << ',' << row.metrics.M << ','
        << fixed(row.metrics.T, 6) << ','
        << (row.metrics.M > 0 ? fixed(compute_beta(row.metrics.N, row.metrics.M), 6) : std::string()) << ','
        << fixed(f.base, 4) << ',' << fixed(f.draft, 4) << ',' << fixed(f.transform, 4) << ','
        << fixed(f.verify, 4) << ',' << fixed(f.other, 4) << '\n';
  }
  return out.str();
}

nlohmann::json bench_json(const BenchReport& report) {
  auto metrics = [](const RunMetrics& m) {
    const auto f = stage_fractions(m);
    return nlohmann::json{{"N", m.N},
                          {"M", m.M},
                          {"T_seconds", m.T},
                          {"stage_seconds",
                           {{"base_forward", m.stages.base_forward},
                            {"draft_forward", m.stages.draft_forward},
                            {"ctc_transform", m.stages.ctc_transform},
                            {"tree_verify", m.stages.tree_verify},
                            {"other", f.other * m.T}}}};
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r = metrics(row.metrics);
    r["prompt_id"] = row.prompt_id;
    r["mode"] = row.mode;
    r["truncated"] = row.truncated;
    if (row.metrics.M > 0) r["beta"] = compute_beta(row.metrics.N, row.metrics.M);
    r["text"] = vocab::decode(row.tokens);
    rows.push_back(std::move(r));
  }
  return {{"schema", 1},
          {"config", report.config},
          {"checkpoints", report.checkpoint_hashes},
          {"beta", report.beta},
          {"gamma", report.gamma},
          {"truncated", report.truncated},
          {"greedy_mismatches", report.mismatches},
          {"timing_comparable", report.timing_comparable},
          {"vanilla", metrics(report.vanilla_total)},
          {"spec", metrics(report.spec_total)},
          {"rows", std::move(rows)}};
}

}  // namespace ctcd
