#pragma once

// Benchmark harness: vanilla vs speculative runs per prompt, the β and γ
// metrics, per-stage time fractions, and CSV/JSON reports.

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctcd/base_model.hpp"
#include "ctcd/draft_module.hpp"
#include "ctcd/spec_decode.hpp"

namespace ctcd {

class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mean tokens per decoding step, N / M.
double compute_beta(std::size_t N, std::size_t M);
/// Per-token time ratio (T_v / N_v) / (T_s / N_s).
double compute_gamma(const RunMetrics& vanilla, const RunMetrics& spec);

struct StageFractions {
  double base = 0.0;
  double draft = 0.0;
  double transform = 0.0;
  double verify = 0.0;
  double other = 0.0;
};
/// Stage seconds over T; `other` takes the remainder (never negative).
StageFractions stage_fractions(const RunMetrics& metrics);

struct BenchRow {
  std::size_t prompt_id = 0;
  std::string mode;  // "vanilla" or "spec"
  RunMetrics metrics;
  bool truncated = false;  // hit the context limit; excluded from aggregates
  TokenSeq tokens;
};

struct BenchOptions {
  DecodeOptions decode;
  std::size_t max_new_tokens = 64;
  std::size_t parallel = 1;  // > 1 runs prompts concurrently; timings then not comparable
};

struct BenchReport {
  std::vector<BenchRow> rows;
  RunMetrics vanilla_total;
  RunMetrics spec_total;
  double beta = 0.0;
  double gamma = 0.0;
  std::size_t truncated = 0;
  std::size_t mismatches = 0;  // greedy prompts whose spec output differs from vanilla
  bool timing_comparable = true;
  nlohmann::json config;
  std::map<std::string, std::string> checkpoint_hashes;
};

/// Throws std::logic_error when a row breaks N >= M (rows with M = 0 carry
/// no steps and pass).
void check_row(const BenchRow& row);

BenchReport run_benchmark(const BaseModel& base, const DraftModule& draft,
                          const std::vector<std::string>& prompts, const BenchOptions& options);

/// Columns: prompt_id, mode, N, M, T_seconds, beta, frac_base, frac_draft,
/// frac_transform, frac_verify, frac_other.
std::string bench_csv(const BenchReport& report);
nlohmann::json bench_json(const BenchReport& report);

}  // namespace ctcd
