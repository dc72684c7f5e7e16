// ctcd: train a base model and a CTC draft module, then generate or benchmark
// with speculative decoding.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctcd/app_config.hpp"
#include "ctcd/bench.hpp"
#include "ctcd/checkpoint.hpp"
#include "ctcd/corpus.hpp"
#include "ctcd/distill.hpp"
#include "ctcd/selfcheck.hpp"
#include "ctcd/training.hpp"

namespace {

using namespace ctcd;

constexpr int kUsage = 1;
constexpr int kSelfcheckFailed = 2;

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

std::string corpus_text(const AppConfig& cfg) {
  if (!cfg.corpus.empty()) return read_text_file(cfg.corpus);
  return memorizable_corpus(sentence_pool(48, cfg.seed), cfg.corpus_bytes, cfg.seed);
}

std::string or_default(const std::string& value, const std::string& fallback) {
  return value.empty() ? fallback : value;
}

BaseModel load_base(const AppConfig& cfg) {
  if (cfg.base.empty()) throw UsageError("--base is required");
  Checkpoint ck = load_checkpoint(cfg.base);
  return BaseModel(ck.config, std::move(ck.params));
}

std::unique_ptr<DraftModule> load_draft(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return std::make_unique<DraftModule>(ck.config, std::move(ck.params));
}

struct LogSink {
  std::ofstream file;
  std::ostream* stream = nullptr;
  explicit LogSink(const std::string& path) {
    if (path.empty()) return;
    file.open(path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open log " + path);
    stream = &file;
  }
};

int cmd_train_base(const AppConfig& cfg) {
  const auto seqs = make_training_sequences(corpus_text(cfg), cfg.model.max_seq_len);
  BaseModel base(cfg.model, cfg.seed);
  LogSink log(cfg.log);
  TrainConfig tc;
  tc.lr = cfg.base_lr;
  tc.clip_threshold = cfg.clip;
  tc.epochs = cfg.base_epochs;
  tc.lr_decay = cfg.lr_decay;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.max_len = cfg.model.max_seq_len;
  tc.log = log.stream;
  const TrainReport report = train_base(base, seqs, tc);
  const std::string out = or_default(cfg.out, "base.ckpt");
  save_checkpoint(out, base.params(), base.config());
  nlohmann::json summary{{"checkpoint", out}, {"sequences", seqs.size()}, {"epoch_loss", report.epoch_loss},
                         {"steps", report.steps}, {"aborted", report.aborted}};
  std::cout << summary.dump() << '\n';
  if (report.aborted) {
    std::cerr << "training aborted on a non-finite loss; saved the last good parameters\n";
    return kUsage;
  }
  return 0;
}

int cmd_distill(const AppConfig& cfg) {
  const BaseModel base = load_base(cfg);
  const auto seqs = make_training_sequences(corpus_text(cfg), base.config().max_seq_len);
  const auto examples = make_distilled_dataset(seqs, base);
  const std::string out = or_default(cfg.out, "distilled.bin");
  write_distilled(out, {{"base", file_hash(cfg.base)}, {"examples", examples.size()}}, examples);
  std::cout << nlohmann::json{{"dataset", out}, {"examples", examples.size()}}.dump() << '\n';
  return 0;
}

int cmd_train_draft(const AppConfig& cfg) {
  const BaseModel base = load_base(cfg);
  if (cfg.data.empty()) throw UsageError("--data is required");
  const DistilledFile data = read_distilled(cfg.data);
  ModelConfig dc = base.config();
  dc.draft_slots = cfg.model.draft_slots;
  dc.label_horizon = cfg.model.label_horizon;
  dc.draft_head = cfg.model.draft_head;
  DraftModule draft(dc, cfg.seed + 1);
  LogSink log(cfg.log);
  TrainConfig tc;
  tc.lr = cfg.draft_lr;
  tc.clip_threshold = cfg.clip;
  tc.epochs = cfg.draft_epochs;
  tc.lr_decay = cfg.lr_decay;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.loss = cfg.loss;
  tc.max_len = dc.max_seq_len;
  tc.anchor_stride = cfg.anchor_stride;
  tc.log = log.stream;
  const TrainReport report = train_draft(draft, base, data.examples, tc);
  const std::string out = or_default(cfg.out, "draft.ckpt");
  save_checkpoint(out, draft.params(), draft.config());
  std::cout << nlohmann::json{{"checkpoint", out}, {"loss", to_string(cfg.loss)},
                              {"epoch_loss", report.epoch_loss}, {"aborted", report.aborted}}
                   .dump()
            << '\n';
  if (report.aborted) {
    std::cerr << "training aborted on a non-finite loss; saved the last good parameters\n";
    return kUsage;
  }
  return 0;
}

int cmd_generate(const AppConfig& cfg) {
  const BaseModel base = load_base(cfg);
  std::unique_ptr<DraftModule> draft;
  if (!cfg.draft.empty()) draft = load_draft(cfg.draft);
  if (cfg.prompt.empty()) throw UsageError("--prompt is required");
  const GenerateResult r =
      generate(base, draft.get(), vocab::encode_prompt(cfg.prompt), cfg.max_new_tokens, cfg.decode);
  std::cout << cfg.prompt << vocab::decode(r.tokens) << '\n';
  nlohmann::json info{{"N", r.metrics.N}, {"M", r.metrics.M}, {"T_seconds", r.metrics.T},
                      {"overflow", r.status == SessionStatus::Overflow}};
  if (r.metrics.M > 0) info["beta"] = compute_beta(r.metrics.N, r.metrics.M);
  std::cerr << info.dump() << '\n';
  return 0;
}

int cmd_bench(const AppConfig& cfg) {
  const BaseModel base = load_base(cfg);
  if (cfg.draft.empty()) throw UsageError("--draft is required");
  const auto draft = load_draft(cfg.draft);
  const auto prompts = cfg.prompts.empty() ? corpus_prompts(corpus_text(cfg), cfg.num_prompts, cfg.seed)
                                           : read_lines(cfg.prompts);
  BenchOptions options;
  options.decode = cfg.decode;
  options.max_new_tokens = cfg.max_new_tokens;
  options.parallel = cfg.parallel;
  BenchReport report = run_benchmark(base, *draft, prompts, options);
  report.config = cfg.to_json();
  report.checkpoint_hashes = {{"base", file_hash(cfg.base)}, {"draft", file_hash(cfg.draft)}};
  const std::string out = or_default(cfg.out, "bench");
  write_text_file(out + ".csv", bench_csv(report));
  write_text_file(out + ".json", bench_json(report).dump(2) + "\n");
  std::cout << nlohmann::json{{"beta", report.beta},
                              {"gamma", report.gamma},
                              {"prompts", prompts.size()},
                              {"truncated", report.truncated},
                              {"greedy_mismatches", report.mismatches},
                              {"csv", out + ".csv"},
                              {"json", out + ".json"}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_selfcheck(const AppConfig& cfg) {
  bool ok = true;
  for (const auto& r : run_selfcheck(cfg.seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : kSelfcheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTC-drafted speculative decoding for small byte-level transformers"};
  app.require_subcommand(1);
  std::string config_path;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const AppConfig&);
  };
  const std::vector<Command> commands{
      {"train-base", "Train the base model on a corpus", cmd_train_base},
      {"distill", "Label a corpus with the base model's greedy predictions", cmd_distill},
      {"train-draft", "Train the draft module on a distilled dataset", cmd_train_draft},
      {"generate", "Generate a continuation for one prompt", cmd_generate},
      {"bench", "Compare vanilla and speculative decoding over a prompt set", cmd_bench},
      {"selfcheck", "Run the built-in oracle checks", cmd_selfcheck},
  };
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "key = value settings file");
    for (const auto& key : config_keys()) {
      sub->add_option(flag_name(key), values[key], "config key '" + key + "'");
    }
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    AppConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      for (const auto& key : config_keys()) {
        if (sub->count(flag_name(key)) > 0) cfg.set(key, values[key]);
      }
      return cmd->run(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
