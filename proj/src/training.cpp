#include "ctcd/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ctcd/ctc.hpp"
#include "ctcd/optim.hpp"
#include "ctcd/tensor_ops.hpp"

namespace ctcd {

namespace {

void log_step(std::ostream* log, std::size_t step, double loss, double grad_norm, double lr) {
  if (!log) return;
  *log << nlohmann::json{{"step", step}, {"loss", loss}, {"grad_norm", grad_norm}, {"lr", lr}}.dump()
       << '\n';
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 1000003ULL + epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Shared loop: `item_loss(i)` returns a taped scalar for item i.
template <class LossFn>
TrainReport run_training(ParamStore& params, std::size_t items, const TrainConfig& config,
                         LossFn item_loss) {
  config.validate();
  TrainReport report;
  Adam adam(AdamOptions{config.lr, 0.9, 0.999, 1e-8});
  ParamStore last_good = params.clone();
  const std::size_t per_epoch = (items + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(per_epoch * config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs && !report.aborted; ++epoch) {
    const auto order = epoch_order(items, config.seed, epoch);
    double epoch_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t b0 = 0; b0 < order.size() && !report.aborted; b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      double batch_loss = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        Tensor loss = item_loss(order[i]);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          params.zero_grad();
          params.copy_values_from(last_good);
          report.aborted = true;
          break;
        }
        batch_loss += value;
        scale(loss, inv).backward();
      }
      if (report.aborted) break;
      const double norm = clip_gradients(params, config.clip_threshold);
      if (config.lr_decay) adam.set_lr(config.lr * (1.0 - static_cast<double>(report.steps) / total_steps));
      if (adam.step(params)) {
        last_good.copy_values_from(params);
      }
      ++report.steps;
      epoch_sum += batch_loss;
      counted += b1 - b0;
      log_step(config.log, report.steps, batch_loss / static_cast<double>(b1 - b0), norm, adam.options().lr);
    }
    if (!report.aborted) report.epoch_loss.push_back(counted ? epoch_sum / static_cast<double>(counted) : 0.0);
  }
  report.skipped_steps = adam.skipped_steps();
  if (report.aborted && config.log) *config.log << R"({"event":"aborted","reason":"non-finite loss"})" << '\n';
  return report;
}

}  // namespace

std::string to_string(LossMode mode) { return mode == LossMode::Ctc ? "ctc" : "ce"; }

LossMode parse_loss_mode(const std::string& text) {
  if (text == "ctc") return LossMode::Ctc;
  if (text == "ce") return LossMode::Ce;
  throw std::invalid_argument("unknown loss '" + text + "' (expected ctc|ce)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(clip_threshold > 0.0)) throw std::invalid_argument("train config: clip_threshold must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (anchor_stride == 0) throw std::invalid_argument("train config: anchor_stride must be >= 1");
  if (max_len < 2) throw std::invalid_argument("train config: max_len must be >= 2");
}

std::vector<TokenSeq> make_training_sequences(const std::string& text, std::size_t max_len) {
  std::vector<TokenSeq> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TokenSeq seq = vocab::encode_prompt(line);
    seq.push_back(vocab::kEos);
    for (auto& chunk : split_with_overlap(seq, max_len)) {
      if (chunk.size() >= 2) out.push_back(std::move(chunk));
    }
  }
  return out;
}

Tensor base_sequence_loss(const BaseModel& base, const TokenSeq& seq) {
  if (seq.size() < 2) throw UsageError("training sequence needs at least two tokens");
  const std::size_t n = seq.size() - 1;
  const BaseOutput out = base.forward(std::span<const TokenId>(seq.data(), n));
  const Tensor lp = log_softmax(out.logits);
  std::vector<std::size_t> rows(n), cols(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = i;
    cols[i] = static_cast<std::size_t>(seq[i + 1]);
  }
  return scale(mean(gather(lp, rows, cols, 1)), -1.0f);
}

TrainReport train_base(BaseModel& base, const std::vector<TokenSeq>& corpus, const TrainConfig& config) {
  if (corpus.empty()) throw UsageError("train_base: empty corpus");
  return run_training(base.params(), corpus.size(), config,
                      [&](std::size_t i) { return base_sequence_loss(base, corpus[i]); });
}

std::vector<DraftBatchItem> prepare_draft_items(const BaseModel& base,
                                                const std::vector<DistilledExample>& examples,
                                                const ModelConfig& draft_config, std::size_t stride) {
  std::vector<DraftBatchItem> items;
  KvCache cache(base.config());
  std::vector<std::size_t> positions;
  for (const auto& ex : examples) {
    if (ex.input.size() < 2) continue;
    DraftBatchItem item;
    positions.resize(ex.input.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    cache.truncate(0);
    item.hidden = base.forward_cached(ex.input, positions, cache).hidden;
    for (std::size_t t = 0; t + 1 < ex.input.size(); t += stride) {
      item.anchors.push_back(t);
      item.targets.push_back(
          extract_anchor_targets(ex, t, draft_config.label_horizon, draft_config.draft_slots));
    }
    items.push_back(std::move(item));
  }
  return items;
}

Tensor draft_item_loss(const DraftModule& draft, const Tensor& lm_head, const DraftBatchItem& item,
                       LossMode mode) {
  const SlotGrid grid = draft.forward(item.hidden, item.anchors, lm_head);
  const std::size_t A = item.anchors.size();
  const std::size_t L = grid.slots;
  if (mode == LossMode::Ctc) {
    return scale(mean(ctc_log_prob_batch(grid.log_probs, L, item.targets)), -1.0f);
  }
  std::vector<std::size_t> rows(A * L), cols(A * L);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t s = 0; s < L; ++s) {
      rows[a * L + s] = a * L + s;
      const auto& y = item.targets[a];
      cols[a * L + s] = static_cast<std::size_t>(s < y.size() ? y[s] : vocab::kBlank);
    }
  }
  return scale(sum(gather(grid.log_probs, rows, cols, 1)), -1.0f / static_cast<float>(A));
}

TrainReport train_draft(DraftModule& draft, const BaseModel& base,
                        const std::vector<DistilledExample>& examples, const TrainConfig& config) {
  if (draft.config().d_model != base.config().d_model) {
    throw ShapeError("train_draft: draft width does not match the base model");
  }
  const auto items = prepare_draft_items(base, examples, draft.config(), config.anchor_stride);
  if (items.empty()) throw UsageError("train_draft: no usable examples");
  const Tensor lm_head = base.lm_head().detach();
  return run_training(draft.params(), items.size(), config, [&](std::size_t i) {
    return draft_item_loss(draft, lm_head, items[i], config.loss);
  });
}

}  // namespace ctcd
