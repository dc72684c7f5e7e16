#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ctcd/base_model.hpp"
#include "ctcd/distill.hpp"
#include "ctcd/draft_module.hpp"

namespace ctcd {

enum class LossMode { Ctc, Ce };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& text);

struct TrainConfig {
  double lr = 3e-5;
  double clip_threshold = 0.5;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;  // sequences per optimizer step
  std::uint64_t seed = 0;
  LossMode loss = LossMode::Ctc;
  std::size_t max_len = 256;
  std::size_t anchor_stride = 1;
  bool lr_decay = false;  // linear decay to zero over all steps
  std::ostream* log = nullptr;  // one JSON object per step

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per-sequence (base) or per-anchor (draft) loss
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  bool aborted = false;  // non-finite loss; parameters restored to the last good step
};

/// One sequence per non-empty line: BOS, the line's bytes, EOS; cut into
/// windows of at most `max_len` tokens.
std::vector<TokenSeq> make_training_sequences(const std::string& text, std::size_t max_len);

/// Mean next-token cross-entropy of one sequence (taped).
Tensor base_sequence_loss(const BaseModel& base, const TokenSeq& seq);

TrainReport train_base(BaseModel& base, const std::vector<TokenSeq>& corpus, const TrainConfig& config);

/// Precomputed inputs for draft training: base hidden states (no history),
/// anchors, and their targets.
struct DraftBatchItem {
  Tensor hidden;
  std::vector<std::size_t> anchors;
  std::vector<TokenSeq> targets;
};

std::vector<DraftBatchItem> prepare_draft_items(const BaseModel& base,
                                                const std::vector<DistilledExample>& examples,
                                                const ModelConfig& draft_config, std::size_t stride);

/// Mean per-anchor loss over one item (taped). CTC: -log p(target);
/// CE: summed per-slot cross-entropy against the target padded with BLANK.
Tensor draft_item_loss(const DraftModule& draft, const Tensor& lm_head, const DraftBatchItem& item,
                       LossMode mode);

/// Base parameters are never touched; only the draft module is updated.
TrainReport train_draft(DraftModule& draft, const BaseModel& base,
                        const std::vector<DistilledExample>& examples, const TrainConfig& config);

}  // namespace ctcd
