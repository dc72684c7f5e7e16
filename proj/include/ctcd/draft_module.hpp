#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ctcd/base_model.hpp"
#include "ctcd/model_config.hpp"
#include "ctcd/optim.hpp"
#include "ctcd/tensor.hpp"

namespace ctcd {

/// Log-probabilities for `anchors` x `slots` draft positions, stored as a
/// [anchors * slots, vocab] tensor (anchor-major).
struct SlotGrid {
  std::size_t anchors = 0;
  std::size_t slots = 0;
  std::size_t vocab = 0;
  Tensor log_probs;

  std::size_t row_index(std::size_t anchor, std::size_t slot) const { return anchor * slots + slot; }
  std::span<const float> row(std::size_t anchor, std::size_t slot) const;
  /// The slots x vocab block of one anchor, copied out.
  std::vector<float> anchor_rows(std::size_t anchor) const;
};

/// Memory keys/values of the draft layer for one decoding session, one row
/// per base position whose hidden state has been appended.
class DraftCache {
 public:
  explicit DraftCache(const ModelConfig& config);

  std::size_t length() const { return length_; }
  void truncate(std::size_t length);

  const float* keys_t() const { return kt_.data(); }
  const float* values() const { return v_.data(); }
  std::size_t capacity() const { return capacity_; }

 private:
  friend class DraftModule;
  std::size_t capacity_;
  std::size_t d_model_;
  std::size_t heads_;
  std::size_t length_ = 0;
  std::vector<float> kt_;
  std::vector<float> v_;
};

/// L slot queries per anchor over the base model's last-layer hidden states.
/// The output projection is the base model's LM head, passed in per call and
/// never owned or updated here.
class DraftModule {
 public:
  DraftModule(ModelConfig config, std::uint64_t seed);
  /// Adopts loaded parameters after checking every name and shape.
  DraftModule(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Batched forward for all anchors (taped when grad mode is on). Slots of
  /// anchor t attend to hidden rows 0..t and never to each other.
  SlotGrid forward(const Tensor& hidden, std::span<const std::size_t> anchors,
                   const Tensor& lm_head) const;

  /// Appends memory rows for new hidden states ([n, d_model]).
  void extend_cache(std::span<const float> hidden_rows, DraftCache& cache) const;
  /// Slots for an anchor whose hidden state is `anchor_hidden`, attending to
  /// every cached memory row. Returns slots x vocab log-probabilities.
  std::vector<float> draft_cached(std::span<const float> anchor_hidden, const DraftCache& cache,
                                  const Tensor& lm_head) const;

 private:
  void build(std::uint64_t seed);
  Tensor slot_queries(const Tensor& anchor_hidden) const;
  Tensor finish(const Tensor& x, const Tensor& attn_out, const Tensor& lm_head) const;

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace ctcd
