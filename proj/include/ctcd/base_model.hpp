#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ctcd/model_config.hpp"
#include "ctcd/optim.hpp"
#include "ctcd/tensor.hpp"
#include "ctcd/vocab.hpp"

namespace ctcd {

class ContextOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-layer key/value rows for one decoding session. Keys are stored
/// transposed per head ([heads][head_dim][capacity]) so attention reads them
/// without copying; values are row-major [capacity][d_model].
class KvCache {
 public:
  explicit KvCache(const ModelConfig& config);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }

  void truncate(std::size_t length);
  /// Packs rows `source_rows` (ascending, each >= first) into positions
  /// first, first+1, ... and sets the length to first + source_rows.size().
  void retain(std::size_t first, std::span<const std::size_t> source_rows);

  float* keys_t(std::size_t layer) { return kt_[layer].data(); }
  float* values(std::size_t layer) { return v_[layer].data(); }
  const float* keys_t(std::size_t layer) const { return kt_[layer].data(); }
  const float* values(std::size_t layer) const { return v_[layer].data(); }
  void set_length(std::size_t length) { length_ = length; }

 private:
  std::size_t capacity_;
  std::size_t d_model_;
  std::size_t heads_;
  std::size_t length_ = 0;
  std::vector<std::vector<float>> kt_;
  std::vector<std::vector<float>> v_;
};

struct BaseOutput {
  Tensor hidden;  // [n, d_model], last transformer layer output
  Tensor logits;  // [n, vocab]; the BLANK column carries kMaskedScore
};

/// Decoder-only transformer with learned absolute positions.
class BaseModel {
 public:
  BaseModel(ModelConfig config, std::uint64_t seed);
  /// Adopts loaded parameters after checking every name and shape.
  BaseModel(ModelConfig config, ParamStore params);
  BaseModel(const BaseModel&) = delete;
  BaseModel& operator=(const BaseModel&) = delete;
  BaseModel(BaseModel&&) = default;
  BaseModel& operator=(BaseModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  /// Output projection [d_model, vocab], shared with the draft module.
  const Tensor& lm_head() const { return params_.at("base.lm_head"); }

  /// Causal forward over a whole sequence at positions 0..n-1 (taped when
  /// grad mode is on).
  BaseOutput forward(std::span<const TokenId> tokens) const;

  /// Incremental forward without a tape. New rows are appended to `cache`
  /// and attend to every cached row plus new rows per `mask`, an
  /// n x (cache.length() + n) additive mask; an empty mask means causal.
  BaseOutput forward_cached(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                            KvCache& cache, std::span<const float> mask = {}) const;

 private:
  struct LayerRefs {
    const Tensor *ln1_g, *ln1_b, *wqkv, *bqkv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  struct Refs {
    const Tensor *tok_emb = nullptr, *pos_emb = nullptr, *lnf_g = nullptr, *lnf_b = nullptr,
                 *lm_head = nullptr;
    std::vector<LayerRefs> layers;
  };

  void build(std::uint64_t seed);
  void bind_refs();
  Tensor embed(std::span<const TokenId> tokens, std::span<const std::size_t> positions) const;
  BaseOutput head(const Tensor& x) const;

  ModelConfig config_;
  ParamStore params_;
  Tensor blank_mask_;
  Refs refs_;  // into params_; map nodes survive moves
};

/// Parameter initialization shared by both modules.
Tensor init_normal(Shape shape, float stddev, std::uint64_t seed, std::uint64_t stream);

}  // namespace ctcd
