#include "ctcd/draft_module.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctcd/kernels.hpp"
#include "ctcd/tensor_ops.hpp"

namespace ctcd {

namespace {

Tensor ones(std::size_t n) { return Tensor(Shape{n}, std::vector<float>(n, 1.0f)); }

bool has_attention(const ModelConfig& c) { return c.draft_head == DraftHead::Attention; }

}  // namespace

std::span<const float> SlotGrid::row(std::size_t anchor, std::size_t slot) const {
  return log_probs.data().subspan(row_index(anchor, slot) * vocab, vocab);
}

std::vector<float> SlotGrid::anchor_rows(std::size_t anchor) const {
  auto block = log_probs.data().subspan(anchor * slots * vocab, slots * vocab);
  return {block.begin(), block.end()};
}

DraftCache::DraftCache(const ModelConfig& config)
    : capacity_(config.max_seq_len),
      d_model_(config.d_model),
      heads_(config.n_heads),
      kt_(config.max_seq_len * config.d_model, 0.0f),
      v_(config.max_seq_len * config.d_model, 0.0f) {}

void DraftCache::truncate(std::size_t length) {
  if (length > length_) throw UsageError("DraftCache::truncate beyond current length");
  length_ = length;
}

DraftModule::DraftModule(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

DraftModule::DraftModule(ModelConfig config, ParamStore params) : config_(std::move(config)) {
  config_.validate();
  build(0);
  for (const auto& [name, expected] : params_) {
    if (!params.contains(name)) throw ShapeError("checkpoint is missing tensor '" + name + "'");
    const Tensor& got = params.at(name);
    if (got.shape() != expected.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(got.shape()) +
                       ", model expects " + shape_str(expected.shape()));
    }
  }
  for (const auto& [name, _] : params) {
    if (!params_.contains(name)) throw ShapeError("checkpoint has unexpected tensor '" + name + "'");
  }
  params_.copy_values_from(params);
}

void DraftModule::build(std::uint64_t seed) {
  const std::size_t d = config_.d_model;
  const std::size_t L = config_.draft_slots;
  const std::size_t F = config_.mlp_width();
  const float sd = 0.02f;
  // Streams start far from the base model's so equal seeds give unrelated draws.
  std::uint64_t stream = 1000;
  auto normal = [&](Shape s, float stddev) { return init_normal(std::move(s), stddev, seed, stream++); };

  params_ = ParamStore();
  params_.add("draft.w_in", normal({d, d}, sd));
  params_.add("draft.b_in", Tensor(Shape{d}));
  params_.add("draft.slot_emb", normal({L, d}, sd));
  if (has_attention(config_)) {
    params_.add("draft.ln_q.g", ones(d));
    params_.add("draft.ln_q.b", Tensor(Shape{d}));
    params_.add("draft.ln_mem.g", ones(d));
    params_.add("draft.ln_mem.b", Tensor(Shape{d}));
    params_.add("draft.wq", normal({d, d}, sd));
    params_.add("draft.bq", Tensor(Shape{d}));
    params_.add("draft.wk", normal({d, d}, sd));
    params_.add("draft.bk", Tensor(Shape{d}));
    params_.add("draft.wv", normal({d, d}, sd));
    params_.add("draft.bv", Tensor(Shape{d}));
    params_.add("draft.wo", normal({d, d}, sd));
    params_.add("draft.bo", Tensor(Shape{d}));
    params_.add("draft.ln2.g", ones(d));
    params_.add("draft.ln2.b", Tensor(Shape{d}));
    params_.add("draft.mlp.w1", normal({d, F}, sd));
    params_.add("draft.mlp.b1", Tensor(Shape{F}));
    params_.add("draft.mlp.w2", normal({F, d}, sd));
    params_.add("draft.mlp.b2", Tensor(Shape{d}));
  }
  params_.add("draft.ln_f.g", ones(d));
  params_.add("draft.ln_f.b", Tensor(Shape{d}));
  params_.set_requires_grad(true);
}

// [a, d] anchor hidden rows -> [a * L, d] slot inputs.
Tensor DraftModule::slot_queries(const Tensor& anchor_hidden) const {
  const std::size_t a = anchor_hidden.dim(0);
  const std::size_t d = config_.d_model;
  const std::size_t L = config_.draft_slots;
  Tensor q0 = add(matmul(anchor_hidden, params_.at("draft.w_in")), params_.at("draft.b_in"));
  if (!has_attention(config_)) q0 = gelu(q0);
  Tensor tiled = reshape(repeat_rows(q0, L), Shape{a, L, d});
  return reshape(add(tiled, params_.at("draft.slot_emb")), Shape{a * L, d});
}

// Residual attention output, MLP, final norm, shared head, log-softmax.
Tensor DraftModule::finish(const Tensor& x, const Tensor& attn_out, const Tensor& lm_head) const {
  Tensor y = x;
  if (has_attention(config_)) {
    y = add(y, add(matmul(attn_out, params_.at("draft.wo")), params_.at("draft.bo")));
    Tensor h = layer_norm(y, params_.at("draft.ln2.g"), params_.at("draft.ln2.b"));
    Tensor f = gelu(add(matmul(h, params_.at("draft.mlp.w1")), params_.at("draft.mlp.b1")));
    y = add(y, add(matmul(f, params_.at("draft.mlp.w2")), params_.at("draft.mlp.b2")));
  }
  Tensor z = layer_norm(y, params_.at("draft.ln_f.g"), params_.at("draft.ln_f.b"));
  return log_softmax(matmul(z, lm_head));
}

SlotGrid DraftModule::forward(const Tensor& hidden, std::span<const std::size_t> anchors,
                              const Tensor& lm_head) const {
  const std::size_t d = config_.d_model;
  const std::size_t L = config_.draft_slots;
  const std::size_t V = config_.vocab_size;
  if (hidden.rank() != 2 || hidden.dim(1) != d) {
    throw ShapeError("draft forward: hidden states must be [n, " + std::to_string(d) + "], got " +
                     shape_str(hidden.shape()));
  }
  if (lm_head.shape() != Shape{d, V}) {
    throw ShapeError("draft forward: lm head has shape " + shape_str(lm_head.shape()) + ", expected " +
                     shape_str(Shape{d, V}));
  }
  SlotGrid grid;
  grid.anchors = anchors.size();
  grid.slots = L;
  grid.vocab = V;
  if (anchors.empty()) {
    grid.log_probs = Tensor(Shape{0, V});
    return grid;
  }
  const std::size_t n = hidden.dim(0);
  for (std::size_t t : anchors) {
    if (t >= n) {
      throw UsageError("draft forward: anchor " + std::to_string(t) + " outside " + std::to_string(n) +
                       " hidden rows");
    }
  }
  Tensor x = slot_queries(take_rows(hidden, anchors));
  Tensor attn_out;
  if (has_attention(config_)) {
    const std::size_t rows = anchors.size() * L;
    std::vector<float> mask(rows * n, 0.0f);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      for (std::size_t s = 0; s < L; ++s) {
        float* row = mask.data() + (i * L + s) * n;
        std::fill(row + anchors[i] + 1, row + n, kMaskedScore);
      }
    }
    Tensor q = add(matmul(layer_norm(x, params_.at("draft.ln_q.g"), params_.at("draft.ln_q.b")),
                          params_.at("draft.wq")),
                   params_.at("draft.bq"));
    Tensor mem = layer_norm(hidden, params_.at("draft.ln_mem.g"), params_.at("draft.ln_mem.b"));
    Tensor k = add(matmul(mem, params_.at("draft.wk")), params_.at("draft.bk"));
    Tensor v = add(matmul(mem, params_.at("draft.wv")), params_.at("draft.bv"));
    attn_out = attention(q, k, v, Tensor(Shape{rows, n}, std::move(mask)), config_.n_heads);
  }
  grid.log_probs = finish(x, attn_out, lm_head);
  return grid;
}

void DraftModule::extend_cache(std::span<const float> hidden_rows, DraftCache& cache) const {
  if (!has_attention(config_)) return;
  const std::size_t d = config_.d_model;
  const std::size_t n = hidden_rows.size() / d;
  if (n == 0) return;
  if (cache.length_ + n > cache.capacity_) {
    throw ContextOverflowError("draft cache overflow at " + std::to_string(cache.length_ + n) + " rows");
  }
  const auto raw = [this](const char* name) { return params_.at(name).data().data(); };
  std::vector<float> mem(n * d), k(n * d);
  kernels::layer_norm_rows(n, d, hidden_rows.data(), raw("draft.ln_mem.g"), raw("draft.ln_mem.b"),
                           mem.data());
  kernels::gemm<float>(n, d, d, mem.data(), d, raw("draft.wk"), d, k.data(), d, false);
  kernels::add_bias(n, d, k.data(), d, raw("draft.bk"));
  const std::size_t cap = cache.capacity_;
  const std::size_t base = cache.length_;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < d; ++e) cache.kt_[e * cap + base + i] = k[i * d + e];
  }
  float* v = cache.v_.data() + base * d;
  kernels::gemm<float>(n, d, d, mem.data(), d, raw("draft.wv"), d, v, d, false);
  kernels::add_bias(n, d, v, d, raw("draft.bv"));
  cache.length_ += n;
}

std::vector<float> DraftModule::draft_cached(std::span<const float> anchor_hidden,
                                             const DraftCache& cache, const Tensor& lm_head) const {
  const std::size_t d = config_.d_model;
  const std::size_t L = config_.draft_slots;
  const std::size_t V = config_.vocab_size;
  const std::size_t F = config_.mlp_width();
  if (anchor_hidden.size() != d) throw ShapeError("draft_cached: anchor hidden must have d_model entries");
  if (lm_head.shape() != Shape{d, V}) throw ShapeError("draft_cached: lm head shape mismatch");
  const auto raw = [this](const char* name) { return params_.at(name).data().data(); };

  std::vector<float> q0(d), x(L * d), h(L * d), q(L * d), att(L * d), f(L * F);
  kernels::gemm<float>(1, d, d, anchor_hidden.data(), d, raw("draft.w_in"), d, q0.data(), d, false);
  kernels::add_bias(1, d, q0.data(), d, raw("draft.b_in"));
  if (!has_attention(config_)) kernels::gelu_inplace(d, q0.data());
  const float* slot = raw("draft.slot_emb");
  for (std::size_t s = 0; s < L; ++s) {
    for (std::size_t e = 0; e < d; ++e) x[s * d + e] = q0[e] + slot[s * d + e];
  }
  if (has_attention(config_)) {
    const std::size_t m = cache.length();
    if (m == 0) throw UsageError("draft_cached: empty memory");
    kernels::layer_norm_rows(L, d, x.data(), raw("draft.ln_q.g"), raw("draft.ln_q.b"), h.data());
    kernels::gemm<float>(L, d, d, h.data(), d, raw("draft.wq"), d, q.data(), d, false);
    kernels::add_bias(L, d, q.data(), d, raw("draft.bq"));
    std::vector<kernels::RowVisibility> vis(L);
    for (auto& r : vis) r.prefix = m;
    kernels::attention_rows(L, d, config_.n_heads, q.data(), d, cache.keys_t(), cache.capacity(),
                            cache.values(), d, vis, att.data(), d);
    kernels::gemm<float>(L, d, d, att.data(), d, raw("draft.wo"), d, h.data(), d, false);
    kernels::add_bias(L, d, h.data(), d, raw("draft.bo"));
    for (std::size_t j = 0; j < L * d; ++j) x[j] += h[j];
    kernels::layer_norm_rows(L, d, x.data(), raw("draft.ln2.g"), raw("draft.ln2.b"), h.data());
    kernels::gemm<float>(L, d, F, h.data(), d, raw("draft.mlp.w1"), F, f.data(), F, false);
    kernels::add_bias(L, F, f.data(), F, raw("draft.mlp.b1"));
    kernels::gelu_inplace(L * F, f.data());
    kernels::gemm<float>(L, F, d, f.data(), F, raw("draft.mlp.w2"), d, h.data(), d, false);
    kernels::add_bias(L, d, h.data(), d, raw("draft.mlp.b2"));
    for (std::size_t j = 0; j < L * d; ++j) x[j] += h[j];
  }
  kernels::layer_norm_rows(L, d, x.data(), raw("draft.ln_f.g"), raw("draft.ln_f.b"), h.data());
  std::vector<float> out(L * V), tmp(V);
  kernels::gemm<float>(L, d, V, h.data(), d, lm_head.data().data(), V, out.data(), V, false);
  for (std::size_t s = 0; s < L; ++s) {
    float* row = out.data() + s * V;
    const float mx = *std::max_element(row, row + V);
    for (std::size_t j = 0; j < V; ++j) tmp[j] = row[j] - mx;
    kernels::exp_inplace(V, tmp.data());
    double total = 0.0;
    for (float t : tmp) total += t;
    const float lse = mx + static_cast<float>(std::log(total));
    for (std::size_t j = 0; j < V; ++j) row[j] -= lse;
  }
  return out;
}

}  // namespace ctcd
