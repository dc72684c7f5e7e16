#include "ctcd/base_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ctcd/kernels.hpp"
#include "ctcd/tensor_ops.hpp"

namespace ctcd {

namespace {

std::string layer_key(std::size_t layer, const char* leaf) {
  return "base.l" + std::to_string(layer) + "." + leaf;
}

Tensor ones(std::size_t n) { return Tensor(Shape{n}, std::vector<float>(n, 1.0f)); }

}  // namespace

Tensor init_normal(Shape shape, float stddev, std::uint64_t seed, std::uint64_t stream) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + 1);
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

KvCache::KvCache(const ModelConfig& config)
    : capacity_(config.max_seq_len), d_model_(config.d_model), heads_(config.n_heads) {
  kt_.assign(config.n_layers, std::vector<float>(capacity_ * d_model_, 0.0f));
  v_.assign(config.n_layers, std::vector<float>(capacity_ * d_model_, 0.0f));
}

void KvCache::truncate(std::size_t length) {
  if (length > length_) throw UsageError("KvCache::truncate beyond current length");
  length_ = length;
}

void KvCache::retain(std::size_t first, std::span<const std::size_t> source_rows) {
  const std::size_t hd = d_model_ / heads_;
  for (std::size_t i = 0; i < source_rows.size(); ++i) {
    const std::size_t src = source_rows[i];
    const std::size_t dst = first + i;
    if (src >= length_ || src < dst) throw UsageError("KvCache::retain: bad source row");
    if (src == dst) continue;
    for (std::size_t l = 0; l < kt_.size(); ++l) {
      std::copy_n(v_[l].begin() + static_cast<std::ptrdiff_t>(src * d_model_), d_model_,
                  v_[l].begin() + static_cast<std::ptrdiff_t>(dst * d_model_));
      float* kt = kt_[l].data();
      for (std::size_t h = 0; h < heads_; ++h) {
        for (std::size_t e = 0; e < hd; ++e) {
          float* col = kt + (h * hd + e) * capacity_;
          col[dst] = col[src];
        }
      }
    }
  }
  length_ = first + source_rows.size();
}

BaseModel::BaseModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

BaseModel::BaseModel(ModelConfig config, ParamStore params) : config_(std::move(config)) {
  config_.validate();
  build(0);
  // Names and shapes must match the architecture exactly.
  for (const auto& [name, expected] : params_) {
    if (!params.contains(name)) {
      throw ShapeError("checkpoint is missing tensor '" + name + "'");
    }
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

void BaseModel::build(std::uint64_t seed) {
  const std::size_t d = config_.d_model;
  const std::size_t V = config_.vocab_size;
  const std::size_t F = config_.mlp_width();
  const float std_in = 0.02f;
  const float std_out = 0.02f / std::sqrt(2.0f * static_cast<float>(config_.n_layers));
  std::uint64_t stream = 0;
  auto normal = [&](Shape s, float sd) { return init_normal(std::move(s), sd, seed, stream++); };

  params_ = ParamStore();
  params_.add("base.tok_emb", normal({V, d}, std_in));
  params_.add("base.pos_emb", normal({config_.max_seq_len, d}, std_in));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    params_.add(layer_key(l, "ln1.g"), ones(d));
    params_.add(layer_key(l, "ln1.b"), Tensor(Shape{d}));
    params_.add(layer_key(l, "attn.wqkv"), normal({d, 3 * d}, std_in));
    params_.add(layer_key(l, "attn.bqkv"), Tensor(Shape{3 * d}));
    params_.add(layer_key(l, "attn.wo"), normal({d, d}, std_out));
    params_.add(layer_key(l, "attn.bo"), Tensor(Shape{d}));
    params_.add(layer_key(l, "ln2.g"), ones(d));
    params_.add(layer_key(l, "ln2.b"), Tensor(Shape{d}));
    params_.add(layer_key(l, "mlp.w1"), normal({d, F}, std_in));
    params_.add(layer_key(l, "mlp.b1"), Tensor(Shape{F}));
    params_.add(layer_key(l, "mlp.w2"), normal({F, d}, std_out));
    params_.add(layer_key(l, "mlp.b2"), Tensor(Shape{d}));
  }
  params_.add("base.ln_f.g", ones(d));
  params_.add("base.ln_f.b", Tensor(Shape{d}));
  params_.add("base.lm_head", normal({d, V}, std_in));
  params_.set_requires_grad(true);

  std::vector<float> mask(V, 0.0f);
  mask[static_cast<std::size_t>(vocab::kBlank)] = kMaskedScore;
  blank_mask_ = Tensor(Shape{V}, std::move(mask));
  bind_refs();
}

void BaseModel::bind_refs() {
  refs_.tok_emb = &params_.at("base.tok_emb");
  refs_.pos_emb = &params_.at("base.pos_emb");
  refs_.layers.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    LayerRefs r;
    r.ln1_g = &params_.at(layer_key(l, "ln1.g"));
    r.ln1_b = &params_.at(layer_key(l, "ln1.b"));
    r.wqkv = &params_.at(layer_key(l, "attn.wqkv"));
    r.bqkv = &params_.at(layer_key(l, "attn.bqkv"));
    r.wo = &params_.at(layer_key(l, "attn.wo"));
    r.bo = &params_.at(layer_key(l, "attn.bo"));
    r.ln2_g = &params_.at(layer_key(l, "ln2.g"));
    r.ln2_b = &params_.at(layer_key(l, "ln2.b"));
    r.w1 = &params_.at(layer_key(l, "mlp.w1"));
    r.b1 = &params_.at(layer_key(l, "mlp.b1"));
    r.w2 = &params_.at(layer_key(l, "mlp.w2"));
    r.b2 = &params_.at(layer_key(l, "mlp.b2"));
    refs_.layers.push_back(r);
  }
  refs_.lnf_g = &params_.at("base.ln_f.g");
  refs_.lnf_b = &params_.at("base.ln_f.b");
  refs_.lm_head = &params_.at("base.lm_head");
}

Tensor BaseModel::embed(std::span<const TokenId> tokens, std::span<const std::size_t> positions) const {
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw UsageError("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
  std::vector<int> pos(positions.begin(), positions.end());
  for (int p : pos) {
    if (static_cast<std::size_t>(p) >= config_.max_seq_len) {
      throw ContextOverflowError("position " + std::to_string(p) + " exceeds max_seq_len " +
                                 std::to_string(config_.max_seq_len));
    }
  }
  return add(embedding(params_.at("base.tok_emb"), tokens), embedding(params_.at("base.pos_emb"), pos));
}

BaseOutput BaseModel::head(const Tensor& x) const {
  Tensor h = layer_norm(x, params_.at("base.ln_f.g"), params_.at("base.ln_f.b"));
  Tensor logits = add(matmul(h, lm_head()), blank_mask_);
  return {x, logits};
}

BaseOutput BaseModel::forward(std::span<const TokenId> tokens) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw UsageError("base forward on an empty sequence");
  if (n > config_.max_seq_len) {
    throw ContextOverflowError("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                               std::to_string(config_.max_seq_len));
  }
  const std::size_t d = config_.d_model;
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  std::vector<float> causal(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) causal[i * n + j] = kMaskedScore;
  }
  const Tensor mask(Shape{n, n}, std::move(causal));

  Tensor x = embed(tokens, positions);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    Tensor h = layer_norm(x, params_.at(layer_key(l, "ln1.g")), params_.at(layer_key(l, "ln1.b")));
    Tensor qkv = add(matmul(h, params_.at(layer_key(l, "attn.wqkv"))), params_.at(layer_key(l, "attn.bqkv")));
    Tensor a = attention(narrow(qkv, 1, 0, d), narrow(qkv, 1, d, d), narrow(qkv, 1, 2 * d, d), mask,
                         config_.n_heads);
    x = add(x, add(matmul(a, params_.at(layer_key(l, "attn.wo"))), params_.at(layer_key(l, "attn.bo"))));
    Tensor h2 = layer_norm(x, params_.at(layer_key(l, "ln2.g")), params_.at(layer_key(l, "ln2.b")));
    Tensor f = gelu(add(matmul(h2, params_.at(layer_key(l, "mlp.w1"))), params_.at(layer_key(l, "mlp.b1"))));
    x = add(x, add(matmul(f, params_.at(layer_key(l, "mlp.w2"))), params_.at(layer_key(l, "mlp.b2"))));
  }
  return head(x);
}

static std::vector<kernels::RowVisibility> visibility_from_mask(std::span<const float> mask, std::size_t n,
                                                       std::size_t m) {
  std::vector<kernels::RowVisibility> vis(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = mask.data() + i * m;
    std::size_t j = 0;
    while (j < m && row[j] > 0.5f * kMaskedScore) ++j;
    vis[i].prefix = j;
    for (; j < m; ++j) {
      if (row[j] > 0.5f * kMaskedScore) vis[i].extra.push_back(j);
    }
  }
  return vis;
}

BaseOutput BaseModel::forward_cached(std::span<const TokenId> tokens,
                                     std::span<const std::size_t> positions, KvCache& cache,
                                     std::span<const float> mask) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw UsageError("cached forward on an empty batch");
  if (positions.size() != n) throw UsageError("positions and tokens differ in length");
  const std::size_t past = cache.length();
  const std::size_t m = past + n;
  if (m > cache.capacity()) {
    throw ContextOverflowError("cache of " + std::to_string(past) + " rows cannot take " +
                               std::to_string(n) + " more (max_seq_len " +
                               std::to_string(cache.capacity()) + ")");
  }
  std::vector<kernels::RowVisibility> vis;
  if (mask.empty()) {
    vis.resize(n);
    for (std::size_t i = 0; i < n; ++i) vis[i].prefix = past + i + 1;
  } else if (mask.size() != n * m) {
    throw ShapeError("cached forward: mask has " + std::to_string(mask.size()) + " entries, expected " +
                     shape_str(Shape{n, m}));
  } else {
    vis = visibility_from_mask(mask, n, m);
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw UsageError("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
  for (std::size_t p : positions) {
    if (p >= config_.max_seq_len) {
      throw ContextOverflowError("position " + std::to_string(p) + " exceeds max_seq_len " +
                                 std::to_string(config_.max_seq_len));
    }
  }

  const std::size_t d = config_.d_model;
  const std::size_t F = config_.mlp_width();
  const std::size_t V = config_.vocab_size;
  const std::size_t heads = config_.n_heads;
  const std::size_t hd = config_.head_dim();
  const std::size_t cap = cache.capacity();
  const auto raw = [](const Tensor* t) { return t->data().data(); };

  std::vector<float> x(n * d), h(n * d), qkv(n * 3 * d), att(n * d), f(n * F);
  const float* tok = raw(refs_.tok_emb);
  const float* pos = raw(refs_.pos_emb);
  for (std::size_t i = 0; i < n; ++i) {
    const float* a = tok + static_cast<std::size_t>(tokens[i]) * d;
    const float* b = pos + positions[i] * d;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = a[j] + b[j];
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const LayerRefs& L = refs_.layers[l];
    kernels::layer_norm_rows(n, d, x.data(), raw(L.ln1_g), raw(L.ln1_b), h.data());
    kernels::gemm<float>(n, d, 3 * d, h.data(), d, raw(L.wqkv), 3 * d, qkv.data(), 3 * d, false);
    kernels::add_bias(n, 3 * d, qkv.data(), 3 * d, raw(L.bqkv));
    float* kt = cache.keys_t(l);
    float* vv = cache.values(l);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = qkv.data() + i * 3 * d;
      for (std::size_t hh = 0; hh < heads; ++hh) {
        for (std::size_t e = 0; e < hd; ++e) kt[(hh * hd + e) * cap + past + i] = row[d + hh * hd + e];
      }
      std::copy_n(row + 2 * d, d, vv + (past + i) * d);
    }
    kernels::attention_rows(n, d, heads, qkv.data(), 3 * d, kt, cap, vv, d, vis, att.data(), d);
    kernels::gemm<float>(n, d, d, att.data(), d, raw(L.wo), d, h.data(), d, false);
    kernels::add_bias(n, d, h.data(), d, raw(L.bo));
    for (std::size_t j = 0; j < n * d; ++j) x[j] += h[j];
    kernels::layer_norm_rows(n, d, x.data(), raw(L.ln2_g), raw(L.ln2_b), h.data());
    kernels::gemm<float>(n, d, F, h.data(), d, raw(L.w1), F, f.data(), F, false);
    kernels::add_bias(n, F, f.data(), F, raw(L.b1));
    kernels::gelu_inplace(n * F, f.data());
    kernels::gemm<float>(n, F, d, f.data(), F, raw(L.w2), d, h.data(), d, false);
    kernels::add_bias(n, d, h.data(), d, raw(L.b2));
    for (std::size_t j = 0; j < n * d; ++j) x[j] += h[j];
  }
  cache.set_length(m);

  kernels::layer_norm_rows(n, d, x.data(), raw(refs_.lnf_g), raw(refs_.lnf_b), h.data());
  std::vector<float> logits(n * V);
  kernels::gemm<float>(n, d, V, h.data(), d, raw(refs_.lm_head), V, logits.data(), V, false);
  for (std::size_t i = 0; i < n; ++i) logits[i * V + static_cast<std::size_t>(vocab::kBlank)] += kMaskedScore;
  return {Tensor(Shape{n, d}, std::move(x)), Tensor(Shape{n, V}, std::move(logits))};
}

}  // namespace ctcd
