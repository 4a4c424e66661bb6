#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mpn/errors.hpp"
#include "mpn/nn.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_k = 16;
  std::size_t d_v = 16;
  std::size_t ff_hidden = 128;
  std::size_t n_mcm = 2;
  // Normalization can be switched off to expose the bare residual structure
  // (identity-at-initialization tests).
  bool use_layer_norm = true;

  void validate() const {
    if (n_heads == 0 || n_mcm == 0) throw ValueError("attention config: n_heads and n_mcm must be >= 1");
    if (d_k == 0 || d_v == 0 || d_model == 0) throw ValueError("attention config: zero width");
  }
};

// How an MCM stacks its two attention slots (first block, second block).
enum class McmVariant { SaCma, SaSa, CmaCma, CmaSa };

inline McmVariant mcm_variant_from_string(const std::string& s) {
  if (s == "SA+CMA" || s == "sa+cma") return McmVariant::SaCma;
  if (s == "SA+SA" || s == "sa+sa") return McmVariant::SaSa;
  if (s == "CMA+CMA" || s == "cma+cma") return McmVariant::CmaCma;
  if (s == "CMA+SA" || s == "cma+sa") return McmVariant::CmaSa;
  throw ValueError("unknown MCM variant: " + s);
}

inline std::string to_string(McmVariant v) {
  switch (v) {
    case McmVariant::SaCma: return "SA+CMA";
    case McmVariant::SaSa: return "SA+SA";
    case McmVariant::CmaCma: return "CMA+CMA";
    case McmVariant::CmaSa: return "CMA+SA";
  }
  return "?";
}

// Linear temperature annealing: tau(e) = 30 - 29 * min(e, 10) / 10.
struct TemperatureSchedule {
  double tau_start = 30.0;
  double tau_end = 1.0;
  int anneal_epochs = 10;
};

inline double tau_at(const TemperatureSchedule& s, int epoch) {
  if (epoch < 0) throw ValueError("tau_at: negative epoch");
  const int e = std::min(epoch, s.anneal_epochs);
  return s.tau_start +
         (s.tau_end - s.tau_start) * static_cast<double>(e) / static_cast<double>(s.anneal_epochs);
}

// One attention block: multi-head scaled dot-product attention with a
// temperature softmax, output projection, residual + layer norm, then a
// position-wise two-layer feed-forward (ReLU inner), residual + layer norm.
// Serves as both the SA and the CMA block; only the key/value source differs.
template <class S>
struct BlockParams {
  Tensor<S> wq, wk, wv, wo;  // [d, h*d_k], [d, h*d_k], [d, h*d_v], [h*d_v, d]
  Affine<S> ff1, ff2;
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;

  void init(Rng& rng, const AttentionConfig& cfg, std::size_t d) {
    wq = glorot<S>(rng, d, cfg.n_heads * cfg.d_k);
    wk = glorot<S>(rng, d, cfg.n_heads * cfg.d_k);
    wv = glorot<S>(rng, d, cfg.n_heads * cfg.d_v);
    wo = glorot<S>(rng, cfg.n_heads * cfg.d_v, d);
    ff1.init(rng, d, cfg.ff_hidden);
    ff2.init(rng, cfg.ff_hidden, d);
    ln1_g = ones_param<S>({d});
    ln1_b = zeros_param<S>({d});
    ln2_g = ones_param<S>({d});
    ln2_b = zeros_param<S>({d});
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".wv", wv});
    out.push_back({prefix + ".wo", wo});
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
    out.push_back({prefix + ".ln1_g", ln1_g});
    out.push_back({prefix + ".ln1_b", ln1_b});
    out.push_back({prefix + ".ln2_g", ln2_g});
    out.push_back({prefix + ".ln2_b", ln2_b});
  }
};

// Raw multi-head attention weights for one head (exported by tests).
template <class S>
Tensor<S> attention_scores(const Tensor<S>& q, const Tensor<S>& k, std::size_t d_k, S tau) {
  auto scores = scale(matmul(q, transpose(k)), S(1) / static_cast<S>(std::sqrt(double(d_k))));
  return softmax_t(scores, tau, 1);
}

// query_in supplies Q; context_in supplies K and V. Both are [T x d].
template <class S>
Tensor<S> attention_block(const Tensor<S>& query_in, const Tensor<S>& context_in,
                          const BlockParams<S>& p, const AttentionConfig& cfg, S tau) {
  if (query_in.ndim() != 2 || context_in.ndim() != 2 ||
      query_in.dim(1) != context_in.dim(1))
    throw ShapeError("attention_block: bad inputs " + shape_str(query_in.shape()) + " / " +
                     shape_str(context_in.shape()));
  if (query_in.dim(0) != context_in.dim(0))
    throw ShapeError("attention_block: sequence length mismatch " +
                     shape_str(query_in.shape()) + " vs " + shape_str(context_in.shape()));
  auto q_all = matmul(query_in, p.wq);
  auto k_all = matmul(context_in, p.wk);
  auto v_all = matmul(context_in, p.wv);

  std::vector<Tensor<S>> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    auto qh = slice(q_all, 1, h * cfg.d_k, cfg.d_k);
    auto kh = slice(k_all, 1, h * cfg.d_k, cfg.d_k);
    auto vh = slice(v_all, 1, h * cfg.d_v, cfg.d_v);
    auto attn = attention_scores(qh, kh, cfg.d_k, tau);
    heads.push_back(matmul(attn, vh));
  }
  auto multi = cfg.n_heads == 1 ? heads[0] : concat(heads, 1);
  auto attended = matmul(multi, p.wo);

  auto x1 = add(query_in, attended);
  if (cfg.use_layer_norm) x1 = layer_norm(x1, p.ln1_g, p.ln1_b);
  auto ff = p.ff2(relu(p.ff1(x1)));
  auto out = add(x1, ff);
  if (cfg.use_layer_norm) out = layer_norm(out, p.ln2_g, p.ln2_b);
  return out;
}

template <class S>
Tensor<S> self_attention(const Tensor<S>& f, const BlockParams<S>& p, const AttentionConfig& cfg,
                         S tau) {
  return attention_block(f, f, p, cfg, tau);
}

template <class S>
Tensor<S> cross_modal_attention(const Tensor<S>& query_seq, const Tensor<S>& context_seq,
                                const BlockParams<S>& p, const AttentionConfig& cfg, S tau) {
  return attention_block(query_seq, context_seq, p, cfg, tau);
}

// One co-attention module: per modality, a first block then a second block.
// In the default SA+CMA layout the first slot is self-attention and the
// second cross-attends to the other modality's first-slot output.
template <class S>
struct McmParams {
  BlockParams<S> sa_v, sa_a;    // first slot per modality
  BlockParams<S> cma_v, cma_a;  // second slot per modality

  void init(Rng& rng, const AttentionConfig& cfg) {
    sa_v.init(rng, cfg, cfg.d_model);
    sa_a.init(rng, cfg, cfg.d_model);
    cma_v.init(rng, cfg, cfg.d_model);
    cma_a.init(rng, cfg, cfg.d_model);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    sa_v.collect(prefix + ".sa_v", out);
    sa_a.collect(prefix + ".sa_a", out);
    cma_v.collect(prefix + ".cma_v", out);
    cma_a.collect(prefix + ".cma_a", out);
  }
};

template <class S>
std::pair<Tensor<S>, Tensor<S>> mcm_forward(const Tensor<S>& v, const Tensor<S>& a,
                                            const McmParams<S>& p, const AttentionConfig& cfg,
                                            S tau, McmVariant variant = McmVariant::SaCma) {
  const bool first_cross = variant == McmVariant::CmaCma || variant == McmVariant::CmaSa;
  const bool second_cross = variant == McmVariant::SaCma || variant == McmVariant::CmaCma;

  Tensor<S> v1, a1;
  if (first_cross) {
    v1 = attention_block(v, a, p.sa_v, cfg, tau);
    a1 = attention_block(a, v, p.sa_a, cfg, tau);
  } else {
    v1 = self_attention(v, p.sa_v, cfg, tau);
    a1 = self_attention(a, p.sa_a, cfg, tau);
  }
  Tensor<S> v2, a2;
  if (second_cross) {
    v2 = attention_block(v1, a1, p.cma_v, cfg, tau);
    a2 = attention_block(a1, v1, p.cma_a, cfg, tau);
  } else {
    v2 = self_attention(v1, p.cma_v, cfg, tau);
    a2 = self_attention(a1, p.cma_a, cfg, tau);
  }
  return {v2, a2};
}

}  // namespace mpn
