#pragma once

#include <string>
#include <utility>

#include "mpn/errors.hpp"
#include "mpn/nn.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

struct FbcConfig {
  std::size_t p = 32;          // visual dim
  std::size_t q = 16;          // audio dim
  std::size_t r = 4;           // decomposition rank
  std::size_t k = 64;          // coding dictionary atoms == fused channel dim
  double lasso_lambda = 0.1;  // shrinkage strength

  std::size_t k_hid() const { return k / 2; }

  void validate() const {
    if (r < 1 || k < 1) throw ValueError("fbc config: r and k must be >= 1");
    if (k % 2 != 0) throw ValueError("fbc config: k must be even so k_hid = k/2 exactly");
    if (lasso_lambda < 0) throw ValueError("fbc config: negative lasso_lambda");
  }
};

enum class SqueezeVariant { Fbc, Concat, Product, Addition };

inline SqueezeVariant squeeze_variant_from_string(const std::string& s) {
  if (s == "fbc") return SqueezeVariant::Fbc;
  if (s == "concat") return SqueezeVariant::Concat;
  if (s == "product") return SqueezeVariant::Product;
  if (s == "addition") return SqueezeVariant::Addition;
  throw ValueError("unknown squeeze variant: " + s);
}

inline std::string to_string(SqueezeVariant v) {
  switch (v) {
    case SqueezeVariant::Fbc: return "fbc";
    case SqueezeVariant::Concat: return "concat";
    case SqueezeVariant::Product: return "product";
    case SqueezeVariant::Addition: return "addition";
  }
  return "?";
}

// Factorized bilinear coding parameters. The binary pooling matrix P
// (row l hot on columns l*r .. l*r + r - 1) is applied implicitly as a
// group sum and is never trained.
template <class S>
struct FbcParams {
  Tensor<S> u_tilde;  // [p x r*k]
  Tensor<S> v_tilde;  // [q x r*k]

  void init(Rng& rng, const FbcConfig& cfg) {
    u_tilde = glorot<S>(rng, cfg.p, cfg.r * cfg.k);
    v_tilde = glorot<S>(rng, cfg.q, cfg.r * cfg.k);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".u_tilde", u_tilde});
    out.push_back({prefix + ".v_tilde", v_tilde});
  }
};

template <class S>
struct ExcitationParams {
  Tensor<S> w1_v, w2_v;  // [k x k_hid], [k_hid x k]
  Tensor<S> w1_a, w2_a;
  Affine<S> proj_v, proj_a;  // pre-gate projections f(.) to k dims

  void init(Rng& rng, const FbcConfig& cfg) {
    w1_v = glorot<S>(rng, cfg.k, cfg.k_hid());
    w2_v = glorot<S>(rng, cfg.k_hid(), cfg.k);
    w1_a = glorot<S>(rng, cfg.k, cfg.k_hid());
    w2_a = glorot<S>(rng, cfg.k_hid(), cfg.k);
    proj_v.init(rng, cfg.p, cfg.k);
    proj_a.init(rng, cfg.q, cfg.k);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".w1_v", w1_v});
    out.push_back({prefix + ".w2_v", w2_v});
    out.push_back({prefix + ".w1_a", w1_a});
    out.push_back({prefix + ".w2_a", w2_a});
    proj_v.collect(prefix + ".proj_v", out);
    proj_a.collect(prefix + ".proj_a", out);
  }
};

// Alternative squeeze functions for the ablation axis; not used by the
// default model but always allocated so variants share everything else.
template <class S>
struct SqueezeAblationParams {
  Affine<S> concat_proj;  // [p+q] -> k
  Affine<S> alt_v;        // p -> k, for product/addition
  Affine<S> alt_a;        // q -> k

  void init(Rng& rng, const FbcConfig& cfg) {
    concat_proj.init(rng, cfg.p + cfg.q, cfg.k);
    alt_v.init(rng, cfg.p, cfg.k);
    alt_a.init(rng, cfg.q, cfg.k);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    concat_proj.collect(prefix + ".concat_proj", out);
    alt_v.collect(prefix + ".alt_v", out);
    alt_a.collect(prefix + ".alt_a", out);
  }
};

// Squeeze: per segment, c' = P (U~^T Fv ∘ V~^T Fa); c = soft-threshold(c', λ/2).
// Returns the fused code z = [T x k].
template <class S>
Tensor<S> fbc_squeeze(const Tensor<S>& fv, const Tensor<S>& fa, const FbcParams<S>& params,
                      const FbcConfig& cfg) {
  if (fv.ndim() != 2 || fv.dim(1) != cfg.p)
    throw ShapeError("fbc_squeeze: visual " + shape_str(fv.shape()) + " vs p=" +
                     std::to_string(cfg.p));
  if (fa.ndim() != 2 || fa.dim(1) != cfg.q)
    throw ShapeError("fbc_squeeze: audio " + shape_str(fa.shape()) + " vs q=" +
                     std::to_string(cfg.q));
  if (fv.dim(0) != fa.dim(0))
    throw ShapeError("fbc_squeeze: segment count mismatch " + shape_str(fv.shape()) + " vs " +
                     shape_str(fa.shape()));
  auto h = mul(matmul(fv, params.u_tilde), matmul(fa, params.v_tilde));  // [T x r*k]
  auto c_raw = group_sum(h, cfg.r);                                     // apply P
  return soft_threshold(c_raw, static_cast<S>(cfg.lasso_lambda / 2.0));
}

// Excitation: φ = σ(W2 · ReLU(W1 · z_t)) per modality; entries in (0, 1).
template <class S>
std::pair<Tensor<S>, Tensor<S>> excitation(const Tensor<S>& z, const ExcitationParams<S>& p) {
  auto phi_v = sigmoid(matmul(relu(matmul(z, p.w1_v)), p.w2_v));
  auto phi_a = sigmoid(matmul(relu(matmul(z, p.w1_a)), p.w2_a));
  return {phi_v, phi_a};
}

// Refinement: channel-wise gate on the projected unimodal features.
template <class S>
std::pair<Tensor<S>, Tensor<S>> refine(const Tensor<S>& v, const Tensor<S>& a,
                                       const Tensor<S>& phi_v, const Tensor<S>& phi_a,
                                       const ExcitationParams<S>& p) {
  auto v_hat = mul(relu(p.proj_v(v)), phi_v);
  auto a_hat = mul(relu(p.proj_a(a)), phi_a);
  return {v_hat, a_hat};
}

template <class S>
Tensor<S> squeeze_ablation(SqueezeVariant variant, const Tensor<S>& fv, const Tensor<S>& fa,
                           const FbcParams<S>& fbc, const SqueezeAblationParams<S>& alt,
                           const FbcConfig& cfg) {
  switch (variant) {
    case SqueezeVariant::Fbc:
      return fbc_squeeze(fv, fa, fbc, cfg);
    case SqueezeVariant::Concat:
      return alt.concat_proj(concat<S>({fv, fa}, 1));
    case SqueezeVariant::Product:
      return mul(alt.alt_v(fv), alt.alt_a(fa));
    case SqueezeVariant::Addition:
      return add(alt.alt_v(fv), alt.alt_a(fa));
  }
  throw ValueError("squeeze_ablation: unknown variant");
}

}  // namespace mpn
