#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpn/attention.hpp"
#include "mpn/data.hpp"
#include "mpn/errors.hpp"
#include "mpn/mbam.hpp"
#include "mpn/nn.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

enum class NetworkVariant { Full, ClassificationOnly, LocalizationOnly };

inline NetworkVariant network_variant_from_string(const std::string& s) {
  if (s == "full" || s == "two-subnetworks") return NetworkVariant::Full;
  if (s == "classification") return NetworkVariant::ClassificationOnly;
  if (s == "localization") return NetworkVariant::LocalizationOnly;
  throw ValueError("unknown network variant: " + s);
}

inline std::string to_string(NetworkVariant v) {
  switch (v) {
    case NetworkVariant::Full: return "two-subnetworks";
    case NetworkVariant::ClassificationOnly: return "classification";
    case NetworkVariant::LocalizationOnly: return "localization";
  }
  return "?";
}

struct ModelConfig {
  std::size_t p = 32;  // visual feature dim per region
  std::size_t q = 16;  // audio feature dim
  std::size_t n_regions = 4;
  std::size_t n_classes = 5;
  std::size_t agva_hidden = 128;
  std::size_t cls_hidden = 128;
  std::size_t rel_hidden = 128;
  AttentionConfig attention;
  FbcConfig fbc;
  bool local_to_global = true;
  NetworkVariant network = NetworkVariant::Full;
  McmVariant mcm_variant = McmVariant::SaCma;
  SqueezeVariant squeeze = SqueezeVariant::Fbc;

  void validate() const {
    attention.validate();
    fbc.validate();
    if (fbc.p != p || fbc.q != q)
      throw ValueError("model config: fbc dims must match feature dims");
    // MBAM gates multiply MCM outputs directly, so channel counts must agree.
    if (attention.d_model != fbc.k)
      throw ValueError("model config: d_model (" + std::to_string(attention.d_model) +
                       ") must equal fbc.k (" + std::to_string(fbc.k) + ")");
  }
};

// Audio-guided spatial attention: score_i = w^T tanh(A v_i + B a_t + bias).
template <class S>
struct AgvaParams {
  Tensor<S> a_proj;   // [p x hidden]
  Tensor<S> b_proj;   // [q x hidden]
  Tensor<S> bias;     // [hidden]
  Tensor<S> score_w;  // [hidden x 1]

  void init(Rng& rng, const ModelConfig& cfg) {
    a_proj = glorot<S>(rng, cfg.p, cfg.agva_hidden);
    b_proj = glorot<S>(rng, cfg.q, cfg.agva_hidden);
    bias = zeros_param<S>({cfg.agva_hidden});
    score_w = glorot<S>(rng, cfg.agva_hidden, 1);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".a_proj", a_proj});
    out.push_back({prefix + ".b_proj", b_proj});
    out.push_back({prefix + ".bias", bias});
    out.push_back({prefix + ".score_w", score_w});
  }
};

// Two-layer relevance head with sigmoid output: [T x in] -> [T] in [0,1].
template <class S>
struct RelevanceHead {
  Affine<S> l1, l2;

  void init(Rng& rng, std::size_t in, std::size_t hidden) {
    l1.init(rng, in, hidden);
    l2.init(rng, hidden, 1);
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    auto scores = l2(relu(l1(x)));  // [T x 1]
    return reshape(sigmoid(scores), {x.dim(0)});
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }
};

// Classifier with a shared first layer: the video-level head applies it to
// max-pooled features, the segment-level head applies it per segment.
template <class S>
struct ClassifierHead {
  Affine<S> hidden;
  Affine<S> video_out;
  Affine<S> segment_out;

  void init(Rng& rng, std::size_t in, std::size_t h, std::size_t n_classes) {
    hidden.init(rng, in, h);
    video_out.init(rng, h, n_classes);
    segment_out.init(rng, h, n_classes);
  }
  // x: [T x in] -> (p_c [C] on the simplex, p_c_seg [T x C], rows on simplex)
  std::pair<Tensor<S>, Tensor<S>> operator()(const Tensor<S>& x) const {
    auto pooled = reshape(max_axis(x, 0), Shape{1, x.dim(1)});
    auto p_c = reshape(softmax(video_out(relu(hidden(pooled))), 1), Shape{video_out.b.dim(0)});
    auto p_c_seg = softmax(segment_out(relu(hidden(x))), 1);
    return {p_c, p_c_seg};
  }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    hidden.collect(prefix + ".hidden", out);
    video_out.collect(prefix + ".video_out", out);
    segment_out.collect(prefix + ".segment_out", out);
  }
};

template <class S>
struct ModelParams {
  AgvaParams<S> agva;
  Affine<S> proj_v, proj_a;  // raw features -> d_model
  std::vector<McmParams<S>> mcms;
  BlockParams<S> final_sa;  // on concatenated [T x 2*d_model]
  ClassifierHead<S> classifier;
  FbcParams<S> fbc;
  ExcitationParams<S> excite;
  SqueezeAblationParams<S> squeeze_alt;
  RelevanceHead<S> rel_v, rel_a;  // on refined unimodal features [T x k]
  // Ablation heads: localization-only predicts categories from MBAM features;
  // classification-only predicts relevance from the post-SA sequence.
  ClassifierHead<S> loc_classifier;
  RelevanceHead<S> cls_relevance;

  void init(Rng& rng, const ModelConfig& cfg) {
    cfg.validate();
    agva.init(rng, cfg);
    proj_v.init(rng, cfg.p, cfg.attention.d_model);
    proj_a.init(rng, cfg.q, cfg.attention.d_model);
    mcms.resize(cfg.attention.n_mcm);
    for (auto& m : mcms) m.init(rng, cfg.attention);
    final_sa.init(rng, cfg.attention, 2 * cfg.attention.d_model);
    classifier.init(rng, 2 * cfg.attention.d_model, cfg.cls_hidden, cfg.n_classes);
    fbc.init(rng, cfg.fbc);
    excite.init(rng, cfg.fbc);
    squeeze_alt.init(rng, cfg.fbc);
    rel_v.init(rng, cfg.fbc.k, cfg.rel_hidden);
    rel_a.init(rng, cfg.fbc.k, cfg.rel_hidden);
    loc_classifier.init(rng, 2 * cfg.fbc.k, cfg.cls_hidden, cfg.n_classes);
    cls_relevance.init(rng, 2 * cfg.attention.d_model, cfg.rel_hidden);
  }

  ParamList<S> collect() const {
    ParamList<S> out;
    agva.collect("agva", out);
    proj_v.collect("proj_v", out);
    proj_a.collect("proj_a", out);
    for (std::size_t i = 0; i < mcms.size(); ++i)
      mcms[i].collect("mcm" + std::to_string(i), out);
    final_sa.collect("final_sa", out);
    classifier.collect("classifier", out);
    fbc.collect("fbc", out);
    excite.collect("excite", out);
    squeeze_alt.collect("squeeze_alt", out);
    rel_v.collect("rel_v", out);
    rel_a.collect("rel_a", out);
    loc_classifier.collect("loc_classifier", out);
    cls_relevance.collect("cls_relevance", out);
    return out;
  }
};

// Pooled visual features plus the exported spatial attention map.
template <class S>
std::pair<Tensor<S>, Tensor<S>> audio_guided_attention(const Tensor<S>& v_regions,
                                                       const Tensor<S>& a,
                                                       const AgvaParams<S>& p) {
  if (v_regions.ndim() != 3)
    throw ShapeError("audio_guided_attention: expected [T x R x p], got " +
                     shape_str(v_regions.shape()));
  const std::size_t t_len = v_regions.dim(0), n_regions = v_regions.dim(1),
                    p_dim = v_regions.dim(2);
  if (a.ndim() != 2 || a.dim(0) != t_len)
    throw ShapeError("audio_guided_attention: audio " + shape_str(a.shape()) +
                     " vs T=" + std::to_string(t_len));
  std::vector<Tensor<S>> pooled_rows, weight_rows;
  pooled_rows.reserve(t_len);
  weight_rows.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto vt = reshape(slice(v_regions, 0, t, 1), Shape{n_regions, p_dim});
    auto at = slice(a, 0, t, 1);  // [1 x q]
    auto audio_part = add_rowvec(matmul(at, p.b_proj), p.bias);  // [1 x hidden]
    auto hidden = tanh_op(add_rowvec(matmul(vt, p.a_proj), reshape(audio_part, Shape{p.bias.dim(0)})));
    auto scores = reshape(matmul(hidden, p.score_w), Shape{1, n_regions});
    auto w = softmax(scores, 1);            // [1 x R]
    pooled_rows.push_back(matmul(w, vt));   // [1 x p]
    weight_rows.push_back(w);
  }
  auto v_att = t_len == 1 ? pooled_rows[0] : concat(pooled_rows, 0);
  auto weights = t_len == 1 ? weight_rows[0] : concat(weight_rows, 0);
  return {v_att, weights};
}

template <class S>
struct LocalizationOutputs {
  Tensor<S> p_r, p_r_v, p_r_a;   // [T]
  Tensor<S> phi_v, phi_a;        // [T x k]
  Tensor<S> v_hat, a_hat;        // [T x k]
};

template <class S>
LocalizationOutputs<S> localization_forward(const Tensor<S>& v_att, const Tensor<S>& a,
                                            const ModelParams<S>& params,
                                            const ModelConfig& cfg) {
  LocalizationOutputs<S> out;
  auto z = squeeze_ablation(cfg.squeeze, v_att, a, params.fbc, params.squeeze_alt, cfg.fbc);
  auto gates = excitation(z, params.excite);
  out.phi_v = gates.first;
  out.phi_a = gates.second;
  auto refined = refine(v_att, a, out.phi_v, out.phi_a, params.excite);
  out.v_hat = refined.first;
  out.a_hat = refined.second;
  out.p_r_v = params.rel_v(out.v_hat);
  out.p_r_a = params.rel_a(out.a_hat);
  // An event must be both audible and visible.
  out.p_r = mul(out.p_r_a, out.p_r_v);
  return out;
}

template <class S>
struct ClassificationOutputs {
  Tensor<S> p_c;      // [C]
  Tensor<S> p_c_seg;  // [T x C]
  Tensor<S> features; // [T x 2*d_model], post final SA block
};

template <class S>
ClassificationOutputs<S> classification_forward(
    const Tensor<S>& v_att, const Tensor<S>& a, const ModelParams<S>& params,
    const ModelConfig& cfg, S tau,
    const std::optional<std::pair<Tensor<S>, Tensor<S>>>& gates = std::nullopt) {
  auto xv = params.proj_v(v_att);
  auto xa = params.proj_a(a);
  for (const auto& mcm : params.mcms) {
    auto next = mcm_forward(xv, xa, mcm, cfg.attention, tau, cfg.mcm_variant);
    xv = next.first;
    xa = next.second;
  }
  if (gates) {
    // Local-to-global interaction: MBAM excitation signals gate the MCM
    // outputs channel-wise (d_model == k).
    xv = mul(xv, gates->first);
    xa = mul(xa, gates->second);
  }
  auto fused = concat<S>({xv, xa}, 1);
  ClassificationOutputs<S> out;
  out.features = self_attention(fused, params.final_sa, cfg.attention, tau);
  auto preds = params.classifier(out.features);
  out.p_c = preds.first;
  out.p_c_seg = preds.second;
  return out;
}

template <class S>
struct Predictions {
  Tensor<S> p_r;           // [T], event relevance in [0,1]
  Tensor<S> p_r_v, p_r_a;  // unimodal relevance (when the loc subnetwork ran)
  Tensor<S> p_c;           // [C], video-level simplex
  Tensor<S> p_c_seg;       // [T x C]
  Tensor<S> p_j;           // [T x C], joint p_r_t * p_c_seg[t]
  Tensor<S> agva_weights;  // [T x R]
};

template <class S>
Predictions<S> mpn_forward(const Tensor<S>& v_regions, const Tensor<S>& audio,
                           const ModelParams<S>& params, const ModelConfig& cfg, S tau) {
  Predictions<S> out;
  auto agva = audio_guided_attention(v_regions, audio, params.agva);
  const Tensor<S>& v_att = agva.first;
  out.agva_weights = agva.second;

  switch (cfg.network) {
    case NetworkVariant::Full: {
      auto loc = localization_forward(v_att, audio, params, cfg);
      out.p_r = loc.p_r;
      out.p_r_v = loc.p_r_v;
      out.p_r_a = loc.p_r_a;
      std::optional<std::pair<Tensor<S>, Tensor<S>>> gates;
      if (cfg.local_to_global) gates = std::make_pair(loc.phi_v, loc.phi_a);
      auto cls = classification_forward(v_att, audio, params, cfg, tau, gates);
      out.p_c = cls.p_c;
      out.p_c_seg = cls.p_c_seg;
      break;
    }
    case NetworkVariant::LocalizationOnly: {
      auto loc = localization_forward(v_att, audio, params, cfg);
      out.p_r = loc.p_r;
      out.p_r_v = loc.p_r_v;
      out.p_r_a = loc.p_r_a;
      auto preds = params.loc_classifier(concat<S>({loc.v_hat, loc.a_hat}, 1));
      out.p_c = preds.first;
      out.p_c_seg = preds.second;
      break;
    }
    case NetworkVariant::ClassificationOnly: {
      auto cls = classification_forward(v_att, audio, params, cfg, tau);
      out.p_c = cls.p_c;
      out.p_c_seg = cls.p_c_seg;
      out.p_r = params.cls_relevance(cls.features);
      break;
    }
  }
  // Joint segment-level scores: row t is p_r_t * p_c_seg[t].
  const std::size_t t_len = out.p_r.dim(0);
  const std::size_t n_classes = out.p_c.dim(0);
  auto ones_row = Tensor<S>::constant({1, n_classes}, S(1));
  auto tiled = matmul(reshape(out.p_r, Shape{t_len, 1}), ones_row);
  out.p_j = mul(tiled, out.p_c_seg);
  return out;
}

// Segment labels from predictions. Threshold is inclusive: p_r >= 0.5 is an
// event segment. The fully supervised regime labels event segments with the
// video-level argmax; the weak regime uses the per-segment argmax.
template <class S>
std::vector<int> decode(const Predictions<S>& preds, double threshold = 0.5,
                        bool per_segment_categories = false) {
  const std::size_t t_len = preds.p_r.dim(0);
  const std::size_t n_classes = preds.p_c.dim(0);
  int video_arg = 0;
  for (std::size_t c = 1; c < n_classes; ++c)
    if (preds.p_c.at(c) > preds.p_c.at(video_arg)) video_arg = static_cast<int>(c);
  std::vector<int> labels(t_len, kBackground);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (static_cast<double>(preds.p_r.at(t)) >= threshold) {
      if (per_segment_categories) {
        int arg = 0;
        for (std::size_t c = 1; c < n_classes; ++c)
          if (preds.p_c_seg.at(t * n_classes + c) > preds.p_c_seg.at(t * n_classes + arg))
            arg = static_cast<int>(c);
        labels[t] = arg;
      } else {
        labels[t] = video_arg;
      }
    }
  }
  return labels;
}

}  // namespace mpn
