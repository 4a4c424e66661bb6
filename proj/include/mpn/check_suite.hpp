#pragma once

#include <string>
#include <vector>

#include "mpn/attention.hpp"
#include "mpn/grad_check.hpp"
#include "mpn/mbam.hpp"
#include "mpn/model.hpp"
#include "mpn/nn.hpp"
#include "mpn/train.hpp"

namespace mpn {

// 64-bit finite-difference verification of every differentiable block and
// the end-to-end model at tiny scale (T=3, R=2, p=6, q=4, d_model=k=8).

struct BlockCheck {
  std::string name;
  GradCheckReport report;
};

namespace check_detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights, so gradient errors cannot cancel.
inline Tensor<double> probe_loss(const Tensor<double>& out, Rng& rng) {
  auto w = random_tensor(rng, out.shape(), 0.1, 1.0);
  return sum_all(mul(out, w));
}

inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.p = 6;
  cfg.q = 4;
  cfg.n_regions = 2;
  cfg.n_classes = 3;
  cfg.agva_hidden = 8;
  cfg.cls_hidden = 8;
  cfg.rel_hidden = 4;
  cfg.attention.d_model = 8;
  cfg.attention.n_heads = 2;
  cfg.attention.d_k = 4;
  cfg.attention.d_v = 4;
  cfg.attention.ff_hidden = 8;
  cfg.attention.n_mcm = 1;
  cfg.fbc.p = 6;
  cfg.fbc.q = 4;
  cfg.fbc.r = 2;
  cfg.fbc.k = 8;
  cfg.fbc.lasso_lambda = 0.01;
  return cfg;
}

// ReLU/soft-threshold kinks make central differences unreliable; redraw
// until every FBC pre-threshold channel is at least `margin` from λ/2.
inline bool fbc_kink_free(const Tensor<double>& fv, const Tensor<double>& fa,
                          const FbcParams<double>& params, const FbcConfig& cfg,
                          double margin = 1e-3) {
  NoGradGuard g;
  auto h = mul(matmul(fv, params.u_tilde), matmul(fa, params.v_tilde));
  auto c_raw = group_sum(h, cfg.r);
  for (const double c : c_raw.values())
    if (std::abs(std::abs(c) - cfg.lasso_lambda / 2.0) < margin) return false;
  return true;
}

}  // namespace check_detail

inline std::vector<BlockCheck> run_check_suite(std::uint64_t seed = 7, double h = 1e-5) {
  using check_detail::probe_loss;
  using check_detail::random_tensor;
  using T = Tensor<double>;
  std::vector<BlockCheck> out;
  const ModelConfig cfg = check_detail::tiny_model_config();
  const std::size_t t_len = 3;

  auto check = [&](const std::string& name, const std::function<Tensor<double>()>& f,
                   std::vector<NamedTensor<double>> params) {
    out.push_back({name, grad_check<double>(f, std::move(params), h)});
  };

  {  // core ops: matmul, add, mul, relu, tanh, sigmoid, layer_norm, softmax_t, reductions
    Rng rng(Rng::derive(seed, 1));
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 5});
    auto g = random_tensor(rng, {5});
    auto bias = random_tensor(rng, {5});
    Rng probe(Rng::derive(seed, 101));
    auto wm = random_tensor(probe, {3, 5}, 0.1, 1.0);
    auto ws = random_tensor(probe, {3, 5}, 0.1, 1.0);
    check(
        "core-ops",
        [&]() {
          auto m = matmul(a, b);
          auto x = layer_norm(tanh_op(m), g, bias);
          auto s = softmax_t(mul(sigmoid(x), x), 2.5, 1);
          auto r = relu(sub(x, s));
          auto pooled = max_axis(add(mul(s, wm), r), 0);
          return add(sum_all(mul(s, ws)), sum_all(pooled));
        },
        {{"a", a}, {"b", b}, {"gain", g}, {"bias", bias}});
  }

  {  // self-attention block
    Rng rng(Rng::derive(seed, 2));
    BlockParams<double> p;
    p.init(rng, cfg.attention, cfg.attention.d_model);
    auto x = random_tensor(rng, {t_len, cfg.attention.d_model});
    Rng probe(Rng::derive(seed, 102));
    auto w = random_tensor(probe, {t_len, cfg.attention.d_model}, 0.1, 1.0);
    ParamList<double> params{{"x", x}};
    p.collect("sa", params);
    check(
        "self-attention",
        [&]() { return sum_all(mul(self_attention(x, p, cfg.attention, 2.0), w)); }, params);
  }

  {  // cross-modal attention block
    Rng rng(Rng::derive(seed, 3));
    BlockParams<double> p;
    p.init(rng, cfg.attention, cfg.attention.d_model);
    auto q = random_tensor(rng, {t_len, cfg.attention.d_model});
    auto c = random_tensor(rng, {t_len, cfg.attention.d_model});
    Rng probe(Rng::derive(seed, 103));
    auto w = random_tensor(probe, {t_len, cfg.attention.d_model}, 0.1, 1.0);
    ParamList<double> params{{"q", q}, {"ctx", c}};
    p.collect("cma", params);
    check(
        "cross-modal-attention",
        [&]() { return sum_all(mul(cross_modal_attention(q, c, p, cfg.attention, 1.5), w)); },
        params);
  }

  {  // full MCM
    Rng rng(Rng::derive(seed, 4));
    McmParams<double> p;
    p.init(rng, cfg.attention);
    auto v = random_tensor(rng, {t_len, cfg.attention.d_model});
    auto a = random_tensor(rng, {t_len, cfg.attention.d_model});
    Rng probe(Rng::derive(seed, 104));
    auto wv = random_tensor(probe, {t_len, cfg.attention.d_model}, 0.1, 1.0);
    auto wa = random_tensor(probe, {t_len, cfg.attention.d_model}, 0.1, 1.0);
    ParamList<double> params{{"v", v}, {"a", a}};
    p.collect("mcm", params);
    check(
        "mcm",
        [&]() {
          auto r = mcm_forward(v, a, p, cfg.attention, 3.0);
          return add(sum_all(mul(r.first, wv)), sum_all(mul(r.second, wa)));
        },
        params);
  }

  {  // audio-guided visual attention
    Rng rng(Rng::derive(seed, 5));
    AgvaParams<double> p;
    p.init(rng, cfg);
    auto v = random_tensor(rng, {t_len, cfg.n_regions, cfg.p});
    auto a = random_tensor(rng, {t_len, cfg.q});
    Rng probe(Rng::derive(seed, 105));
    auto w = random_tensor(probe, {t_len, cfg.p}, 0.1, 1.0);
    ParamList<double> params{{"v", v}, {"a", a}};
    p.collect("agva", params);
    check(
        "audio-guided-attention",
        [&]() { return sum_all(mul(audio_guided_attention(v, a, p).first, w)); }, params);
  }

  {  // FBC squeeze (kink-avoiding inputs)
    std::uint64_t draw = 6;
    Rng rng(Rng::derive(seed, draw));
    FbcParams<double> p;
    Tensor<double> fv, fa;
    for (int tries = 0; tries < 32; ++tries) {
      Rng attempt(Rng::derive(seed, draw + 100 * tries));
      p.init(attempt, cfg.fbc);
      fv = random_tensor(attempt, {t_len, cfg.p});
      fa = random_tensor(attempt, {t_len, cfg.q});
      if (check_detail::fbc_kink_free(fv, fa, p, cfg.fbc)) break;
    }
    Rng probe(Rng::derive(seed, 106));
    auto w = random_tensor(probe, {t_len, cfg.fbc.k}, 0.1, 1.0);
    ParamList<double> params{{"fv", fv}, {"fa", fa}};
    p.collect("fbc", params);
    check(
        "fbc-squeeze",
        [&]() { return sum_all(mul(fbc_squeeze(fv, fa, p, cfg.fbc), w)); }, params);
  }

  {  // excitation + refine
    Rng rng(Rng::derive(seed, 7));
    ExcitationParams<double> p;
    p.init(rng, cfg.fbc);
    auto z = random_tensor(rng, {t_len, cfg.fbc.k});
    auto v = random_tensor(rng, {t_len, cfg.p});
    auto a = random_tensor(rng, {t_len, cfg.q});
    Rng probe(Rng::derive(seed, 107));
    auto wv = random_tensor(probe, {t_len, cfg.fbc.k}, 0.1, 1.0);
    auto wa = random_tensor(probe, {t_len, cfg.fbc.k}, 0.1, 1.0);
    ParamList<double> params{{"z", z}, {"v", v}, {"a", a}};
    p.collect("excite", params);
    check(
        "excitation-refine",
        [&]() {
          auto gates = excitation(z, p);
          auto refined = refine(v, a, gates.first, gates.second, p);
          return add(sum_all(mul(refined.first, wv)), sum_all(mul(refined.second, wa)));
        },
        params);
  }

  {  // prediction heads: relevance MLPs and the classifier
    Rng rng(Rng::derive(seed, 8));
    RelevanceHead<double> rel;
    rel.init(rng, cfg.fbc.k, cfg.rel_hidden);
    ClassifierHead<double> cls;
    cls.init(rng, 2 * cfg.attention.d_model, cfg.cls_hidden, cfg.n_classes);
    auto x = random_tensor(rng, {t_len, cfg.fbc.k});
    auto y = random_tensor(rng, {t_len, 2 * cfg.attention.d_model});
    Rng probe(Rng::derive(seed, 108));
    auto wr = random_tensor(probe, {t_len}, 0.1, 1.0);
    auto wc = random_tensor(probe, {cfg.n_classes}, 0.1, 1.0);
    auto wcs = random_tensor(probe, {t_len, cfg.n_classes}, 0.1, 1.0);
    ParamList<double> params{{"x", x}, {"y", y}};
    rel.collect("rel", params);
    cls.collect("cls", params);
    check(
        "prediction-heads",
        [&]() {
          auto pr = rel(x);
          auto pc = cls(y);
          return add(sum_all(mul(pr, wr)),
                     add(sum_all(mul(pc.first, wc)), sum_all(mul(pc.second, wcs))));
        },
        params);
  }

  {  // losses through fixed predictions
    Rng rng(Rng::derive(seed, 9));
    auto p_r = random_tensor(rng, {t_len}, 0.05, 0.95);
    auto logits = random_tensor(rng, {1, cfg.n_classes});
    auto p_j = random_tensor(rng, {t_len, cfg.n_classes}, 0.05, 0.95);
    std::vector<int> seg_labels{0, kBackground, 0};
    ParamList<double> params{{"p_r", p_r}, {"logits", logits}, {"p_j", p_j}};
    check(
        "losses",
        [&]() {
          Predictions<double> preds;
          preds.p_r = p_r;
          preds.p_c = reshape(softmax(logits, 1), Shape{cfg.n_classes});
          auto fl = full_loss(preds, seg_labels, 0, 0.6);
          auto wl = weak_loss(mil_pool(p_j), 1);
          return add(fl, wl);
        },
        params);
  }

  {  // end-to-end model, full network with local-to-global gating
    Tensor<double> v, a;
    ModelParams<double> mp;
    for (int tries = 0; tries < 32; ++tries) {
      Rng attempt(Rng::derive(seed, 10 + 100 * tries));
      mp.init(attempt, cfg);
      v = random_tensor(attempt, {t_len, cfg.n_regions, cfg.p});
      a = random_tensor(attempt, {t_len, cfg.q});
      NoGradGuard g;
      auto agva = audio_guided_attention(v, a, mp.agva);
      if (check_detail::fbc_kink_free(agva.first, a, mp.fbc, cfg.fbc)) break;
    }
    std::vector<int> seg_labels{1, 1, kBackground};
    ParamList<double> params{{"v", v}, {"a", a}};
    auto model_params = mp.collect();
    params.insert(params.end(), model_params.begin(), model_params.end());
    check(
        "end-to-end",
        [&]() {
          auto preds = mpn_forward(v, a, mp, cfg, 2.0);
          auto fl = full_loss(preds, seg_labels, 1, 0.6);
          auto wl = weak_loss(mil_pool(preds.p_j), 1);
          return add(fl, wl);
        },
        params);
  }

  return out;
}

}  // namespace mpn
