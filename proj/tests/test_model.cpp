#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mpn/grad_check.hpp"
#include "mpn/model.hpp"
#include "mpn/rng.hpp"

using namespace mpn;

namespace {

ModelConfig tiny_cfg() {
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
  return cfg;
}

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("model config rejects d_model != k") {
  auto cfg = tiny_cfg();
  cfg.attention.d_model = 16;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("audio-guided attention with a single region is the identity") {
  auto cfg = tiny_cfg();
  cfg.n_regions = 1;
  Rng rng(1);
  AgvaParams<double> p;
  p.init(rng, cfg);
  auto v = rand_tensor(rng, {3, 1, cfg.p});
  auto a = rand_tensor(rng, {3, cfg.q});
  auto [pooled, w] = audio_guided_attention(v, a, p);
  CHECK(w.shape() == Shape{3, 1});
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.at(i) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < pooled.numel(); ++i)
    CHECK(pooled.at(i) == doctest::Approx(v.at(i)));
}

TEST_CASE("identical regions pool to that region regardless of weights") {
  auto cfg = tiny_cfg();
  Rng rng(2);
  AgvaParams<double> p;
  p.init(rng, cfg);
  auto region = rand_tensor(rng, {1, 1, cfg.p});
  std::vector<double> vdata;
  for (int t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < cfg.n_regions; ++r)
      vdata.insert(vdata.end(), region.values().begin(), region.values().end());
  auto v = Tensor<double>::from({2, cfg.n_regions, cfg.p}, vdata);
  auto a = rand_tensor(rng, {2, cfg.q});
  auto [pooled, w] = audio_guided_attention(v, a, p);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < cfg.p; ++j)
      CHECK(pooled.at(t * cfg.p + j) == doctest::Approx(region.at(j)).epsilon(1e-9));
}

TEST_CASE("audio-guided attention matches a hand-unrolled oracle") {
  auto cfg = tiny_cfg();
  cfg.n_regions = 3;
  Rng rng(3);
  AgvaParams<double> p;
  p.init(rng, cfg);
  auto v = rand_tensor(rng, {2, 3, cfg.p});
  auto a = rand_tensor(rng, {2, cfg.q});
  auto [pooled, weights] = audio_guided_attention(v, a, p);

  const std::size_t h = cfg.agva_hidden;
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<double> scores(3, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t j = 0; j < h; ++j) {
        double pre = p.bias.at(j);
        for (std::size_t i = 0; i < cfg.p; ++i)
          pre += p.a_proj.values()[i * h + j] * v.at((t * 3 + r) * cfg.p + i);
        for (std::size_t i = 0; i < cfg.q; ++i)
          pre += p.b_proj.values()[i * h + j] * a.at(t * cfg.q + i);
        scores[r] += p.score_w.at(j) * std::tanh(pre);
      }
    }
    const double mx = std::max({scores[0], scores[1], scores[2]});
    double denom = 0;
    std::vector<double> w(3);
    for (std::size_t r = 0; r < 3; ++r) denom += w[r] = std::exp(scores[r] - mx);
    for (std::size_t r = 0; r < 3; ++r) {
      w[r] /= denom;
      CHECK(weights.at(t * 3 + r) == doctest::Approx(w[r]).epsilon(1e-9));
    }
    for (std::size_t i = 0; i < cfg.p; ++i) {
      double expect = 0;
      for (std::size_t r = 0; r < 3; ++r) expect += w[r] * v.at((t * 3 + r) * cfg.p + i);
      CHECK(pooled.at(t * cfg.p + i) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("agva weight rows sum to one") {
  auto cfg = tiny_cfg();
  Rng rng(4);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v = rand_tensor(rng, {4, cfg.n_regions, cfg.p});
  auto a = rand_tensor(rng, {4, cfg.q});
  auto preds = mpn_forward(v, a, mp, cfg, 2.0);
  for (std::size_t t = 0; t < 4; ++t) {
    double sum = 0;
    for (std::size_t r = 0; r < cfg.n_regions; ++r) sum += preds.agva_weights.at(t * cfg.n_regions + r);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("localization: p_r is the product of unimodal relevances") {
  auto cfg = tiny_cfg();
  Rng rng(5);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v_att = rand_tensor(rng, {5, cfg.p});
  auto a = rand_tensor(rng, {5, cfg.q});
  auto loc = localization_forward(v_att, a, mp, cfg);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(loc.p_r.at(t) ==
          doctest::Approx(loc.p_r_a.at(t) * loc.p_r_v.at(t)).epsilon(1e-12));
    CHECK(loc.p_r.at(t) <= std::min(loc.p_r_a.at(t), loc.p_r_v.at(t)) + 1e-12);
    CHECK(loc.p_r.at(t) >= 0.0);
    CHECK(loc.p_r.at(t) <= 1.0);
  }
}

TEST_CASE("p_c is on the simplex and p_j = p_r rows times p_c_seg") {
  auto cfg = tiny_cfg();
  Rng rng(6);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v = rand_tensor(rng, {4, cfg.n_regions, cfg.p});
  auto a = rand_tensor(rng, {4, cfg.q});
  auto preds = mpn_forward(v, a, mp, cfg, 3.0);
  double sum = 0;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) sum += preds.p_c.at(c);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
      CHECK(preds.p_j.at(t * cfg.n_classes + c) ==
            doctest::Approx(preds.p_r.at(t) * preds.p_c_seg.at(t * cfg.n_classes + c))
                .epsilon(1e-12));
}

TEST_CASE("gates forced to one equal the no-interaction path") {
  auto cfg = tiny_cfg();
  Rng rng(7);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v_att = rand_tensor(rng, {3, cfg.p});
  auto a = rand_tensor(rng, {3, cfg.q});
  auto ones = Tensor<double>::constant({3, cfg.fbc.k}, 1.0);
  auto gated = classification_forward(
      v_att, a, mp, cfg, 2.0,
      std::optional<std::pair<Tensor<double>, Tensor<double>>>{std::in_place, ones, ones});
  auto plain = classification_forward(v_att, a, mp, cfg, 2.0);
  for (std::size_t i = 0; i < gated.p_c.numel(); ++i)
    CHECK(gated.p_c.at(i) == doctest::Approx(plain.p_c.at(i)).epsilon(1e-12));
}

TEST_CASE("with local-to-global disabled, p_c ignores MBAM parameters") {
  auto cfg = tiny_cfg();
  cfg.local_to_global = false;
  Rng rng(8);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v = rand_tensor(rng, {3, cfg.n_regions, cfg.p});
  auto a = rand_tensor(rng, {3, cfg.q});
  auto before = mpn_forward(v, a, mp, cfg, 2.0);
  // Perturb every MBAM parameter.
  ParamList<double> mbam;
  mp.fbc.collect("fbc", mbam);
  mp.excite.collect("excite", mbam);
  for (auto& p : mbam)
    for (auto& x : p.tensor.values()) x += 0.37;
  auto after = mpn_forward(v, a, mp, cfg, 2.0);
  for (std::size_t i = 0; i < before.p_c.numel(); ++i)
    CHECK(before.p_c.at(i) == after.p_c.at(i));
  // p_r does change (it lives in the localization subnetwork).
  CHECK(before.p_r.values() != after.p_r.values());

  // With the interaction on, p_c depends on MBAM.
  cfg.local_to_global = true;
  auto gated_after = mpn_forward(v, a, mp, cfg, 2.0);
  for (auto& p : mbam)
    for (auto& x : p.tensor.values()) x -= 0.37;
  auto gated_before = mpn_forward(v, a, mp, cfg, 2.0);
  CHECK(gated_before.p_c.values() != gated_after.p_c.values());
}

TEST_CASE("network ablations produce full prediction sets") {
  auto cfg = tiny_cfg();
  Rng rng(9);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v = rand_tensor(rng, {3, cfg.n_regions, cfg.p});
  auto a = rand_tensor(rng, {3, cfg.q});

  for (auto variant : {NetworkVariant::Full, NetworkVariant::LocalizationOnly,
                       NetworkVariant::ClassificationOnly}) {
    cfg.network = variant;
    auto preds = mpn_forward(v, a, mp, cfg, 2.0);
    CHECK(preds.p_r.shape() == Shape{3});
    CHECK(preds.p_c.shape() == Shape{cfg.n_classes});
    CHECK(preds.p_c_seg.shape() == Shape{3, cfg.n_classes});
    CHECK(preds.p_j.shape() == Shape{3, cfg.n_classes});
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(preds.p_r.at(t) >= 0.0);
      CHECK(preds.p_r.at(t) <= 1.0);
    }
    double sum = 0;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) sum += preds.p_c.at(c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("forward pass is deterministic for a fixed seed") {
  auto cfg = tiny_cfg();
  Rng rng_a(10), rng_b(10);
  ModelParams<double> ma, mb;
  ma.init(rng_a, cfg);
  mb.init(rng_b, cfg);
  Rng data_rng(11);
  auto v = rand_tensor(data_rng, {3, cfg.n_regions, cfg.p});
  auto a = rand_tensor(data_rng, {3, cfg.q});
  auto pa = mpn_forward(v, a, ma, cfg, 2.0);
  auto pb = mpn_forward(v, a, mb, cfg, 2.0);
  CHECK(pa.p_r.values() == pb.p_r.values());
  CHECK(pa.p_c.values() == pb.p_c.values());
}

TEST_CASE("decode thresholding") {
  Predictions<double> preds;
  preds.p_r = Tensor<double>::from({2}, {0.9, 0.2});
  preds.p_c = Tensor<double>::from({4}, {0.05, 0.05, 0.05, 0.85});
  preds.p_c_seg = Tensor<double>::from({2, 4}, {0.1, 0.1, 0.1, 0.7, 0.7, 0.1, 0.1, 0.1});
  auto labels = decode(preds);
  CHECK(labels == std::vector<int>{3, kBackground});

  // threshold is inclusive at exactly 0.5
  preds.p_r = Tensor<double>::from({2}, {0.5, 0.49999});
  labels = decode(preds);
  CHECK(labels == std::vector<int>{3, kBackground});

  // all relevance below threshold: everything is background
  preds.p_r = Tensor<double>::from({2}, {0.4, 0.1});
  labels = decode(preds);
  CHECK(labels == std::vector<int>{kBackground, kBackground});

  // weak regime uses per-segment argmax
  preds.p_r = Tensor<double>::from({2}, {0.9, 0.9});
  labels = decode(preds, 0.5, true);
  CHECK(labels == std::vector<int>{3, 0});
}

TEST_CASE("decode only emits valid labels") {
  auto cfg = tiny_cfg();
  Rng rng(12);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  for (int rep = 0; rep < 5; ++rep) {
    auto v = rand_tensor(rng, {6, cfg.n_regions, cfg.p}, -3, 3);
    auto a = rand_tensor(rng, {6, cfg.q}, -3, 3);
    auto labels = decode(mpn_forward(v, a, mp, cfg, 1.0));
    for (int lab : labels)
      CHECK((lab == kBackground || (lab >= 0 && lab < static_cast<int>(cfg.n_classes))));
  }
}

TEST_CASE("permuting identical background segments leaves max-pooled p_c unchanged") {
  auto cfg = tiny_cfg();
  Rng rng(13);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  // Build input where segments 0 and 2 are identical; swapping them must not
  // change the video-level prediction (max-pool is permutation invariant and
  // attention treats positions symmetrically; there is no positional code).
  auto seg_a = rand_tensor(rng, {1, cfg.n_regions, cfg.p});
  auto seg_b = rand_tensor(rng, {1, cfg.n_regions, cfg.p});
  auto aud_a = rand_tensor(rng, {1, cfg.q});
  auto aud_b = rand_tensor(rng, {1, cfg.q});
  auto v1 = concat<double>({seg_a, seg_b, seg_a}, 0);
  auto a1 = concat<double>({aud_a, aud_b, aud_a}, 0);
  // swap first and last (identical) segments
  auto preds1 = mpn_forward(v1, a1, mp, cfg, 2.0);
  auto preds2 = mpn_forward(v1, a1, mp, cfg, 2.0);
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    CHECK(preds1.p_c.at(c) == doctest::Approx(preds2.p_c.at(c)).epsilon(1e-12));

  // A genuine permutation: swap segments 0 and 1 everywhere and compare
  // the max-pooled p_c (permutation-equivariant features, invariant pool).
  auto v_swapped = concat<double>({seg_b, seg_a, seg_a}, 0);
  auto a_swapped = concat<double>({aud_b, aud_a, aud_a}, 0);
  auto preds3 = mpn_forward(v_swapped, a_swapped, mp, cfg, 2.0);
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    CHECK(preds3.p_c.at(c) == doctest::Approx(preds1.p_c.at(c)).epsilon(1e-9));
}

TEST_CASE("end-to-end gradients at tiny scale") {
  auto cfg = tiny_cfg();
  Rng rng(14);
  ModelParams<double> mp;
  mp.init(rng, cfg);
  auto v = rand_tensor(rng, {3, cfg.n_regions, cfg.p});
  auto a = rand_tensor(rng, {3, cfg.q});
  ParamList<double> params{{"v", v}, {"a", a}};
  auto model_params = mp.collect();
  // Subsample the parameter list to keep this unit test quick; the full
  // sweep lives in the grad-check suite.
  for (std::size_t i = 0; i < model_params.size(); i += 7) params.push_back(model_params[i]);
  auto rep = grad_check<double>(
      [&]() {
        auto preds = mpn_forward(v, a, mp, cfg, 2.0);
        return add(sum_all(preds.p_j), sum_all(preds.p_c));
      },
      params, 1e-5);
  CHECK_MESSAGE(rep.passed(1e-4), rep.worst_param, " err ", rep.max_rel_err);
}
