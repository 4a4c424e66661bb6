// Acceptance gate: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria 4-6 train real models and dominate the runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "mpn/check_suite.hpp"
#include "mpn/config.hpp"
#include "mpn/train.hpp"

using namespace mpn;

namespace {

int n_failed = 0;

void report(int idx, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << idx << " (" << name << "): "
            << detail << "\n"
            << std::flush;
  if (!pass) ++n_failed;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void criterion_1_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  auto checks = run_check_suite(7);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_block = "-";
  bool end_to_end_seen = false;
  for (const auto& c : checks) {
    if (c.report.max_rel_err > worst) {
      worst = c.report.max_rel_err;
      worst_block = c.name;
    }
    end_to_end_seen = end_to_end_seen || c.name == "end-to-end";
  }
  std::ostringstream d;
  d << checks.size() << " blocks, worst rel err " << std::scientific << std::setprecision(2)
    << worst << " (" << worst_block << "), " << std::fixed << std::setprecision(1) << elapsed
    << "s";
  report(1, "gradient suite", end_to_end_seen && worst < 1e-4 && elapsed < 60.0, d.str());
}

// Independent brute-force bilinear-coding evaluation: builds the pooling
// matrix explicitly and accumulates in the same index order as the library.
template <class S>
std::vector<S> squeeze_brute_force(const std::vector<S>& fv, const std::vector<S>& fa,
                                   const std::vector<S>& u, const std::vector<S>& v,
                                   std::size_t t_len, const FbcConfig& cfg) {
  std::vector<S> out(t_len * cfg.k, S(0));
  const std::size_t rk = cfg.r * cfg.k;
  const S thr = static_cast<S>(cfg.lasso_lambda / 2.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t kk = 0; kk < cfg.k; ++kk) {
      S acc = S(0);
      for (std::size_t m = kk * cfg.r; m < (kk + 1) * cfg.r; ++m) {
        S uv = S(0), vv = S(0);
        for (std::size_t i = 0; i < cfg.p; ++i) uv += fv[t * cfg.p + i] * u[i * rk + m];
        for (std::size_t i = 0; i < cfg.q; ++i) vv += fa[t * cfg.q + i] * v[i * rk + m];
        acc += uv * vv;
      }
      S y;
      if (acc > thr) y = acc - thr;
      else if (acc < -thr) y = acc + thr;
      else y = S(0);
      out[t * cfg.k + kk] = y;
    }
  }
  return out;
}

void criterion_2_oracles() {
  // (a) squeeze vs brute force, 32-bit exact, 25 instances
  FbcConfig fcfg;
  fcfg.p = 7;
  fcfg.q = 5;
  fcfg.r = 3;
  fcfg.k = 4;
  fcfg.lasso_lambda = 0.05;
  int fbc_exact = 0;
  const int n_inst = 25;
  for (int inst = 0; inst < n_inst; ++inst) {
    Rng rng(100 + inst);
    auto rnd = [&rng](Shape s) {
      std::vector<float> v(shape_numel(s));
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
      return Tensor<float>::from(std::move(s), std::move(v));
    };
    auto fv = rnd({4, fcfg.p});
    auto fa = rnd({4, fcfg.q});
    FbcParams<float> fp;
    Rng prng(200 + inst);
    fp.init(prng, fcfg);
    auto got = fbc_squeeze(fv, fa, fp, fcfg);
    auto want = squeeze_brute_force<float>(fv.values(), fa.values(), fp.u_tilde.values(),
                                           fp.v_tilde.values(), 4, fcfg);
    if (got.values() == want) ++fbc_exact;
  }

  // (b) single-head attention vs a hand-unrolled forward pass
  AttentionConfig acfg;
  acfg.d_model = 4;
  acfg.n_heads = 1;
  acfg.d_k = 4;
  acfg.d_v = 4;
  acfg.ff_hidden = 4;
  acfg.n_mcm = 1;
  Rng rng(55);
  BlockParams<double> bp;
  bp.init(rng, acfg, acfg.d_model);
  std::vector<double> xd(3 * 4);
  for (auto& v : xd) v = rng.uniform(-1.0, 1.0);
  auto x = Tensor<double>::from({3, 4}, xd);
  const double tau = 2.5;
  auto got = attention_block(x, x, bp, acfg, tau);

  // hand evaluation
  const std::size_t T = 3, D = 4;
  auto matvec = [&](const Tensor<double>& w, const std::vector<double>& in,
                    std::size_t n_in, std::size_t n_out) {
    std::vector<double> out(n_out, 0.0);
    for (std::size_t j = 0; j < n_out; ++j)
      for (std::size_t i = 0; i < n_in; ++i) out[j] += in[i] * w.values()[i * n_out + j];
    return out;
  };
  std::vector<std::vector<double>> q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> row(xd.begin() + t * D, xd.begin() + (t + 1) * D);
    q[t] = matvec(bp.wq, row, D, D);
    k[t] = matvec(bp.wk, row, D, D);
    v[t] = matvec(bp.wv, row, D, D);
  }
  auto ln = [&](std::vector<double> row, const Tensor<double>& g, const Tensor<double>& b) {
    double mean = 0;
    for (double x_ : row) mean += x_;
    mean /= static_cast<double>(row.size());
    double var = 0;
    for (double x_ : row) var += (x_ - mean) * (x_ - mean);
    var /= static_cast<double>(row.size());
    const double rstd = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = (row[i] - mean) * rstd * g.at(i) + b.at(i);
    return row;
  };
  double max_rel = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> scores(T, 0.0);
    for (std::size_t s = 0; s < T; ++s) {
      for (std::size_t i = 0; i < D; ++i) scores[s] += q[t][i] * k[s][i];
      scores[s] /= std::sqrt(static_cast<double>(acfg.d_k));
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double denom = 0;
    std::vector<double> w(T);
    for (std::size_t s = 0; s < T; ++s) denom += w[s] = std::exp((scores[s] - mx) / tau);
    std::vector<double> head(D, 0.0);
    for (std::size_t s = 0; s < T; ++s)
      for (std::size_t i = 0; i < D; ++i) head[i] += (w[s] / denom) * v[s][i];
    auto att = matvec(bp.wo, head, D, D);
    // residual + norm, feed-forward, residual + norm
    std::vector<double> res(D);
    for (std::size_t i = 0; i < D; ++i) res[i] = att[i] + x.at(t * D + i);
    auto y = ln(res, bp.ln1_g, bp.ln1_b);
    auto h1 = matvec(bp.ff1.w, y, D, acfg.ff_hidden);
    for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = std::max(0.0, h1[i] + bp.ff1.b.at(i));
    auto h2 = matvec(bp.ff2.w, h1, acfg.ff_hidden, D);
    for (std::size_t i = 0; i < D; ++i) h2[i] += bp.ff2.b.at(i) + y[i];
    auto z = ln(h2, bp.ln2_g, bp.ln2_b);
    for (std::size_t i = 0; i < D; ++i) {
      const double a = got.at(t * D + i), b = z[i];
      max_rel = std::max(max_rel, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}));
    }
  }

  std::ostringstream d;
  d << "squeeze exact on " << fbc_exact << "/" << n_inst
    << " instances; attention oracle rel err " << std::scientific << std::setprecision(2)
    << max_rel;
  report(2, "oracle equivalence", fbc_exact == n_inst && max_rel < 1e-5, d.str());
}

void criterion_3_temperature() {
  TemperatureSchedule sched;
  bool ok = tau_at(sched, 0) == 30.0 && tau_at(sched, 10) == 1.0 && tau_at(sched, 10'000) == 1.0;

  double worst_ratio = 1.0;
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> logits(6);
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    auto s = softmax_t(Tensor<double>::from({6}, logits), 30.0, 0);
    double lo = 1.0, hi = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      lo = std::min(lo, s.at(i));
      hi = std::max(hi, s.at(i));
    }
    worst_ratio = std::max(worst_ratio, hi / lo);
  }
  ok = ok && worst_ratio <= std::exp(0.2) + 1e-6;
  std::ostringstream d;
  d << "tau endpoints exact; worst max/min ratio " << std::setprecision(6) << worst_ratio
    << " (bound " << std::exp(0.2) << ")";
  report(3, "temperature properties", ok, d.str());
}

struct DeskRun {
  double test_acc = 0.0;
  double seconds = 0.0;
  int epochs_ran = 0;
  Dataset ds;
};

DeskRun desk_run(Regime regime) {
  RunConfig cfg;
  cfg.set("seed", "1");
  cfg.set("regime", to_string(regime));
  cfg.finalize();

  DeskRun out;
  out.ds = generate(cfg.dataset);
  Rng rng(cfg.train.seed);
  ModelParams<float> params;
  params.init(rng, cfg.model);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(params, cfg.model, out.ds, cfg.train);
  out.seconds = seconds_since(t0);
  out.epochs_ran = static_cast<int>(result.reports.size());
  const double tau = cfg.train.schedule.tau_end;
  out.test_acc = evaluate(params, cfg.model, out.ds, out.ds.splits.test, tau, regime,
                          cfg.train.decode_threshold);
  return out;
}

void criterion_4_supervised() {
  auto run = desk_run(Regime::Full);
  const double baseline = nearest_prototype_accuracy(run.ds, run.ds.splits.test);
  const bool ok = run.test_acc >= 0.90 && run.seconds < 900.0 && run.epochs_ran <= 200 &&
                  baseline < run.test_acc;
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "test acc " << run.test_acc << " in "
    << run.epochs_ran << " epochs / " << std::setprecision(0) << run.seconds
    << "s; nearest-prototype baseline " << std::setprecision(4) << baseline;
  report(4, "supervised desk-scale run", ok, d.str());
}

void criterion_5_weak() {
  auto run = desk_run(Regime::Weak);
  // majority baseline: predict background everywhere
  std::size_t bg = 0, total = 0;
  for (auto id : run.ds.splits.test) {
    for (int lab : run.ds.by_id(id).segment_labels) {
      bg += lab == kBackground;
      ++total;
    }
  }
  const double baseline = static_cast<double>(bg) / static_cast<double>(total);
  const bool ok = run.test_acc >= baseline + 0.15;
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "weak test acc " << run.test_acc
    << " vs all-background baseline " << baseline << " (+15pt bound " << baseline + 0.15
    << "), " << run.epochs_ran << " epochs / " << std::setprecision(0) << run.seconds << "s";
  report(5, "weakly supervised desk-scale run", ok, d.str());
}

double ablation_run(const RunConfig& base, const std::string& key, const std::string& value,
                    std::uint64_t seed, const Dataset& ds) {
  auto cfg = base;
  cfg.set(key, value);
  cfg.set("seed", std::to_string(seed));
  cfg.dataset = ds.spec;  // the bundle's spec wins; seed only drives init/shuffle
  cfg.train.seed = seed;
  cfg.finalize();
  Rng rng(seed);
  ModelParams<float> params;
  params.init(rng, cfg.model);
  auto result = train(params, cfg.model, ds, cfg.train);
  (void)result;
  return evaluate(params, cfg.model, ds, ds.splits.test, cfg.train.schedule.tau_end,
                  cfg.train.regime, cfg.train.decode_threshold);
}

void criterion_6_ablation() {
  // Scaled-down sweep so 21 training runs stay within the time budget. This
  // is a stochastic, averaged ordering check, not an exact-gap reproduction;
  // waiver: orderings can flip for unlucky seeds, which is why three seeds
  // are averaged and the criterion is labelled soft.
  RunConfig base;
  base.set("n_videos", "256");
  base.set("n_segments", "8");
  base.set("p", "16");
  base.set("q", "8");
  base.set("n_regions", "2");
  base.set("fbc_atoms", "16");
  base.set("fbc_rank", "2");
  base.set("d_k", "8");
  base.set("d_v", "8");
  base.set("n_heads", "2");
  base.set("ff_hidden", "16");
  base.set("n_mcm", "1");
  base.set("agva_hidden", "16");
  base.set("cls_hidden", "16");
  base.set("rel_hidden", "8");
  base.set("lasso_lambda", "0.01");
  base.set("noise_sigma", "1.0");
  base.set("epochs", "60");
  base.set("learning_rate", "0.001");
  base.finalize();
  auto ds = generate(base.dataset);

  const std::vector<std::uint64_t> seeds = {11, 22, 33};
  auto avg = [&](const std::string& key, const std::string& value) {
    double sum = 0;
    for (auto s : seeds) sum += ablation_run(base, key, value, s, ds);
    return sum / static_cast<double>(seeds.size());
  };

  const double full = avg("network", "two-subnetworks");
  const double cls_only = avg("network", "classification");
  const double loc_only = avg("network", "localization");
  const double fbc = avg("squeeze", "fbc");
  const double cat = avg("squeeze", "concat");
  const double prod = avg("squeeze", "product");
  const double addn = avg("squeeze", "addition");

  const bool network_ok = full >= cls_only && full >= loc_only;
  const bool squeeze_ok = fbc >= cat && fbc >= prod && fbc >= addn;
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "network: full " << full << " vs cls "
    << cls_only << " / loc " << loc_only << "; squeeze: fbc " << fbc << " vs concat " << cat
    << " / product " << prod << " / addition " << addn
    << " [soft criterion: 3-seed average, ordering only]";
  report(6, "ablation directionality", network_ok && squeeze_ok, d.str());
}

void criterion_7_invariants() {
  std::vector<std::string> failures;

  // attention rows sum to 1
  {
    Rng rng(3);
    std::vector<double> l(12);
    for (auto& v : l) v = rng.uniform(-4.0, 4.0);
    auto s = softmax_t(Tensor<double>::from({3, 4}, l), 1.7, 1);
    for (std::size_t t = 0; t < 3; ++t) {
      double sum = 0;
      for (std::size_t j = 0; j < 4; ++j) sum += s.at(t * 4 + j);
      if (std::abs(sum - 1.0) > 1e-9) failures.push_back("attention row sums");
    }
  }

  // p_r = p_r_a * p_r_v on a real forward pass
  ModelConfig mc;
  mc.p = 6;
  mc.q = 4;
  mc.n_regions = 2;
  mc.n_classes = 3;
  mc.agva_hidden = 8;
  mc.cls_hidden = 8;
  mc.rel_hidden = 4;
  mc.attention.d_model = 8;
  mc.attention.n_heads = 2;
  mc.attention.d_k = 4;
  mc.attention.d_v = 4;
  mc.attention.ff_hidden = 8;
  mc.attention.n_mcm = 1;
  mc.fbc.p = 6;
  mc.fbc.q = 4;
  mc.fbc.r = 2;
  mc.fbc.k = 8;
  {
    Rng rng(17);
    ModelParams<double> mp;
    mp.init(rng, mc);
    std::vector<double> vd(4 * 2 * 6), ad(4 * 4);
    for (auto& x : vd) x = rng.uniform(-1.0, 1.0);
    for (auto& x : ad) x = rng.uniform(-1.0, 1.0);
    auto preds = mpn_forward(Tensor<double>::from({4, 2, 6}, vd),
                             Tensor<double>::from({4, 4}, ad), mp, mc, 2.0);
    for (std::size_t t = 0; t < 4; ++t)
      if (std::abs(preds.p_r.at(t) - preds.p_r_a.at(t) * preds.p_r_v.at(t)) > 1e-12)
        failures.push_back("p_r factorization");
  }

  // inclusive decode threshold
  {
    Predictions<double> preds;
    preds.p_r = Tensor<double>::from({2}, {0.5, std::nextafter(0.5, 0.0)});
    preds.p_c = Tensor<double>::from({2}, {0.9, 0.1});
    preds.p_c_seg = Tensor<double>::from({2, 2}, {0.9, 0.1, 0.9, 0.1});
    auto labels = decode(preds);
    if (labels != std::vector<int>{0, kBackground}) failures.push_back("decode threshold");
  }

  // soft-threshold identity at lambda=0 and sparsity monotone in lambda
  {
    Rng rng(23);
    std::vector<double> xd(40);
    for (auto& v : xd) v = rng.uniform(-1.0, 1.0);
    auto x = Tensor<double>::from({40}, xd);
    if (soft_threshold(x, 0.0).values() != xd) failures.push_back("lambda=0 identity");
    std::size_t prev_nonzero = 41;
    for (double lam : {0.0, 0.05, 0.2, 0.5, 1.5}) {
      auto y = soft_threshold(x, lam / 2.0);
      std::size_t nz = 0;
      for (std::size_t i = 0; i < y.numel(); ++i) nz += y.at(i) != 0.0;
      if (nz > prev_nonzero) failures.push_back("sparsity monotonicity");
      prev_nonzero = nz;
    }
  }

  // MPNF round trip bit-exact
  {
    DatasetSpec spec;
    spec.n_videos = 16;
    spec.n_segments = 5;
    spec.n_classes = 3;
    spec.n_regions = 2;
    spec.p = 6;
    spec.q = 4;
    spec.seed = 77;
    auto ds = generate(spec);
    const std::string path = "acceptance_roundtrip.mpnf";
    write_bundle(ds, path);
    auto back = read_bundle(path);
    std::remove(path.c_str());
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      if (back.samples[i].visual != ds.samples[i].visual ||
          back.samples[i].audio != ds.samples[i].audio ||
          back.samples[i].segment_labels != ds.samples[i].segment_labels) {
        failures.push_back("bundle round trip");
        break;
      }
  }

  // seeded determinism across two complete training runs
  {
    DatasetSpec spec;
    spec.n_videos = 20;
    spec.n_segments = 5;
    spec.n_classes = 2;
    spec.n_regions = 2;
    spec.p = 6;
    spec.q = 4;
    spec.seed = 31;
    auto ds = generate(spec);
    ModelConfig cfg = mc;
    cfg.n_classes = 2;
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 31;
    auto run = [&]() {
      Rng rng(31);
      ModelParams<float> mp;
      mp.init(rng, cfg);
      train(mp, cfg, ds, tc);
      std::vector<std::vector<float>> vals;
      for (const auto& p : mp.collect()) vals.push_back(p.tensor.values());
      return vals;
    };
    if (run() != run()) failures.push_back("seeded training determinism");
  }

  std::ostringstream d;
  if (failures.empty()) {
    d << "row sums, p_r factorization, inclusive threshold, shrinkage identity/monotonicity, "
         "bundle round trip, seeded determinism";
  } else {
    for (const auto& f : failures) d << f << "; ";
  }
  report(7, "invariant suites", failures.empty(), d.str());
}

void criterion_8_loss_arithmetic() {
  Predictions<double> preds;
  preds.p_r = Tensor<double>::from({4}, {0.9, 0.8, 0.3, 0.1});
  preds.p_c = Tensor<double>::from({3}, {0.2, 0.5, 0.3});
  std::vector<int> seg = {1, 1, kBackground, kBackground};
  const double bce = -(std::log(0.9) + std::log(0.8) + std::log(0.7) + std::log(0.9)) / 4.0;
  const double ce = -std::log(0.5);
  const double want = 0.6 * bce + 0.4 * ce;
  const double got = full_loss(preds, seg, 1, 0.6).item();
  const bool full_ok = std::abs(got - want) < 1e-6;

  // an uninformative prediction of 1/2 in every class costs ln 2 per class
  auto half = Tensor<double>::from({4}, {0.5, 0.5, 0.5, 0.5});
  const double weak_half = weak_loss(half, 2).item();
  auto uniform2 = Tensor<double>::from({2}, {0.5, 0.5});
  const bool weak_ok = std::abs(weak_half - std::log(2.0)) < 1e-6 &&
                       std::abs(weak_loss(uniform2, 0).item() - std::log(2.0)) < 1e-6;

  std::ostringstream d;
  d << std::setprecision(10) << "full_loss " << got << " vs oracle " << want
    << "; weak_loss(1/2,...) " << weak_half << " vs ln2 " << std::log(2.0);
  report(8, "loss arithmetic", full_ok && weak_ok, d.str());
}

}  // namespace

int main() {
  criterion_1_gradients();
  criterion_2_oracles();
  criterion_3_temperature();
  criterion_8_loss_arithmetic();
  criterion_7_invariants();
  criterion_6_ablation();
  criterion_4_supervised();
  criterion_5_weak();
  if (n_failed) {
    std::cout << n_failed << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all acceptance criteria passed\n";
  return 0;
}
