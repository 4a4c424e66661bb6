#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "mpn/data.hpp"
#include "mpn/errors.hpp"
#include "mpn/model.hpp"
#include "mpn/rng.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

enum class Regime { Full, Weak };

inline Regime regime_from_string(const std::string& s) {
  if (s == "full") return Regime::Full;
  if (s == "weak") return Regime::Weak;
  throw ValueError("unknown regime: " + s);
}

inline std::string to_string(Regime r) { return r == Regime::Full ? "full" : "weak"; }

struct TrainConfig {
  double loss_lambda = 0.6;
  double learning_rate = 0.0002;
  int epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  TemperatureSchedule schedule;
  Regime regime = Regime::Full;
  double decode_threshold = 0.5;

  void validate() const {
    if (loss_lambda < 0.0 || loss_lambda > 1.0) throw ValueError("loss_lambda outside [0,1]");
    if (learning_rate <= 0.0) throw ValueError("learning_rate must be positive");
    if (epochs < 1 || batch_size < 1) throw ValueError("epochs and batch_size must be >= 1");
  }
};

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  double tau = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

inline constexpr double kProbClamp = 1e-7;

// Binary cross entropy, mean over entries; probabilities clamped away from
// {0,1} since the product of sigmoids can round to 0.
template <class S>
Tensor<S> bce_loss(const Tensor<S>& probs, const Tensor<S>& targets) {
  auto p = clamp(probs, static_cast<S>(kProbClamp), static_cast<S>(1.0 - kProbClamp));
  auto ones = Tensor<S>::constant(p.shape(), S(1));
  auto pos = mul(targets, log_op(p));
  auto negt = mul(sub(ones, targets), log_op(sub(ones, p)));
  return neg(mean_all(add(pos, negt)));
}

// Cross entropy of a categorical distribution against a single class index.
template <class S>
Tensor<S> ce_loss(const Tensor<S>& p_c, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= p_c.numel())
    throw ValueError("ce_loss: label " + std::to_string(label) + " out of range");
  auto flat = reshape(p_c, Shape{p_c.numel()});
  auto picked = slice(flat, 0, static_cast<std::size_t>(label), 1);
  auto p = clamp(picked, static_cast<S>(kProbClamp), static_cast<S>(1.0 - kProbClamp));
  return neg(log_op(p));
}

// L = lambda * BCE(p_r, r) + (1 - lambda) * CE(p_c, y_video), with
// r_t = 1 iff segment t is not background. Requires segment labels.
template <class S>
Tensor<S> full_loss(const Predictions<S>& preds, const std::vector<int>& segment_labels,
                    int video_label, double lambda) {
  if (segment_labels.size() != preds.p_r.numel())
    throw ValueError("full_loss: need one segment label per segment");
  std::vector<S> r(segment_labels.size());
  for (std::size_t t = 0; t < r.size(); ++t)
    r[t] = segment_labels[t] == kBackground ? S(0) : S(1);
  const Shape tshape{r.size()};
  auto targets = Tensor<S>::from(tshape, std::move(r));
  auto bce = bce_loss(preds.p_r, targets);
  auto ce = ce_loss(preds.p_c, video_label);
  return add(scale(bce, static_cast<S>(lambda)), scale(ce, static_cast<S>(1.0 - lambda)));
}

// MIL pooling: mean over segments per class.
template <class S>
Tensor<S> mil_pool(const Tensor<S>& p_j) {
  if (p_j.ndim() != 2) throw ShapeError("mil_pool: expected [T x C], got " + shape_str(p_j.shape()));
  return mean_axis(p_j, 0);
}

// Multi-label soft margin loss over MIL-pooled class probabilities.
template <class S>
Tensor<S> weak_loss(const Tensor<S>& p_video, int video_label) {
  std::vector<S> y(p_video.numel(), S(0));
  y.at(static_cast<std::size_t>(video_label)) = S(1);
  const Shape tshape{y.size()};
  auto targets = Tensor<S>::from(tshape, std::move(y));
  return bce_loss(p_video, targets);
}

// --------------------------------------------------------------------------
// Optimizer: adaptive moments with bias correction.

template <class S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  long step = 0;

  void reset(const ParamList<S>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), S(0));
      v.emplace_back(p.tensor.numel(), S(0));
    }
    step = 0;
  }
};

template <class S>
void adamlike_step(ParamList<S>& params, AdamState<S>& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size()) state.reset(params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].tensor.values();
    const auto& g = params[pi].tensor.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi))
        throw NumericError("non-finite gradient in " + params[pi].name + "[" +
                           std::to_string(i) + "]");
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      vals[i] -= static_cast<S>(cfg.learning_rate * (mi / bc1) /
                                (std::sqrt(vi / bc2) + cfg.adam_eps));
    }
  }
}

// --------------------------------------------------------------------------

inline double overall_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw ValueError("overall_accuracy: length mismatch " + std::to_string(pred.size()) +
                     " vs " + std::to_string(truth.size()));
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <class S>
Tensor<S> visual_tensor(const VideoSample& s, const DatasetSpec& spec) {
  std::vector<S> v(s.visual.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(s.visual[i]);
  return Tensor<S>::from({spec.n_segments, spec.n_regions, spec.p}, std::move(v));
}

template <class S>
Tensor<S> audio_tensor(const VideoSample& s, const DatasetSpec& spec) {
  std::vector<S> a(s.audio.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<S>(s.audio[i]);
  return Tensor<S>::from({spec.n_segments, spec.q}, std::move(a));
}

// Segment accuracy of the decoded predictions over the given split.
template <class S>
double evaluate(const ModelParams<S>& params, const ModelConfig& cfg, const Dataset& ds,
                const std::vector<std::uint32_t>& ids, double tau, Regime regime,
                double threshold = 0.5) {
  NoGradGuard inference;
  std::size_t hits = 0, total = 0;
  for (auto id : ids) {
    const VideoSample& s = ds.by_id(id);
    auto preds = mpn_forward(visual_tensor<S>(s, ds.spec), audio_tensor<S>(s, ds.spec), params,
                             cfg, static_cast<S>(tau));
    auto labels = decode(preds, threshold, regime == Regime::Weak);
    for (std::size_t t = 0; t < labels.size(); ++t) {
      hits += labels[t] == s.segment_labels[t];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

struct TrainResult {
  std::vector<EpochReport> reports;
  double best_val_accuracy = 0.0;
  int best_epoch = -1;
};

// Train in place. Keeps the parameters from the epoch with the best
// validation segment accuracy. `on_epoch`, when set, is called after each
// epoch (report streaming).
template <class S>
TrainResult train(ModelParams<S>& params, const ModelConfig& model_cfg, const Dataset& ds,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochReport&)>& on_epoch = nullptr) {
  cfg.validate();
  if (ds.splits.train.empty()) throw DataError("train: empty training split");
  auto plist = params.collect();
  AdamState<S> state;
  state.reset(plist);
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x7EA1));

  std::vector<std::vector<S>> best_vals;
  TrainResult result;

  std::vector<std::uint32_t> order = ds.splits.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double tau = tau_at(cfg.schedule, epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor<S> batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const VideoSample& s = ds.by_id(order[i]);
        auto preds = mpn_forward(visual_tensor<S>(s, ds.spec), audio_tensor<S>(s, ds.spec),
                                 params, model_cfg, static_cast<S>(tau));
        Tensor<S> loss;
        if (cfg.regime == Regime::Full) {
          loss = full_loss(preds, s.segment_labels, s.video_label, cfg.loss_lambda);
        } else {
          loss = weak_loss(mil_pool(preds.p_j), s.video_label);
        }
        batch_loss = batch_loss.valid() ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, S(1) / static_cast<S>(end - start));
      const double lv = static_cast<double>(batch_loss.item());
      if (!std::isfinite(lv))
        throw NumericError("NaN loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(n_batches));
      for (auto& p : plist) p.tensor.zero_grad();
      backward(batch_loss);
      adamlike_step(plist, state, cfg);
      epoch_loss += lv;
      ++n_batches;
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(1, n_batches));
    rep.tau = tau;
    rep.val_accuracy = evaluate(params, model_cfg, ds, ds.splits.val, tau, cfg.regime,
                                cfg.decode_threshold);
    rep.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.reports.push_back(rep);
    if (on_epoch) on_epoch(rep);

    if (rep.val_accuracy > result.best_val_accuracy || result.best_epoch < 0) {
      result.best_val_accuracy = rep.val_accuracy;
      result.best_epoch = epoch;
      best_vals.clear();
      for (const auto& p : plist) best_vals.push_back(p.tensor.values());
    }
  }
  // Restore the best-validation checkpoint.
  for (std::size_t i = 0; i < plist.size(); ++i) plist[i].tensor.values() = best_vals[i];
  return result;
}

// --------------------------------------------------------------------------
// Parameter file: magic "MPNP", version, config echo, named tensors as f32.

template <class S>
void save_params(const ParamList<S>& params, const std::string& config_echo,
                 const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("MPNP", 4);
  auto put_u32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(config_echo.size()));
  os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(static_cast<std::uint32_t>(p.tensor.ndim()));
    for (auto d : p.tensor.shape()) put_u32(static_cast<std::uint32_t>(d));
    for (const S v : p.tensor.values()) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw DataError("write failure on " + path);
}

// Loads values into an already-constructed parameter list; names and shapes
// must match. Returns the embedded config echo.
template <class S>
std::string load_params(ParamList<S>& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "MPNP", 4) != 0)
    throw DataError("bad magic in " + path + " (not an MPNP parameter file)");
  auto get_u32 = [&is, &path]() {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (is.gcount() != 4) throw DataError("truncated parameter file " + path);
    return v;
  };
  const auto version = get_u32();
  if (version != 1) throw DataError("unsupported MPNP version " + std::to_string(version));
  std::string echo(get_u32(), '\0');
  is.read(echo.data(), static_cast<std::streamsize>(echo.size()));
  const auto count = get_u32();
  if (count != params.size())
    throw DataError("parameter count mismatch: file has " + std::to_string(count) +
                    ", model needs " + std::to_string(params.size()));
  for (auto& p : params) {
    std::string name(get_u32(), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != p.name) throw DataError("parameter name mismatch: " + name + " vs " + p.name);
    const auto ndim = get_u32();
    Shape shape(ndim);
    for (auto& d : shape) d = get_u32();
    if (shape != p.tensor.shape())
      throw DataError("parameter shape mismatch for " + name);
    for (auto& v : p.tensor.values()) {
      float f;
      is.read(reinterpret_cast<char*>(&f), 4);
      if (is.gcount() != 4) throw DataError("truncated parameter file " + path);
      v = static_cast<S>(f);
    }
  }
  return echo;
}

}  // namespace mpn
