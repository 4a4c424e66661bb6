#include "mpn/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mpn/errors.hpp"

namespace mpn {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint32_t parse_u32(const std::string& key, const std::string& v) {
  const auto x = parse_u64(key, v);
  if (x > 0xFFFFFFFFull) throw ValueError("config: value out of range for " + key);
  return static_cast<std::uint32_t>(x);
}

double parse_f(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ValueError("config: bad boolean for " + key + ": '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.finalize();
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  // dataset
  if (key == "n_videos") dataset.n_videos = parse_u32(key, value);
  else if (key == "n_segments") dataset.n_segments = parse_u32(key, value);
  else if (key == "n_classes") dataset.n_classes = parse_u32(key, value);
  else if (key == "n_regions") dataset.n_regions = parse_u32(key, value);
  else if (key == "p") dataset.p = parse_u32(key, value);
  else if (key == "q") dataset.q = parse_u32(key, value);
  else if (key == "min_event_len") dataset.min_event_len = parse_u32(key, value);
  else if (key == "noise_sigma") dataset.noise_sigma = static_cast<float>(parse_f(key, value));
  else if (key == "signal_gain") dataset.signal_gain = static_cast<float>(parse_f(key, value));
  else if (key == "seed") {
    dataset.seed = parse_u64(key, value);
    train.seed = dataset.seed;
  }
  // attention
  else if (key == "d_model") model.attention.d_model = parse_u32(key, value);
  else if (key == "n_heads") model.attention.n_heads = parse_u32(key, value);
  else if (key == "d_k") model.attention.d_k = parse_u32(key, value);
  else if (key == "d_v") model.attention.d_v = parse_u32(key, value);
  else if (key == "ff_hidden") model.attention.ff_hidden = parse_u32(key, value);
  else if (key == "n_mcm") model.attention.n_mcm = parse_u32(key, value);
  // mbam
  else if (key == "fbc_rank") model.fbc.r = parse_u32(key, value);
  else if (key == "fbc_atoms") {
    model.fbc.k = parse_u32(key, value);
    model.attention.d_model = model.fbc.k;
  }
  else if (key == "lasso_lambda") model.fbc.lasso_lambda = parse_f(key, value);
  // heads
  else if (key == "agva_hidden") model.agva_hidden = parse_u32(key, value);
  else if (key == "cls_hidden") model.cls_hidden = parse_u32(key, value);
  else if (key == "rel_hidden") model.rel_hidden = parse_u32(key, value);
  // ablation flags
  else if (key == "network") model.network = network_variant_from_string(value);
  else if (key == "mcm_variant") model.mcm_variant = mcm_variant_from_string(value);
  else if (key == "squeeze") model.squeeze = squeeze_variant_from_string(value);
  else if (key == "local_to_global") model.local_to_global = parse_bool(key, value);
  // training
  else if (key == "loss_lambda") train.loss_lambda = parse_f(key, value);
  else if (key == "learning_rate") train.learning_rate = parse_f(key, value);
  else if (key == "epochs") train.epochs = static_cast<int>(parse_u32(key, value));
  else if (key == "batch_size") train.batch_size = parse_u32(key, value);
  else if (key == "regime") train.regime = regime_from_string(value);
  else if (key == "tau_start") train.schedule.tau_start = parse_f(key, value);
  else if (key == "tau_end") train.schedule.tau_end = parse_f(key, value);
  else if (key == "anneal_epochs") train.schedule.anneal_epochs = static_cast<int>(parse_u32(key, value));
  else if (key == "decode_threshold") train.decode_threshold = parse_f(key, value);
  else if (key == "beta1") train.beta1 = parse_f(key, value);
  else if (key == "beta2") train.beta2 = parse_f(key, value);
  else if (key == "adam_eps") train.adam_eps = parse_f(key, value);
  else throw ValueError("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: missing '=' at " + path + ":" + std::to_string(lineno));
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::finalize() {
  // MPN_SEED is a global fallback when no seed was given explicitly.
  if (const char* env = std::getenv("MPN_SEED"); env && dataset.seed == 1 && train.seed == 1) {
    dataset.seed = parse_u64("MPN_SEED", env);
    train.seed = dataset.seed;
  }
  model.p = dataset.p;
  model.q = dataset.q;
  model.n_regions = dataset.n_regions;
  model.n_classes = dataset.n_classes;
  model.fbc.p = dataset.p;
  model.fbc.q = dataset.q;
  dataset.validate();
  model.validate();
  train.validate();
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "n_videos=" << dataset.n_videos << '\n'
     << "n_segments=" << dataset.n_segments << '\n'
     << "n_classes=" << dataset.n_classes << '\n'
     << "n_regions=" << dataset.n_regions << '\n'
     << "p=" << dataset.p << '\n'
     << "q=" << dataset.q << '\n'
     << "min_event_len=" << dataset.min_event_len << '\n'
     << "noise_sigma=" << dataset.noise_sigma << '\n'
     << "signal_gain=" << dataset.signal_gain << '\n'
     << "seed=" << dataset.seed << '\n'
     << "d_model=" << model.attention.d_model << '\n'
     << "n_heads=" << model.attention.n_heads << '\n'
     << "d_k=" << model.attention.d_k << '\n'
     << "d_v=" << model.attention.d_v << '\n'
     << "ff_hidden=" << model.attention.ff_hidden << '\n'
     << "n_mcm=" << model.attention.n_mcm << '\n'
     << "fbc_rank=" << model.fbc.r << '\n'
     << "fbc_atoms=" << model.fbc.k << '\n'
     << "lasso_lambda=" << model.fbc.lasso_lambda << '\n'
     << "agva_hidden=" << model.agva_hidden << '\n'
     << "cls_hidden=" << model.cls_hidden << '\n'
     << "rel_hidden=" << model.rel_hidden << '\n'
     << "network=" << to_string(model.network) << '\n'
     << "mcm_variant=" << to_string(model.mcm_variant) << '\n'
     << "squeeze=" << to_string(model.squeeze) << '\n'
     << "local_to_global=" << (model.local_to_global ? "true" : "false") << '\n'
     << "loss_lambda=" << train.loss_lambda << '\n'
     << "learning_rate=" << train.learning_rate << '\n'
     << "epochs=" << train.epochs << '\n'
     << "batch_size=" << train.batch_size << '\n'
     << "regime=" << to_string(train.regime) << '\n'
     << "tau_start=" << train.schedule.tau_start << '\n'
     << "tau_end=" << train.schedule.tau_end << '\n'
     << "anneal_epochs=" << train.schedule.anneal_epochs << '\n'
     << "decode_threshold=" << train.decode_threshold << '\n'
     << "beta1=" << train.beta1 << '\n'
     << "beta2=" << train.beta2 << '\n'
     << "adam_eps=" << train.adam_eps << '\n';
  return os.str();
}

}  // namespace mpn
