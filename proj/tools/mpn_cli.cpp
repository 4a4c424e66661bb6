// Command line front end: dataset generation, training, evaluation,
// ablation sweeps and gradient verification.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpn/check_suite.hpp"
#include "mpn/config.hpp"
#include "mpn/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "key=value config file");
  cmd->add_option("--set", opts.overrides, "override a single key (key=value), repeatable");
}

// Precedence: --set > --config > defaults.
mpn::RunConfig make_config(const CommonOpts& opts) {
  mpn::RunConfig cfg;
  if (!opts.config_file.empty()) cfg.load_file(opts.config_file);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw mpn::ValueError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.finalize();
  return cfg;
}

const std::vector<std::uint32_t>& pick_split(const mpn::Dataset& ds, const std::string& name) {
  if (name == "train") return ds.splits.train;
  if (name == "val") return ds.splits.val;
  if (name == "test") return ds.splits.test;
  throw mpn::ValueError("unknown split '" + name + "' (want train, val or test)");
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out) {
  auto cfg = make_config(opts);
  auto ds = mpn::generate(cfg.dataset);
  mpn::write_bundle(ds, out);
  mpn::write_manifest(ds.splits, out + ".splits.tsv");
  std::cout << "wrote " << out << ": " << ds.samples.size() << " videos, "
            << mpn::bundle_size_bytes(cfg.dataset) << " bytes\n"
            << "splits: " << ds.splits.train.size() << " train, " << ds.splits.val.size()
            << " val, " << ds.splits.test.size() << " test\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& opts, const std::string& data_path, const std::string& out,
              bool quiet) {
  auto cfg = make_config(opts);
  auto ds = mpn::read_bundle(data_path);
  cfg.dataset = ds.spec;
  cfg.finalize();

  mpn::Rng rng(cfg.train.seed);
  mpn::ModelParams<float> params;
  params.init(rng, cfg.model);

  auto on_epoch = [&](const mpn::EpochReport& r) {
    if (quiet) return;
    std::cout << "epoch " << std::setw(3) << r.epoch << "  tau " << std::fixed
              << std::setprecision(2) << r.tau << "  loss " << std::setprecision(5)
              << r.train_loss << "  val_acc " << std::setprecision(4) << r.val_accuracy
              << "  (" << std::setprecision(2) << r.seconds << "s)\n"
              << std::defaultfloat;
  };
  auto result = mpn::train(params, cfg.model, ds, cfg.train, on_epoch);

  auto plist = params.collect();
  mpn::save_params(plist, cfg.echo(), out);
  const double final_tau = mpn::tau_at(cfg.train.schedule, cfg.train.epochs - 1);
  const double test_acc = mpn::evaluate(params, cfg.model, ds, ds.splits.test, final_tau,
                                        cfg.train.regime, cfg.train.decode_threshold);
  std::cout << "best val accuracy " << result.best_val_accuracy << " at epoch "
            << result.best_epoch << "\n"
            << "test accuracy " << test_acc << "\n"
            << "saved " << out << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_path,
             const std::string& params_path, const std::string& split,
             const std::string& dump_path) {
  auto cfg = make_config(opts);
  auto ds = mpn::read_bundle(data_path);
  cfg.dataset = ds.spec;

  mpn::Rng rng(cfg.train.seed);
  mpn::ModelParams<float> params;
  {
    // Rebuild the architecture from the config echo stored with the weights,
    // so eval does not depend on repeating the training flags.
    std::ifstream hdr(params_path, std::ios::binary);
    if (!hdr) throw mpn::DataError("cannot open " + params_path);
    char magic[4];
    hdr.read(magic, 4);
    std::uint32_t version = 0, echo_len = 0;
    hdr.read(reinterpret_cast<char*>(&version), 4);
    hdr.read(reinterpret_cast<char*>(&echo_len), 4);
    if (!hdr || std::string(magic, 4) != "MPNP" || version != 1)
      throw mpn::DataError(params_path + " is not a readable parameter file");
    std::string echo(echo_len, '\0');
    hdr.read(echo.data(), echo_len);
    if (!hdr) throw mpn::DataError("truncated parameter file " + params_path);
    mpn::RunConfig stored;
    std::istringstream is(echo);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) stored.set(line.substr(0, eq), line.substr(eq + 1));
    }
    stored.dataset = ds.spec;
    for (const auto& kv : opts.overrides) {
      const auto eq = kv.find('=');
      stored.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    stored.finalize();
    cfg = stored;
    params.init(rng, cfg.model);
    auto target = params.collect();
    mpn::load_params(target, params_path);
  }

  const auto& ids = pick_split(ds, split);
  const double tau = cfg.train.schedule.tau_end;
  const double acc = mpn::evaluate(params, cfg.model, ds, ids, tau, cfg.train.regime,
                                   cfg.train.decode_threshold);
  std::cout << split << " accuracy " << acc << " over " << ids.size() << " videos\n";

  if (!dump_path.empty()) {
    std::ofstream os(dump_path);
    if (!os) throw mpn::DataError("cannot open " + dump_path + " for writing");
    os << "# video_id\tsegment\ttruth\tpredicted\tp_r\tregion_weights\n";
    mpn::NoGradGuard ng;
    for (auto id : ids) {
      const auto& s = ds.by_id(id);
      auto preds = mpn::mpn_forward(mpn::visual_tensor<float>(s, ds.spec),
                                    mpn::audio_tensor<float>(s, ds.spec), params, cfg.model,
                                    static_cast<float>(tau));
      auto labels = mpn::decode(preds, cfg.train.decode_threshold,
                                cfg.train.regime == mpn::Regime::Weak);
      for (std::size_t t = 0; t < labels.size(); ++t) {
        os << id << '\t' << t << '\t' << s.segment_labels[t] << '\t' << labels[t] << '\t'
           << preds.p_r.at(t) << '\t';
        for (std::size_t r = 0; r < ds.spec.n_regions; ++r) {
          if (r) os << ',';
          os << preds.agva_weights.at(t * ds.spec.n_regions + r);
        }
        os << '\n';
      }
    }
    std::cout << "wrote " << dump_path << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const CommonOpts& opts, const std::string& data_path, const std::string& axis,
               const std::string& out) {
  auto base_cfg = make_config(opts);
  auto ds = mpn::read_bundle(data_path);
  base_cfg.dataset = ds.spec;

  std::vector<std::pair<std::string, std::string>> settings;  // (key, value) per row
  if (axis == "network") {
    settings = {{"network", "two-subnetworks"},
                {"network", "classification"},
                {"network", "localization"}};
  } else if (axis == "mcm") {
    settings = {{"mcm_variant", "SA+CMA"},
                {"mcm_variant", "SA+SA"},
                {"mcm_variant", "CMA+CMA"},
                {"mcm_variant", "CMA+SA"}};
  } else if (axis == "squeeze") {
    settings = {{"squeeze", "fbc"},
                {"squeeze", "concat"},
                {"squeeze", "product"},
                {"squeeze", "addition"}};
  } else if (axis == "interaction") {
    settings = {{"local_to_global", "true"}, {"local_to_global", "false"}};
  } else {
    throw mpn::ValueError("unknown ablation axis '" + axis +
                          "' (want network, mcm, squeeze or interaction)");
  }

  std::ostringstream table;
  table << "axis\tvariant\tregime\tbest_val_acc\ttest_acc\n";
  for (const auto& [key, value] : settings) {
    auto cfg = base_cfg;
    cfg.set(key, value);
    cfg.finalize();
    mpn::Rng rng(cfg.train.seed);
    mpn::ModelParams<float> params;
    params.init(rng, cfg.model);
    auto result = mpn::train(params, cfg.model, ds, cfg.train);
    const double tau = mpn::tau_at(cfg.train.schedule, cfg.train.epochs - 1);
    const double test_acc = mpn::evaluate(params, cfg.model, ds, ds.splits.test, tau,
                                          cfg.train.regime, cfg.train.decode_threshold);
    table << axis << '\t' << value << '\t' << to_string(cfg.train.regime) << '\t'
          << result.best_val_accuracy << '\t' << test_acc << '\n';
    std::cout << axis << "=" << value << ": val " << result.best_val_accuracy << ", test "
              << test_acc << "\n";
  }
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw mpn::DataError("cannot open " + out + " for writing");
    os << table.str();
    std::cout << "wrote " << out << "\n";
  } else {
    std::cout << table.str();
  }
  return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, double tolerance) {
  auto checks = mpn::run_check_suite(seed);
  bool ok = true;
  for (const auto& c : checks) {
    const bool pass = c.report.passed(tolerance);
    ok = ok && pass;
    std::cout << (pass ? "ok   " : "FAIL ") << std::left << std::setw(24) << c.name
              << " max_rel_err " << std::scientific << std::setprecision(3)
              << c.report.max_rel_err << std::defaultfloat << "  (worst "
              << c.report.worst_param << "[" << c.report.worst_index << "], "
              << c.report.n_checked << " entries)\n";
  }
  if (!ok) {
    std::cerr << "gradient check failed at tolerance " << tolerance << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal parallel network for audio-visual event localization"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, ablate_opts;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset bundle");
  std::string gen_out = "dataset.mpnf";
  gen->add_option("--out", gen_out, "output bundle path");
  add_common(gen, gen_opts);

  auto* tr = app.add_subcommand("train", "train a model on a bundle");
  std::string train_data, train_out = "model.mpnp";
  bool train_quiet = false;
  tr->add_option("--data", train_data, "dataset bundle")->required();
  tr->add_option("--out", train_out, "output parameter file");
  tr->add_flag("--quiet", train_quiet, "suppress per-epoch reports");
  add_common(tr, train_opts);

  auto* ev = app.add_subcommand("eval", "evaluate saved parameters");
  std::string eval_data, eval_params, eval_split = "test", eval_dump;
  ev->add_option("--data", eval_data, "dataset bundle")->required();
  ev->add_option("--params", eval_params, "parameter file")->required();
  ev->add_option("--split", eval_split, "split to score (train, val, test)");
  ev->add_option("--dump-preds", eval_dump, "write per-segment predictions as TSV");
  add_common(ev, eval_opts);

  auto* ab = app.add_subcommand("ablate", "train and score each variant along one axis");
  std::string ab_data, ab_axis = "network", ab_out;
  ab->add_option("--data", ab_data, "dataset bundle")->required();
  ab->add_option("--axis", ab_axis, "network, mcm, squeeze or interaction");
  ab->add_option("--out", ab_out, "write the TSV table here (default: stdout)");
  add_common(ab, ablate_opts);

  auto* gc = app.add_subcommand("grad-check", "verify gradients against finite differences");
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "rng seed for the probe points");
  gc->add_option("--tolerance", gc_tol, "max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts, gen_out);
    if (tr->parsed()) return cmd_train(train_opts, train_data, train_out, train_quiet);
    if (ev->parsed()) return cmd_eval(eval_opts, eval_data, eval_params, eval_split, eval_dump);
    if (ab->parsed()) return cmd_ablate(ablate_opts, ab_data, ab_axis, ab_out);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_tol);
  } catch (const mpn::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const mpn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const mpn::ValueError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
