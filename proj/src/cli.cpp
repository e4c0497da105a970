#include "dq/cli.hpp"

#include <malloc.h>

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "dq/analysis.hpp"
#include "dq/config.hpp"
#include "dq/error.hpp"
#include "dq/rng.hpp"
#include "dq/sweep.hpp"

namespace dq {

namespace {

namespace fs = std::filesystem;

RunConfig resolve_config(const GlobalOptions& g, const std::optional<fs::path>& fallback = std::nullopt) {
  RunConfig cfg;
  if (g.config)
    cfg = load_config(*g.config);
  else if (fallback && fs::exists(*fallback))
    cfg = load_config(*fallback);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override must be key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

// Refuses a non-empty output directory unless overwriting (which clears it)
// or resuming (which keeps it).
void prepare_out(const fs::path& out, bool overwrite, bool resume = false) {
  if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError("--out", out.string() + " is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !resume) {
    if (!overwrite) throw ConfigError("--out", out.string() + " is not empty; pass --overwrite to replace it");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void echo_config(const RunConfig& cfg, const fs::path& out) { std::ofstream(out / "config.resolved.txt") << cfg.resolved(); }

Model load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  Model model(cfg.model_spec(), derive_seed(cfg.seed, "model"));
  std::vector<NamedTensor> state;
  try {
    state = load_checkpoint(checkpoint);
  } catch (const std::exception& e) {
    throw ConfigError("--checkpoint", e.what());
  }
  try {
    model.load_state(state);
  } catch (const std::exception& e) {
    throw ConfigError("--checkpoint", std::string("does not match the configured model: ") + e.what());
  }
  return model;
}

fs::path sibling_config(const fs::path& checkpoint) { return checkpoint.parent_path() / "config.resolved.txt"; }

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "config error [" << e.key() << "]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

Tensor<float> attack_dataset(const Model& model, const Dataset& data, const AttackConfig& atk) {
  std::vector<float> all;
  all.reserve(data.images.size());
  constexpr std::size_t kBatch = 100;
  for (std::size_t begin = 0, b = 0; begin < data.size(); begin += kBatch, ++b) {
    const std::size_t count = std::min(kBatch, data.size() - begin);
    const auto xa = run_attack(model, data.range_images(begin, count), data.range_labels(begin, count), atk, b);
    all.insert(all.end(), xa.data().begin(), xa.data().end());
  }
  const auto& s = data.image_shape;
  return Tensor<float>(Shape{data.size(), s[0], s[1], s[2]}, std::move(all));
}

}  // namespace

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
}

int cmd_train(const GlobalOptions& g, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = resolve_config(g);
    prepare_out(g.out, g.overwrite);
    echo_config(cfg, g.out);
    const DataSplits data = load_data(cfg);
    Model model(cfg.model_spec(), derive_seed(cfg.seed, "model"));
    const TrainConfig tc = cfg.train_config();
    log << "training " << format_blocks(cfg.model.blocks) << " (" << model.parameter_count() << " parameters) on "
        << data.train.size() << " images\n";
    const auto result = train(model, data.train, tc, cfg.adversarial(),
                              [&](const EpochStats& s, const Model& m) {
                                save_checkpoint(g.out / ("checkpoint_epoch" + std::to_string(s.epoch + 1) + ".dqw"),
                                                m.state());
                              });
    std::ofstream curve(g.out / "loss_curve.csv");
    curve << "epoch,lr,loss,accuracy\n";
    for (const auto& s : result.curve) {
      curve << s.epoch << ',' << format_number(s.lr) << ',' << format_number(s.loss) << ','
            << format_number(s.accuracy) << '\n';
      log << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.loss << " train_acc " << s.accuracy << '\n';
    }
    save_checkpoint(g.out / "model.dqw", model.state());
    log << "test accuracy " << evaluate(model, data.test) << '\n';
    return kExitOk;
  });
}

int cmd_attack(const GlobalOptions& g, const AttackOptions& a, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = resolve_config(g, sibling_config(a.checkpoint));
    const Model model = load_model(cfg, a.checkpoint);
    AttackConfig atk = cfg.attack;
    if (a.attack) atk.kind = parse_attack_kind(*a.attack);
    if (a.eps) atk.epsilon = *a.eps;
    if (a.alpha) atk.alpha = *a.alpha;
    if (a.iters) atk.iters = *a.iters;
    atk.seed = derive_seed(cfg.seed, "attack");
    try {
      atk.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--eps", e.what());
    }
    prepare_out(g.out, g.overwrite);
    echo_config(cfg, g.out);
    const DataSplits data = load_data(cfg);
    log << "attack " << to_string(atk.kind) << " eps " << atk.epsilon;
    if (atk.kind == AttackKind::bim || atk.kind == AttackKind::pgd) log << " iterations " << atk.resolved_iters();
    log << '\n';
    const double clean = evaluate(model, data.test);
    const Tensor<float> adv = attack_dataset(model, data.test, atk);
    const auto pred = predict(model, adv);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.test.labels[i];
    const double adversarial = 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
    nlohmann::ordered_json j;
    j["clean"] = clean;
    j["adversarial"] = adversarial;
    j["attack"] = to_string(atk.kind);
    j["eps"] = atk.epsilon;
    j["seed"] = cfg.seed;
    std::ofstream(g.out / "attack.json") << j.dump(2) << '\n';
    log << j.dump() << '\n';
    if (a.export_path) {
      std::vector<float> labels(data.test.labels.begin(), data.test.labels.end());
      save_checkpoint(*a.export_path, {{"images", adv}, {"labels", Tensor<float>(Shape{labels.size()}, labels)}});
    }
    return kExitOk;
  });
}

int cmd_analyze(const GlobalOptions& g, const AnalyzeOptions& a, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = resolve_config(g, sibling_config(a.checkpoint));
    const Model model = load_model(cfg, a.checkpoint);
    const std::vector<double> budgets = a.eps.empty() ? cfg.analyze_eps : a.eps;
    for (double e : budgets)
      if (!(e >= 0 && e <= 255)) throw ConfigError("--eps", "budgets must be in [0,255]");
    prepare_out(g.out, g.overwrite);
    echo_config(cfg, g.out);
    const DataSplits data = load_data(cfg);
    const Tensor<float> x = data.test.range_images(0, data.test.size());
    std::vector<AmplificationProfile> profiles;
    for (double eps : budgets) {
      AttackConfig atk;
      atk.kind = AttackKind::fgsm;
      atk.epsilon = eps;
      atk.seed = derive_seed(cfg.seed, "attack");
      const Tensor<float> xa = attack_dataset(model, data.test, atk);
      for (bool q : {true, false}) profiles.push_back(layer_profile(model, x, xa, q, eps));
      log << "eps " << eps << " final-layer distance quantized " << profiles[profiles.size() - 2].distances.back()
          << " full-precision " << profiles.back().distances.back() << '\n';
    }
    std::ofstream out(g.out / "profiles.csv");
    write_profiles_csv(out, profiles);
    std::ofstream sn(g.out / "spectral_norms.csv");
    write_spectral_csv(sn, spectral_norms(model));
    return kExitOk;
  });
}

int cmd_sweep(const GlobalOptions& g, const SweepOptionsCli& s, std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = resolve_config(g);
    prepare_out(g.out, g.overwrite, s.resume);
    echo_config(cfg, g.out);
    const DataSplits data = load_data(cfg);
    SweepSetup setup{cfg.model_spec(), cfg.train_config(), std::nullopt, cfg.seed};
    if (cfg.advtrain_enabled) setup.adv = cfg.advtrain;
    SweepOptions opts;
    opts.cell_root = g.out / "cells";
    opts.resume = s.resume;
    opts.on_cell = [&](const SweepCell& c, bool reused) { log << (reused ? "reused " : "done ") << c.id() << '\n'; };
    opts.log = [&](const std::string& m) { log << m << '\n'; };
    const RobustnessReport report = run_sweep(cfg.sweep, setup, data, opts);
    {
      std::ofstream out(g.out / "report.csv");
      write_report_csv(out, report);
    }
    std::ofstream table(g.out / "table.csv");
    write_table_csv(table, report);
    if (!report.complete()) {
      log << "sweep incomplete: some cells failed\n";
      return kExitPartial;
    }
    return kExitOk;
  });
}

}  // namespace dq
