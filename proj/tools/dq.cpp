#include <iostream>

#include <CLI11.hpp>

#include "dq/cli.hpp"

int main(int argc, char** argv) {
  dq::tune_allocator();
  CLI::App app{"Defensive quantization lab: train, attack, analyze and sweep quantized CNNs"};
  app.require_subcommand(1);

  dq::GlobalOptions g;
  std::string config, out = "out";
  std::uint64_t seed = 0;
  app.add_option("--config", config, "Run config file (key = value)");
  app.add_option("--out", out, "Output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Root seed; overrides the config");
  app.add_flag("--overwrite", g.overwrite, "Replace a non-empty output directory");
  app.add_option("--set", g.overrides, "Extra key=value config overrides");

  auto* train = app.add_subcommand("train", "Train one model");

  dq::AttackOptions atk;
  std::string attack_kind, export_path;
  double eps = 0, alpha = 0;
  int iters = 0;
  auto* attack = app.add_subcommand("attack", "Clean and adversarial accuracy of a checkpoint");
  attack->add_option("--checkpoint", atk.checkpoint, "Model checkpoint (.dqw)")->required();
  auto* kind_opt = attack->add_option("--attack", attack_kind, "random|fgsm|rfgsm|bim|pgd");
  auto* eps_opt = attack->add_option("--eps", eps, "Budget in 0-255 units");
  auto* alpha_opt = attack->add_option("--alpha", alpha, "Step size in 0-255 units");
  auto* iters_opt = attack->add_option("--iters", iters, "Iteration override for bim/pgd");
  auto* export_opt = attack->add_option("--export", export_path, "Write the adversarial test set here");

  dq::AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Per-layer amplification profiles");
  analyze->add_option("--checkpoint", an.checkpoint, "Model checkpoint (.dqw)")->required();
  analyze->add_option("--eps", an.eps, "FGSM budgets, e.g. --eps 1 2 4 8");

  dq::SweepOptionsCli sw;
  auto* sweep = app.add_subcommand("sweep", "Bits x beta robustness grid");
  sweep->add_flag("--resume", sw.resume, "Reuse completed cells whose checksum matches");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : dq::kExitConfig;
  }

  if (!config.empty()) g.config = config;
  g.out = out;
  if (*seed_opt) g.seed = seed;
  if (*kind_opt) atk.attack = attack_kind;
  if (*eps_opt) atk.eps = eps;
  if (*alpha_opt) atk.alpha = alpha;
  if (*iters_opt) atk.iters = iters;
  if (*export_opt) atk.export_path = export_path;

  if (*train) return dq::cmd_train(g, std::cout);
  if (*attack) return dq::cmd_attack(g, atk, std::cout);
  if (*analyze) return dq::cmd_analyze(g, an, std::cout);
  return dq::cmd_sweep(g, sw, std::cout);
}
