#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <stegolm/commands.hpp>

namespace {

struct CommonArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool out_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_checkpoint) {
  cmd->add_option("--config", args.config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  if (needs_checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint_path, "input checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
  cmd->add_option_function<std::string>(
      "--out", [&args](const std::string& v) {
        args.out_dir = v;
        args.out_set = true;
      },
      "output directory (overrides config)");
  cmd->add_option_function<uint64_t>(
      "--seed", [&args](uint64_t v) {
        args.seed = v;
        args.seed_set = true;
      },
      "experiment seed (overrides config)");
}

stegolm::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  stegolm::ExperimentConfig cfg = stegolm::load_experiment_config(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.model.seed = args.seed;
  }
  if (args.out_set) cfg.out_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hidden-text embedding, extraction, and defense toolkit"};
  app.require_subcommand(1);

  CommonArgs train_args, hide_args, defend_args, attack_args, eval_args;

  CLI::App* train = app.add_subcommand("train", "train the base model on the corpus");
  add_common(train, train_args, false);

  CLI::App* hide = app.add_subcommand("hide", "embed the hidden text behind its trigger");
  add_common(hide, hide_args, true);

  CLI::App* defend = app.add_subcommand("defend", "apply a UTFC defense variant");
  add_common(defend, defend_args, true);
  std::string defend_variant;
  double defend_weight = -1.0;
  int defend_threshold = -1;
  defend->add_option("--variant", defend_variant, "basic|mse_zero|randomized|auto");
  defend->add_option("--weight", defend_weight, "confusion loss weight");
  defend->add_option("--rank-threshold", defend_threshold, "rank window threshold T");

  CLI::App* attack = app.add_subcommand("attack", "run the UTF scan and trigger search");
  add_common(attack, attack_args, true);
  int attack_alpha = -1, attack_beta = -1, attack_top_n = -1;
  attack->add_option("--alpha", attack_alpha, "phase-1 decode length");
  attack->add_option("--beta", attack_beta, "phase-2 decode length");
  attack->add_option("--top-n", attack_top_n, "candidates promoted to phase 2");

  CLI::App* eval = app.add_subcommand("eval", "run attack-vs-defense scenarios");
  add_common(eval, eval_args, true);
  int eval_k = -1, eval_samples = -1;
  eval->add_option("--k", eval_k, "sampling attack k");
  eval->add_option("--n-samples", eval_samples, "samples per sampling attack");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      stegolm::cmd_train(load_with_overrides(train_args));
    } else if (hide->parsed()) {
      stegolm::cmd_hide(load_with_overrides(hide_args), hide_args.checkpoint_path);
    } else if (defend->parsed()) {
      stegolm::ExperimentConfig cfg = load_with_overrides(defend_args);
      if (!defend_variant.empty())
        cfg.defense.variant = stegolm::variant_from_string(defend_variant);
      if (defend_weight >= 0) cfg.defense.loss_weight = defend_weight;
      if (defend_threshold >= 0) cfg.defense.rank_threshold = defend_threshold;
      cfg.defense.validate(cfg.model.vocab_size);
      stegolm::cmd_defend(cfg, defend_args.checkpoint_path);
    } else if (attack->parsed()) {
      stegolm::ExperimentConfig cfg = load_with_overrides(attack_args);
      if (attack_alpha > 0) cfg.attack.alpha = attack_alpha;
      if (attack_beta > 0) cfg.attack.increment_length = attack_beta - cfg.attack.alpha;
      if (attack_top_n > 0) cfg.attack.top_n = attack_top_n;
      cfg.attack.validate();
      stegolm::cmd_attack(cfg, attack_args.checkpoint_path);
    } else if (eval->parsed()) {
      stegolm::ExperimentConfig cfg = load_with_overrides(eval_args);
      if (eval_k > 0) cfg.sampling_k = eval_k;
      if (eval_samples > 0) cfg.n_samples = eval_samples;
      stegolm::cmd_eval(cfg, eval_args.checkpoint_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
