#include <exception>
#include <functional>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "prism/cli.hpp"

namespace {

using prism::cli::Options;
using Command = std::function<int(const Options&, std::ostream&, std::ostream&)>;

void common_flags(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key=value run configuration");
  sub->add_option("--seed", o.seed, "override the config seed");
  sub->add_option("--k", o.k, "neighbour rank for kNN scoring");
  sub->add_option("--tpr", o.tpr, "true positive rate used for thresholds");
  sub->add_option("--lambda", o.lambda, "reg-loss weight");
  sub->add_option("--m", o.m, "number of pseudo-label blocks");
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"prism: pseudo-label subspace OOD detection"};
  app.require_subcommand(1);

  std::map<CLI::App*, Command> commands;

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/test_id/test_ood datasets");
  common_flags(gen, o);
  gen->add_option("--out", o.out, "output directory");
  commands[gen] = prism::cli::cmd_gen_data;

  auto* train = app.add_subcommand("train", "fit a model and write a checkpoint plus <out>.log.csv");
  common_flags(train, o);
  train->add_option("--data", o.data, "dataset directory or train file");
  train->add_option("--out", o.out, "checkpoint path");
  commands[train] = prism::cli::cmd_train;

  auto* score = app.add_subcommand("score", "kNN scores, per-sample reg terms and predictions");
  common_flags(score, o);
  score->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  score->add_option("--data", o.data, "dataset directory or train file used for the index");
  score->add_option("--dataset", o.dataset, "dataset to score");
  score->add_option("--out", o.out, "score file; <out>.reg and <out>.pred are written alongside");
  commands[score] = prism::cli::cmd_score;

  auto* eval = app.add_subcommand("eval", "FPR and AUROC report from score files");
  common_flags(eval, o);
  eval->add_option("--id", o.id_scores, "ID score file");
  eval->add_option("--ood", o.ood_scores, "OOD score file(s)");
  eval->add_option("--pred", o.predictions, "prediction file for ID accuracy");
  eval->add_option("--out", o.out, "report CSV; the ID histogram goes to <out>.hist.csv");
  commands[eval] = prism::cli::cmd_eval;

  auto* grad = app.add_subcommand("grad-check", "compare analytic and numerical gradients");
  common_flags(grad, o);
  commands[grad] = prism::cli::cmd_gradcheck;

  auto* ablate = app.add_subcommand("ablate", "sweep lambda or M on the synthetic benchmark");
  common_flags(ablate, o);
  ablate->add_option("--data", o.data, "dataset directory (generated from the config if omitted)");
  ablate->add_option("--sweep", o.sweep, "lambda or M");
  ablate->add_option("--values", o.values, "values to sweep")->delimiter(',');
  ablate->add_option("--out", o.out, "CSV output path");
  commands[ablate] = prism::cli::cmd_ablate;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << prism::cli::error_line(2, "usage", e.what()) << '\n';
    return 2;
  }

  try {
    for (auto& [sub, cmd] : commands)
      if (sub->parsed()) return cmd(o, std::cout, std::cerr);
  } catch (const prism::Error& e) {
    const int code = prism::cli::exit_code(e);
    std::cerr << prism::cli::error_line(code, e.kind(), e.what()) << '\n';
    return code;
  } catch (const std::exception& e) {
    std::cerr << prism::cli::error_line(4, "internal", e.what()) << '\n';
    return 4;
  }
  return 4;
}
