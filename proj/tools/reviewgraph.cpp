// reviewgraph: command-line front end for the debate-graph pipeline.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "reviewgraph/pipeline.hpp"

namespace {

std::optional<rvg::fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return rvg::fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rvg;

  CLI::App app{"Debate-graph paper decision pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, manifest_path, ablation_name;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool force = false;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--manifest", manifest_path, "Dataset manifest (JSON lines)");
  app.add_option("--seed", seed, "Seed for every random choice");
  app.add_option("--jobs", jobs, "Papers processed concurrently")->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "Redo stages whose outputs exist");
  app.add_option("--ablation", ablation_name, "full, no_title, no_eval, no_rar, no_irr or homogeneous");

  app.add_subcommand("simulate", "Run the simulated review debate for every paper");
  app.add_subcommand("extract", "Extract opinion triples from transcripts");
  app.add_subcommand("classify", "Assign an evaluation dimension to every reviewer opinion");
  app.add_subcommand("embed", "Embed every node text into the embedding cache");
  app.add_subcommand("build-graph", "Build and validate the debate graphs");

  TrainOptions train_opt;
  std::string train_ckpt, train_hist;
  auto* train_cmd = app.add_subcommand("train", "Train on the train split with early stopping on val");
  train_cmd->add_option("--checkpoint", train_ckpt, "Checkpoint output path");
  train_cmd->add_option("--history", train_hist, "History output path (JSON lines)");

  EvaluateOptions eval_opt;
  std::string eval_split = "test", eval_ckpt, eval_out, eval_compare;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  eval_cmd->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to load");
  eval_cmd->add_option("--output", eval_out, "Report output path");
  eval_cmd->add_option("--compare", eval_compare, "Per-paper correctness of another run, for a Welch t-test");

  AblateOptions ablate_opt;
  std::string ablate_out;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score every ablation mode");
  ablate_cmd->add_option("--output", ablate_out, "JSON table output path");
  ablate_cmd->add_flag("--json", ablate_opt.json, "Print JSON instead of Markdown");

  GradcheckOptions grad_opt;
  std::string corrupt;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  grad_cmd->add_option("--corrupt-grad", corrupt, "Perturb this tensor's gradient (negative control)")
      ->group("");

  SynthesizeOptions synth_opt;
  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("synthesize", "Write a seeded synthetic dataset with manifest");
  synth_cmd->add_option("--out", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--train", synth_opt.train, "Train papers");
  synth_cmd->add_option("--val", synth_opt.val, "Val papers");
  synth_cmd->add_option("--test", synth_opt.test, "Test papers");
  synth_cmd->add_option("--stance", synth_opt.stance, "How strongly each paper leans accept or reject, in [0, 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  Context ctx;
  ctx.force = force;
  return run_guarded(ctx, [&]() -> int {
    if (!config_path.empty()) ctx.config = load_run_config(config_path);
    if (seed) ctx.config.apply_seed(*seed);
    if (jobs) ctx.config.jobs = *jobs;
    if (!ablation_name.empty()) {
      const auto mode = parse_ablation(ablation_name);
      if (!mode) throw Error(ErrorKind::Usage, "unknown ablation mode '" + ablation_name + "'");
      ctx.config.ablation = *mode;
    }
    if (!manifest_path.empty()) ctx.config.paths.manifest = manifest_path;
    ctx.config.validate();

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "simulate") return cmd_simulate(ctx);
    if (name == "extract") return cmd_extract(ctx);
    if (name == "classify") return cmd_classify(ctx);
    if (name == "embed") return cmd_embed(ctx);
    if (name == "build-graph") return cmd_build_graph(ctx);
    if (name == "train") {
      train_opt.checkpoint = opt_path(train_ckpt);
      train_opt.history = opt_path(train_hist);
      return cmd_train(ctx, train_opt);
    }
    if (name == "evaluate") {
      eval_opt.split = *parse_split(eval_split);
      eval_opt.checkpoint = opt_path(eval_ckpt);
      eval_opt.output = opt_path(eval_out);
      eval_opt.compare = opt_path(eval_compare);
      return cmd_evaluate(ctx, eval_opt);
    }
    if (name == "ablate") {
      ablate_opt.output = opt_path(ablate_out);
      return cmd_ablate(ctx, ablate_opt);
    }
    if (name == "gradcheck") {
      if (!corrupt.empty()) grad_opt.corrupt_tensor = corrupt;
      return cmd_gradcheck(ctx, grad_opt);
    }
    if (name == "synthesize") {
      synth_opt.out_dir = synth_dir;
      return cmd_synthesize(ctx, synth_opt);
    }
    throw Error(ErrorKind::Usage, "unknown command " + name);
  });
}
