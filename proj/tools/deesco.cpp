// Command-line entry point: gen, train, eval, sweep, introspect, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>
#include <iostream>

#include "deesco/cli_commands.hpp"

using namespace deesco;

int main(int argc, char** argv) {
  CLI::App app{"deesco: heatmap-ensemble gaze estimation harness"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // gen
  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "generate a synthetic gaze dataset");
  cgen->add_option("--out", gen.out, "output dataset directory")->required();
  cgen->add_option("--seed", gen.seed, "generator seed");
  cgen->add_option("--subjects", gen.subjects, "number of subjects");
  cgen->add_option("--per-subject", gen.per_subject, "samples per subject");
  cgen->add_option("--crop-h", gen.crop_h, "per-eye crop height");
  cgen->add_option("--crop-w", gen.crop_w, "per-eye crop width");
  cgen->add_option("--target", gen.target, "3d (yaw/pitch) or 2d (screen)");
  cgen->add_option("--noise", gen.noise_sigma, "additive noise sigma");

  // shared train/sweep overrides
  auto add_overrides = [](CLI::App* cmd, std::string& config_path,
                          ConfigOverrides& ov) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--data", ov.dataset, "dataset directory");
    cmd->add_option("--out", ov.output_dir, "run output directory");
    cmd->add_option("--steps", ov.total_steps,
                    "override schedule.total_steps");
    auto* seed = cmd->add_option("--seed", ov.seed, "master seed");
    seed->each([&ov](const std::string&) { ov.seed_set = true; });
    cmd->add_option("--jobs", ov.jobs, "parallel fold workers");
  };

  // train
  TrainArgs train;
  auto* ctrain = app.add_subcommand("train", "train one model per fold");
  add_overrides(ctrain, train.config_path, train.overrides);
  ctrain->add_option("--nu", train.overrides.nu,
                     "combinatory loss weight override");
  ctrain->add_flag("--no-comb", train.overrides.no_comb,
                   "disable the combinatory loss (nu=0)");
  ctrain->add_flag("--csv", train.csv, "also write report.csv");

  // eval
  EvalArgs eval;
  auto* ceval = app.add_subcommand("eval", "evaluate a finished run");
  ceval->add_option("--run", eval.run_dir, "run directory")->required();
  ceval->add_option("--data", eval.dataset, "dataset override");
  ceval->add_option("--metric", eval.metric, "auto|3d|2d");
  ceval->add_flag("--csv", eval.csv, "also write report.csv");
  ceval->add_flag("--dump-predictions", eval.dump_predictions,
                  "write per-sample predictions.jsonl");

  // sweep
  SweepArgs sweep;
  auto* csweep =
      app.add_subcommand("sweep", "run an ablation sweep with shared seeds");
  add_overrides(csweep, sweep.config_path, sweep.overrides);
  csweep->add_option("--sweep-out", sweep.out, "sweep output directory")
      ->required();
  csweep->add_option("--nu", sweep.nu_list, "nu values, e.g. 0,0.1,1,5,10");
  csweep->add_option("--arch", sweep.arch_list,
                     "branch presets, e.g. Rh+Ou+Fc,Rh+Rh+Fc");
  csweep->add_flag("--loss-ablation", sweep.loss_ablation,
                   "with/without combinatory loss rows");
  csweep->add_option("--seeds", sweep.seeds, "seed repetitions per cell");

  // introspect
  IntrospectArgs intro;
  auto* cintro = app.add_subcommand(
      "introspect", "export branch/subset/ensemble heatmaps as PGM");
  cintro->add_option("--run", intro.run_dir, "run directory")->required();
  cintro->add_option("--fold", intro.fold, "fold whose checkpoint to load");
  cintro->add_option("--samples", intro.samples, "sample ids, e.g. 0,5,9")
      ->required();
  cintro->add_option("--out", intro.out, "output directory");
  cintro->add_flag("--raw", intro.raw, "also dump raw f64 heatmaps");

  // gradcheck
  GradcheckArgs gc;
  auto* cgc = app.add_subcommand(
      "gradcheck", "finite-difference checks over every primitive");
  cgc->add_option("--op", gc.op, "single op name or 'all'");
  cgc->add_option("--seeds", gc.seeds, "random shape seeds per op");
  cgc->add_option("--eps", gc.eps, "central-difference step");
  cgc->add_option("--tol", gc.tol, "relative error tolerance");
  cgc->add_option("--inject-fault", gc.inject_fault,
                  "test hook: corrupt analytic gradients by this factor")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    return 2;
  }

  if (cgen->parsed()) return cmd_gen(gen, std::cout, std::cerr);
  if (ctrain->parsed()) return cmd_train(train, std::cout, std::cerr);
  if (ceval->parsed()) return cmd_eval(eval, std::cout, std::cerr);
  if (csweep->parsed()) return cmd_sweep(sweep, std::cout, std::cerr);
  if (cintro->parsed()) return cmd_introspect(intro, std::cout, std::cerr);
  if (cgc->parsed()) return cmd_gradcheck(gc, std::cout, std::cerr);
  return 2;
}
