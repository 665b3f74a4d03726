#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "deesco/cli_commands.hpp"
#include "deesco/deesco.hpp"  // umbrella header must stay self-contained

using namespace deesco;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

struct CliWorld {
  fs::path root, data_dir, cfg_path, run_dir;

  static const CliWorld& instance() {
    static CliWorld w = [] {
      CliWorld w;
      w.root = fs::temp_directory_path() / "deesco_cli_world";
      fs::remove_all(w.root);
      fs::create_directories(w.root);
      w.data_dir = w.root / "data";
      w.cfg_path = w.root / "config.json";
      w.run_dir = w.root / "run";

      GenArgs gen;
      gen.out = w.data_dir.string();
      gen.seed = 3;
      gen.subjects = 3;
      gen.per_subject = 20;
      gen.crop_h = gen.crop_w = 16;
      std::ostringstream sink;
      if (cmd_gen(gen, sink, sink) != 0)
        throw std::runtime_error("fixture gen failed: " + sink.str());

      json cfg{{"seed", 5},
               {"dataset", w.data_dir.string()},
               {"output_dir", w.run_dir.string()},
               {"nu", 1.0},
               {"schedule", {{"base_lr", 2e-3},
                             {"total_steps", 10},
                             {"batch_size", 8}}},
               {"branches", json::array()}};
      for (const char* kind : {"Rh", "Ou", "Fc"})
        cfg["branches"].push_back(json{{"kind", kind},
                                       {"crop", {16, 16}},
                                       {"heatmap_size", 16},
                                       {"conv_channels", {4}},
                                       {"fc_widths", {8}}});
      std::ofstream(w.cfg_path) << cfg.dump(2);

      TrainArgs train;
      train.config_path = w.cfg_path.string();
      std::ostringstream tsink;
      if (cmd_train(train, tsink, tsink) != 0)
        throw std::runtime_error("fixture train failed: " + tsink.str());
      return w;
    }();
    return w;
  }
};

}  // namespace

TEST(CmdGen, AccountingAndDeterminism) {
  const auto root = fs::temp_directory_path() / "deesco_cli_gen";
  fs::remove_all(root);
  GenArgs gen;
  gen.out = (root / "a").string();
  gen.seed = 7;
  gen.subjects = 6;
  gen.per_subject = 50;
  gen.crop_h = gen.crop_w = 16;
  std::ostringstream out1, err1;
  ASSERT_EQ(cmd_gen(gen, out1, err1), 0) << err1.str();
  EXPECT_NE(out1.str().find("300 samples"), std::string::npos) << out1.str();

  gen.out = (root / "b").string();
  std::ostringstream out2, err2;
  ASSERT_EQ(cmd_gen(gen, out2, err2), 0);
  EXPECT_EQ(read_bytes(root / "a" / "manifest.json"),
            read_bytes(root / "b" / "manifest.json"));
}

TEST(CmdGen, SingleSubjectIsConfigError) {
  GenArgs gen;
  gen.out = (fs::temp_directory_path() / "deesco_cli_gen1").string();
  gen.subjects = 1;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gen(gen, out, err), 2);
  EXPECT_NE(err.str().find("subject"), std::string::npos);
}

TEST(CmdTrain, MissingDatasetIsExitTwo) {
  TrainArgs train;  // no config, no dataset
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(train, out, err), 2);
  EXPECT_NE(err.str().find("dataset"), std::string::npos);
}

TEST(CmdTrain, RunDirectoryIsSelfDescribing) {
  const auto& w = CliWorld::instance();
  EXPECT_TRUE(fs::exists(w.run_dir / "config.json"));
  EXPECT_TRUE(fs::exists(w.run_dir / "run.json"));
  EXPECT_TRUE(fs::exists(w.run_dir / "report.json"));
  for (const char* fold : {"fold00", "fold01", "fold02"}) {
    EXPECT_TRUE(fs::exists(w.run_dir / fold / "steps.jsonl")) << fold;
    EXPECT_TRUE(fs::exists(w.run_dir / fold / "checkpoint_final.dsc")) << fold;
  }
  // The stored config re-parses and reproduces the run's settings.
  ExperimentConfig cfg = read_run_config(w.run_dir);
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.schedule.total_steps, 10);
  const json run_meta = json::parse(read_bytes(w.run_dir / "run.json"));
  EXPECT_EQ(run_meta.at("tool_version").get<std::string>(), kToolVersion);
}

TEST(CmdTrain, ParallelFoldsMatchSequential) {
  const auto& w = CliWorld::instance();
  TrainArgs train;
  train.config_path = w.cfg_path.string();
  train.overrides.output_dir = (w.root / "run_jobs2").string();
  train.overrides.jobs = 2;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(train, out, err), 0) << err.str();
  // Fold workers are isolated; the merged report and per-fold artifacts are
  // byte-identical to the sequential run.
  EXPECT_EQ(read_bytes(w.run_dir / "report.json"),
            read_bytes(w.root / "run_jobs2" / "report.json"));
  for (const char* fold : {"fold00", "fold01", "fold02"}) {
    EXPECT_EQ(read_bytes(w.run_dir / fold / "steps.jsonl"),
              read_bytes(w.root / "run_jobs2" / fold / "steps.jsonl"))
        << fold;
    EXPECT_EQ(read_bytes(w.run_dir / fold / "checkpoint_final.dsc"),
              read_bytes(w.root / "run_jobs2" / fold / "checkpoint_final.dsc"))
        << fold;
  }
}

TEST(CmdEval, RerunIsByteIdentical) {
  const auto& w = CliWorld::instance();
  EvalArgs eval;
  eval.run_dir = w.run_dir.string();
  std::ostringstream out1, err1;
  ASSERT_EQ(cmd_eval(eval, out1, err1), 0) << err1.str();
  const std::string first = read_bytes(w.run_dir / "report.json");
  std::ostringstream out2, err2;
  ASSERT_EQ(cmd_eval(eval, out2, err2), 0);
  EXPECT_EQ(first, read_bytes(w.run_dir / "report.json"));
  EXPECT_EQ(out1.str(), out2.str());
}

TEST(CmdEval, MetricMismatchIsExitTwo) {
  const auto& w = CliWorld::instance();
  EvalArgs eval;
  eval.run_dir = w.run_dir.string();
  eval.metric = "2d";  // dataset is 3d
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(eval, out, err), 2);
  EXPECT_NE(err.str().find("metric"), std::string::npos);
}

TEST(CmdEval, MissingRunDirIsExitTwo) {
  EvalArgs eval;
  eval.run_dir = (fs::temp_directory_path() / "no_such_run").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(eval, out, err), 2);
}

TEST(CmdSweep, RequiresExactlyOneMode) {
  SweepArgs sweep;
  sweep.out = (fs::temp_directory_path() / "deesco_sweep_usage").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_sweep(sweep, out, err), 2);  // no mode at all
  sweep.nu_list = "0,1";
  sweep.arch_list = "Rh+Ou";
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_sweep(sweep, out2, err2), 2);  // two modes
}

TEST(CmdIntrospect, EmitsExactMapCountAndConsistentSidecar) {
  const auto& w = CliWorld::instance();
  IntrospectArgs intro;
  intro.run_dir = w.run_dir.string();
  intro.fold = 0;
  intro.samples = "0";
  intro.out = (w.root / "introspect").string();
  intro.raw = true;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_introspect(intro, out, err), 0) << err.str();

  // N=3: 3 branch maps + 6 subset maps + 1 probability map = 10 images,
  // each with a raw f64 dump alongside.
  std::size_t pgms = 0, raws = 0;
  for (const auto& e : fs::directory_iterator(intro.out)) {
    if (e.path().extension() == ".pgm") ++pgms;
    if (e.path().extension() == ".f64") ++raws;
  }
  EXPECT_EQ(pgms, 10u);
  EXPECT_EQ(raws, 10u);

  // Sidecar predictions match cmd_eval's per-sample dump.
  EvalArgs eval;
  eval.run_dir = w.run_dir.string();
  eval.dump_predictions = true;
  std::ostringstream eout, eerr;
  ASSERT_EQ(cmd_eval(eval, eout, eerr), 0);
  json sidecar = json::parse(read_bytes(fs::path(intro.out) / "sample000000.json"));
  bool found = false;
  std::istringstream preds(read_bytes(w.run_dir / "predictions.jsonl"));
  std::string line;
  while (std::getline(preds, line)) {
    json p = json::parse(line);
    if (p["sample"].get<std::size_t>() != 0) continue;
    found = true;
    for (int k = 0; k < 2; ++k) {
      EXPECT_NEAR(p["pred"][k].get<double>(),
                  sidecar["full_pred"][k].get<double>(), 1e-12);
      EXPECT_NEAR(p["truth"][k].get<double>(),
                  sidecar["truth_norm"][k].get<double>(), 1e-12);
    }
  }
  EXPECT_TRUE(found) << "sample 0 is in fold 0's test split";
}

TEST(CmdIntrospect, BadSampleIdListsValidRange) {
  const auto& w = CliWorld::instance();
  IntrospectArgs intro;
  intro.run_dir = w.run_dir.string();
  intro.samples = "99999";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_introspect(intro, out, err), 2);
  EXPECT_NE(err.str().find("0..59"), std::string::npos) << err.str();
}

// End-to-end 2D screen-gaze path: train briefly, evaluate in millimeters.
TEST(CmdTrain, TwoDScreenGazeEndToEnd) {
  const auto root = fs::temp_directory_path() / "deesco_cli_2d";
  fs::remove_all(root);
  GenArgs gen;
  gen.out = (root / "data2d").string();
  gen.seed = 9;
  gen.subjects = 2;
  gen.per_subject = 20;
  gen.crop_h = gen.crop_w = 16;
  gen.target = "2d";
  std::ostringstream gout, gerr;
  ASSERT_EQ(cmd_gen(gen, gout, gerr), 0) << gerr.str();

  json cfg{{"seed", 4},
           {"dataset", gen.out},
           {"output_dir", (root / "run").string()},
           {"schedule",
            {{"base_lr", 2e-3}, {"total_steps", 8}, {"batch_size", 8}}},
           {"branches",
            json::array({json{{"kind", "Rh"},
                              {"crop", {16, 16}},
                              {"heatmap_size", 16},
                              {"conv_channels", {4}},
                              {"fc_widths", {8}}},
                         json{{"kind", "Ou"},
                              {"crop", {16, 16}},
                              {"heatmap_size", 16},
                              {"conv_channels", {4}},
                              {"fc_widths", {8}}}})}};
  const auto cfg_path = root / "cfg.json";
  std::ofstream(cfg_path) << cfg.dump(2);

  TrainArgs train;
  train.config_path = cfg_path.string();
  std::ostringstream tout, terr;
  ASSERT_EQ(cmd_train(train, tout, terr), 0) << terr.str();

  const json report = json::parse(read_bytes(root / "run" / "report.json"));
  EXPECT_EQ(report.at("metric").get<std::string>(), "euclid_mm");
  EXPECT_GT(report.at("overall_mean").get<double>(), 0.0);
  EXPECT_TRUE(std::isfinite(report.at("overall_mean").get<double>()));
  // Screen half extents bound the error: worst case is the box diagonal.
  EXPECT_LT(report.at("overall_mean").get<double>(),
            2.0 * std::hypot(160.0, 100.0));
}

TEST(CmdGradcheck, TargetedRunAndFaultInjection) {
  GradcheckArgs gc;
  gc.op = "conv2d";
  gc.seeds = 3;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gradcheck(gc, out, err), 0) << err.str();
  EXPECT_NE(out.str().find("PASS conv2d"), std::string::npos);

  gc.op = "dense";
  gc.inject_fault = 0.01;  // corrupted adjoint must be reported
  std::ostringstream fout, ferr;
  EXPECT_EQ(cmd_gradcheck(gc, fout, ferr), 1);
  EXPECT_NE(fout.str().find("FAIL"), std::string::npos);

  gc.op = "no_such_op";
  std::ostringstream uout, uerr;
  EXPECT_EQ(cmd_gradcheck(gc, uout, uerr), 2);
}
