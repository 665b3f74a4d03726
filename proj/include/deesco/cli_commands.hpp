#pragma once

// Command implementations behind the CLI: dataset generation, training,
// evaluation, ablation sweeps, heatmap introspection, and gradient checking.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include "deesco/config.hpp"
#include "deesco/gradcheck_suite.hpp"
#include "deesco/metrics.hpp"
#include "deesco/pgm.hpp"
#include "deesco/synth.hpp"
#include "deesco/trainer.hpp"

namespace deesco {

namespace fs = std::filesystem;

inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t subjects = 6;
  std::size_t per_subject = 500;
  std::size_t crop_h = 32, crop_w = 32;
  std::string target = "3d";
  double noise_sigma = 0.02;
};

inline int cmd_gen(const GenArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (a.out.empty()) throw UsageError("gen: --out directory required");
    SynthParams p;
    p.n_subjects = a.subjects;
    p.samples_per_subject = a.per_subject;
    p.crop_h = a.crop_h;
    p.crop_w = a.crop_w;
    p.target = target_kind_from_string(a.target);
    p.noise_sigma = a.noise_sigma;
    auto manifest = synth_generate(a.out, a.seed, p);
    out << "dataset " << a.out << ": " << manifest.count << " samples, "
        << manifest.subjects.size() << " subjects, crop " << manifest.crop_h
        << "x" << manifest.crop_w << " per eye, target "
        << to_string(manifest.target_kind) << ", seed " << manifest.seed
        << "\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------
// shared config loading
// ---------------------------------------------------------------------------

struct ConfigOverrides {
  std::string dataset;
  std::string output_dir;
  double nu = std::numeric_limits<double>::quiet_NaN();
  bool no_comb = false;
  long total_steps = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
};

inline ExperimentConfig load_experiment_config(const std::string& config_path,
                                               const ConfigOverrides& ov) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file " + config_path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config parse: " + std::string(e.what()));
    }
    cfg = experiment_from_json(j);
  }
  if (!ov.dataset.empty()) cfg.dataset = ov.dataset;
  if (!ov.output_dir.empty()) cfg.output_dir = ov.output_dir;
  if (!std::isnan(ov.nu)) cfg.nu = ov.nu;
  if (ov.no_comb) cfg.nu = 0.0;
  if (ov.total_steps >= 0) cfg.schedule.total_steps = ov.total_steps;
  if (ov.seed_set) cfg.seed = ov.seed;
  if (ov.jobs > 0) cfg.jobs = ov.jobs;
  if (cfg.dataset.empty())
    throw ConfigError("no dataset given (set 'dataset' in the config or pass "
                      "--data; DEESCO_DATA_DIR resolves relative paths)");
  return cfg;
}

inline std::string branch_composition(const std::vector<BranchConfig>& bs) {
  std::string s;
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (i) s += '+';
    s += to_string(bs[i].kind);
    if (bs[i].eyes == Eyes::Left) s += ":l";
    if (bs[i].eyes == Eyes::Right) s += ":r";
  }
  return s;
}

// ---------------------------------------------------------------------------
// training driver (used by train and sweep)
// ---------------------------------------------------------------------------

struct TrainOutcome {
  fs::path run_dir;
  EvalReport report;
  std::size_t param_count = 0;
  double max_subset_lambda_drift = 0.0;
};

inline TrainOutcome run_training(const ExperimentConfig& cfg,
                                 std::ostream& log) {
  const fs::path data_dir = resolve_dataset_path(cfg.dataset);
  Dataset data = Dataset::open(data_dir);
  const auto& mf = data.manifest();
  for (const auto& b : cfg.branches) {
    validate_branch_config(b);
    if (b.crop_h != mf.crop_h || b.crop_w != mf.crop_w)
      throw ConfigError("branch crop " + std::to_string(b.crop_h) + "x" +
                        std::to_string(b.crop_w) + " does not match dataset " +
                        std::to_string(mf.crop_h) + "x" +
                        std::to_string(mf.crop_w));
  }
  auto folds = make_folds(mf, cfg.folds);

  const fs::path run_dir = cfg.output_dir;
  fs::create_directories(run_dir);
  {
    ExperimentConfig resolved = cfg;
    resolved.dataset = data_dir.string();
    std::ofstream os(run_dir / "config.json", std::ios::trunc);
    os << experiment_to_json(resolved).dump(2) << "\n";
    std::ofstream rs(run_dir / "run.json", std::ios::trunc);
    rs << json{{"tool_version", kToolVersion}, {"command", "train"}}.dump(2)
       << "\n";
  }

  std::vector<std::unique_ptr<EnsembleModel>> models(folds.size());
  std::vector<double> drift(folds.size(), 0.0);
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t f = next.fetch_add(1);
      if (f >= folds.size()) return;
      try {
        char dirname[16];
        std::snprintf(dirname, sizeof(dirname), "fold%02d", folds[f].id);
        const fs::path fold_dir = run_dir / dirname;
        fs::create_directories(fold_dir);
        auto model = std::make_unique<EnsembleModel>(
            cfg.branches, substream(cfg.seed, "init", f).next_u64());
        AdamOptimizer opt(model->parameters());
        std::ofstream step_log(fold_dir / "steps.jsonl", std::ios::trunc);
        FitOptions fo;
        fo.step_log = &step_log;
        fo.checkpoint_dir = fold_dir;
        fit(*model, opt, data, folds[f].train_ids, cfg,
            static_cast<int>(folds[f].id), fo);
        for (const auto& c : model->strict_combiners()) {
          const double init = 1.0 / static_cast<double>(c.subset.size());
          for (std::size_t i = 0; i < c.lambdas.numel(); ++i)
            drift[f] = std::max(drift[f], std::abs(c.lambdas.at(i) - init));
        }
        models[f] = std::move(model);
      } catch (...) {
        errors[f] = std::current_exception();
        return;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(cfg.jobs,
                                             static_cast<int>(folds.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (errors[f]) {
      log << "fold " << folds[f].id << " failed\n";
      std::rethrow_exception(errors[f]);
    }

  std::vector<EnsembleModel*> model_ptrs;
  for (auto& m : models) model_ptrs.push_back(m.get());
  EvalOptions eo;
  eo.convention = cfg.gaze_vector_convention;
  EvalReport report = evaluate(model_ptrs, folds, data, mf.target_kind, eo);
  {
    std::ofstream os(run_dir / "report.json", std::ios::trunc);
    os << eval_report_to_json(report).dump(2) << "\n";
  }

  TrainOutcome out;
  out.run_dir = run_dir;
  out.report = report;
  out.param_count = models[0]->param_count();
  for (double d : drift)
    out.max_subset_lambda_drift = std::max(out.max_subset_lambda_drift, d);
  return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  ConfigOverrides overrides;
  bool csv = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = load_experiment_config(a.config_path, a.overrides);
    TrainOutcome outcome = run_training(cfg, out);
    const auto& r = outcome.report;
    out << "run " << outcome.run_dir.string() << " ("
        << branch_composition(cfg.branches) << ", nu=" << cfg.nu << ")\n";
    for (const auto& row : r.per_fold)
      out << "  fold " << row.fold << ": n=" << row.n
          << " mean_error=" << row.mean_error << "\n";
    out << "  overall " << r.overall_mean << " +- " << r.overall_std << " ("
        << r.metric << "), params " << outcome.param_count << "\n";
    if (a.csv) {
      std::ofstream os(outcome.run_dir / "report.csv", std::ios::trunc);
      os << "branches,err,params\n"
         << branch_composition(cfg.branches) << "," << r.overall_mean << ","
         << outcome.param_count << "\n";
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string run_dir;
  std::string dataset;
  std::string metric = "auto";
  bool csv = false;
  bool dump_predictions = false;
};

inline ExperimentConfig read_run_config(const fs::path& run_dir) {
  std::ifstream is(run_dir / "config.json");
  if (!is)
    throw ConfigError("cannot open " + (run_dir / "config.json").string() +
                      " (is this a run directory?)");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse: " + std::string(e.what()));
  }
  return experiment_from_json(j);
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (a.run_dir.empty()) throw UsageError("eval: --run directory required");
    ExperimentConfig cfg = read_run_config(a.run_dir);
    const std::string data_path = a.dataset.empty() ? cfg.dataset : a.dataset;
    Dataset data = Dataset::open(resolve_dataset_path(data_path));
    const auto& mf = data.manifest();

    TargetKind metric = mf.target_kind;
    if (a.metric != "auto") {
      metric = target_kind_from_string(a.metric);
      if (metric != mf.target_kind)
        throw ConfigError("eval: --metric " + a.metric +
                          " does not match the dataset target kind " +
                          to_string(mf.target_kind));
    }

    auto folds = make_folds(mf, cfg.folds);
    std::vector<std::unique_ptr<EnsembleModel>> models;
    std::vector<EnsembleModel*> ptrs;
    for (const auto& fold : folds) {
      char dirname[16];
      std::snprintf(dirname, sizeof(dirname), "fold%02d", fold.id);
      const fs::path ckpt =
          fs::path(a.run_dir) / dirname / "checkpoint_final.dsc";
      auto model = std::make_unique<EnsembleModel>(
          cfg.branches, substream(cfg.seed, "init", fold.id).next_u64());
      load_model_checkpoint(ckpt, *model, nullptr);
      ptrs.push_back(model.get());
      models.push_back(std::move(model));
    }

    std::vector<SamplePrediction> predictions;
    EvalOptions eo;
    eo.convention = cfg.gaze_vector_convention;
    if (a.dump_predictions) eo.prediction_sink = &predictions;
    EvalReport report = evaluate(ptrs, folds, data, metric, eo);

    std::ofstream os(fs::path(a.run_dir) / "report.json", std::ios::trunc);
    os << eval_report_to_json(report).dump(2) << "\n";
    if (a.csv) {
      std::ofstream cs(fs::path(a.run_dir) / "report.csv", std::ios::trunc);
      cs << "branches,err,params\n"
         << branch_composition(cfg.branches) << "," << report.overall_mean
         << "," << models[0]->param_count() << "\n";
    }
    if (a.dump_predictions) {
      std::ofstream ps(fs::path(a.run_dir) / "predictions.jsonl",
                       std::ios::trunc);
      for (const auto& p : predictions)
        ps << json{{"sample", p.sample_id},
                   {"fold", p.fold},
                   {"pred", p.pred_norm},
                   {"truth", p.truth_norm},
                   {"error", p.error}}
                  .dump()
           << "\n";
    }
    for (const auto& row : report.per_fold)
      out << "fold " << row.fold << ": n=" << row.n
          << " mean_error=" << row.mean_error << "\n";
    out << "overall " << report.overall_mean << " +- " << report.overall_std
        << " (" << report.metric << ")\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string config_path;
  ConfigOverrides overrides;
  std::string out;
  std::string nu_list;    // "0,0.1,1,5,10"
  std::string arch_list;  // "Rh+Ou+Fc,Rh+Rh+Fc"
  bool loss_ablation = false;
  int seeds = 5;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find(',', pos);
    std::string tok =
        s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!tok.empty()) out.push_back(tok);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace detail

inline int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const int modes = (!a.nu_list.empty() ? 1 : 0) +
                      (!a.arch_list.empty() ? 1 : 0) +
                      (a.loss_ablation ? 1 : 0);
    if (modes != 1)
      throw UsageError(
          "sweep: exactly one of --nu, --arch, --loss-ablation required");
    if (a.seeds < 1) throw UsageError("sweep: --seeds must be >= 1");
    if (a.out.empty()) throw UsageError("sweep: --out directory required");
    ExperimentConfig base = load_experiment_config(a.config_path, a.overrides);

    struct Cell {
      std::string label;
      double nu;
      std::vector<BranchConfig> branches;
    };
    std::vector<Cell> cells;
    std::string axis;
    if (!a.nu_list.empty()) {
      axis = "nu";
      auto toks = detail::split_list(a.nu_list);
      if (toks.empty()) throw UsageError("sweep: empty --nu list");
      for (const auto& t : toks)
        cells.push_back({t, std::stod(t), base.branches});
    } else if (!a.arch_list.empty()) {
      axis = "arch";
      auto toks = detail::split_list(a.arch_list);
      if (toks.empty()) throw UsageError("sweep: empty --arch list");
      for (const auto& t : toks)
        cells.push_back({t, base.nu, parse_arch_preset(t, base.branches[0])});
    } else {
      axis = "loss";
      cells.push_back({"without_comb", 0.0, base.branches});
      cells.push_back({"with_comb", base.nu > 0.0 ? base.nu : 1.0,
                       base.branches});
    }

    fs::create_directories(a.out);
    json jcells = json::array();
    std::ostringstream csv;
    csv << "label,mean_err,std_err,params,max_subset_lambda_drift\n";
    out << "sweep axis=" << axis << " seeds=" << a.seeds << "\n";
    for (const auto& cell : cells) {
      std::vector<double> errs;
      double drift = 0.0;
      std::size_t params = 0;
      for (int rep = 0; rep < a.seeds; ++rep) {
        ExperimentConfig cfg = base;
        cfg.nu = cell.nu;
        cfg.branches = cell.branches;
        cfg.seed = base.seed + static_cast<std::uint64_t>(rep);
        std::string slug = cell.label;
        for (auto& ch : slug)
          if (ch == '+' || ch == ':' || ch == '.') ch = '_';
        cfg.output_dir =
            (fs::path(a.out) / (axis + "_" + slug) / ("seed" + std::to_string(rep)))
                .string();
        TrainOutcome outcome = run_training(cfg, out);
        errs.push_back(outcome.report.overall_mean);
        drift = std::max(drift, outcome.max_subset_lambda_drift);
        params = outcome.param_count;
      }
      double mean = 0.0;
      for (double e : errs) mean += e;
      mean /= static_cast<double>(errs.size());
      double var = 0.0;
      for (double e : errs) var += (e - mean) * (e - mean);
      const double stddev =
          errs.size() > 1 ? std::sqrt(var / static_cast<double>(errs.size() - 1))
                          : 0.0;
      out << "  " << std::left << std::setw(14) << cell.label << " err "
          << mean << " +- " << stddev << "  params " << params
          << "  lambda_drift " << drift << "\n";
      jcells.push_back({{"label", cell.label},
                        {"nu", cell.nu},
                        {"branches", branch_composition(cell.branches)},
                        {"mean_err", mean},
                        {"std_err", stddev},
                        {"per_seed", errs},
                        {"param_count", params},
                        {"max_subset_lambda_drift", drift}});
      csv << cell.label << "," << mean << "," << stddev << "," << params << ","
          << drift << "\n";
    }
    {
      std::ofstream os(fs::path(a.out) / "sweep.json", std::ios::trunc);
      os << json{{"axis", axis},
                 {"seeds", a.seeds},
                 {"base_seed", base.seed},
                 {"cells", jcells}}
                .dump(2)
         << "\n";
      std::ofstream cs(fs::path(a.out) / "sweep.csv", std::ios::trunc);
      cs << csv.str();
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// introspect
// ---------------------------------------------------------------------------

struct IntrospectArgs {
  std::string run_dir;
  int fold = 0;
  std::string samples;  // comma-separated sample ids
  std::string out;      // default: run_dir/introspect
  bool raw = false;
};

inline int cmd_introspect(const IntrospectArgs& a, std::ostream& out,
                          std::ostream& err) {
  return guarded(err, [&] {
    if (a.run_dir.empty())
      throw UsageError("introspect: --run directory required");
    if (a.samples.empty()) throw UsageError("introspect: --samples required");
    ExperimentConfig cfg = read_run_config(a.run_dir);
    Dataset data = Dataset::open(resolve_dataset_path(cfg.dataset));

    char dirname[16];
    std::snprintf(dirname, sizeof(dirname), "fold%02d", a.fold);
    const fs::path ckpt = fs::path(a.run_dir) / dirname / "checkpoint_final.dsc";
    EnsembleModel model(cfg.branches,
                        substream(cfg.seed, "init", a.fold).next_u64());
    load_model_checkpoint(ckpt, model, nullptr);

    std::vector<std::size_t> ids;
    for (const auto& tok : detail::split_list(a.samples)) {
      const long v = std::stol(tok);
      if (v < 0 || static_cast<std::size_t>(v) >= data.size())
        throw UsageError("introspect: sample id " + tok +
                         " out of range (valid: 0.." +
                         std::to_string(data.size() - 1) + ")");
      ids.push_back(static_cast<std::size_t>(v));
    }

    const fs::path out_dir =
        a.out.empty() ? fs::path(a.run_dir) / "introspect" : fs::path(a.out);
    fs::create_directories(out_dir);

    const std::size_t s = model.heatmap_size();
    for (std::size_t id : ids) {
      std::vector<std::size_t> one{id};
      BatchTensors batch = make_batch(data, one);
      auto outs = model.forward(batch, Mode::Eval);

      char stem[32];
      std::snprintf(stem, sizeof(stem), "sample%06zu", id);
      auto dump = [&](const std::string& name, const Tensor& t) {
        write_pgm(out_dir / (std::string(stem) + "_" + name + ".pgm"),
                  t.values(), s, s);
        if (a.raw)
          write_raw_f64(out_dir / (std::string(stem) + "_" + name + ".f64"),
                        t.values());
      };

      json per_branch = json::object(), per_subset = json::object();
      for (std::size_t b = 0; b < model.size(); ++b) {
        dump("branch" + std::to_string(b), outs.branch_heatmaps[b]);
        Tensor p = soft_argmax(spatial_softmax(outs.branch_heatmaps[b]));
        per_branch[std::to_string(b)] = {p.at(0), p.at(1)};
      }
      for (const auto& so : outs.subsets) {
        std::string key = subset_key(so.subset);
        std::string fname = key;
        for (auto& c : fname)
          if (c == ',') c = '-';
        dump("subset_" + fname, so.merged);
        per_subset[key] = {so.pred.at(0), so.pred.at(1)};
      }
      dump("full_prob", outs.full_prob);

      const GazeSample& gs = data.sample(id);
      json sidecar{{"sample", id},
                   {"fold", a.fold},
                   {"truth_norm", {batch.target.at(0), batch.target.at(1)}},
                   {"truth_raw", {gs.g0, gs.g1}},
                   {"full_pred", {outs.full_pred.at(0), outs.full_pred.at(1)}},
                   {"per_subset_pred", per_subset},
                   {"per_branch_pred", per_branch}};
      std::ofstream os(out_dir / (std::string(stem) + ".json"),
                       std::ios::trunc);
      os << sidecar.dump(2) << "\n";
      out << stem << ": wrote " << model.size() << " branch maps, "
          << outs.subsets.size() << " subset maps, 1 probability map\n";
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string op = "all";
  int seeds = 20;
  double eps = 1e-4;
  double tol = 1e-3;
  double inject_fault = 0.0;  // test hook: corrupts analytic grads
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out,
                         std::ostream& err) {
  return guarded(err, [&] {
    std::vector<std::string> ops;
    if (a.op == "all") {
      ops = gradcheck_op_names();
    } else {
      const auto known = gradcheck_op_names();
      if (std::find(known.begin(), known.end(), a.op) == known.end())
        throw UsageError("gradcheck: unknown op '" + a.op + "'");
      ops = {a.op};
    }
    GradCheckOptions base;
    base.eps = a.eps;
    base.tol = a.tol;
    base.inject_fault = a.inject_fault;
    bool all_passed = true;
    for (const auto& op : ops) {
      auto res = run_op_gradcheck(op, a.seeds, base);
      out << (res.passed ? "PASS" : "FAIL") << " " << std::left << std::setw(18)
          << res.op << " seeds " << res.seeds << " max_rel_err "
          << res.max_rel_err << "\n";
      all_passed = all_passed && res.passed;
    }
    out << (all_passed ? "gradcheck: all ops passed\n"
                       : "gradcheck: FAILURES reported above\n");
    return all_passed ? 0 : 1;
  });
}

}  // namespace deesco
