#pragma once

// Per-fold training loop: one forward over all branches per batch, the full
// L0 plus every subset loss, a fresh mu draw per batch, backward, ADAM with
// polynomial annealing. All randomness is derived from (seed, label, fold,
// step/epoch), so (seed, step) is the complete resumable rng state.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deesco/checkpoint.hpp"
#include "deesco/config.hpp"
#include "deesco/dataset.hpp"
#include "deesco/ensemble.hpp"
#include "deesco/loss.hpp"
#include "deesco/optim.hpp"

namespace deesco {

struct StepRecord {
  long step = 0;
  double lr = 0.0;
  double l0 = 0.0, l_comb = 0.0, l_tot = 0.0;
  std::vector<std::pair<std::string, double>> per_subset;
  std::vector<std::pair<std::string, double>> mu;
};

inline json step_record_to_json(const StepRecord& r) {
  json ps = json::object(), mu = json::object();
  for (const auto& [k, v] : r.per_subset) ps[k] = v;
  for (const auto& [k, v] : r.mu) mu[k] = v;
  return json{{"step", r.step}, {"lr", r.lr},           {"l0", r.l0},
              {"l_comb", r.l_comb}, {"l_tot", r.l_tot}, {"per_subset", ps},
              {"mu", mu}};
}

// ---------------------------------------------------------------------------
// Model-level checkpointing (DEESCO01 container)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> split_u64(std::uint64_t v) {
  return {static_cast<double>(v & 0xffffffffull),
          static_cast<double>(v >> 32)};
}

inline std::uint64_t join_u64(const std::vector<double>& parts) {
  return static_cast<std::uint64_t>(parts.at(0)) |
         (static_cast<std::uint64_t>(parts.at(1)) << 32);
}

}  // namespace detail

inline void save_model_checkpoint(const std::filesystem::path& path,
                                  const EnsembleModel& model,
                                  const AdamOptimizer* opt, long step,
                                  std::uint64_t seed) {
  CheckpointFile f;
  for (const auto& p : model.parameters())
    f.add(p.name, p.tensor.shape(),
          {p.tensor.values().begin(), p.tensor.values().end()});
  for (const auto& b : model.buffers())
    f.add(b.name, b.tensor.shape(),
          {b.tensor.values().begin(), b.tensor.values().end()});
  if (opt) {
    auto& nonconst = const_cast<AdamOptimizer&>(*opt);
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      const auto& p = opt->params()[i];
      f.add("adam.m/" + p.name, p.tensor.shape(), nonconst.moment_m(i));
      f.add("adam.v/" + p.name, p.tensor.shape(), nonconst.moment_v(i));
    }
    f.add("meta/adam_step", {1}, {static_cast<double>(opt->step_count())});
  }
  f.add("meta/step", {1}, {static_cast<double>(step)});
  f.add("meta/seed", {2}, detail::split_u64(seed));
  f.add("meta/arch", {2}, detail::split_u64(model.arch_hash()));
  f.save(path);
}

struct CheckpointMeta {
  long step = 0;
  std::uint64_t seed = 0;
};

/// Restores parameters, buffers, and (optionally) optimizer state. A
/// checkpoint written by a different architecture is rejected outright.
inline CheckpointMeta load_model_checkpoint(const std::filesystem::path& path,
                                            EnsembleModel& model,
                                            AdamOptimizer* opt) {
  CheckpointFile f = CheckpointFile::load(path);
  const CheckpointEntry* arch = f.find("meta/arch");
  if (!arch)
    throw DataError("checkpoint " + path.string() + ": missing meta/arch");
  if (detail::join_u64(arch->values) != model.arch_hash())
    throw ConfigError("checkpoint " + path.string() +
                      " was written for a different architecture");

  auto restore = [&](Parameter& p) {
    const CheckpointEntry* e = f.find(p.name);
    if (!e)
      throw ConfigError("checkpoint " + path.string() + ": missing entry '" +
                        p.name + "'");
    if (e->shape != p.tensor.shape())
      throw ConfigError("checkpoint " + path.string() + ": entry '" + p.name +
                        "' shape mismatch");
    auto dst = p.tensor.raw_values();
    for (std::size_t i = 0; i < e->values.size(); ++i) dst[i] = e->values[i];
  };
  for (auto& p : model.parameters()) restore(p);
  for (auto& b : model.buffers()) restore(b);

  if (opt) {
    for (std::size_t i = 0; i < opt->params().size(); ++i) {
      const auto& p = opt->params()[i];
      const CheckpointEntry* em = f.find("adam.m/" + p.name);
      const CheckpointEntry* ev = f.find("adam.v/" + p.name);
      if (!em || !ev)
        throw ConfigError("checkpoint " + path.string() +
                          ": missing optimizer state for '" + p.name + "'");
      opt->moment_m(i) = em->values;
      opt->moment_v(i) = ev->values;
    }
    const CheckpointEntry* st = f.find("meta/adam_step");
    if (!st)
      throw ConfigError("checkpoint " + path.string() +
                        ": missing meta/adam_step");
    opt->set_step_count(static_cast<long>(st->values[0]));
  }

  CheckpointMeta meta;
  const CheckpointEntry* step = f.find("meta/step");
  const CheckpointEntry* seed = f.find("meta/seed");
  if (!step || !seed)
    throw DataError("checkpoint " + path.string() + ": missing meta entries");
  meta.step = static_cast<long>(step->values[0]);
  meta.seed = detail::join_u64(seed->values);
  return meta;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct FitOptions {
  std::ostream* step_log = nullptr;  // JSON-lines, one record per step
  std::function<void(const StepRecord&)> on_step;
  std::function<void(long, std::span<const std::size_t>)> on_batch;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  long start_step = 0;                   // resume point
  long stop_step = 0;                    // 0: run to the schedule's end
};

struct FitSummary {
  long steps_run = 0;
  long total_steps = 0;
  double first_l0 = 0.0;
  double final_l0 = 0.0;
};

/// Resolved step budget: explicit total_steps, or full batches drawn from the
/// epochs-long shuffled sample stream (floor(n*epochs / batch)).
inline long resolve_total_steps(const TrainSchedule& s, std::size_t n_train) {
  if (s.batch_size < 2)
    throw ConfigError("fit: batch_size must be >= 2 (batch norm needs it)");
  if (n_train < s.batch_size)
    throw ConfigError("fit: train split (" + std::to_string(n_train) +
                      ") smaller than one batch (" +
                      std::to_string(s.batch_size) + ")");
  if (s.total_steps > 0) return s.total_steps;
  const long total = static_cast<long>(n_train * s.epochs / s.batch_size);
  if (total <= 0) throw ConfigError("fit: schedule resolves to zero steps");
  return total;
}

inline FitSummary fit(EnsembleModel& model, AdamOptimizer& opt,
                      const Dataset& data,
                      std::span<const std::size_t> train_ids,
                      const ExperimentConfig& cfg, int fold_id,
                      const FitOptions& fo = {}) {
  if (train_ids.empty()) throw UsageError("fit: empty train split");
  TrainSchedule sched = cfg.schedule;
  sched.total_steps = resolve_total_steps(sched, train_ids.size());
  const std::size_t n = train_ids.size();
  const std::size_t b = sched.batch_size;

  const auto subsets = model.strict_subsets();
  FitSummary summary;
  summary.total_steps = sched.total_steps;

  if (!fo.checkpoint_dir.empty())
    std::filesystem::create_directories(fo.checkpoint_dir);

  // Batches are consecutive windows of the concatenated per-epoch shuffles,
  // so every sample is visited once per epoch and no tail is dropped.
  long cached_epoch = -1;
  std::vector<std::size_t> cached_perm;
  auto stream_id = [&](std::size_t pos) {
    const long epoch = static_cast<long>(pos / n);
    if (epoch != cached_epoch) {
      Rng r = substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(fold_id),
                        static_cast<std::uint64_t>(epoch));
      cached_perm = random_permutation(n, r);
      cached_epoch = epoch;
    }
    return train_ids[cached_perm[pos % n]];
  };

  const long stop = fo.stop_step > 0 ? std::min(fo.stop_step, sched.total_steps)
                                     : sched.total_steps;
  long last_step = fo.start_step;
  for (long t = fo.start_step; t < stop; ++t) {
    std::vector<std::size_t> ids(b);
    for (std::size_t i = 0; i < b; ++i)
      ids[i] = stream_id(static_cast<std::size_t>(t) * b + i);
    if (fo.on_batch) fo.on_batch(t, ids);

    StepRecord rec;
    rec.step = t;
    rec.lr = poly_lr(sched, t);
    try {
      BatchTensors batch = make_batch(data, ids);
      auto out = model.forward(batch, Mode::Train);
      Tensor l0 = l2_gaze_loss(out.full_pred, batch.target);
      std::vector<Tensor> preds;
      preds.reserve(out.subsets.size());
      for (const auto& so : out.subsets) preds.push_back(so.pred);
      Rng mu_rng = substream(cfg.seed, "mu", static_cast<std::uint64_t>(fold_id),
                             static_cast<std::uint64_t>(t));
      const MuWeights mu =
          sample_mu(mu_rng, subsets, static_cast<std::uint64_t>(t));
      auto cl = combinatory_loss(subsets, preds, batch.target, mu);
      Tensor lt = total_loss(l0, cl.value, cfg.nu);

      rec.l0 = l0.item();
      rec.l_comb = cl.value.item();
      rec.l_tot = lt.item();
      if (!std::isfinite(rec.l_tot) || !std::isfinite(rec.l0) ||
          !std::isfinite(rec.l_comb))
        throw NumericError("non-finite loss");
      for (std::size_t i = 0; i < subsets.size(); ++i) {
        rec.per_subset.emplace_back(subset_key(subsets[i]),
                                    cl.per_subset[i].item());
        rec.mu.emplace_back(subset_key(subsets[i]), mu.weights[i]);
      }

      opt.zero_grad();
      backward(lt);
      opt.clip_global_norm(cfg.grad_clip_norm);
      opt.step(rec.lr);
    } catch (const NumericError& e) {
      throw NumericError("fit aborted at fold " + std::to_string(fold_id) +
                         " step " + std::to_string(t) + ": " + e.what());
    }

    if (fo.step_log) *fo.step_log << step_record_to_json(rec).dump() << "\n";
    if (fo.on_step) fo.on_step(rec);
    if (summary.steps_run == 0) summary.first_l0 = rec.l0;
    summary.final_l0 = rec.l0;
    ++summary.steps_run;
    last_step = t + 1;

    // Epoch boundary: the sample stream crossed a multiple of n.
    const long epochs_before = static_cast<long>(static_cast<std::size_t>(t) * b / n);
    const long epochs_after =
        static_cast<long>((static_cast<std::size_t>(t) + 1) * b / n);
    const bool last = t + 1 == stop;
    if (!fo.checkpoint_dir.empty() && epochs_after > epochs_before && !last)
      save_model_checkpoint(fo.checkpoint_dir / ("checkpoint_epoch" +
                                                 std::to_string(epochs_after) +
                                                 ".dsc"),
                            model, &opt, t + 1, cfg.seed);
  }

  if (!fo.checkpoint_dir.empty())
    save_model_checkpoint(fo.checkpoint_dir / "checkpoint_final.dsc", model,
                          &opt, last_step, cfg.seed);
  return summary;
}

}  // namespace deesco
