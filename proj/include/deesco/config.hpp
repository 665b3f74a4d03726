#pragma once

// Declarative experiment description. JSON round-trips losslessly
// (parse -> serialize -> parse is a fixpoint) and unknown keys are rejected.

#include <string>
#include <vector>

#include <json.hpp>

#include "deesco/branches.hpp"
#include "deesco/folds.hpp"
#include "deesco/metrics.hpp"
#include "deesco/optim.hpp"

namespace deesco {

constexpr const char* kToolVersion = "deesco 0.1.0";

inline std::vector<BranchConfig> default_branches() {
  BranchConfig rh, ou, fc;
  rh.kind = BranchKind::Rh;
  ou.kind = BranchKind::Ou;
  fc.kind = BranchKind::Fc;
  return {rh, ou, fc};
}

struct ExperimentConfig {
  int version = 1;
  std::uint64_t seed = 1;
  std::string dataset;
  std::string output_dir = "runs/run";
  double nu = 1.0;
  std::vector<BranchConfig> branches = default_branches();
  TrainSchedule schedule;
  FoldScheme folds;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  GazeVectorConvention gaze_vector_convention = GazeVectorConvention::Spherical;
  int jobs = 1;
};

namespace detail {

inline void reject_unknown_keys(const json& j, const char* what,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok)
      throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline json branch_to_json(const BranchConfig& b) {
  return json{{"kind", to_string(b.kind)},
              {"eyes", to_string(b.eyes)},
              {"crop", {b.crop_h, b.crop_w}},
              {"heatmap_size", b.heatmap_size},
              {"conv_channels", b.conv_channels},
              {"fc_widths", b.fc_widths},
              {"gaussian_sigma", b.gaussian_sigma}};
}

inline BranchConfig branch_from_json(const json& j) {
  detail::reject_unknown_keys(j, "branch config",
                              {"kind", "eyes", "crop", "heatmap_size",
                               "conv_channels", "fc_widths", "gaussian_sigma"});
  BranchConfig b;
  try {
    b.kind = branch_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("eyes")) b.eyes = eyes_from_string(j["eyes"].get<std::string>());
    if (j.contains("crop")) {
      auto crop = j["crop"].get<std::vector<std::size_t>>();
      if (crop.size() != 2) throw ConfigError("branch crop must be [h, w]");
      b.crop_h = crop[0];
      b.crop_w = crop[1];
    }
    if (j.contains("heatmap_size"))
      b.heatmap_size = j["heatmap_size"].get<std::size_t>();
    if (j.contains("conv_channels"))
      b.conv_channels = j["conv_channels"].get<std::vector<std::size_t>>();
    if (j.contains("fc_widths"))
      b.fc_widths = j["fc_widths"].get<std::vector<std::size_t>>();
    if (j.contains("gaussian_sigma"))
      b.gaussian_sigma = j["gaussian_sigma"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("branch config: ") + e.what());
  }
  return b;
}

inline json experiment_to_json(const ExperimentConfig& c) {
  json branches = json::array();
  for (const auto& b : c.branches) branches.push_back(branch_to_json(b));
  json folds;
  if (c.folds.kind == FoldSchemeKind::Loso)
    folds = json{{"scheme", "loso"}};
  else
    folds = json{{"scheme", "kfold"}, {"k", c.folds.k}};
  return json{{"version", c.version},
              {"seed", c.seed},
              {"dataset", c.dataset},
              {"output_dir", c.output_dir},
              {"nu", c.nu},
              {"branches", branches},
              {"schedule",
               {{"base_lr", c.schedule.base_lr},
                {"total_steps", c.schedule.total_steps},
                {"power", c.schedule.power},
                {"batch_size", c.schedule.batch_size},
                {"epochs", c.schedule.epochs}}},
              {"folds", folds},
              {"grad_clip_norm", c.grad_clip_norm},
              {"gaze_vector_convention", to_string(c.gaze_vector_convention)},
              {"jobs", c.jobs}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  detail::reject_unknown_keys(
      j, "experiment config",
      {"version", "seed", "dataset", "output_dir", "nu", "branches",
       "schedule", "folds", "grad_clip_norm", "gaze_vector_convention",
       "jobs"});
  ExperimentConfig c;
  try {
    c.version = j.value("version", 1);
    if (c.version != 1)
      throw ConfigError("experiment config: unsupported version " +
                        std::to_string(c.version));
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    c.dataset = j.value("dataset", std::string{});
    c.output_dir = j.value("output_dir", c.output_dir);
    c.nu = j.value("nu", c.nu);
    if (j.contains("branches")) {
      c.branches.clear();
      for (const auto& b : j["branches"]) c.branches.push_back(branch_from_json(b));
    }
    if (j.contains("schedule")) {
      const json& s = j["schedule"];
      detail::reject_unknown_keys(
          s, "schedule",
          {"base_lr", "total_steps", "power", "batch_size", "epochs"});
      c.schedule.base_lr = s.value("base_lr", c.schedule.base_lr);
      c.schedule.total_steps = s.value("total_steps", c.schedule.total_steps);
      c.schedule.power = s.value("power", c.schedule.power);
      c.schedule.batch_size = s.value("batch_size", c.schedule.batch_size);
      c.schedule.epochs = s.value("epochs", c.schedule.epochs);
    }
    if (j.contains("folds")) {
      const json& f = j["folds"];
      detail::reject_unknown_keys(f, "folds", {"scheme", "k"});
      const std::string scheme = f.value("scheme", "loso");
      if (scheme == "loso") {
        c.folds.kind = FoldSchemeKind::Loso;
      } else if (scheme == "kfold") {
        c.folds.kind = FoldSchemeKind::Kfold;
        c.folds.k = f.value("k", 3);
      } else {
        throw ConfigError("experiment config: unknown fold scheme '" + scheme +
                          "'");
      }
    }
    c.grad_clip_norm = j.value("grad_clip_norm", 0.0);
    if (j.contains("gaze_vector_convention"))
      c.gaze_vector_convention = gaze_convention_from_string(
          j["gaze_vector_convention"].get<std::string>());
    c.jobs = j.value("jobs", 1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  if (c.branches.empty())
    throw ConfigError("experiment config: at least one branch required");
  if (c.jobs < 1) throw ConfigError("experiment config: jobs must be >= 1");
  for (const auto& b : c.branches)
    if (b.heatmap_size != c.branches[0].heatmap_size)
      throw ConfigError("experiment config: branch heatmap sizes must agree");
  return c;
}

/// "Rh+Ou+Fc" or "Rh:l+Rh:r" into branch configs, taking every field except
/// kind/eyes from the template.
inline std::vector<BranchConfig> parse_arch_preset(const std::string& preset,
                                                   const BranchConfig& tmpl) {
  std::vector<BranchConfig> out;
  std::size_t pos = 0;
  while (pos <= preset.size()) {
    const std::size_t next = preset.find('+', pos);
    std::string tok = preset.substr(
        pos, next == std::string::npos ? std::string::npos : next - pos);
    if (tok.empty()) throw ConfigError("arch preset: empty branch token");
    BranchConfig b = tmpl;
    const std::size_t colon = tok.find(':');
    if (colon != std::string::npos) {
      b.eyes = eyes_from_string(tok.substr(colon + 1));
      tok = tok.substr(0, colon);
    }
    b.kind = branch_kind_from_string(tok);
    out.push_back(b);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (out.empty()) throw ConfigError("arch preset: no branches given");
  return out;
}

}  // namespace deesco
