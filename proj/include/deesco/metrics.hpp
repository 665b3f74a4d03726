#pragma once

// Evaluation: 3D angular error in degrees, 2D Euclidean error in millimeters,
// per-fold aggregation, and the pairwise decorrelation statistics of the
// weak predictors' signed errors.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "deesco/dataset.hpp"
#include "deesco/ensemble.hpp"
#include "deesco/folds.hpp"

namespace deesco {

/// Yaw/pitch to direction-vector conventions. Spherical is the default;
/// SquaredCos keeps a legacy variant (third component cos(beta)^2, non-unit,
/// normalized before use) selectable for comparison runs.
enum class GazeVectorConvention { Spherical, SquaredCos };

inline GazeVectorConvention gaze_convention_from_string(const std::string& s) {
  if (s == "spherical") return GazeVectorConvention::Spherical;
  if (s == "squared_cos") return GazeVectorConvention::SquaredCos;
  throw ConfigError("unknown gaze_vector_convention '" + s + "'");
}

inline const char* to_string(GazeVectorConvention c) {
  return c == GazeVectorConvention::Spherical ? "spherical" : "squared_cos";
}

inline std::array<double, 3> yawpitch_to_vec(
    double yaw, double pitch,
    GazeVectorConvention conv = GazeVectorConvention::Spherical) {
  if (conv == GazeVectorConvention::Spherical)
    return {std::cos(pitch) * std::sin(yaw), std::sin(pitch),
            std::cos(pitch) * std::cos(yaw)};
  const double cb = std::cos(pitch);
  return {std::cos(yaw) * std::sin(pitch), std::sin(yaw), cb * cb};
}

/// Angle between the two gaze directions, in degrees.
inline double angular_error_deg(
    double yaw_pred, double pitch_pred, double yaw_true, double pitch_true,
    GazeVectorConvention conv = GazeVectorConvention::Spherical) {
  const auto a = yawpitch_to_vec(yaw_pred, pitch_pred, conv);
  const auto b = yawpitch_to_vec(yaw_true, pitch_true, conv);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < 3; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na * nb);
  double c = denom > 0.0 ? dot / denom : 1.0;
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

/// Screen-space error: sqrt((du*sx)^2 + (dv*sy)^2) in millimeters.
inline double euclidean_error_mm(const std::array<double, 2>& pred,
                                 const std::array<double, 2>& truth,
                                 double sx_mm, double sy_mm) {
  if (!(sx_mm > 0.0) || !(sy_mm > 0.0))
    throw ConfigError("euclidean_error_mm: missing screen geometry");
  const double dx = (pred[0] - truth[0]) * sx_mm;
  const double dy = (pred[1] - truth[1]) * sy_mm;
  return std::sqrt(dx * dx + dy * dy);
}

/// Symmetric correlation matrix with a validity mask (zero-variance inputs
/// yield flagged-undefined entries instead of NaN).
struct CorrelationMatrix {
  std::size_t n = 0;
  std::vector<double> rho;       // n*n, row-major
  std::vector<std::uint8_t> ok;  // 1 when defined

  double at(std::size_t i, std::size_t j) const { return rho[i * n + j]; }
  bool defined(std::size_t i, std::size_t j) const { return ok[i * n + j]; }
};

/// Pearson correlation between the branches' signed error vectors.
inline CorrelationMatrix decorrelation_matrix(
    const std::vector<std::vector<double>>& branch_errors) {
  const std::size_t n = branch_errors.size();
  if (n < 2)
    throw UsageError("decorrelation_matrix: need at least 2 branches");
  const std::size_t len = branch_errors[0].size();
  if (len < 3)
    throw UsageError("decorrelation_matrix: need at least 3 error samples");
  for (const auto& v : branch_errors)
    if (v.size() != len)
      throw UsageError("decorrelation_matrix: ragged error vectors");

  std::vector<double> means(n, 0.0), vars(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double e : branch_errors[i]) means[i] += e;
    means[i] /= static_cast<double>(len);
    for (double e : branch_errors[i])
      vars[i] += (e - means[i]) * (e - means[i]);
  }

  CorrelationMatrix out;
  out.n = n;
  out.rho.assign(n * n, 0.0);
  out.ok.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.rho[i * n + i] = 1.0;
    out.ok[i * n + i] = 1;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double denom = std::sqrt(vars[i] * vars[j]);
      if (denom < 1e-24) continue;  // undefined, left flagged
      double cov = 0.0;
      for (std::size_t k = 0; k < len; ++k)
        cov += (branch_errors[i][k] - means[i]) *
               (branch_errors[j][k] - means[j]);
      const double r = cov / denom;
      out.rho[i * n + j] = out.rho[j * n + i] = r;
      out.ok[i * n + j] = out.ok[j * n + i] = 1;
    }
  }
  return out;
}

struct EvalReport {
  std::string metric;  // "angular_deg" or "euclid_mm"
  struct FoldRow {
    int fold = 0;
    std::vector<std::uint32_t> test_subjects;
    std::size_t n = 0;
    double mean_error = 0.0;
  };
  std::vector<FoldRow> per_fold;
  double overall_mean = 0.0;  // unweighted mean of per-fold means
  double overall_std = 0.0;   // sample std across folds (0 for one fold)
  double pooled_mean = 0.0;   // per-sample pooled mean
  std::size_t total_n = 0;
  std::vector<std::vector<double>> per_branch_fold_errors;  // [fold][branch]
  CorrelationMatrix decorrelation;
};

inline json eval_report_to_json(const EvalReport& r) {
  json folds = json::array();
  for (const auto& f : r.per_fold)
    folds.push_back({{"fold", f.fold},
                     {"test_subjects", f.test_subjects},
                     {"n", f.n},
                     {"mean_error", f.mean_error}});
  json rho = json::array();
  for (std::size_t i = 0; i < r.decorrelation.n; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < r.decorrelation.n; ++j) {
      if (r.decorrelation.defined(i, j))
        row.push_back(r.decorrelation.at(i, j));
      else
        row.push_back(nullptr);  // undefined, not NaN
    }
    rho.push_back(row);
  }
  return json{{"metric", r.metric},
              {"per_fold", folds},
              {"overall_mean", r.overall_mean},
              {"overall_std", r.overall_std},
              {"pooled_mean", r.pooled_mean},
              {"total_n", r.total_n},
              {"per_branch_fold_errors", r.per_branch_fold_errors},
              {"decorrelation", rho}};
}

/// Per-sample prediction record, for optional dumps and cross-command checks.
struct SamplePrediction {
  std::size_t sample_id = 0;
  int fold = 0;
  std::array<double, 2> pred_norm{0.0, 0.0};
  std::array<double, 2> truth_norm{0.0, 0.0};
  double error = 0.0;
};

struct EvalOptions {
  GazeVectorConvention convention = GazeVectorConvention::Spherical;
  std::size_t batch_size = 64;
  std::vector<SamplePrediction>* prediction_sink = nullptr;
};

/// Evaluates one trained model per fold on that fold's held-out subjects.
/// Also decodes each branch standalone for the decorrelation matrix.
inline EvalReport evaluate(std::vector<EnsembleModel*> models,
                           const std::vector<Fold>& folds, const Dataset& data,
                           TargetKind metric_kind, const EvalOptions& opt = {}) {
  if (models.size() != folds.size())
    throw UsageError("evaluate: " + std::to_string(models.size()) +
                     " models for " + std::to_string(folds.size()) + " folds");
  if (metric_kind != data.manifest().target_kind)
    throw ConfigError("evaluate: requested metric does not match the dataset "
                      "target kind");
  const auto& mf = data.manifest();
  const std::size_t n_branch = models.empty() ? 0 : models[0]->size();

  EvalReport report;
  report.metric =
      metric_kind == TargetKind::Gaze3d ? "angular_deg" : "euclid_mm";
  // Signed normalized errors pooled across folds, per branch: first all
  // gamma-axis errors, then all beta-axis errors.
  std::vector<std::vector<double>> err_u(n_branch), err_v(n_branch);

  double fold_mean_sum = 0.0, fold_mean_sq = 0.0, pooled_sum = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    EnsembleModel& model = *models[f];
    if (model.size() != n_branch)
      throw UsageError("evaluate: fold models disagree on branch count");
    const auto& ids = folds[f].test_ids;
    double err_sum = 0.0;
    std::vector<double> branch_err_sum(n_branch, 0.0);
    for (std::size_t pos = 0; pos < ids.size(); pos += opt.batch_size) {
      const std::size_t take = std::min(opt.batch_size, ids.size() - pos);
      std::vector<std::size_t> batch_ids(ids.begin() + pos,
                                         ids.begin() + pos + take);
      BatchTensors batch = make_batch(data, batch_ids);
      auto out = model.forward(batch, Mode::Eval);

      std::vector<Tensor> branch_preds;
      branch_preds.reserve(n_branch);
      for (const auto& h : out.branch_heatmaps)
        branch_preds.push_back(soft_argmax(spatial_softmax(h)));

      for (std::size_t i = 0; i < take; ++i) {
        const GazeSample& s = data.sample(batch_ids[i]);
        const std::array<double, 2> truth{batch.target.at(i * 2),
                                          batch.target.at(i * 2 + 1)};
        const std::array<double, 2> pred{out.full_pred.at(i * 2),
                                         out.full_pred.at(i * 2 + 1)};
        double err;
        if (metric_kind == TargetKind::Gaze3d) {
          const auto p = denormalize_targets(pred, s.kind, mf.ranges);
          err = angular_error_deg(p[0], p[1], s.g0, s.g1, opt.convention);
        } else {
          err = euclidean_error_mm(pred, truth, s.sx_mm, s.sy_mm);
        }
        err_sum += err;
        if (opt.prediction_sink)
          opt.prediction_sink->push_back(
              {batch_ids[i], folds[f].id, pred, truth, err});

        for (std::size_t bix = 0; bix < n_branch; ++bix) {
          const std::array<double, 2> bp{branch_preds[bix].at(i * 2),
                                         branch_preds[bix].at(i * 2 + 1)};
          err_u[bix].push_back(bp[0] - truth[0]);
          err_v[bix].push_back(bp[1] - truth[1]);
          double berr;
          if (metric_kind == TargetKind::Gaze3d) {
            const auto p = denormalize_targets(bp, s.kind, mf.ranges);
            berr = angular_error_deg(p[0], p[1], s.g0, s.g1, opt.convention);
          } else {
            berr = euclidean_error_mm(bp, truth, s.sx_mm, s.sy_mm);
          }
          branch_err_sum[bix] += berr;
        }
      }
    }
    EvalReport::FoldRow row;
    row.fold = folds[f].id;
    row.test_subjects = folds[f].test_subjects;
    row.n = ids.size();
    row.mean_error = ids.empty() ? 0.0 : err_sum / static_cast<double>(ids.size());
    report.per_fold.push_back(row);
    report.total_n += ids.size();
    pooled_sum += err_sum;
    fold_mean_sum += row.mean_error;
    fold_mean_sq += row.mean_error * row.mean_error;

    std::vector<double> branch_means;
    for (double s : branch_err_sum)
      branch_means.push_back(ids.empty() ? 0.0
                                         : s / static_cast<double>(ids.size()));
    report.per_branch_fold_errors.push_back(std::move(branch_means));
  }

  const double k = static_cast<double>(folds.size());
  report.overall_mean = fold_mean_sum / k;
  if (folds.size() > 1) {
    const double var =
        (fold_mean_sq - fold_mean_sum * fold_mean_sum / k) / (k - 1.0);
    report.overall_std = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  report.pooled_mean =
      report.total_n ? pooled_sum / static_cast<double>(report.total_n) : 0.0;

  if (n_branch >= 2 && !err_u[0].empty() && err_u[0].size() >= 2) {
    std::vector<std::vector<double>> signed_errors(n_branch);
    for (std::size_t b = 0; b < n_branch; ++b) {
      signed_errors[b] = err_u[b];
      signed_errors[b].insert(signed_errors[b].end(), err_v[b].begin(),
                              err_v[b].end());
    }
    report.decorrelation = decorrelation_matrix(signed_errors);
  }
  return report;
}

}  // namespace deesco
