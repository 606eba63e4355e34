#pragma once

#include "pauc/embeddings.hpp"

#include <filesystem>
#include <vector>

namespace pauc {

/// A trial is accepted when its similarity score is >= threshold.
struct CurvePoint {
  double threshold;
  double fpr;
  double fnr;
};

/// Empirical operating points, one per distinct score (ascending), then a
/// final point at threshold +inf. The first point accepts everything
/// (fpr = 1, fnr = 0) and the last rejects everything (fpr = 0, fnr = 1).
struct CurveSeries {
  std::vector<CurvePoint> points;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
};

CurveSeries roc_curve(const ScoreSet& scores);

/// Inverse of the standard normal CDF. Returns -inf/+inf at 0/1.
double probit(double p);
double normal_cdf(double x);

struct DetCurve {
  CurveSeries curve;
  std::vector<double> probit_fpr;
  std::vector<double> probit_fnr;
  double clamp = 1e-6;  // rates were clamped to [clamp, 1 - clamp] before warping
  bool clamped = false; // at least one rate hit the clamp
};

DetCurve det_curve(const ScoreSet& scores, double clamp = 1e-6);

/// Normalized partial AUC over the false-positive band [alpha, beta].
double pauc_metric(const ScoreSet& scores, double alpha, double beta);

/// Wilcoxon-Mann-Whitney statistic, ties counting one half.
double auc(const ScoreSet& scores);

/// Rate where fpr = fnr, interpolating linearly between the two adjacent
/// operating points that bracket the crossing.
double eer(const ScoreSet& scores);
double eer(const CurveSeries& curve);

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  /// min(c_miss p_target, c_fa (1 - p_target)); the DCF of the best trivial system.
  double normalizer() const;
  /// Bayes threshold on calibrated log-likelihood ratios.
  double bayes_threshold() const;
};

double min_dcf(const ScoreSet& scores, const DcfParams& params = {});

/// Normalized DCF when accepting llr >= bayes_threshold().
double act_dcf(const ScoreSet& calibrated, const DcfParams& params = {});

/// Mean precision at each target's rank, ranking by descending score with
/// nontargets placed ahead of targets inside a tie group.
double average_precision(const ScoreSet& scores);

/// Cost of log-likelihood ratio in bits.
double cllr(const ScoreSet& calibrated);

// ---------------------------------------------------------------------------
// Calibration

/// llr = scale * score + offset.
struct CalibrationModel {
  double scale = 1.0;
  double offset = 0.0;
  double effective_prior = 0.01;
  /// Scale hit kCalibrationScaleCap (classes perfectly separable).
  bool capped = false;
};

inline constexpr double kCalibrationScaleCap = 1e4;

/// Prior-weighted linear logistic regression on labeled similarity scores.
CalibrationModel fit_calibration(const ScoreSet& scores, double effective_prior = 0.01);

ScoreSet apply_calibration(const CalibrationModel& model, const ScoreSet& scores);

void write_calibration(const CalibrationModel& model, const std::filesystem::path& path);
CalibrationModel read_calibration(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct MetricsReport {
  double eer = 0;
  double min_dcf = 0;
  double pauc_0_001 = 0;   // pAUC over FPR [0, 0.01]; nan if no nontarget rank falls in the band
  double pauc_custom = 0;  // pAUC over the requested band; nan likewise
  double auc = 0;
  double ap = 0;
  double act_dcf = 0;
  double cllr = 0;
};

struct EvaluateOptions {
  double alpha = 0.0;
  double beta = 0.01;
  DcfParams dcf;
};

MetricsReport evaluate(const ScoreSet& scores, const EvaluateOptions& options = {});

void write_curve(const CurveSeries& curve, const std::filesystem::path& path);
void write_det(const DetCurve& det, const std::filesystem::path& path);

}  // namespace pauc
