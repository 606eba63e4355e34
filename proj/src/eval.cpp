#include "pauc/eval.hpp"

#include "pauc/errors.hpp"
#include "pauc/metric_ops.hpp"
#include "pauc/model_file.hpp"
#include "text_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace pauc {

namespace {

struct Split {
  std::vector<double> target;
  std::vector<double> nontarget;
};

// Similarity scores by class; metric computation needs every label.
Split split_labeled(const ScoreSet& scores, bool need_both = true) {
  Split s;
  const auto sim = scores.similarity_scores();
  for (std::size_t i = 0; i < sim.size(); ++i) {
    switch (scores.entries[i].label) {
      case TrialLabel::target: s.target.push_back(sim[i]); break;
      case TrialLabel::nontarget: s.nontarget.push_back(sim[i]); break;
      case TrialLabel::unknown:
        throw DataError("trial " + scores.entries[i].enroll_utt + " " + scores.entries[i].test_utt +
                        " has no label; metrics need labeled trials");
    }
  }
  if (need_both && (s.target.empty() || s.nontarget.empty())) {
    throw DataError("metrics need at least one target and one nontarget trial");
  }
  return s;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

CurveSeries roc_curve(const ScoreSet& scores) {
  Split s = split_labeled(scores);
  std::sort(s.target.begin(), s.target.end());
  std::sort(s.nontarget.begin(), s.nontarget.end());
  std::vector<double> thresholds;
  thresholds.reserve(s.target.size() + s.nontarget.size());
  std::merge(s.target.begin(), s.target.end(), s.nontarget.begin(), s.nontarget.end(),
             std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  CurveSeries c;
  c.n_target = s.target.size();
  c.n_nontarget = s.nontarget.size();
  const double nt = static_cast<double>(c.n_target), nn = static_cast<double>(c.n_nontarget);
  c.points.reserve(thresholds.size() + 1);
  std::size_t miss = 0, rejected_non = 0;  // counts strictly below the threshold
  for (double t : thresholds) {
    while (miss < s.target.size() && s.target[miss] < t) ++miss;
    while (rejected_non < s.nontarget.size() && s.nontarget[rejected_non] < t) ++rejected_non;
    c.points.push_back({t, (nn - static_cast<double>(rejected_non)) / nn, static_cast<double>(miss) / nt});
  }
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return c;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double probit(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) throw DataError("probit argument outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();

  // Acklam's rational approximation (relative error ~1.2e-9), then one
  // Halley step against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

DetCurve det_curve(const ScoreSet& scores, double clamp) {
  if (!(clamp > 0.0 && clamp < 0.5)) throw DataError("DET clamp must lie in (0, 0.5)");
  DetCurve det;
  det.curve = roc_curve(scores);
  det.clamp = clamp;
  auto warp = [&](double rate) {
    const double c = std::clamp(rate, clamp, 1.0 - clamp);
    if (c != rate) det.clamped = true;
    return probit(c);
  };
  for (const auto& p : det.curve.points) {
    det.probit_fpr.push_back(warp(p.fpr));
    det.probit_fnr.push_back(warp(p.fnr));
  }
  return det;
}

double pauc_metric(const ScoreSet& scores, double alpha, double beta) {
  const Split s = split_labeled(scores);
  // Distances (lower = more target-like) so the rank window picks the
  // highest-scoring nontargets.
  Eigen::VectorXd pos(s.target.size()), neg(s.nontarget.size());
  for (std::size_t i = 0; i < s.target.size(); ++i) pos(i) = -s.target[i];
  for (std::size_t i = 0; i < s.nontarget.size(); ++i) neg(i) = -s.nontarget[i];
  const RankWindow w = select_rank_window(neg, alpha, beta);
  return pauc_empirical(pos, gather(neg, w));
}

double auc(const ScoreSet& scores) {
  Split s = split_labeled(scores);
  std::sort(s.nontarget.begin(), s.nontarget.end());
  std::int64_t below2 = 0;  // twice the number of (target > nontarget) pairs, plus ties
  for (double t : s.target) {
    auto [lo, hi] = std::equal_range(s.nontarget.begin(), s.nontarget.end(), t);
    below2 += 2 * (lo - s.nontarget.begin()) + (hi - lo);
  }
  return static_cast<double>(below2) /
         (2.0 * static_cast<double>(s.target.size()) * static_cast<double>(s.nontarget.size()));
}

double eer(const CurveSeries& curve) {
  const auto& p = curve.points;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].fpr > p[i].fnr) continue;
    if (p[i].fpr == p[i].fnr || i == 0) return p[i].fpr;
    const auto& a = p[i - 1];
    const auto& b = p[i];
    const double t = (a.fnr - a.fpr) / ((b.fpr - a.fpr) - (b.fnr - a.fnr));
    return a.fpr + t * (b.fpr - a.fpr);
  }
  return p.back().fpr;
}

double eer(const ScoreSet& scores) { return eer(roc_curve(scores)); }

double DcfParams::normalizer() const { return std::min(c_miss * p_target, c_fa * (1.0 - p_target)); }

double DcfParams::bayes_threshold() const {
  return -std::log((p_target * c_miss) / ((1.0 - p_target) * c_fa));
}

namespace {

void check_dcf(const DcfParams& p) {
  if (!(p.p_target > 0.0 && p.p_target < 1.0)) throw DataError("p_target must lie in (0, 1)");
  if (!(p.c_miss > 0.0 && p.c_fa > 0.0)) throw DataError("DCF costs must be positive");
}

double normalized_dcf(const DcfParams& p, double fnr, double fpr) {
  return (p.c_miss * p.p_target * fnr + p.c_fa * (1.0 - p.p_target) * fpr) / p.normalizer();
}

}  // namespace

double min_dcf(const ScoreSet& scores, const DcfParams& params) {
  check_dcf(params);
  const CurveSeries c = roc_curve(scores);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& pt : c.points) best = std::min(best, normalized_dcf(params, pt.fnr, pt.fpr));
  return best;
}

double act_dcf(const ScoreSet& calibrated, const DcfParams& params) {
  check_dcf(params);
  const Split s = split_labeled(calibrated);
  const double theta = params.bayes_threshold();
  const auto miss = std::count_if(s.target.begin(), s.target.end(), [&](double x) { return x < theta; });
  const auto fa = std::count_if(s.nontarget.begin(), s.nontarget.end(), [&](double x) { return x >= theta; });
  return normalized_dcf(params, static_cast<double>(miss) / static_cast<double>(s.target.size()),
                        static_cast<double>(fa) / static_cast<double>(s.nontarget.size()));
}

double average_precision(const ScoreSet& scores) {
  const auto sim = scores.similarity_scores();
  std::vector<std::pair<double, bool>> ranked;  // (score, is_target)
  ranked.reserve(sim.size());
  for (std::size_t i = 0; i < sim.size(); ++i) {
    const auto label = scores.entries[i].label;
    if (label == TrialLabel::unknown) throw DataError("average precision needs labeled trials");
    ranked.emplace_back(sim[i], label == TrialLabel::target);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return !a.second && b.second;  // nontargets first within a tie
  });
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (!ranked[k].second) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw DataError("average precision needs at least one target trial");
  return sum / static_cast<double>(hits);
}

double cllr(const ScoreSet& calibrated) {
  const Split s = split_labeled(calibrated);
  // compensated sums; a plain loop drifts by ~1e-11 over a million trials
  auto mean = [](const std::vector<double>& xs, double sign) {
    double sum = 0, comp = 0;
    for (double x : xs) {
      const double v = softplus(sign * x), t = sum + v;
      comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
      sum = t;
    }
    return (sum + comp) / static_cast<double>(xs.size());
  };
  const double tar = mean(s.target, -1.0), non = mean(s.nontarget, 1.0);
  return (tar + non) / (2.0 * std::numbers::ln2);
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

struct LogisticObjective {
  const Split& data;
  double prior;
  double logit_prior;

  // Prior-weighted cross-entropy with gradient and Hessian in (scale, offset).
  double eval(double a, double b, Eigen::Vector2d* grad, Eigen::Matrix2d* hess) const {
    double loss = 0;
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
    auto accumulate = [&](const std::vector<double>& xs, double weight, double label) {
      for (double x : xs) {
        const double z = a * x + b + logit_prior;
        // label 1 (target): softplus(-z); label 0: softplus(z)
        loss += weight * (label > 0 ? softplus(-z) : softplus(z));
        const double sig = 1.0 / (1.0 + std::exp(-z));
        const double r = weight * (sig - label);
        const double c = weight * sig * (1.0 - sig);
        g(0) += r * x;
        g(1) += r;
        h(0, 0) += c * x * x;
        h(0, 1) += c * x;
        h(1, 1) += c;
      }
    };
    accumulate(data.target, prior / static_cast<double>(data.target.size()), 1.0);
    accumulate(data.nontarget, (1.0 - prior) / static_cast<double>(data.nontarget.size()), 0.0);
    h(1, 0) = h(0, 1);
    if (grad) *grad = g;
    if (hess) *hess = h;
    return loss;
  }
};

}  // namespace

CalibrationModel fit_calibration(const ScoreSet& scores, double effective_prior) {
  if (!(effective_prior > 0.0 && effective_prior < 1.0)) {
    throw DataError("effective prior must lie in (0, 1)");
  }
  const Split data = split_labeled(scores);
  const LogisticObjective obj{data, effective_prior, std::log(effective_prior / (1.0 - effective_prior))};

  // Strictly separated classes have no finite optimum; the gradient only
  // decays exponentially, so detect the case up front.
  const double lowest_target = *std::min_element(data.target.begin(), data.target.end());
  const double highest_nontarget = *std::max_element(data.nontarget.begin(), data.nontarget.end());
  if (lowest_target > highest_nontarget) {
    spdlog::warn("calibration: classes are separable, scale capped at {}", kCalibrationScaleCap);
    const double boundary = 0.5 * (lowest_target + highest_nontarget);
    return CalibrationModel{kCalibrationScaleCap, -kCalibrationScaleCap * boundary, effective_prior, true};
  }

  double a = 0.0, b = 0.0;
  Eigen::Vector2d g;
  Eigen::Matrix2d h;
  double loss = obj.eval(a, b, &g, &h);
  bool capped = false;
  for (int it = 0; it < 200 && g.norm() >= 1e-8; ++it) {
    Eigen::Vector2d step;
    Eigen::LDLT<Eigen::Matrix2d> ldlt(h);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-300) {
      step = -ldlt.solve(g);
    } else {
      step = -g;
    }
    if (step.dot(g) >= 0) step = -g;
    double t = 1.0;
    double next = obj.eval(a + t * step(0), b + t * step(1), nullptr, nullptr);
    while (next > loss + 1e-4 * t * step.dot(g) && t > 1e-12) {
      t *= 0.5;
      next = obj.eval(a + t * step(0), b + t * step(1), nullptr, nullptr);
    }
    if (t <= 1e-12) break;
    a += t * step(0);
    b += t * step(1);
    if (std::abs(a) >= kCalibrationScaleCap) {
      capped = true;
      break;
    }
    loss = obj.eval(a, b, &g, &h);
  }
  if (!std::isfinite(a) || !std::isfinite(b)) throw NumericalError("calibration diverged");
  if (a <= 0.0) {
    throw DataError("calibration found a non-positive scale; target scores are not higher than nontarget scores");
  }
  CalibrationModel m{a, b, effective_prior, capped};
  if (capped) {
    m.scale = kCalibrationScaleCap;
    spdlog::warn("calibration: classes are separable, scale capped at {}", kCalibrationScaleCap);
  }
  return m;
}

ScoreSet apply_calibration(const CalibrationModel& model, const ScoreSet& scores) {
  ScoreSet out = scores.as_similarity();
  for (auto& e : out.entries) e.score = model.scale * e.score + model.offset;
  return out;
}

void write_calibration(const CalibrationModel& model, const std::filesystem::path& path) {
  ModelFile f;
  f.kind = "calibration";
  Eigen::MatrixXd coef(1, 2);
  coef << model.scale, model.offset;
  f.matrices.emplace_back("coefficients", coef);
  f.set_param("scale", model.scale);
  f.set_param("offset", model.offset);
  f.set_param("effective_prior", model.effective_prior);
  f.set_param("capped", model.capped ? 1.0 : 0.0);
  write_model_file(f, path);
}

CalibrationModel read_calibration(const std::filesystem::path& path) {
  ModelFile f = read_model_file(path, "coefficients");
  if (f.kind != "calibration") {
    throw DataError(path.string() + ": expected model kind 'calibration', got '" + f.kind + "'");
  }
  const auto& coef = f.matrix("coefficients");
  if (coef.rows() != 1 || coef.cols() != 2) throw DataError(path.string() + ": calibration needs a 1x2 matrix");
  CalibrationModel m{coef(0, 0), coef(0, 1), f.param_or("effective_prior", 0.01),
                     f.param_or("capped", 0.0) != 0.0};
  if (!(m.scale > 0.0) || !std::isfinite(m.scale)) throw DataError(path.string() + ": calibration scale must be positive");
  return m;
}

// ---------------------------------------------------------------------------

MetricsReport evaluate(const ScoreSet& scores, const EvaluateOptions& options) {
  MetricsReport r;
  r.eer = eer(scores);
  r.min_dcf = min_dcf(scores, options.dcf);
  // Too few nontargets leave a narrow band without a single rank; the
  // rest of the report is still meaningful.
  const std::size_t n_non = split_labeled(scores).nontarget.size();
  auto band = [&](double alpha, double beta) {
    check_fpr_band(alpha, beta);
    const auto k = static_cast<Eigen::Index>(n_non);
    if (detail::rank_floor(k, beta) < std::max<Eigen::Index>(detail::rank_ceil(k, alpha), 1)) {
      spdlog::warn("pAUC over [{}, {}] is undefined with {} nontarget trials; reported as nan", alpha, beta, n_non);
      return std::numeric_limits<double>::quiet_NaN();
    }
    return pauc_metric(scores, alpha, beta);
  };
  r.pauc_0_001 = band(0.0, 0.01);
  r.pauc_custom = band(options.alpha, options.beta);
  r.auc = auc(scores);
  r.ap = average_precision(scores);
  r.act_dcf = act_dcf(scores, options.dcf);
  r.cllr = cllr(scores);
  return r;
}

void write_curve(const CurveSeries& curve, const std::filesystem::path& path) {
  detail::LineWriter out(path);
  out.stream() << "# threshold fpr fnr\n";
  for (const auto& p : curve.points) {
    out.stream() << format_real(p.threshold) << ' ' << format_real(p.fpr) << ' ' << format_real(p.fnr) << '\n';
  }
  out.close();
}

void write_det(const DetCurve& det, const std::filesystem::path& path) {
  detail::LineWriter out(path);
  out.stream() << "# threshold fpr fnr probit_fpr probit_fnr\n";
  out.stream() << "# clamp " << format_real(det.clamp) << (det.clamped ? " applied" : " unused") << '\n';
  for (std::size_t i = 0; i < det.curve.points.size(); ++i) {
    const auto& p = det.curve.points[i];
    out.stream() << format_real(p.threshold) << ' ' << format_real(p.fpr) << ' ' << format_real(p.fnr) << ' '
                 << format_real(det.probit_fpr[i]) << ' ' << format_real(det.probit_fnr[i]) << '\n';
  }
  out.close();
}

}  // namespace pauc
