#pragma once

#include "pauc/embeddings.hpp"
#include "pauc/metric_ops.hpp"
#include "pauc/trials.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pauc {

struct HyperParams {
  double alpha = 0.0;   // FPR band lower end
  double beta = 0.01;   // FPR band upper end
  double delta = 1.5;   // hinge margin
  double gamma = 0.5;   // weight of the mean positive distance
  double mu = 1e-3;     // weight of tr(M) - logdet(M)
  double eta = 10.0;    // step size
  std::size_t s = 500;  // speakers per mini-batch
  std::size_t max_iters = 1000;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;

  /// Throws DataError when a value is out of range.
  void validate() const;
};

enum class Trainer { pauc, triplet };

std::string_view model_kind(Trainer trainer);

struct IterationRecord {
  double objective = 0;   // regularized objective at M_t on the iteration's batch
  double batch_pauc = 0;  // pAUC of M_t on the iteration's batch
};

/// Learned squared-Mahalanobis metric S(x1, x2) = (x1 - x2)^T M (x1 - x2).
struct MetricModel {
  Eigen::MatrixXd m;
  HyperParams hyper;
  Trainer trainer = Trainer::pauc;
  std::vector<IterationRecord> history;
  bool converged = false;

  Eigen::Index dim() const { return m.rows(); }
  /// Mean batch pAUC over the last (up to) 20 iterations.
  double train_pauc() const;
};

/// Gradient pieces of one PPA iteration.
struct Gradients {
  Eigen::MatrixXd p;      // (1/JR) sum Pi(j,r) (z_j z_j^T - z_r z_r^T)
  Eigen::MatrixXd p_pos;  // (1/J) sum z_j z_j^T
};

/// P and P_P from an explicit index matrix over (positives x window).
Gradients accumulate_gradients(const PairSet& pairs, const RankWindow& window, const IndexMatrix& pi);

/// Everything one PPA iteration needs, evaluated at m on a fixed pair set.
struct PaucStep {
  Eigen::VectorXd pos_dist;
  Eigen::VectorXd neg_dist;
  RankWindow window;
  MarginWeights<double> weights;
  double hinge = 0;      // windowed hinge loss
  double objective = 0;  // hinge + gamma-term + mu-term
  double batch_pauc = 0;
  Gradients grad;
};

PaucStep pauc_step(const PairSet& pairs, const Eigen::MatrixXd& m, const HyperParams& h);
/// Same step on a mini-batch, from the batch Gram matrix instead of the
/// explicit pair rows (batch.pairs may be empty). Pair order, and so tie
/// handling, matches build_pairs.
PaucStep pauc_step(const MiniBatch& batch, const Eigen::MatrixXd& m, const HyperParams& h);

/// Regularized pAUC objective at m on a fixed pair set (window chosen at m).
double pauc_objective(const PairSet& pairs, const Eigen::MatrixXd& m, const HyperParams& h);

/// mu * (tr M - logdet M); +inf when M is not positive definite and mu > 0.
double logdet_regularizer(const Eigen::MatrixXd& m, double mu);

/// M_{t+1} = shrink(M_t - eta (P + gamma P_P + mu I), eta mu).
Eigen::MatrixXd ppa_update(const Eigen::MatrixXd& m, const Gradients& g, const HyperParams& h);

/// Mini-batch PPA maximizing pAUC over the FPR band [alpha, beta].
MetricModel train_pauc_metric(const EmbeddingSet& set, const HyperParams& h);

/// PPA on one fixed pair set (no resampling), for max_iters iterations.
MetricModel train_pauc_metric_full_batch(const PairSet& pairs, const HyperParams& h);

// ---------------------------------------------------------------------------
// Triplet baseline

struct TripletStep {
  double hinge = 0;  // mean triplet hinge loss
  double objective = 0;
  std::size_t violated = 0;
  Gradients grad;
};

/// Mean over triplets of max(0, delta - S(anchor, negative) + S(anchor, positive)).
double triplet_loss(const MiniBatch& batch, const std::vector<Triplet>& triplets,
                    const Eigen::MatrixXd& m, double delta);

TripletStep triplet_step(const MiniBatch& batch, const Eigen::MatrixXd& m, const HyperParams& h);

/// Same sampler, regularizer and PPA update as pAUCMetric; triplet hinge loss.
MetricModel train_triplet_metric(const EmbeddingSet& set, const HyperParams& h);

// ---------------------------------------------------------------------------

void write_metric(const MetricModel& model, const std::filesystem::path& path);
MetricModel read_metric(const std::filesystem::path& path);

/// Model file kind for analytic metrics built from known covariances.
inline constexpr std::string_view kOracleMetricKind = "oraclemetric";
void write_oracle_metric(const Eigen::MatrixXd& m, const std::filesystem::path& path);

}  // namespace pauc
