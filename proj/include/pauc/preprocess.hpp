#pragma once

#include "pauc/embeddings.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace pauc {

/// Scales every vector to unit Euclidean norm. Zero vectors are rejected.
EmbeddingSet length_normalize(const EmbeddingSet& set);

// ---------------------------------------------------------------------------
// LDA

/// Affine map x -> projection * (x - mean).
struct LdaTransform {
  Eigen::MatrixXd projection;  // out_dim x in_dim
  Eigen::VectorXd mean;        // in_dim
  Eigen::VectorXd eigenvalues; // out_dim, descending (empty for mean-only transforms)

  Eigen::Index in_dim() const { return projection.cols(); }
  Eigen::Index out_dim() const { return projection.rows(); }
};

struct LdaOptions {
  /// Scale directions so the projected within-class covariance is identity.
  bool whiten = true;
  /// Added to the within-class covariance as ridge * trace(S_w) / d * I.
  double ridge = 1e-6;
};

/// Class-mean-centred between/within generalized eigenproblem.
///
/// Rows of the projection are the generalized eigenvectors of
/// S_b v = lambda S_w v, ordered by descending eigenvalue (ties keep the
/// solver's order), with the sign fixed so the largest-magnitude
/// component of each row is positive.
LdaTransform fit_lda(const EmbeddingSet& set, Eigen::Index out_dim,
                     const LdaOptions& options = {});

/// Identity projection around the global mean of `set`.
LdaTransform fit_mean(const EmbeddingSet& set);

EmbeddingSet apply_lda(const LdaTransform& t, const EmbeddingSet& set);

void write_lda(const LdaTransform& t, const std::filesystem::path& path);
LdaTransform read_lda(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Simplified PLDA: h ~ N(0, phi_b), x ~ N(h, phi_w), after mean removal.

struct PldaModel {
  Eigen::MatrixXd phi_b;  // between-speaker covariance
  Eigen::MatrixXd phi_w;  // within-speaker covariance
  Eigen::MatrixXd w;      // rows diagonalize both: w phi_b w^T = diag(psi), w phi_w w^T = I
  Eigen::VectorXd psi;    // generalized eigenvalues, descending, >= 0
  Eigen::VectorXd mean;

  /// No speaker had two or more utterances; phi_b is not identifiable.
  bool degenerate = false;
  /// Marginal log-likelihood of the training data, before the first EM
  /// iteration and after each one.
  std::vector<double> log_likelihood;

  Eigen::Index dim() const { return mean.size(); }
};

struct PldaOptions {
  int n_iters = 10;
  /// phi_w eigenvalues are floored at floor * trace(phi_w) / d.
  double floor = 1e-8;
};

PldaModel fit_plda(const EmbeddingSet& set, const PldaOptions& options = {});

/// Builds the diagonalizing transform for given covariances.
PldaModel make_plda(const Eigen::MatrixXd& phi_b, const Eigen::MatrixXd& phi_w,
                    const Eigen::VectorXd& mean);

/// Exact log p(X) of the centred data under the two-covariance model.
double plda_log_likelihood(const EmbeddingSet& set, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& phi_b, const Eigen::MatrixXd& phi_w);

/// u = W (x - mean), rescaled so that u^T (Psi + I)^{-1} u = dim.
EmbeddingSet plda_latent(const PldaModel& model, const EmbeddingSet& set);

/// Same-speaker vs different-speaker log-likelihood ratio.
double plda_llr_score(const PldaModel& model, const Eigen::Ref<const Eigen::VectorXd>& enroll,
                      const Eigen::Ref<const Eigen::VectorXd>& test);

void write_plda(const PldaModel& model, const std::filesystem::path& path);
PldaModel read_plda(const std::filesystem::path& path);

}  // namespace pauc
