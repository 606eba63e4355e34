#pragma once

#include "pauc/embeddings.hpp"
#include "pauc/errors.hpp"
#include "pauc/metric_ops.hpp"
#include "pauc/preprocess.hpp"

#include <Eigen/Dense>

#include <variant>

namespace pauc {

/// (x1 - x2)^T M (x1 - x2).
template <typename DerivedM, typename Derived1, typename Derived2>
typename DerivedM::Scalar mahalanobis_score(const Eigen::MatrixBase<DerivedM>& m,
                                            const Eigen::MatrixBase<Derived1>& x1,
                                            const Eigen::MatrixBase<Derived2>& x2) {
  if (x1.size() != x2.size() || m.rows() != x1.size() || m.cols() != x1.size()) {
    throw DataError("mahalanobis_score: dimension mismatch");
  }
  const auto z = (x1 - x2).eval();
  return z.dot(m * z);
}

template <typename Derived1, typename Derived2>
typename Derived1::Scalar cosine_score(const Eigen::MatrixBase<Derived1>& x1,
                                       const Eigen::MatrixBase<Derived2>& x2) {
  using Scalar = typename Derived1::Scalar;
  if (x1.size() != x2.size()) throw DataError("cosine_score: dimension mismatch");
  const Scalar n1 = x1.norm(), n2 = x2.norm();
  if (!(n1 > Scalar(0)) || !(n2 > Scalar(0))) throw DataError("cosine_score: zero vector");
  return x1.dot(x2) / (n1 * n2);
}

/// Sigma0^{-1} - Sigma1^{-1}: the quadratic form of the log-likelihood
/// ratio between zero-mean Gaussians N(0, Sigma0) (target) and
/// N(0, Sigma1) (non-target) on difference vectors. Not necessarily PSD.
template <typename Derived0, typename Derived1>
MatrixX<typename Derived0::Scalar> metric_from_covariances(const Eigen::MatrixBase<Derived0>& sigma0,
                                                           const Eigen::MatrixBase<Derived1>& sigma1) {
  using Scalar = typename Derived0::Scalar;
  const auto d = sigma0.rows();
  if (sigma0.cols() != d || sigma1.rows() != d || sigma1.cols() != d) {
    throw DataError("metric_from_covariances: shape mismatch");
  }
  Eigen::LLT<MatrixX<Scalar>> l0(sigma0), l1(sigma1);
  if (l0.info() != Eigen::Success || l1.info() != Eigen::Success) {
    throw DataError("metric_from_covariances: covariance is not positive definite");
  }
  const MatrixX<Scalar> eye = MatrixX<Scalar>::Identity(d, d);
  MatrixX<Scalar> m = l0.solve(eye) - l1.solve(eye);
  return Scalar(0.5) * (m + m.transpose());
}

struct CosineBackend {};
struct MahalanobisBackend {
  Eigen::MatrixXd m;
};
struct PldaBackend {
  PldaModel model;
};

/// Mahalanobis scores are distances; cosine and PLDA scores are similarities.
struct ScoringBackend {
  std::variant<MahalanobisBackend, CosineBackend, PldaBackend> kind;

  Polarity native_polarity() const;
  /// Score in the backend's native polarity.
  double score(const Eigen::Ref<const Eigen::VectorXd>& enroll,
               const Eigen::Ref<const Eigen::VectorXd>& test) const;
};

/// One score per trial, always returned in similarity polarity
/// (Mahalanobis distances are negated here and nowhere else).
ScoreSet score_trials(const ScoringBackend& backend, const EmbeddingSet& embeddings,
                      const TrialList& trials);

}  // namespace pauc
