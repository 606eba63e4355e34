#pragma once

// Scalar-generic kernels of partial-AUC metric learning. Scores here are
// distances: a positive (same-speaker) pair should score lower than a
// negative one.

#include "pauc/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace pauc {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using IndexMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Negatives whose ascending-distance rank lies in [max(k_alpha, 1), k_beta].
struct RankWindow {
  Eigen::Index k_alpha = 0;  // ceil(K alpha)
  Eigen::Index k_beta = 0;   // floor(K beta)
  std::vector<Eigen::Index> selected;  // in rank order

  Eigen::Index size() const { return static_cast<Eigen::Index>(selected.size()); }
};

namespace detail {

// K*alpha is often meant to be an integer (K=10, alpha=0.2); absorb the
// representation error of alpha before rounding.
inline Eigen::Index rank_ceil(Eigen::Index k, double frac) {
  const double x = static_cast<double>(k) * frac;
  return static_cast<Eigen::Index>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

inline Eigen::Index rank_floor(Eigen::Index k, double frac) {
  const double x = static_cast<double>(k) * frac;
  return static_cast<Eigen::Index>(std::floor(x + 1e-9 * std::max(1.0, x)));
}

}  // namespace detail

inline void check_fpr_band(double alpha, double beta) {
  if (!(alpha >= 0.0 && alpha < 1.0 && beta > 0.0 && beta <= 1.0 && alpha < beta)) {
    throw DataError("FPR band requires 0 <= alpha < beta <= 1");
  }
}

/// Selects the rank band of the smallest negative distances. Ties are
/// ordered by input position.
template <typename Derived>
RankWindow select_rank_window(const Eigen::DenseBase<Derived>& neg_dist, double alpha, double beta) {
  check_fpr_band(alpha, beta);
  const Eigen::Index k = neg_dist.size();
  if (k < 1) throw DataError("rank window needs at least one negative");
  RankWindow w;
  w.k_alpha = detail::rank_ceil(k, alpha);
  w.k_beta = detail::rank_floor(k, beta);
  const Eigen::Index first = std::max<Eigen::Index>(w.k_alpha, 1);
  if (w.k_beta < first) throw DataError("window empty; increase beta or batch size");

  std::vector<Eigen::Index> order(k);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    const auto da = neg_dist(a), db = neg_dist(b);
    return da < db || (da == db && a < b);
  };
  if (w.k_beta < k) {
    std::nth_element(order.begin(), order.begin() + w.k_beta, order.end(), less);
  }
  std::sort(order.begin(), order.begin() + w.k_beta, less);
  w.selected.assign(order.begin() + (first - 1), order.begin() + w.k_beta);
  return w;
}

/// Gathers the windowed entries of `neg_dist`.
template <typename Derived>
VectorX<typename Derived::Scalar> gather(const Eigen::DenseBase<Derived>& neg_dist,
                                         const RankWindow& w) {
  VectorX<typename Derived::Scalar> out(w.size());
  for (Eigen::Index r = 0; r < w.size(); ++r) out(r) = neg_dist(w.selected[r]);
  return out;
}

/// Strict (positive > negative) and tie counts over all J x R pairs.
struct PairCounts {
  std::int64_t greater = 0;
  std::int64_t equal = 0;
};

template <typename DerivedP, typename DerivedN>
PairCounts count_violations(const Eigen::DenseBase<DerivedP>& pos, const Eigen::DenseBase<DerivedN>& neg) {
  using Scalar = typename DerivedP::Scalar;
  std::vector<Scalar> sorted(pos.size());
  for (Eigen::Index j = 0; j < pos.size(); ++j) sorted[j] = pos(j);
  std::sort(sorted.begin(), sorted.end());
  PairCounts c;
  for (Eigen::Index r = 0; r < neg.size(); ++r) {
    const Scalar v = neg(r);
    auto [lo, hi] = std::equal_range(sorted.begin(), sorted.end(), v);
    c.equal += hi - lo;
    c.greater += sorted.end() - hi;
  }
  return c;
}

/// Normalized empirical AUC between positive distances and the windowed
/// negative distances, ties counting one half.
template <typename DerivedP, typename DerivedN>
double pauc_empirical(const Eigen::DenseBase<DerivedP>& pos, const Eigen::DenseBase<DerivedN>& neg_window) {
  if (pos.size() < 1 || neg_window.size() < 1) throw DataError("pAUC needs at least one positive and one negative");
  const PairCounts c = count_violations(pos, neg_window);
  const double denom = 2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg_window.size());
  return 1.0 - static_cast<double>(2 * c.greater + c.equal) / denom;
}

/// Mean of max(0, delta - S_neg + S_pos) over the J x R grid.
template <typename DerivedP, typename DerivedN>
typename DerivedP::Scalar hinge_pauc_loss(const Eigen::DenseBase<DerivedP>& pos,
                                          const Eigen::DenseBase<DerivedN>& neg_window,
                                          typename DerivedP::Scalar delta) {
  using Scalar = typename DerivedP::Scalar;
  if (pos.size() < 1 || neg_window.size() < 1) throw DataError("hinge loss needs non-empty inputs");
  Scalar total(0);
  for (Eigen::Index j = 0; j < pos.size(); ++j) {
    Scalar row(0);
    for (Eigen::Index r = 0; r < neg_window.size(); ++r) {
      row += std::max(Scalar(0), delta - neg_window(r) + pos(j));
    }
    total += row;
  }
  return total / (Scalar(pos.size()) * Scalar(neg_window.size()));
}

/// Pi(j, r) = [delta + S_pos(j) > S_neg(r)].
template <typename DerivedP, typename DerivedN>
IndexMatrix index_matrix(const Eigen::DenseBase<DerivedP>& pos, const Eigen::DenseBase<DerivedN>& neg_window,
                         typename DerivedP::Scalar delta) {
  IndexMatrix pi(pos.size(), neg_window.size());
  for (Eigen::Index r = 0; r < neg_window.size(); ++r) {
    for (Eigen::Index j = 0; j < pos.size(); ++j) pi(j, r) = delta + pos(j) > neg_window(r);
  }
  return pi;
}

/// Row/column means of the index matrix and the constant of the margin
/// decomposition:
///   loss = c + (1/J) sum_j p_pos(j) S_pos(j) - (1/R) sum_r p_neg(r) S_neg(r)
template <typename Scalar>
struct MarginWeights {
  VectorX<Scalar> p_pos;  // J
  VectorX<Scalar> p_neg;  // R
  Scalar c = 0;
  std::int64_t active = 0;  // number of ones in the index matrix
};

template <typename Scalar>
MarginWeights<Scalar> margin_weights(const IndexMatrix& pi, Scalar delta) {
  MarginWeights<Scalar> w;
  const auto j = pi.rows(), r = pi.cols();
  const Eigen::ArrayXd rows = pi.cast<double>().rowwise().sum();
  const Eigen::ArrayXd cols = pi.cast<double>().colwise().sum().transpose();
  w.p_pos = (rows / static_cast<double>(r)).cast<Scalar>().matrix();
  w.p_neg = (cols / static_cast<double>(j)).cast<Scalar>().matrix();
  w.active = static_cast<std::int64_t>(rows.sum());
  w.c = delta * Scalar(w.active) / (Scalar(j) * Scalar(r));
  return w;
}

/// Same as margin_weights(index_matrix(pos, neg, delta), delta) without
/// materializing the J x R matrix.
template <typename DerivedP, typename DerivedN>
MarginWeights<typename DerivedP::Scalar> margin_weights(const Eigen::DenseBase<DerivedP>& pos,
                                                        const Eigen::DenseBase<DerivedN>& neg_window,
                                                        typename DerivedP::Scalar delta) {
  using Scalar = typename DerivedP::Scalar;
  const Eigen::Index j_count = pos.size(), r_count = neg_window.size();
  std::vector<Scalar> neg(r_count);
  for (Eigen::Index r = 0; r < r_count; ++r) neg[r] = neg_window(r);
  std::vector<std::int64_t> col_hits(r_count, 0);
  std::vector<std::int64_t> row_hits(j_count, 0);
  std::int64_t active = 0;
  for (Eigen::Index j = 0; j < j_count; ++j) {
    const Scalar bar = delta + pos(j);
    std::int64_t hits = 0;
    std::int64_t* col = col_hits.data();
    const Scalar* n = neg.data();
    for (Eigen::Index r = 0; r < r_count; ++r) {
      const std::int64_t on = bar > n[r];
      hits += on;
      col[r] += on;
    }
    row_hits[j] = hits;
    active += hits;
  }
  MarginWeights<Scalar> w;
  w.p_pos.resize(j_count);
  w.p_neg.resize(r_count);
  for (Eigen::Index j = 0; j < j_count; ++j) w.p_pos(j) = Scalar(row_hits[j]) / Scalar(r_count);
  for (Eigen::Index r = 0; r < r_count; ++r) w.p_neg(r) = Scalar(col_hits[r]) / Scalar(j_count);
  w.active = active;
  w.c = delta * Scalar(active) / (Scalar(j_count) * Scalar(r_count));
  return w;
}

/// Squared Mahalanobis distance of every row of z under m.
template <typename DerivedZ, typename DerivedM>
VectorX<typename DerivedZ::Scalar> row_distances(const Eigen::MatrixBase<DerivedZ>& z,
                                                 const Eigen::MatrixBase<DerivedM>& m) {
  return ((z * m).array() * z.array()).rowwise().sum().matrix();
}

/// sum_i w_i z_i z_i^T for rows z_i of z.
template <typename DerivedZ, typename DerivedW>
MatrixX<typename DerivedZ::Scalar> weighted_scatter(const Eigen::MatrixBase<DerivedZ>& z,
                                                    const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedZ::Scalar;
  if (z.rows() == 0) return MatrixX<Scalar>::Zero(z.cols(), z.cols());
  MatrixX<Scalar> weighted = (z.array().colwise() * w.array()).matrix();
  MatrixX<Scalar> out = weighted.transpose() * z;
  return Scalar(0.5) * (out + out.transpose());
}

/// All pairwise squared distances between the rows of x, through the Gram
/// matrix: D(a, b) = q_a + q_b - 2 x_a^T m x_b with q_a = x_a^T m x_a.
template <typename DerivedX, typename DerivedM>
MatrixX<typename DerivedX::Scalar> pairwise_distances(const Eigen::MatrixBase<DerivedX>& x,
                                                      const Eigen::MatrixBase<DerivedM>& m) {
  using Scalar = typename DerivedX::Scalar;
  const MatrixX<Scalar> xm = x * m;
  MatrixX<Scalar> g = xm * x.transpose();
  const VectorX<Scalar> q = g.diagonal();
  g = (-Scalar(2) * g).colwise() + q;
  g.rowwise() += q.transpose();
  // the sums above associate differently for (a, b) and (b, a)
  MatrixX<Scalar> d = Scalar(0.5) * (g + g.transpose());
  d.diagonal().setZero();
  return d;
}

/// sum over a < b of c(a, b) (x_a - x_b)(x_a - x_b)^T for symmetric c,
/// computed as x^T (diag(c 1) - c) x. The diagonal of c is ignored.
template <typename DerivedX, typename DerivedC>
MatrixX<typename DerivedX::Scalar> pair_scatter(const Eigen::MatrixBase<DerivedX>& x,
                                                const Eigen::MatrixBase<DerivedC>& c) {
  using Scalar = typename DerivedX::Scalar;
  MatrixX<Scalar> lap = -c;
  lap.diagonal().setZero();
  lap.diagonal() = -lap.rowwise().sum().eval();
  MatrixX<Scalar> out = x.transpose() * (lap * x);
  return Scalar(0.5) * (out + out.transpose());
}

template <typename Derived>
typename Derived::Scalar max_asymmetry(const Eigen::MatrixBase<Derived>& x) {
  return (x - x.transpose()).cwiseAbs().maxCoeff();
}

/// phi(v) = (sqrt(v^2 + 4 lambda) + v) / 2, evaluated without cancellation.
template <typename Scalar>
Scalar shrink_eigenvalue(Scalar v, Scalar lambda) {
  using std::sqrt;
  const Scalar root = sqrt(v * v + Scalar(4) * lambda);
  if (v >= Scalar(0)) return (root + v) / Scalar(2);
  if (lambda == Scalar(0)) return Scalar(0);
  return Scalar(2) * lambda / (root - v);
}

/// Proximal map of lambda * (-logdet) onto the PSD cone: applies
/// shrink_eigenvalue to every eigenvalue of the symmetric input.
template <typename Derived>
MatrixX<typename Derived::Scalar> psd_shrink(const Eigen::MatrixBase<Derived>& x,
                                             typename Derived::Scalar lambda) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != x.cols()) throw DataError("psd_shrink needs a square matrix");
  if (!(lambda >= Scalar(0))) throw DataError("psd_shrink needs lambda >= 0");
  if (!x.allFinite()) throw NumericalError("psd_shrink input is not finite");
  if (x.size() > 0 && max_asymmetry(x) > Scalar(1e-8)) {
    throw DataError("psd_shrink input is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(MatrixX<Scalar>(x), Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in psd_shrink");
  VectorX<Scalar> vals = es.eigenvalues().unaryExpr([lambda](Scalar v) { return shrink_eigenvalue(v, lambda); });
  MatrixX<Scalar> out = es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
  return Scalar(0.5) * (out + out.transpose());
}

}  // namespace pauc
