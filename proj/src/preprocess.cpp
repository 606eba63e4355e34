#include "pauc/preprocess.hpp"

#include "pauc/errors.hpp"
#include "pauc/model_file.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace pauc {

namespace {

Eigen::VectorXd global_mean(const EmbeddingSet& set) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(set.dim());
  for (const auto& r : set.records()) mean += r.vector;
  return mean / static_cast<double>(set.size());
}

// Flip each row so its largest-magnitude entry is positive.
void fix_row_signs(Eigen::MatrixXd& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0) rows.row(i) *= -1.0;
  }
}

// Generalized symmetric-definite eigenproblem a v = lambda b v. Returns
// eigenvalues descending and eigenvectors as rows, b-orthonormal.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> generalized_eigen(const Eigen::MatrixXd& a,
                                                              const Eigen::MatrixXd& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      a, b, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("generalized eigendecomposition failed");
  }
  const Eigen::Index d = a.rows();
  std::vector<Eigen::Index> order(d);
  std::iota(order.begin(), order.end(), 0);
  const auto& vals = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return vals(x) > vals(y); });
  Eigen::VectorXd sorted_vals(d);
  Eigen::MatrixXd rows(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    sorted_vals(i) = vals(order[i]);
    rows.row(i) = solver.eigenvectors().col(order[i]).transpose();
  }
  fix_row_signs(rows);
  return {sorted_vals, rows};
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double log_det_spd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

EmbeddingSet length_normalize(const EmbeddingSet& set) {
  EmbeddingSet out(set.dim());
  for (const auto& r : set.records()) {
    const double norm = r.vector.norm();
    if (!(norm > 0.0)) throw DataError("utterance '" + r.utt_id + "' has zero norm");
    out.add(r.utt_id, r.speaker_id, r.vector / norm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// LDA

LdaTransform fit_lda(const EmbeddingSet& set, Eigen::Index out_dim, const LdaOptions& options) {
  const auto speakers = set.speakers();
  const Eigen::Index d = static_cast<Eigen::Index>(set.dim());
  if (speakers.size() < 2) throw DataError("LDA needs at least two speakers");
  const Eigen::Index bound = std::min<Eigen::Index>(d, static_cast<Eigen::Index>(speakers.size()) - 1);
  if (out_dim < 1 || out_dim > bound) {
    throw DataError("LDA output dimension " + std::to_string(out_dim) + " outside [1, " +
                    std::to_string(bound) + "]");
  }

  const Eigen::VectorXd mean = global_mean(set);
  const double n_total = static_cast<double>(set.size());
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [spk, idx] : speakers) {
    Eigen::VectorXd class_mean = Eigen::VectorXd::Zero(d);
    for (auto i : idx) class_mean += set[i].vector;
    class_mean /= static_cast<double>(idx.size());
    const Eigen::VectorXd offset = class_mean - mean;
    between.noalias() += static_cast<double>(idx.size()) * offset * offset.transpose();
    for (auto i : idx) {
      const Eigen::VectorXd dev = set[i].vector - class_mean;
      within.noalias() += dev * dev.transpose();
    }
  }
  between /= n_total;
  within /= n_total;

  const double trace = within.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> check(within, Eigen::EigenvaluesOnly);
  if (check.eigenvalues()(0) <= 1e-12 * std::max(trace, 1e-300)) {
    spdlog::warn("LDA: within-class scatter is singular; relying on ridge regularization");
  }
  const double ridge = options.ridge * (trace > 0 ? trace : 1.0) / static_cast<double>(d);
  within.diagonal().array() += ridge;

  auto [vals, rows] = generalized_eigen(symmetrized(between), symmetrized(within));
  LdaTransform t;
  t.mean = mean;
  t.eigenvalues = vals.head(out_dim);
  t.projection = rows.topRows(out_dim);
  if (!options.whiten) t.projection.rowwise().normalize();
  return t;
}

LdaTransform fit_mean(const EmbeddingSet& set) {
  if (set.empty()) throw DataError("cannot estimate a mean from an empty set");
  LdaTransform t;
  t.mean = global_mean(set);
  t.projection = Eigen::MatrixXd::Identity(set.dim(), set.dim());
  return t;
}

EmbeddingSet apply_lda(const LdaTransform& t, const EmbeddingSet& set) {
  if (static_cast<Eigen::Index>(set.dim()) != t.in_dim()) {
    throw DataError("LDA expects dimension " + std::to_string(t.in_dim()) + ", got " +
                    std::to_string(set.dim()));
  }
  Eigen::MatrixXd x = set.matrix();
  x.rowwise() -= t.mean.transpose();
  return set.with_vectors(x * t.projection.transpose());
}

void write_lda(const LdaTransform& t, const std::filesystem::path& path) {
  ModelFile f;
  f.kind = "lda";
  f.matrices.emplace_back("projection", t.projection);
  f.matrices.emplace_back("mean", t.mean.transpose());
  if (t.eigenvalues.size() > 0) f.matrices.emplace_back("eigenvalues", t.eigenvalues.transpose());
  write_model_file(f, path);
}

LdaTransform read_lda(const std::filesystem::path& path) {
  ModelFile f = read_model_file(path, "projection");
  if (f.kind != "lda") throw DataError(path.string() + ": expected model kind 'lda', got '" + f.kind + "'");
  LdaTransform t;
  t.projection = f.matrix("projection");
  const auto& mean = f.matrix("mean");
  if (mean.rows() != 1 || mean.cols() != t.projection.cols()) {
    throw DataError(path.string() + ": LDA mean has the wrong shape");
  }
  t.mean = mean.row(0).transpose();
  for (const auto& [name, m] : f.matrices) {
    if (name == "eigenvalues") t.eigenvalues = m.row(0).transpose();
  }
  return t;
}

// ---------------------------------------------------------------------------
// PLDA

PldaModel make_plda(const Eigen::MatrixXd& phi_b, const Eigen::MatrixXd& phi_w,
                    const Eigen::VectorXd& mean) {
  PldaModel m;
  m.phi_b = symmetrized(phi_b);
  m.phi_w = symmetrized(phi_w);
  m.mean = mean;
  auto [vals, rows] = generalized_eigen(m.phi_b, m.phi_w);
  m.psi = vals.cwiseMax(0.0);
  m.w = rows;
  return m;
}

namespace {

struct SpeakerStats {
  double n = 0;
  Eigen::VectorXd mean;
};

struct PldaStats {
  std::vector<SpeakerStats> speakers;
  Eigen::MatrixXd within_scatter;  // sum over speakers of (x - xbar)(x - xbar)^T
  double n_total = 0;
};

PldaStats collect_stats(const EmbeddingSet& set, const Eigen::VectorXd& mean) {
  const Eigen::Index d = mean.size();
  PldaStats s;
  s.within_scatter = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [spk, idx] : set.speakers()) {
    SpeakerStats sp;
    sp.n = static_cast<double>(idx.size());
    sp.mean = Eigen::VectorXd::Zero(d);
    for (auto i : idx) sp.mean += set[i].vector - mean;
    sp.mean /= sp.n;
    for (auto i : idx) {
      const Eigen::VectorXd dev = set[i].vector - mean - sp.mean;
      s.within_scatter.noalias() += dev * dev.transpose();
    }
    s.n_total += sp.n;
    s.speakers.push_back(std::move(sp));
  }
  return s;
}

double log_likelihood(const PldaStats& stats, const Eigen::MatrixXd& phi_b,
                      const Eigen::MatrixXd& phi_w) {
  const double d = static_cast<double>(phi_w.rows());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Eigen::LLT<Eigen::MatrixXd> w_llt(phi_w);
  if (w_llt.info() != Eigen::Success) throw NumericalError("phi_w is not positive definite");
  const double logdet_w = log_det_spd(phi_w);
  double ll = -0.5 * w_llt.solve(stats.within_scatter).trace();

  std::map<double, std::pair<Eigen::LLT<Eigen::MatrixXd>, double>> by_count;
  for (const auto& sp : stats.speakers) {
    auto it = by_count.find(sp.n);
    if (it == by_count.end()) {
      Eigen::MatrixXd cov = phi_b + phi_w / sp.n;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) throw NumericalError("marginal covariance is not positive definite");
      const double logdet = log_det_spd(cov);
      it = by_count.emplace(sp.n, std::make_pair(std::move(llt), logdet)).first;
    }
    const auto& [llt, logdet] = it->second;
    ll += -0.5 * (d * log2pi + logdet + sp.mean.dot(llt.solve(sp.mean)));
    ll += -0.5 * (sp.n - 1.0) * (d * log2pi + logdet_w) - 0.5 * d * std::log(sp.n);
  }
  return ll;
}

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double rel_floor, bool& floored) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(m));
  const double floor = rel_floor * std::max(m.trace(), 1e-300) / static_cast<double>(m.rows());
  floored = (es.eigenvalues().array() < floor).any();
  if (!floored) return symmetrized(m);
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double plda_log_likelihood(const EmbeddingSet& set, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& phi_b, const Eigen::MatrixXd& phi_w) {
  return log_likelihood(collect_stats(set, mean), phi_b, phi_w);
}

PldaModel fit_plda(const EmbeddingSet& set, const PldaOptions& options) {
  const auto speakers = set.speakers();
  if (speakers.size() < 2) throw DataError("PLDA needs at least two speakers");
  if (options.n_iters < 0) throw DataError("PLDA iteration count must be non-negative");
  const Eigen::Index d = static_cast<Eigen::Index>(set.dim());

  const Eigen::VectorXd mean = global_mean(set);
  const PldaStats stats = collect_stats(set, mean);
  const bool degenerate = std::all_of(stats.speakers.begin(), stats.speakers.end(),
                                      [](const SpeakerStats& s) { return s.n < 2; });
  if (degenerate) {
    spdlog::warn("PLDA: every speaker has a single utterance; between-speaker covariance is not identifiable");
  }

  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(d, d);
  for (const auto& r : set.records()) {
    const Eigen::VectorXd c = r.vector - mean;
    total.noalias() += c * c.transpose();
  }
  total /= stats.n_total;

  bool floored = false;
  Eigen::MatrixXd phi_b = 0.5 * total;
  Eigen::MatrixXd phi_w = floor_eigenvalues(0.5 * total, options.floor, floored);
  if (floored) spdlog::warn("PLDA: within-speaker covariance floored at initialization");

  std::vector<double> trace;
  trace.push_back(log_likelihood(stats, phi_b, phi_w));

  const double n_spk = static_cast<double>(stats.speakers.size());
  for (int it = 0; it < options.n_iters; ++it) {
    // E-step: posterior of the speaker variable h given the speaker mean,
    //   cov  = phi_b - phi_b (phi_b + phi_w/n)^{-1} phi_b
    //   mean = phi_b (phi_b + phi_w/n)^{-1} xbar
    // grouped by utterance count so each distinct n is factored once.
    Eigen::MatrixXd acc_b = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd acc_w = stats.within_scatter;
    std::map<double, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> gain_by_count;
    for (const auto& sp : stats.speakers) {
      auto found = gain_by_count.find(sp.n);
      if (found == gain_by_count.end()) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(phi_b + phi_w / sp.n);
        Eigen::MatrixXd gain = ldlt.solve(phi_b).transpose();  // phi_b (phi_b + phi_w/n)^{-1}
        Eigen::MatrixXd cov = symmetrized(phi_b - gain * phi_b);
        found = gain_by_count.emplace(sp.n, std::make_pair(std::move(gain), std::move(cov))).first;
      }
      const auto& [gain, cov] = found->second;
      const Eigen::VectorXd h = gain * sp.mean;
      acc_b.noalias() += h * h.transpose() + cov;
      const Eigen::VectorXd r = sp.mean - h;
      acc_w.noalias() += sp.n * (r * r.transpose() + cov);
    }
    phi_b = symmetrized(acc_b / n_spk);
    phi_w = floor_eigenvalues(acc_w / stats.n_total, options.floor, floored);
    if (floored) spdlog::warn("PLDA: within-speaker covariance floored at iteration {}", it + 1);
    const double ll = log_likelihood(stats, phi_b, phi_w);
    if (!std::isfinite(ll)) throw NumericalError("PLDA: non-finite log-likelihood");
    trace.push_back(ll);
    spdlog::debug("PLDA EM iteration {}: log-likelihood {}", it + 1, ll);
  }

  PldaModel model = make_plda(phi_b, phi_w, mean);
  model.degenerate = degenerate;
  model.log_likelihood = std::move(trace);
  return model;
}

EmbeddingSet plda_latent(const PldaModel& model, const EmbeddingSet& set) {
  if (static_cast<Eigen::Index>(set.dim()) != model.dim()) {
    throw DataError("PLDA expects dimension " + std::to_string(model.dim()) + ", got " +
                    std::to_string(set.dim()));
  }
  const double d = static_cast<double>(model.dim());
  const Eigen::ArrayXd inv_var = (model.psi.array() + 1.0).inverse();
  EmbeddingSet out(set.dim());
  for (const auto& r : set.records()) {
    Eigen::VectorXd u = model.w * (r.vector - model.mean);
    const double q = (u.array().square() * inv_var).sum();
    if (!(q > 0.0)) throw DataError("utterance '" + r.utt_id + "' has a zero PLDA latent vector");
    u *= std::sqrt(d / q);
    out.add(r.utt_id, r.speaker_id, std::move(u));
  }
  return out;
}

double plda_llr_score(const PldaModel& model, const Eigen::Ref<const Eigen::VectorXd>& enroll,
                      const Eigen::Ref<const Eigen::VectorXd>& test) {
  if (enroll.size() != model.dim() || test.size() != model.dim()) {
    throw DataError("PLDA scoring: dimension mismatch");
  }
  const Eigen::ArrayXd a = (model.w * (enroll - model.mean)).array();
  const Eigen::ArrayXd b = (model.w * (test - model.mean)).array();
  const Eigen::ArrayXd& psi = model.psi.array();
  // Per latent dimension: same speaker has joint covariance
  // [[psi+1, psi], [psi, psi+1]]; different speakers have (psi+1) I.
  const Eigen::ArrayXd sum_sq = a.square() + b.square();
  const Eigen::ArrayXd same_det = 2.0 * psi + 1.0;
  const Eigen::ArrayXd same_quad = ((psi + 1.0) * sum_sq - 2.0 * psi * a * b) / same_det;
  const Eigen::ArrayXd diff_quad = sum_sq / (psi + 1.0);
  return (-0.5 * same_det.log() - 0.5 * same_quad + (psi + 1.0).log() + 0.5 * diff_quad).sum();
}

void write_plda(const PldaModel& model, const std::filesystem::path& path) {
  ModelFile f;
  f.kind = "plda";
  f.matrices.emplace_back("w", model.w);
  f.matrices.emplace_back("psi", model.psi.transpose());
  f.matrices.emplace_back("mean", model.mean.transpose());
  f.matrices.emplace_back("phi_b", model.phi_b);
  f.matrices.emplace_back("phi_w", model.phi_w);
  f.set_param("degenerate", model.degenerate ? 1.0 : 0.0);
  if (!model.log_likelihood.empty()) {
    f.set_param("em_iters", static_cast<double>(model.log_likelihood.size() - 1));
    f.set_param("log_likelihood", model.log_likelihood.back());
  }
  write_model_file(f, path);
}

PldaModel read_plda(const std::filesystem::path& path) {
  ModelFile f = read_model_file(path, "w");
  if (f.kind != "plda") throw DataError(path.string() + ": expected model kind 'plda', got '" + f.kind + "'");
  PldaModel m;
  m.w = f.matrix("w");
  m.psi = f.matrix("psi").row(0).transpose();
  m.mean = f.matrix("mean").row(0).transpose();
  m.phi_b = f.matrix("phi_b");
  m.phi_w = f.matrix("phi_w");
  const Eigen::Index d = m.mean.size();
  if (m.w.rows() != d || m.w.cols() != d || m.psi.size() != d || m.phi_b.rows() != d ||
      m.phi_w.rows() != d) {
    throw DataError(path.string() + ": inconsistent PLDA shapes");
  }
  m.degenerate = f.param_or("degenerate", 0.0) != 0.0;
  return m;
}

}  // namespace pauc
