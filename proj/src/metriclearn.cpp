#include "pauc/metriclearn.hpp"

#include "pauc/errors.hpp"
#include "pauc/model_file.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

namespace pauc {

void HyperParams::validate() const {
  check_fpr_band(alpha, beta);
  if (!(delta >= 0.0)) throw DataError("delta must be >= 0");
  if (!(gamma >= 0.0)) throw DataError("gamma must be >= 0");
  if (!(mu >= 0.0)) throw DataError("mu must be >= 0");
  if (!(eta > 0.0)) throw DataError("eta must be > 0");
  if (s < 2) throw DataError("batch size s must be >= 2");
  if (max_iters < 1) throw DataError("max_iters must be >= 1");
  if (!(rel_tol >= 0.0)) throw DataError("rel_tol must be >= 0");
}

std::string_view model_kind(Trainer trainer) {
  return trainer == Trainer::pauc ? "paucmetric" : "tripletmetric";
}

double MetricModel::train_pauc() const {
  if (history.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min<std::size_t>(20, history.size());
  double sum = 0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) sum += history[i].batch_pauc;
  return sum / static_cast<double>(n);
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& z, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = z.row(rows[r]);
  return out;
}

Eigen::MatrixXd positive_scatter(const PairSet& pairs) {
  const Eigen::Index j = pairs.num_positive();
  if (j == 0) throw DataError("pair set has no positive pairs");
  return weighted_scatter(pairs.positives, Eigen::VectorXd::Ones(j)) / static_cast<double>(j);
}

// Pair distances of a batch (records 2k, 2k+1 per speaker) in
// build_pairs order.
struct BatchDistances {
  Eigen::MatrixXd all;  // n x n
  Eigen::VectorXd pos;
  Eigen::VectorXd neg;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> neg_src;
};

Eigen::MatrixXd batch_matrix(const MiniBatch& batch) {
  if (batch.vectors.size() != 2 * batch.num_speakers() || batch.num_speakers() < 2) {
    throw DataError("mini-batch must hold two utterances for each of at least two speakers");
  }
  return batch.vectors.matrix();
}

BatchDistances batch_distances(const Eigen::MatrixXd& x, const Eigen::MatrixXd& m) {
  BatchDistances d;
  d.all = pairwise_distances(x, m);
  const Eigen::Index n = x.rows();
  d.pos.resize(n / 2);
  for (Eigen::Index k = 0; k < n / 2; ++k) d.pos(k) = d.all(2 * k, 2 * k + 1);
  d.neg.resize(n * (n - 1) / 2 - n / 2);
  d.neg_src.reserve(static_cast<std::size_t>(d.neg.size()));
  Eigen::Index i = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      if (b == a + 1 && a % 2 == 0) continue;
      d.neg(i++) = d.all(b, a);
      d.neg_src.emplace_back(a, b);
    }
  }
  return d;
}

// Coefficient matrix putting `w` on every positive pair (2k, 2k+1).
Eigen::MatrixXd positive_coefficients(Eigen::Index n, const Eigen::VectorXd& w) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 0; k < n / 2; ++k) c(2 * k, 2 * k + 1) = c(2 * k + 1, 2 * k) = w(k);
  return c;
}

void check_model(const Eigen::MatrixXd& m, std::size_t iter) {
  if (!m.allFinite()) {
    throw NumericalError("metric became non-finite at iteration " + std::to_string(iter));
  }
}

bool moving_average_settled(const std::vector<IterationRecord>& h, double rel_tol) {
  constexpr std::size_t kWindow = 20;
  if (rel_tol <= 0.0 || h.size() < 2 * kWindow) return false;
  double recent = 0, earlier = 0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    recent += h[h.size() - 1 - i].objective;
    earlier += h[h.size() - 1 - kWindow - i].objective;
  }
  return std::abs(recent - earlier) <= rel_tol * std::abs(earlier);
}

template <typename StepFn>
MetricModel run_ppa(Eigen::Index dim, const HyperParams& h, Trainer trainer, StepFn&& step) {
  MetricModel model;
  model.trainer = trainer;
  model.hyper = h;
  model.m = Eigen::MatrixXd::Identity(dim, dim);
  for (std::size_t t = 0; t < h.max_iters; ++t) {
    auto [objective, batch_pauc, grad] = step(t, model.m);
    if (!std::isfinite(objective)) {
      throw NumericalError("non-finite objective at iteration " + std::to_string(t) +
                           "; try a smaller eta or check the input scale");
    }
    model.history.push_back({objective, batch_pauc});
    model.m = ppa_update(model.m, grad, h);
    check_model(model.m, t);
    if (t % 50 == 0) {
      spdlog::debug("{} iteration {}: objective {:.6g} batch pAUC {:.4f}", model_kind(trainer), t,
                    objective, batch_pauc);
    }
    if (moving_average_settled(model.history, h.rel_tol)) {
      model.converged = true;
      break;
    }
  }
  return model;
}

struct StepResult {
  double objective;
  double batch_pauc;
  Gradients grad;
};

}  // namespace

Gradients accumulate_gradients(const PairSet& pairs, const RankWindow& window, const IndexMatrix& pi) {
  if (pi.rows() != pairs.num_positive() || pi.cols() != window.size()) {
    throw DataError("index matrix shape does not match positives x window");
  }
  const auto w = margin_weights(pi, 0.0);
  const Eigen::MatrixXd negs = gather_rows(pairs.negatives, window.selected);
  Gradients g;
  g.p_pos = positive_scatter(pairs);
  g.p = weighted_scatter(pairs.positives, w.p_pos) / static_cast<double>(pairs.num_positive()) -
        weighted_scatter(negs, w.p_neg) / static_cast<double>(window.size());
  return g;
}

double logdet_regularizer(const Eigen::MatrixXd& m, double mu) {
  if (mu == 0.0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return mu * (m.trace() - logdet);
}

PaucStep pauc_step(const PairSet& pairs, const Eigen::MatrixXd& m, const HyperParams& h) {
  if (pairs.num_positive() == 0 || pairs.num_negative() == 0) {
    throw DataError("pAUC step needs positive and negative pairs");
  }
  PaucStep st;
  st.pos_dist = row_distances(pairs.positives, m);
  st.neg_dist = row_distances(pairs.negatives, m);
  st.window = select_rank_window(st.neg_dist, h.alpha, h.beta);
  const Eigen::VectorXd neg_w = gather(st.neg_dist, st.window);
  st.weights = margin_weights(st.pos_dist, neg_w, h.delta);

  const double j = static_cast<double>(pairs.num_positive());
  const double r = static_cast<double>(st.window.size());
  st.hinge = st.weights.c + st.weights.p_pos.dot(st.pos_dist) / j - st.weights.p_neg.dot(neg_w) / r;
  st.objective = st.hinge + h.gamma * st.pos_dist.mean() + logdet_regularizer(m, h.mu);
  st.batch_pauc = pauc_empirical(st.pos_dist, neg_w);

  const Eigen::MatrixXd negs = gather_rows(pairs.negatives, st.window.selected);
  st.grad.p_pos = positive_scatter(pairs);
  st.grad.p = weighted_scatter(pairs.positives, st.weights.p_pos) / j -
              weighted_scatter(negs, st.weights.p_neg) / r;
  return st;
}

PaucStep pauc_step(const MiniBatch& batch, const Eigen::MatrixXd& m, const HyperParams& h) {
  const Eigen::MatrixXd x = batch_matrix(batch);
  const Eigen::Index n = x.rows();
  BatchDistances d = batch_distances(x, m);
  PaucStep st;
  st.pos_dist = std::move(d.pos);
  st.neg_dist = std::move(d.neg);
  st.window = select_rank_window(st.neg_dist, h.alpha, h.beta);
  const Eigen::VectorXd neg_w = gather(st.neg_dist, st.window);
  st.weights = margin_weights(st.pos_dist, neg_w, h.delta);

  const double j = static_cast<double>(st.pos_dist.size());
  const double r = static_cast<double>(st.window.size());
  st.hinge = st.weights.c + st.weights.p_pos.dot(st.pos_dist) / j - st.weights.p_neg.dot(neg_w) / r;
  st.objective = st.hinge + h.gamma * st.pos_dist.mean() + logdet_regularizer(m, h.mu);
  st.batch_pauc = pauc_empirical(st.pos_dist, neg_w);

  Eigen::MatrixXd c = positive_coefficients(n, st.weights.p_pos / j);
  for (Eigen::Index k = 0; k < st.window.size(); ++k) {
    const auto [a, b] = d.neg_src[static_cast<std::size_t>(st.window.selected[k])];
    c(a, b) = c(b, a) = -st.weights.p_neg(k) / r;
  }
  st.grad.p = pair_scatter(x, c);
  st.grad.p_pos = pair_scatter(x, positive_coefficients(n, Eigen::VectorXd::Constant(n / 2, 1.0 / j)));
  return st;
}

double pauc_objective(const PairSet& pairs, const Eigen::MatrixXd& m, const HyperParams& h) {
  const Eigen::VectorXd pos = row_distances(pairs.positives, m);
  const Eigen::VectorXd neg = row_distances(pairs.negatives, m);
  const auto window = select_rank_window(neg, h.alpha, h.beta);
  return hinge_pauc_loss(pos, gather(neg, window), h.delta) + h.gamma * pos.mean() +
         logdet_regularizer(m, h.mu);
}

Eigen::MatrixXd ppa_update(const Eigen::MatrixXd& m, const Gradients& g, const HyperParams& h) {
  const Eigen::Index d = m.rows();
  Eigen::MatrixXd x = m - h.eta * (g.p + h.gamma * g.p_pos + h.mu * Eigen::MatrixXd::Identity(d, d));
  x = 0.5 * (x + x.transpose());
  return psd_shrink(x, h.eta * h.mu);
}

MetricModel train_pauc_metric(const EmbeddingSet& set, const HyperParams& h) {
  h.validate();
  Rng rng(h.seed);
  return run_ppa(static_cast<Eigen::Index>(set.dim()), h, Trainer::pauc,
                 [&](std::size_t, const Eigen::MatrixXd& m) {
                   const MiniBatch batch = sample_minibatch(set, h.s, rng, false);
                   PaucStep st = pauc_step(batch, m, h);
                   return StepResult{st.objective, st.batch_pauc, std::move(st.grad)};
                 });
}

MetricModel train_pauc_metric_full_batch(const PairSet& pairs, const HyperParams& h) {
  check_fpr_band(h.alpha, h.beta);
  if (!(h.eta > 0.0) || h.max_iters < 1) throw DataError("full-batch training needs eta > 0 and max_iters >= 1");
  HyperParams fixed = h;
  fixed.rel_tol = 0.0;
  return run_ppa(pairs.positives.cols(), fixed, Trainer::pauc,
                 [&](std::size_t, const Eigen::MatrixXd& m) {
                   PaucStep st = pauc_step(pairs, m, fixed);
                   return StepResult{st.objective, st.batch_pauc, std::move(st.grad)};
                 });
}

// ---------------------------------------------------------------------------
// Triplet baseline

double triplet_loss(const MiniBatch& batch, const std::vector<Triplet>& triplets,
                    const Eigen::MatrixXd& m, double delta) {
  if (triplets.empty()) throw DataError("no triplets to evaluate");
  const Eigen::MatrixXd dist = pairwise_distances(batch.vectors.matrix(), m);
  double total = 0;
  for (const auto& t : triplets) {
    total += std::max(0.0, delta - dist(t.negative, t.anchor) + dist(t.positive, t.anchor));
  }
  return total / static_cast<double>(triplets.size());
}

TripletStep triplet_step(const MiniBatch& batch, const Eigen::MatrixXd& m, const HyperParams& h) {
  const Eigen::MatrixXd x = batch_matrix(batch);
  const Eigen::Index n = x.rows();
  const Eigen::MatrixXd dist = pairwise_distances(x, m);

  // Net coefficient of z_ab z_ab^T per pair, accumulated in the lower
  // triangle. Triplets follow enumerate_triplets: anchor a, its partner
  // a ^ 1, every vector of another speaker.
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(n, n);
  TripletStep st;
  double total = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index p = a ^ 1;
    const double bar = h.delta + dist(p, a);
    for (Eigen::Index v = 0; v < n; ++v) {
      if ((v >> 1) == (a >> 1)) continue;
      const double loss = bar - dist(v, a);
      if (loss > 0.0) {
        total += loss;
        ++st.violated;
        coef(std::max(a, p), std::min(a, p)) += 1.0;
        coef(std::max(a, v), std::min(a, v)) -= 1.0;
      }
    }
  }
  const double count = static_cast<double>(n) * static_cast<double>(n - 2);
  st.hinge = total / count;
  coef = coef.triangularView<Eigen::StrictlyLower>();
  coef += coef.transpose().eval();
  st.grad.p = pair_scatter(x, coef) / count;
  const double j = static_cast<double>(n / 2);
  st.grad.p_pos = pair_scatter(x, positive_coefficients(n, Eigen::VectorXd::Constant(n / 2, 1.0 / j)));
  Eigen::VectorXd pos(n / 2);
  for (Eigen::Index k = 0; k < n / 2; ++k) pos(k) = dist(2 * k, 2 * k + 1);
  st.objective = st.hinge + h.gamma * pos.mean() + logdet_regularizer(m, h.mu);
  return st;
}

MetricModel train_triplet_metric(const EmbeddingSet& set, const HyperParams& h) {
  h.validate();
  Rng rng(h.seed);
  return run_ppa(static_cast<Eigen::Index>(set.dim()), h, Trainer::triplet,
                 [&](std::size_t, const Eigen::MatrixXd& m) {
                   const MiniBatch batch = sample_minibatch(set, h.s, rng, false);
                   TripletStep st = triplet_step(batch, m, h);
                   const BatchDistances d = batch_distances(batch_matrix(batch), m);
                   const double bp = pauc_empirical(d.pos, gather(d.neg, select_rank_window(d.neg, h.alpha, h.beta)));
                   return StepResult{st.objective, bp, std::move(st.grad)};
                 });
}

// ---------------------------------------------------------------------------

void write_metric(const MetricModel& model, const std::filesystem::path& path) {
  ModelFile f;
  f.kind = std::string(model_kind(model.trainer));
  f.matrices.emplace_back("m", model.m);
  const auto& h = model.hyper;
  f.set_param("alpha", h.alpha);
  f.set_param("beta", h.beta);
  f.set_param("delta", h.delta);
  f.set_param("gamma", h.gamma);
  f.set_param("mu", h.mu);
  f.set_param("eta", h.eta);
  f.set_param("s", static_cast<double>(h.s));
  f.set_param("max_iters", static_cast<double>(h.max_iters));
  f.set_param("rel_tol", h.rel_tol);
  f.set_param("seed", static_cast<double>(h.seed));
  f.set_param("iterations", static_cast<double>(model.history.size()));
  f.set_param("converged", model.converged ? 1.0 : 0.0);
  if (!model.history.empty()) f.set_param("train_pauc", model.train_pauc());
  write_model_file(f, path);
}

MetricModel read_metric(const std::filesystem::path& path) {
  ModelFile f = read_model_file(path, "m");
  MetricModel model;
  if (f.kind == "paucmetric") {
    model.trainer = Trainer::pauc;
  } else if (f.kind == "tripletmetric") {
    model.trainer = Trainer::triplet;
  } else if (f.kind != kOracleMetricKind) {
    throw DataError(path.string() + ": not a metric model (kind '" + f.kind + "')");
  }
  model.m = f.matrix("m");
  if (model.m.rows() != model.m.cols()) throw DataError(path.string() + ": metric matrix is not square");
  auto& h = model.hyper;
  h.alpha = f.param_or("alpha", h.alpha);
  h.beta = f.param_or("beta", h.beta);
  h.delta = f.param_or("delta", h.delta);
  h.gamma = f.param_or("gamma", h.gamma);
  h.mu = f.param_or("mu", h.mu);
  h.eta = f.param_or("eta", h.eta);
  h.s = static_cast<std::size_t>(f.param_or("s", static_cast<double>(h.s)));
  h.max_iters = static_cast<std::size_t>(f.param_or("max_iters", static_cast<double>(h.max_iters)));
  h.rel_tol = f.param_or("rel_tol", h.rel_tol);
  h.seed = static_cast<std::uint64_t>(f.param_or("seed", 0.0));
  model.converged = f.param_or("converged", 0.0) != 0.0;
  return model;
}

void write_oracle_metric(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  ModelFile f;
  f.kind = std::string(kOracleMetricKind);
  f.matrices.emplace_back("m", m);
  write_model_file(f, path);
}

}  // namespace pauc
