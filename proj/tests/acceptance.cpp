// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed here.
// Exit status is the number of failed criteria.

#include "oracles.hpp"

#include "pauc/eval.hpp"
#include "pauc/metriclearn.hpp"
#include "pauc/preprocess.hpp"
#include "pauc/scoring.hpp"
#include "pauc/synth.hpp"
#include "pauc/trials.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <set>

using namespace pauc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  fmt::print("[{}] {:2d} {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
  std::fflush(stdout);
}

std::vector<double> negated(std::vector<double> v) {
  for (double& x : v) x = -x;
  return v;
}

double heldout_pauc(const Eigen::MatrixXd& m, const EmbeddingSet& eval, const TrialList& trials) {
  return pauc_metric(score_trials(ScoringBackend{MahalanobisBackend{m}}, eval, trials), 0.0, 0.01);
}

// P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test_p(int k, int n) {
  double p = 0;
  for (int i = k; i <= n; ++i) p += std::exp(std::lgamma(n + 1) - std::lgamma(i + 1) - std::lgamma(n - i + 1) - n * std::log(2.0));
  return p;
}

// 1. pAUC against an explicit double loop.
Outcome pauc_brute_force() {
  const auto t0 = Clock::now();
  oracle::Rng rng(101);
  int mismatches = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    // scores on a coarse grid so that ties occur
    const auto pos = oracle::tied_scores(rng, oracle::uniform_int(rng, 1, 50), 20);
    const auto neg = oracle::tied_scores(rng, oracle::uniform_int(rng, 1, 50), 20);
    const auto k = static_cast<double>(neg.size());
    double alpha = 0, beta = 0;
    do {
      beta = oracle::uniform(rng, 1.0 / k, 1.0);
      alpha = oracle::uniform(rng) < 0.3 ? 0.0 : oracle::uniform(rng, 0, beta);
    } while (std::floor(k * beta + 1e-9) < std::max(1.0, std::ceil(k * alpha - 1e-9)));
    const double brute = oracle::brute_pauc(pos, neg, alpha, beta);
    const Eigen::VectorXd p = oracle::to_vector(pos), n = oracle::to_vector(neg);
    const double lib = pauc_empirical(p, gather(n, select_rank_window(n, alpha, beta)));
    const double metric = pauc_metric(oracle::labeled(negated(pos), negated(neg)), alpha, beta);
    mismatches += lib != brute || metric != brute;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0, fmt::format("1000 score sets, {} mismatches, {:.2f} s (limit 10 s)", mismatches, secs)};
}

// 2. Full band equals AUC.
Outcome auc_special_case() {
  oracle::Rng rng(202);
  double worst = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto tar = oracle::tied_scores(rng, oracle::uniform_int(rng, 1, 50), 15);
    const auto non = oracle::tied_scores(rng, oracle::uniform_int(rng, 1, 50), 15);
    const ScoreSet s = oracle::labeled(tar, non);
    worst = std::max(worst, std::abs(pauc_metric(s, 0.0, 1.0) - auc(s)));
  }
  return {worst <= 1e-12, fmt::format("1000 score sets, max |pAUC(0,1) - AUC| = {:.3g} (tol 1e-12)", worst)};
}

// 3. Hinge loss equals its weighted-margin decomposition.
Outcome margin_decomposition() {
  oracle::Rng rng(303);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int d = oracle::uniform_int(rng, 2, 8);
    const int s = oracle::uniform_int(rng, 2, 20);
    const EmbeddingSet set = oracle::random_set(rng, s + 5, 3, d, oracle::uniform(rng, 0.2, 2.0));
    const MiniBatch b = sample_minibatch(set, static_cast<std::size_t>(s), rng());
    const Eigen::MatrixXd m = oracle::random_spd(rng, d);
    // beta is drawn so the window holds at least one negative
    const double k = static_cast<double>(b.pairs.negatives.rows());
    const double beta = oracle::uniform(rng, std::max(0.05, 1.0 / k), 1.0);
    const double delta = oracle::uniform(rng, 0.0, 3.0);
    const Eigen::VectorXd pos = row_distances(b.pairs.positives, m);
    const Eigen::VectorXd neg = gather(row_distances(b.pairs.negatives, m), select_rank_window(row_distances(b.pairs.negatives, m), 0.0, beta));
    double hinge = 0;
    for (Eigen::Index j = 0; j < pos.size(); ++j) {
      for (Eigen::Index r = 0; r < neg.size(); ++r) hinge += std::max(0.0, delta - neg(r) + pos(j));
    }
    hinge /= static_cast<double>(pos.size() * neg.size());
    const MarginWeights<double> w = margin_weights(pos, neg, delta);
    const double decomposed = w.c + w.p_pos.dot(pos) / static_cast<double>(pos.size()) -
                              w.p_neg.dot(neg) / static_cast<double>(neg.size());
    worst = std::max(worst, std::abs(hinge - decomposed));
  }
  return {worst <= 1e-12, fmt::format("200 batches, max |hinge - decomposition| = {:.3g} (tol 1e-12)", worst)};
}

// 4. Every PPA iterate stays symmetric PSD.
Outcome psd_maintenance() {
  double worst_eig = INFINITY, worst_asym = 0;
  for (int run = 0; run < 50; ++run) {
    oracle::Rng rng(400 + run);
    const int d = 8;
    EmbeddingSet set = oracle::random_set(rng, 60, 3, d, 1.0);
    if (run % 2) set = length_normalize(set);
    HyperParams h;
    h.s = 32;
    h.eta = run % 3 == 0 ? 10.0 : oracle::uniform(rng, 0.01, 1.0);
    h.beta = oracle::uniform(rng, 0.01, 0.5);
    h.validate();
    Rng batch_rng(static_cast<std::uint64_t>(run));
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(d, d);
    for (int it = 0; it < 100; ++it) {
      const MiniBatch b = sample_minibatch(set, h.s, batch_rng, false);
      m = ppa_update(m, pauc_step(b, m, h).grad, h);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
      worst_eig = std::min(worst_eig, es.eigenvalues().minCoeff());
      worst_asym = std::max(worst_asym, max_asymmetry(m));
    }
  }
  return {worst_eig >= -1e-10 && worst_asym <= 1e-10,
          fmt::format("50 runs x 100 iterations, min eigenvalue {:.3g} (>= -1e-10), max asymmetry {:.3g} (<= 1e-10)",
                      worst_eig, worst_asym)};
}

// 5. Full-batch objective never increases.
Outcome convex_descent() {
  double worst = -INFINITY;
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec = default_train_spec(seed);
    spec.n_speakers = 40;
    spec.utts_per_speaker = 4;
    const PairSet pairs = build_pairs(length_normalize(generate(spec)));
    HyperParams h;
    h.eta = 0.1;
    h.mu = 1e-3;
    h.gamma = 0.5;
    h.max_iters = 300;
    const MetricModel m = train_pauc_metric_full_batch(pairs, h);
    for (std::size_t t = 1; t < m.history.size(); ++t) {
      const double inc = m.history[t].objective - m.history[t - 1].objective;
      worst = std::max(worst, inc);
      violations += inc > 1e-8;
    }
  }
  return {violations == 0, fmt::format("10 sets x 300 iterations, {} steps increased by more than 1e-8, largest change {:.3g}",
                                       violations, worst)};
}

// 6. Trained metric against the analytic metric and the identity.
Outcome oracle_competitiveness() {
  const auto t0 = Clock::now();
  const SynthSpec spec = default_train_spec(7);
  const EmbeddingSet train = generate(spec);
  const EmbeddingSet eval = generate(default_eval_spec(7));
  const TrialList trials = enroll_test_trials(eval);
  HyperParams h;
  h.eta = 0.001;
  h.gamma = 0.1;
  const MetricModel model = train_pauc_metric(train, h);
  const double trained = heldout_pauc(model.m, eval, trials);
  const double oracle = heldout_pauc(oracle_metric(spec), eval, trials);
  const double identity = heldout_pauc(Eigen::MatrixXd::Identity(20, 20), eval, trials);
  const double secs = seconds_since(t0);
  const bool near_oracle = std::abs(trained - oracle) <= 0.02;
  const bool beats_identity = trained - identity >= 0.05;
  return {near_oracle && beats_identity && secs < 300,
          fmt::format("pAUC trained {:.4f}, M* {:.4f}, M=I {:.4f}; |trained - M*| <= 0.02: {}; trained - M=I >= 0.05: {} "
                      "({:+.4f}); {} iterations, {:.0f} s (limit 300 s)",
                      trained, oracle, identity, near_oracle ? "yes" : "no", beats_identity ? "yes" : "no",
                      trained - identity, model.history.size(), secs)};
}

// 7. Triplets are the tetrads that share an element with their positive pair.
Outcome triplet_subset() {
  std::string detail;
  bool ok = true;
  oracle::Rng rng(707);
  const EmbeddingSet set = oracle::random_set(rng, 10, 2, 3);
  for (std::size_t s : {2, 3, 4}) {
    const MiniBatch b = sample_minibatch(set, s, rng());
    const TetradPartition tet = enumerate_tetrads(b);
    std::set<Triplet> from_tetrads;
    std::size_t n_tet12 = 0;
    for (int g = 0; g < 2; ++g) {
      for (const auto& t : tet.groups[g]) {
        from_tetrads.insert(tetrad_to_triplet(t));
        ++n_tet12;
      }
    }
    const auto triplets = enumerate_triplets(b);
    const std::set<Triplet> trip_set(triplets.begin(), triplets.end());
    const std::size_t negatives = b.pairs.negative_src.size();
    const bool same = from_tetrads == trip_set && n_tet12 == triplets.size();
    const bool counts = triplets.size() == 2 * s * (2 * s - 2) && negatives == s * (2 * s - 1) - s;
    ok = ok && same && counts;
    detail += fmt::format("s={}: {} triplets, {} negatives, sets {}; ", s, triplets.size(), negatives,
                          same ? "equal" : "differ");
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// 8. pAUCMetric >= TripletMetric >= cosine over 20 seeds.
Outcome ordering() {
  const auto t0 = Clock::now();
  const int n = 20;
  double mp = 0, mt = 0, mc = 0;
  int p_wins = 0, t_wins = 0;
  for (int seed = 0; seed < n; ++seed) {
    SynthSpec spec = default_train_spec(100 + static_cast<std::uint64_t>(seed));
    spec.n_speakers = 300;
    spec.utts_per_speaker = 6;
    spec.phi_w = linspace_diagonal(20, 0.1, 4.0);
    SynthSpec held_out = spec;
    held_out.seed += kEvalSeedOffset;
    held_out.n_speakers = 200;
    held_out.utts_per_speaker = 4;
    held_out.prefix = "evl";
    const EmbeddingSet train = length_normalize(generate(spec));
    const EmbeddingSet eval = length_normalize(generate(held_out));
    const TrialList trials = enroll_test_trials(eval);
    HyperParams h;
    h.eta = 0.1;
    h.s = 200;
    h.seed = static_cast<std::uint64_t>(seed);
    const double p = heldout_pauc(train_pauc_metric(train, h).m, eval, trials);
    const double t = heldout_pauc(train_triplet_metric(train, h).m, eval, trials);
    // M = I on length-normalized vectors ranks like cosine
    const double c = heldout_pauc(Eigen::MatrixXd::Identity(20, 20), eval, trials);
    mp += p / n;
    mt += t / n;
    mc += c / n;
    p_wins += p > t;
    t_wins += t > c;
  }
  const double pv1 = sign_test_p(p_wins, n), pv2 = sign_test_p(t_wins, n);
  const bool ok = mp >= mt && mt >= mc && pv1 < 0.05 && pv2 < 0.05;
  return {ok, fmt::format("means pAUC {:.4f} >= triplet {:.4f} >= cosine {:.4f}; sign tests {}/{} (p={:.3g}), {}/{} "
                          "(p={:.3g}), alpha 0.05; {:.0f} s",
                          mp, mt, mc, p_wins, n, pv1, t_wins, n, pv2, seconds_since(t0))};
}

// 9. Per-iteration time grows cubically in the batch size.
Outcome complexity() {
  const int d = 10;
  SynthSpec spec = default_train_spec(3);
  spec.dim = d;
  spec.n_speakers = 1000;
  spec.utts_per_speaker = 2;
  spec.phi_b = linspace_diagonal(d, 0.5, 2.0);
  spec.phi_w = Eigen::MatrixXd::Identity(d, d);
  const EmbeddingSet set = generate(spec);
  HyperParams h;
  h.beta = 1.0;  // the full negative set enters the window
  h.eta = 0.001;
  std::vector<double> xs, ys;
  std::string times;
  for (std::size_t s : {125, 250, 500, 1000}) {
    Rng rng(1);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(d, d);
    double best = INFINITY;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      const MiniBatch b = sample_minibatch(set, s, rng, false);
      m = ppa_update(m, pauc_step(b, m, h).grad, h);
      best = std::min(best, seconds_since(t0));
    }
    xs.push_back(std::log(static_cast<double>(s)));
    ys.push_back(std::log(best));
    times += fmt::format("{}:{:.4f}s ", s, best);
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / xs.size(), my += ys[i] / ys.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
  const double slope = sxy / sxx;
  return {slope >= 2.5 && slope <= 3.5, fmt::format("log-log slope {:.3f} (range [2.5, 3.5]); best of 3: {}", slope, times)};
}

// 10. Negated squared distance after length normalization ranks like raw cosine.
Outcome cosine_equivalence() {
  oracle::Rng rng(1010);
  const int d = 4;
  const double tie_tol = 1e-12;
  std::vector<double> cos, dist;
  for (int i = 0; i < 1000; ++i) {
    // small integer directions with random positive scales produce exact ties
    auto draw = [&] {
      Eigen::VectorXd v(d);
      do {
        for (int k = 0; k < d; ++k) v(k) = oracle::uniform_int(rng, -2, 2);
      } while (v.isZero());
      return Eigen::VectorXd(v * oracle::uniform(rng, 0.1, 10.0));
    };
    const Eigen::VectorXd a = draw(), b = draw();
    cos.push_back(cosine_score(a, b));
    dist.push_back(-mahalanobis_score(Eigen::MatrixXd::Identity(d, d), a.normalized(), b.normalized()));
  }
  long disagreements = 0, ties = 0;
  for (std::size_t i = 0; i < cos.size(); ++i) {
    for (std::size_t j = i + 1; j < cos.size(); ++j) {
      const int oc = std::abs(cos[i] - cos[j]) <= tie_tol ? 0 : (cos[i] > cos[j] ? 1 : -1);
      const int od = std::abs(dist[i] - dist[j]) <= 2 * tie_tol ? 0 : (dist[i] > dist[j] ? 1 : -1);
      ties += oc == 0;
      disagreements += oc != od;
    }
  }
  return {disagreements == 0, fmt::format("1000 trials, {} ordered comparisons differ, {} tied pairs preserved (tie tol {:.0e})",
                                          disagreements, ties, tie_tol)};
}

// 11. Calibration recovers an affine distortion of true LLRs.
Outcome calibration_sanity() {
  // disjoint utterance pairs keep trials nearly independent; trials that
  // share an enrollment utterance leave the offset with too few effective samples
  SynthSpec spec = default_eval_spec(11);
  spec.n_speakers = 20000;
  spec.utts_per_speaker = 2;
  const EmbeddingSet set = generate(spec);
  TrialList trials;
  for (std::size_t i = 0; i < spec.n_speakers; ++i) {
    trials.entries.push_back({set[2 * i].utt_id, set[2 * i + 1].utt_id, TrialLabel::target});
    for (std::size_t k = 1; k <= 5; ++k) {
      trials.entries.push_back(
          {set[2 * i].utt_id, set[2 * ((i + k) % spec.n_speakers) + 1].utt_id, TrialLabel::nontarget});
    }
  }
  // the difference z of a trial is N(0, 2 phi_w) for targets and
  // N(0, 2 phi_b + 2 phi_w) for nontargets; its exact log-likelihood ratio
  const Eigen::MatrixXd s0 = 2 * spec.phi_w, s1 = 2 * spec.phi_b + 2 * spec.phi_w;
  const double constant = 0.5 * (std::log(s1.determinant()) - std::log(s0.determinant()));
  const Eigen::MatrixXd m = metric_from_covariances(s0, s1);
  ScoreSet llr = score_trials(ScoringBackend{MahalanobisBackend{m}}, set, trials);
  for (auto& e : llr.entries) e.score = 0.5 * e.score + constant;
  ScoreSet distorted = llr;
  for (auto& e : distorted.entries) e.score = 2 * e.score + 3;
  const CalibrationModel cal = fit_calibration(distorted);
  const bool recovered = std::abs(cal.scale - 0.5) <= 0.05 && std::abs(cal.offset + 1.5) <= 0.05;

  ScoreSet zeros = llr;
  for (auto& e : zeros.entries) e.score = 0;
  const double c0 = cllr(zeros);

  oracle::Rng rng(1111);
  std::vector<ScoreSet> sets = {llr, distorted, apply_calibration(cal, distorted), zeros};
  for (int i = 0; i < 20; ++i) {
    sets.push_back(oracle::labeled(oracle::tied_scores(rng, 30, 12), oracle::tied_scores(rng, 200, 12)));
  }
  int order_violations = 0;
  for (const auto& s : sets) order_violations += act_dcf(s) < min_dcf(s);

  return {recovered && c0 == 1.0 && order_violations == 0,
          fmt::format("scale {:.4f} (0.5 +- 0.05), offset {:.4f} (-1.5 +- 0.05); cllr of zero scores {}; "
                      "actDCF < minDCF on {} of {} sets",
                      cal.scale, cal.offset, c0, order_violations, sets.size())};
}

// 12. PLDA recovers known covariances.
Outcome plda_recovery() {
  SynthSpec spec;
  spec.dim = 4;
  spec.n_speakers = 500;
  spec.utts_per_speaker = 10;
  spec.seed = 1212;
  oracle::Rng rng(12);
  spec.phi_b = oracle::random_spd(rng, 4, 0.5);
  spec.phi_w = oracle::random_spd(rng, 4, 0.5);
  const PldaModel m = fit_plda(generate(spec), PldaOptions{20, 1e-8});
  const double eb = (m.phi_b - spec.phi_b).norm() / spec.phi_b.norm();
  const double ew = (m.phi_w - spec.phi_w).norm() / spec.phi_w.norm();
  double worst_drop = 0;
  for (std::size_t i = 1; i < m.log_likelihood.size(); ++i) {
    worst_drop = std::min(worst_drop, m.log_likelihood[i] - m.log_likelihood[i - 1]);
  }
  // allowance for rounding in a log-likelihood of magnitude ~1e4
  const double tol = 1e-9 * std::abs(m.log_likelihood.back());
  return {eb < 0.15 && ew < 0.15 && worst_drop >= -tol,
          fmt::format("relative Frobenius error phi_b {:.4f}, phi_w {:.4f} (< 0.15); largest log-likelihood drop {:.3g} "
                      "over {} EM iterations (tol {:.1g})",
                      eb, ew, -worst_drop, m.log_likelihood.size() - 1, tol)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  report(1, "pAUC matches brute force", pauc_brute_force);
  report(2, "pAUC over [0,1] equals AUC", auc_special_case);
  report(3, "hinge loss margin decomposition", margin_decomposition);
  report(4, "PSD maintenance", psd_maintenance);
  report(5, "full-batch descent", convex_descent);
  report(6, "oracle competitiveness", oracle_competitiveness);
  report(7, "triplets within tetrads", triplet_subset);
  report(8, "method ordering", ordering);
  report(9, "cubic per-iteration cost", complexity);
  report(10, "length-norm distance vs cosine ranking", cosine_equivalence);
  report(11, "calibration sanity", calibration_sanity);
  report(12, "PLDA recovery", plda_recovery);
  fmt::print("{} of 12 criteria failed\n", failures);
  return failures;
}
