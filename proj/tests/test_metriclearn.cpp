#include "oracles.hpp"

#include "pauc/errors.hpp"
#include "pauc/metriclearn.hpp"
#include "pauc/preprocess.hpp"

#include <doctest.h>

#include <cmath>

using namespace pauc;
using doctest::Approx;

namespace {

// Two speakers far apart with near-identical utterances: every hinge margin holds.
MiniBatch separated_batch() {
  EmbeddingSet v(2);
  v.add("a0", "A", Eigen::Vector2d(0.0, 0.0));
  v.add("a1", "A", Eigen::Vector2d(0.01, 0.0));
  v.add("b0", "B", Eigen::Vector2d(10.0, 0.0));
  v.add("b1", "B", Eigen::Vector2d(10.0, 0.01));
  MiniBatch b{{"A", "B"}, v, {}};
  b.pairs = build_pairs(v);
  return b;
}

MiniBatch random_batch(oracle::Rng& rng, int s, int d) {
  const EmbeddingSet set = oracle::random_set(rng, s + 3, 3, d);
  return sample_minibatch(set, static_cast<std::size_t>(s), rng());
}

Eigen::MatrixXd random_symmetric(oracle::Rng& rng, int d) {
  const Eigen::MatrixXd a = oracle::gaussian_matrix(rng, d, d);
  return 0.5 * (a + a.transpose());
}

// Objective without the mu term, window chosen at m.
double smooth_part(const PairSet& pairs, const Eigen::MatrixXd& m, const HyperParams& h) {
  HyperParams no_mu = h;
  no_mu.mu = 0.0;
  return pauc_objective(pairs, m, no_mu);
}

}  // namespace

TEST_CASE("hyperparameter validation") {
  HyperParams h;
  CHECK_NOTHROW(h.validate());
  CHECK(h.alpha == 0.0);
  CHECK(h.beta == 0.01);
  CHECK(h.mu == 1e-3);
  CHECK(h.eta == 10.0);
  CHECK(h.s == 500);
  CHECK(h.gamma == 0.5);
  CHECK(h.delta == 1.5);
  auto bad = [](auto mutate) {
    HyperParams x;
    mutate(x);
    return x;
  };
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.beta = 0.0; }).validate(), DataError);
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.alpha = 0.5, x.beta = 0.4; }).validate(), DataError);
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.delta = -1; }).validate(), DataError);
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.eta = 0; }).validate(), DataError);
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.mu = -1; }).validate(), DataError);
  CHECK_THROWS_AS(bad([](HyperParams& x) { x.s = 1; }).validate(), DataError);
}

TEST_CASE("no violations and no regularizers leave M unchanged") {
  const MiniBatch b = separated_batch();
  HyperParams h;
  h.gamma = 0.0;
  h.mu = 0.0;
  h.beta = 1.0;
  h.delta = 1.0;
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  const PaucStep st = pauc_step(b.pairs, m, h);
  CHECK(st.weights.active == 0);
  CHECK(st.hinge == 0.0);
  CHECK((ppa_update(m, st.grad, h) - m).cwiseAbs().maxCoeff() < 1e-14);

  const TripletStep tst = triplet_step(b, m, h);
  CHECK(tst.violated == 0);
  CHECK((ppa_update(m, tst.grad, h) - m).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mini-batch step equals the explicit pair step") {
  oracle::Rng rng(1);
  HyperParams h;
  h.beta = 0.2;
  for (int rep = 0; rep < 20; ++rep) {
    const MiniBatch b = random_batch(rng, 12, 4);
    const Eigen::MatrixXd m = oracle::random_spd(rng, 4);
    const PaucStep a = pauc_step(b.pairs, m, h);
    const PaucStep c = pauc_step(b, m, h);
    CHECK(a.window.selected == c.window.selected);
    CHECK(a.objective == Approx(c.objective).epsilon(1e-12));
    CHECK(a.batch_pauc == c.batch_pauc);
    CHECK((a.grad.p - c.grad.p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.grad.p_pos - c.grad.p_pos).cwiseAbs().maxCoeff() < 1e-12);
    // the step's objective uses the margin decomposition; the reference evaluates the hinge directly
    CHECK(a.objective == Approx(pauc_objective(b.pairs, m, h)).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central finite differences") {
  oracle::Rng rng(2);
  HyperParams h;
  h.beta = 0.3;
  h.gamma = 0.5;
  int checked = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const MiniBatch b = random_batch(rng, 6, 3);
    const Eigen::MatrixXd m = oracle::random_spd(rng, 3);
    const Eigen::MatrixXd dir = random_symmetric(rng, 3);
    const PaucStep st = pauc_step(b.pairs, m, h);
    const double eps = 1e-6;
    const double fd = (smooth_part(b.pairs, m + eps * dir, h) - smooth_part(b.pairs, m - eps * dir, h)) / (2 * eps);
    const double analytic = ((st.grad.p + h.gamma * st.grad.p_pos).array() * dir.array()).sum();
    // a kink between m - eps dir and m + eps dir is possible but has probability ~eps
    CHECK(fd == Approx(analytic).epsilon(1e-6).scale(1.0));
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("mu term gradient: d/dM (tr M - logdet M) = I - M^-1") {
  oracle::Rng rng(3);
  const Eigen::MatrixXd m = oracle::random_spd(rng, 4);
  const Eigen::MatrixXd dir = random_symmetric(rng, 4);
  const double eps = 1e-6;
  const double fd = (logdet_regularizer(m + eps * dir, 0.1) - logdet_regularizer(m - eps * dir, 0.1)) / (2 * eps);
  const Eigen::MatrixXd g = 0.1 * (Eigen::MatrixXd::Identity(4, 4) - m.inverse());
  CHECK(fd == Approx((g.array() * dir.array()).sum()).epsilon(1e-6));
  CHECK(logdet_regularizer(-Eigen::MatrixXd::Identity(2, 2), 0.1) == INFINITY);
  CHECK(logdet_regularizer(-Eigen::MatrixXd::Identity(2, 2), 0.0) == 0.0);
}

TEST_CASE("objective is convex in M") {
  oracle::Rng rng(4);
  HyperParams h;
  h.beta = 0.25;
  for (int rep = 0; rep < 100; ++rep) {
    const MiniBatch b = random_batch(rng, 5, 3);
    const Eigen::MatrixXd m1 = oracle::random_spd(rng, 3), m2 = oracle::random_spd(rng, 3);
    const double t = oracle::uniform(rng);
    const double mid = pauc_objective(b.pairs, t * m1 + (1 - t) * m2, h);
    CHECK(mid <= t * pauc_objective(b.pairs, m1, h) + (1 - t) * pauc_objective(b.pairs, m2, h) + 1e-9);
  }
}

TEST_CASE("full band reduces to the loss over all negatives") {
  oracle::Rng rng(5);
  HyperParams h;
  h.beta = 1.0;
  const MiniBatch b = random_batch(rng, 6, 3);
  const Eigen::MatrixXd m = oracle::random_spd(rng, 3);
  const PaucStep st = pauc_step(b.pairs, m, h);
  CHECK(st.window.size() == b.pairs.num_negative());
  CHECK(st.hinge == Approx(hinge_pauc_loss(row_distances(b.pairs.positives, m), row_distances(b.pairs.negatives, m),
                                           h.delta))
                        .epsilon(1e-12));
}

TEST_CASE("explicit index matrix and fused gradients agree") {
  oracle::Rng rng(6);
  HyperParams h;
  h.beta = 0.5;
  const MiniBatch b = random_batch(rng, 7, 3);
  const Eigen::MatrixXd m = oracle::random_spd(rng, 3);
  const PaucStep st = pauc_step(b.pairs, m, h);
  const IndexMatrix pi = index_matrix(st.pos_dist, gather(st.neg_dist, st.window), h.delta);
  const Gradients g = accumulate_gradients(b.pairs, st.window, pi);
  CHECK((g.p - st.grad.p).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.p_pos - st.grad.p_pos).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(accumulate_gradients(b.pairs, st.window, IndexMatrix(1, 1)), DataError);
}

TEST_CASE("triplet step against enumerated triplets") {
  oracle::Rng rng(7);
  HyperParams h;
  h.delta = 1.0;
  for (int rep = 0; rep < 10; ++rep) {
    const MiniBatch b = random_batch(rng, 5, 3);
    const Eigen::MatrixXd m = oracle::random_spd(rng, 3);
    const auto triplets = enumerate_triplets(b);
    auto dist = [&](std::size_t a, std::size_t c) {
      const Eigen::VectorXd z = b.vectors[a].vector - b.vectors[c].vector;
      return z.dot(m * z);
    };
    double loss = 0;
    std::size_t violated = 0;
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(3, 3);
    for (const auto& t : triplets) {
      const double l = h.delta - dist(t.anchor, t.negative) + dist(t.anchor, t.positive);
      if (l > 0) {
        loss += l;
        ++violated;
        const Eigen::VectorXd zp = b.vectors[t.anchor].vector - b.vectors[t.positive].vector;
        const Eigen::VectorXd zn = b.vectors[t.anchor].vector - b.vectors[t.negative].vector;
        grad += zp * zp.transpose() - zn * zn.transpose();
      }
    }
    const double n = static_cast<double>(triplets.size());
    const TripletStep st = triplet_step(b, m, h);
    CHECK(st.violated == violated);
    CHECK(st.hinge == Approx(loss / n).epsilon(1e-12));
    CHECK(triplet_loss(b, triplets, m, h.delta) == Approx(loss / n).epsilon(1e-12));
    CHECK((st.grad.p - grad / n).cwiseAbs().maxCoeff() < 1e-12);

    // the same sum restricted to tetrads in groups 0 and 1
    const TetradPartition tet = enumerate_tetrads(b);
    double tet_loss = 0;
    for (int g = 0; g < 2; ++g) {
      for (const auto& x : tet.groups[g]) {
        const double sp = dist(x.positive.first, x.positive.second);
        const double sn = dist(x.negative.first, x.negative.second);
        tet_loss += std::max(0.0, h.delta - sn + sp);
      }
    }
    CHECK(tet_loss == Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("training keeps M symmetric PSD and is deterministic") {
  oracle::Rng rng(8);
  const EmbeddingSet set = length_normalize(oracle::random_set(rng, 40, 4, 5));
  HyperParams h;
  h.s = 16;
  h.max_iters = 60;
  h.rel_tol = 0;
  h.eta = 1.0;
  h.beta = 0.05;
  h.seed = 3;
  const MetricModel a = train_pauc_metric(set, h);
  const MetricModel b = train_pauc_metric(set, h);
  CHECK(a.m == b.m);
  CHECK(a.history.size() == 60);
  CHECK_FALSE(a.converged);
  CHECK(max_asymmetry(a.m) <= 1e-10);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.m);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);

  const MetricModel t = train_triplet_metric(set, h);
  CHECK(t.trainer == Trainer::triplet);
  CHECK(max_asymmetry(t.m) <= 1e-10);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> et(t.m);
  CHECK(et.eigenvalues().minCoeff() >= -1e-10);

  h.seed = 4;
  CHECK_FALSE(train_pauc_metric(set, h).m == a.m);
}

TEST_CASE("moving-average stopping rule") {
  oracle::Rng rng(9);
  const EmbeddingSet set = length_normalize(oracle::random_set(rng, 30, 3, 4));
  HyperParams h;
  h.s = 10;
  h.eta = 0.01;
  h.rel_tol = 0.5;
  h.max_iters = 1000;
  const MetricModel m = train_pauc_metric(set, h);
  CHECK(m.converged);
  CHECK(m.history.size() == 40);  // two full 20-iteration windows
}

TEST_CASE("full-batch training decreases the objective for a small step") {
  oracle::Rng rng(10);
  const EmbeddingSet set = length_normalize(oracle::random_set(rng, 10, 3, 4));
  HyperParams h;
  h.eta = 0.1;
  h.beta = 0.2;
  h.max_iters = 50;
  const MetricModel m = train_pauc_metric_full_batch(build_pairs(set), h);
  REQUIRE(m.history.size() == 50);
  for (std::size_t t = 1; t < m.history.size(); ++t) {
    CHECK(m.history[t].objective - m.history[t - 1].objective <= 1e-8);
  }
}

TEST_CASE("non-finite objectives abort training") {
  EmbeddingSet set(2);
  for (int s = 0; s < 4; ++s) {
    for (int u = 0; u < 2; ++u) {
      set.add(std::to_string(s) + "_" + std::to_string(u), std::to_string(s),
              Eigen::Vector2d(1e200 * (s + 1) * (u + 1), -1e200 * s));
    }
  }
  HyperParams h;
  h.s = 4;
  h.beta = 0.5;
  CHECK_THROWS_AS(train_pauc_metric(set, h), NumericalError);
}

TEST_CASE("metric model file round trip") {
  oracle::Rng rng(11);
  const EmbeddingSet set = length_normalize(oracle::random_set(rng, 20, 3, 3));
  HyperParams h;
  h.s = 8;
  h.max_iters = 10;
  h.beta = 0.1;
  h.eta = 0.5;
  h.seed = 123;
  const MetricModel m = train_pauc_metric(set, h);
  const auto dir = oracle::scratch_dir("metric");
  write_metric(m, dir / "m.model");
  const MetricModel r = read_metric(dir / "m.model");
  CHECK(r.m == m.m);
  CHECK(r.trainer == Trainer::pauc);
  CHECK(r.hyper.eta == 0.5);
  CHECK(r.hyper.s == 8);
  CHECK(r.hyper.seed == 123);

  write_oracle_metric(Eigen::MatrixXd::Identity(3, 3), dir / "o.model");
  CHECK(read_metric(dir / "o.model").m == Eigen::MatrixXd::Identity(3, 3));
  CHECK(model_kind(Trainer::triplet) == "tripletmetric");
}
