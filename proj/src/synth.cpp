#include "pauc/synth.hpp"

#include "pauc/errors.hpp"
#include "pauc/scoring.hpp"

#include <cstdio>
#include <random>

namespace pauc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t speaker, std::uint64_t slot) {
  return splitmix64(splitmix64(splitmix64(seed) ^ speaker) ^ slot);
}

// Square root factor of a PSD matrix (L L^T = cov).
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd draw(const Eigen::MatrixXd& factor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd e(factor.cols());
  for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = normal(rng);
  return factor * e;
}

}  // namespace

void SynthSpec::validate() const {
  if (dim < 1 || n_speakers < 1 || utts_per_speaker < 1) throw DataError("synth counts must be >= 1");
  const auto d = static_cast<Eigen::Index>(dim);
  if (phi_b.rows() != d || phi_b.cols() != d || phi_w.rows() != d || phi_w.cols() != d) {
    throw DataError("synth covariances must be " + std::to_string(dim) + "x" + std::to_string(dim));
  }
  if ((phi_b - phi_b.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
      (phi_w - phi_w.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw DataError("synth covariances must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(phi_b, Eigen::EigenvaluesOnly);
  if (eb.eigenvalues()(0) < -1e-10) throw DataError("phi_b must be positive semi-definite");
  Eigen::LLT<Eigen::MatrixXd> lw(phi_w);
  if (lw.info() != Eigen::Success) throw DataError("phi_w must be positive definite");
}

Eigen::MatrixXd linspace_diagonal(std::size_t dim, double lo, double hi) {
  return Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(dim), lo, hi).asDiagonal();
}

SynthSpec default_train_spec(std::uint64_t seed) {
  SynthSpec s;
  s.dim = 20;
  s.n_speakers = 500;
  s.utts_per_speaker = 8;
  s.phi_b = linspace_diagonal(s.dim, 0.5, 2.0);
  s.phi_w = Eigen::MatrixXd::Identity(20, 20);
  s.seed = seed;
  s.prefix = "spk";
  return s;
}

SynthSpec default_eval_spec(std::uint64_t seed) {
  SynthSpec s = default_train_spec(seed + kEvalSeedOffset);
  s.n_speakers = 200;
  s.utts_per_speaker = 4;
  s.prefix = "evl";
  return s;
}

EmbeddingSet generate(const SynthSpec& spec) {
  spec.validate();
  const Eigen::MatrixXd fb = psd_factor(spec.phi_b);
  const Eigen::MatrixXd fw = Eigen::LLT<Eigen::MatrixXd>(spec.phi_w).matrixL();
  EmbeddingSet set(spec.dim);
  char id[64];
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    std::snprintf(id, sizeof(id), "%s%05zu", spec.prefix.c_str(), s);
    const std::string speaker = id;
    const Eigen::VectorXd h = draw(fb, stream_seed(spec.seed, s, 0));
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      set.add(speaker + "-" + std::to_string(u), speaker, h + draw(fw, stream_seed(spec.seed, s, u + 1)));
    }
  }
  return set;
}

Eigen::MatrixXd oracle_metric(const SynthSpec& spec) {
  spec.validate();
  return metric_from_covariances(2.0 * spec.phi_w, 2.0 * spec.phi_b + 2.0 * spec.phi_w);
}

TrialList enroll_test_trials(const EmbeddingSet& set) {
  std::vector<std::size_t> enroll, test;
  for (const auto& [spk, idx] : set.speakers()) {
    enroll.push_back(idx.front());
    test.insert(test.end(), idx.begin() + 1, idx.end());
  }
  TrialList trials;
  trials.entries.reserve(enroll.size() * test.size());
  for (auto e : enroll) {
    for (auto t : test) {
      const bool same = set[e].speaker_id == set[t].speaker_id;
      trials.entries.push_back({set[e].utt_id, set[t].utt_id, same ? TrialLabel::target : TrialLabel::nontarget});
    }
  }
  return trials;
}

}  // namespace pauc
