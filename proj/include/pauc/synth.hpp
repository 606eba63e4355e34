#pragma once

#include "pauc/embeddings.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace pauc {

/// Two-covariance generative model: per speaker h ~ N(0, phi_b), per
/// utterance x ~ N(h, phi_w).
struct SynthSpec {
  std::size_t dim = 20;
  std::size_t n_speakers = 500;
  std::size_t utts_per_speaker = 8;
  Eigen::MatrixXd phi_b;
  Eigen::MatrixXd phi_w;
  std::uint64_t seed = 0;
  std::string prefix = "spk";  // speaker ids are <prefix><index>, utterances <speaker>-<k>

  void validate() const;
};

/// diag(linspace(lo, hi, dim)).
Eigen::MatrixXd linspace_diagonal(std::size_t dim, double lo, double hi);

/// Training spec: d=20, 500 speakers x 8 utterances,
/// phi_b = diag(linspace(0.5, 2.0)), phi_w = I.
SynthSpec default_train_spec(std::uint64_t seed = 0);
/// Held-out spec: same covariances, 200 speakers x 4 utterances, disjoint
/// speaker ids and an offset seed.
SynthSpec default_eval_spec(std::uint64_t seed = 0);

/// Seed offset between the training and held-out streams.
inline constexpr std::uint64_t kEvalSeedOffset = 0x9e3779b97f4a7c15ULL;

/// Deterministic given spec.seed; each (speaker, utterance) draws from its
/// own stream, so regenerating a prefix of speakers reproduces them exactly.
EmbeddingSet generate(const SynthSpec& spec);

/// Sigma0^{-1} - Sigma1^{-1} with Sigma0 = 2 phi_w and Sigma1 = 2 phi_b + 2 phi_w.
Eigen::MatrixXd oracle_metric(const SynthSpec& spec);

/// First utterance of every speaker enrolls, the rest are tests; every
/// enrollment is tried against every test utterance.
TrialList enroll_test_trials(const EmbeddingSet& set);

}  // namespace pauc
