#include "pauc/scoring.hpp"

namespace pauc {

Polarity ScoringBackend::native_polarity() const {
  return std::holds_alternative<MahalanobisBackend>(kind) ? Polarity::distance : Polarity::similarity;
}

double ScoringBackend::score(const Eigen::Ref<const Eigen::VectorXd>& enroll,
                             const Eigen::Ref<const Eigen::VectorXd>& test) const {
  if (const auto* mb = std::get_if<MahalanobisBackend>(&kind)) {
    return mahalanobis_score(mb->m, enroll, test);
  }
  if (const auto* pb = std::get_if<PldaBackend>(&kind)) {
    return plda_llr_score(pb->model, enroll, test);
  }
  return cosine_score(enroll, test);
}

ScoreSet score_trials(const ScoringBackend& backend, const EmbeddingSet& embeddings,
                      const TrialList& trials) {
  ScoreSet out;
  out.polarity = Polarity::similarity;
  out.entries.reserve(trials.entries.size());
  const double sign = backend.native_polarity() == Polarity::distance ? -1.0 : 1.0;
  for (const auto& t : trials.entries) {
    const auto e = embeddings.find(t.enroll_utt);
    if (!e) throw DataError("trial references unknown utterance '" + t.enroll_utt + "'");
    const auto x = embeddings.find(t.test_utt);
    if (!x) throw DataError("trial references unknown utterance '" + t.test_utt + "'");
    const double s = backend.score(embeddings[*e].vector, embeddings[*x].vector);
    out.entries.push_back({t.enroll_utt, t.test_utt, sign * s + 0.0, t.label});  // no -0
  }
  return out;
}

}  // namespace pauc
