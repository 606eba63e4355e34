#include "pauc/trials.hpp"

#include "pauc/errors.hpp"

#include <algorithm>
#include <iterator>

namespace pauc {

PairSet build_pairs(const EmbeddingSet& set) {
  const std::size_t n = set.size();
  std::vector<std::size_t> label(n);
  const auto speakers = set.speakers();
  for (std::size_t k = 0; k < speakers.size(); ++k) {
    for (auto i : speakers[k].second) label[i] = k;
  }

  PairSet p;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      (label[a] == label[b] ? p.positive_src : p.negative_src).emplace_back(a, b);
    }
  }
  // Column by column: the matrices are column-major.
  const Eigen::MatrixXd x = set.matrix();
  auto fill = [&](Eigen::MatrixXd& z, const std::vector<std::pair<std::size_t, std::size_t>>& src) {
    z.resize(static_cast<Eigen::Index>(src.size()), x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        z(static_cast<Eigen::Index>(i), k) = x(src[i].first, k) - x(src[i].second, k);
      }
    }
  };
  fill(p.positives, p.positive_src);
  fill(p.negatives, p.negative_src);
  return p;
}

MiniBatch sample_minibatch(const EmbeddingSet& set, std::size_t s, Rng& rng, bool with_pairs) {
  if (s < 1) throw DataError("batch size must be at least 1");
  const auto speakers = set.speakers();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    if (speakers[i].second.size() >= 2) eligible.push_back(i);
  }
  if (eligible.size() < s) {
    throw DataError("batch size " + std::to_string(s) + " exceeds the " +
                    std::to_string(eligible.size()) + " speakers with at least two utterances");
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(s);
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(chosen), s, rng);

  MiniBatch batch{{}, EmbeddingSet(set.dim()), {}};
  batch.speakers.reserve(s);
  for (auto spk : chosen) {
    const auto& [id, idx] = speakers[spk];
    std::array<std::size_t, 2> picks{};
    std::sample(idx.begin(), idx.end(), picks.begin(), 2, rng);
    batch.speakers.push_back(id);
    for (auto i : picks) batch.vectors.add(set[i].utt_id, set[i].speaker_id, set[i].vector);
  }
  if (with_pairs) batch.pairs = build_pairs(batch.vectors);
  return batch;
}

MiniBatch sample_minibatch(const EmbeddingSet& set, std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  return sample_minibatch(set, s, rng);
}

std::vector<Triplet> enumerate_triplets(const MiniBatch& batch) {
  const auto& v = batch.vectors;
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < v.size(); ++a) {
    for (std::size_t p = 0; p < v.size(); ++p) {
      if (p == a || v[p].speaker_id != v[a].speaker_id) continue;
      for (std::size_t n = 0; n < v.size(); ++n) {
        if (v[n].speaker_id != v[a].speaker_id) out.push_back({a, p, n});
      }
    }
  }
  return out;
}

std::size_t TetradPartition::size() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

TetradPartition enumerate_tetrads(const MiniBatch& batch) {
  const auto& v = batch.vectors;
  const auto& pairs = batch.pairs;
  TetradPartition out;
  for (std::size_t jp = 0; jp < pairs.positive_src.size(); ++jp) {
    const auto [i, j] = pairs.positive_src[jp];
    const auto& speaker = v[i].speaker_id;
    for (std::size_t kn = 0; kn < pairs.negative_src.size(); ++kn) {
      const auto [a, b] = pairs.negative_src[kn];
      Tetrad t{{i, j}, {a, b}, jp, kn};
      int group = 3;
      if (a == i || b == i) {
        group = 0;
      } else if (a == j || b == j) {
        group = 1;
      } else if (v[a].speaker_id == speaker || v[b].speaker_id == speaker) {
        group = 2;
      }
      out.groups[group].push_back(t);
    }
  }
  return out;
}

Triplet tetrad_to_triplet(const Tetrad& t) {
  const auto [i, j] = t.positive;
  const auto [a, b] = t.negative;
  if (a == i || b == i) return {i, j, a == i ? b : a};
  if (a == j || b == j) return {j, i, a == j ? b : a};
  throw DataError("tetrad negative pair shares no element with its positive pair");
}

}  // namespace pauc
