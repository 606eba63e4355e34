#pragma once

#include "pauc/embeddings.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace pauc {

using Rng = std::mt19937_64;

/// Difference vectors z = x_a - x_b for every unordered pair a < b of a
/// set, split into same-speaker (positive) and different-speaker
/// (negative) rows. Sources are record positions in the input set.
struct PairSet {
  Eigen::MatrixXd positives;  // J x d
  Eigen::MatrixXd negatives;  // K x d
  std::vector<std::pair<std::size_t, std::size_t>> positive_src;
  std::vector<std::pair<std::size_t, std::size_t>> negative_src;

  Eigen::Index num_positive() const { return positives.rows(); }
  Eigen::Index num_negative() const { return negatives.rows(); }
  Eigen::Index size() const { return num_positive() + num_negative(); }
};

PairSet build_pairs(const EmbeddingSet& set);

/// s speakers with two utterances each, plus all their pairs.
struct MiniBatch {
  std::vector<std::string> speakers;
  EmbeddingSet vectors;  // records 2m and 2m+1 belong to speakers[m]
  PairSet pairs;

  std::size_t num_speakers() const { return speakers.size(); }
};

/// Picks s distinct speakers uniformly among those with >= 2 utterances,
/// then two distinct utterances uniformly within each. With
/// `with_pairs = false` the (large) pair set is left empty.
MiniBatch sample_minibatch(const EmbeddingSet& set, std::size_t s, Rng& rng, bool with_pairs = true);
MiniBatch sample_minibatch(const EmbeddingSet& set, std::size_t s, std::uint64_t seed);

/// Record positions in a batch.
struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;

  auto operator<=>(const Triplet&) const = default;
};

/// Every ordered same-speaker (anchor, positive) pair combined with every
/// vector of another speaker: 2s(2s-2) triplets for a batch of s speakers.
std::vector<Triplet> enumerate_triplets(const MiniBatch& batch);

/// A positive pair (i, j) of speaker m against a negative pair (a, b).
struct Tetrad {
  std::pair<std::size_t, std::size_t> positive;
  std::pair<std::size_t, std::size_t> negative;
  std::size_t positive_index;  // row in batch.pairs.positives
  std::size_t negative_index;  // row in batch.pairs.negatives

  auto operator<=>(const Tetrad&) const = default;
};

/// Cross product of the batch's positive and negative pairs, split by how
/// the negative pair overlaps the positive pair (i, j) of speaker m:
///   [0] negative pair contains i
///   [1] negative pair contains j
///   [2] negative pair contains another utterance of speaker m
///   [3] negative pair contains no utterance of speaker m
struct TetradPartition {
  std::array<std::vector<Tetrad>, 4> groups;

  std::size_t size() const;
};

TetradPartition enumerate_tetrads(const MiniBatch& batch);

/// Triplet expressed by a tetrad whose negative pair shares an element
/// with its positive pair (groups 0 and 1).
Triplet tetrad_to_triplet(const Tetrad& t);

}  // namespace pauc
