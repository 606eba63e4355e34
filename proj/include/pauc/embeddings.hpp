#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pauc {

enum class TrialLabel { target, nontarget, unknown };
enum class Polarity { similarity, distance };

std::string_view to_string(TrialLabel label);
std::string_view to_string(Polarity polarity);

struct EmbeddingRecord {
  std::string utt_id;
  std::string speaker_id;
  Eigen::VectorXd vector;

  bool operator==(const EmbeddingRecord& other) const {
    return utt_id == other.utt_id && speaker_id == other.speaker_id &&
           vector == other.vector;
  }
};

/// Labeled speaker embeddings of a fixed dimension.
///
/// Records keep their insertion order; utterance ids are unique. The
/// speaker index (speaker id -> record positions, in first-occurrence
/// order) is what the trial builders and model fitters work from.
class EmbeddingSet {
 public:
  explicit EmbeddingSet(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }

  /// Throws DataError on dimension mismatch, duplicate utt_id or
  /// non-finite components.
  void add(std::string utt_id, std::string speaker_id, Eigen::VectorXd vector);

  /// Position of an utterance, if present.
  std::optional<std::size_t> find(std::string_view utt_id) const;

  /// Records as rows of a (size x dim) matrix.
  Eigen::MatrixXd matrix() const;

  /// Speaker ids in first-occurrence order with the positions of their records.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> speakers() const;

  /// Same ids and speakers, vectors replaced by the rows of `rows`.
  EmbeddingSet with_vectors(const Eigen::MatrixXd& rows) const;

  bool operator==(const EmbeddingSet& other) const {
    return dim_ == other.dim_ && records_ == other.records_;
  }

 private:
  std::size_t dim_;
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Trial {
  std::string enroll_utt;
  std::string test_utt;
  TrialLabel label = TrialLabel::unknown;

  bool operator==(const Trial&) const = default;
};

struct TrialList {
  std::vector<Trial> entries;

  bool operator==(const TrialList&) const = default;
};

struct ScoredTrial {
  std::string enroll_utt;
  std::string test_utt;
  double score = 0.0;
  TrialLabel label = TrialLabel::unknown;

  bool operator==(const ScoredTrial&) const = default;
};

/// Scores with an explicit polarity. Evaluation code consumes
/// similarity polarity; see `similarity_scores()`.
struct ScoreSet {
  std::vector<ScoredTrial> entries;
  Polarity polarity = Polarity::similarity;

  bool operator==(const ScoreSet&) const = default;

  /// Scores in similarity polarity (negated if stored as distances).
  std::vector<double> similarity_scores() const;
  /// Copy of this set in similarity polarity.
  ScoreSet as_similarity() const;
  bool fully_labeled() const;
};

EmbeddingSet read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

TrialList read_trials(const std::filesystem::path& path);
void write_trials(const TrialList& trials, const std::filesystem::path& path);

ScoreSet read_scores(const std::filesystem::path& path);
void write_scores(const ScoreSet& scores, const std::filesystem::path& path);

/// Shortest decimal form that round-trips a double (17 significant digits).
std::string format_real(double value);

}  // namespace pauc
