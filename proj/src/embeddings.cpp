#include "pauc/embeddings.hpp"

#include "pauc/errors.hpp"
#include "text_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace pauc {

std::string_view to_string(TrialLabel label) {
  switch (label) {
    case TrialLabel::target: return "target";
    case TrialLabel::nontarget: return "nontarget";
    case TrialLabel::unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Polarity polarity) {
  return polarity == Polarity::similarity ? "similarity" : "distance";
}

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void EmbeddingSet::add(std::string utt_id, std::string speaker_id,
                       Eigen::VectorXd vector) {
  if (static_cast<std::size_t>(vector.size()) != dim_) {
    throw DataError("utterance '" + utt_id + "' has length " +
                    std::to_string(vector.size()) + ", expected " +
                    std::to_string(dim_));
  }
  if (!vector.allFinite()) {
    throw DataError("utterance '" + utt_id + "' has a non-finite component");
  }
  if (index_.count(utt_id) != 0) {
    throw DataError("duplicate utterance id '" + utt_id + "'");
  }
  index_.emplace(utt_id, records_.size());
  records_.push_back({std::move(utt_id), std::move(speaker_id), std::move(vector)});
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view utt_id) const {
  auto it = index_.find(std::string(utt_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::MatrixXd EmbeddingSet::matrix() const {
  Eigen::MatrixXd rows(records_.size(), dim_);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    rows.row(i) = records_[i].vector.transpose();
  }
  return rows;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>>
EmbeddingSet::speakers() const {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& spk = records_[i].speaker_id;
    auto [it, inserted] = slot.emplace(spk, out.size());
    if (inserted) out.push_back({spk, {}});
    out[it->second].second.push_back(i);
  }
  return out;
}

EmbeddingSet EmbeddingSet::with_vectors(const Eigen::MatrixXd& rows) const {
  if (static_cast<std::size_t>(rows.rows()) != records_.size()) {
    throw DataError("row count does not match the number of records");
  }
  EmbeddingSet out(rows.cols());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    out.add(records_[i].utt_id, records_[i].speaker_id, rows.row(i).transpose());
  }
  return out;
}

std::vector<double> ScoreSet::similarity_scores() const {
  std::vector<double> out;
  out.reserve(entries.size());
  const double sign = polarity == Polarity::similarity ? 1.0 : -1.0;
  for (const auto& e : entries) out.push_back(sign * e.score);
  return out;
}

ScoreSet ScoreSet::as_similarity() const {
  ScoreSet out = *this;
  if (polarity == Polarity::distance) {
    for (auto& e : out.entries) e.score = -e.score;
    out.polarity = Polarity::similarity;
  }
  return out;
}

bool ScoreSet::fully_labeled() const {
  for (const auto& e : entries) {
    if (e.label == TrialLabel::unknown) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Text formats

namespace {

TrialLabel parse_label(const detail::LineReader& in, std::string_view token) {
  if (token == "target") return TrialLabel::target;
  if (token == "nontarget") return TrialLabel::nontarget;
  in.fail("unknown trial label '" + std::string(token) + "'");
}

}  // namespace

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  detail::LineReader in(path);
  std::string_view line;
  if (!in.next(line)) in.fail("missing '#dim <d>' header");
  auto header = detail::split(line);
  if (header.size() != 2 || header[0] != "#dim") in.fail("malformed header, expected '#dim <d>'");
  const long dim = in.parse_int(header[1]);
  if (dim <= 0) in.fail("dimension must be positive");

  EmbeddingSet set(static_cast<std::size_t>(dim));
  while (in.next(line)) {
    auto tok = detail::split(line);
    if (tok.empty()) continue;
    if (tok.size() != static_cast<std::size_t>(dim) + 2) {
      in.fail("row has " + std::to_string(static_cast<long>(tok.size()) - 2) +
              " values, expected " + std::to_string(dim));
    }
    Eigen::VectorXd v(dim);
    for (long k = 0; k < dim; ++k) v(k) = in.parse_real(tok[k + 2]);
    try {
      set.add(std::string(tok[0]), std::string(tok[1]), std::move(v));
    } catch (const DataError& e) {
      in.fail(e.what());
    }
  }
  return set;
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  detail::LineWriter out(path);
  out.stream() << "#dim " << set.dim() << '\n';
  for (const auto& r : set.records()) {
    out.stream() << r.utt_id << ' ' << r.speaker_id;
    for (Eigen::Index k = 0; k < r.vector.size(); ++k) {
      out.stream() << ' ' << format_real(r.vector(k));
    }
    out.stream() << '\n';
  }
  out.close();
}

TrialList read_trials(const std::filesystem::path& path) {
  detail::LineReader in(path);
  TrialList trials;
  std::string_view line;
  while (in.next(line)) {
    auto tok = detail::split(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() < 2 || tok.size() > 3) in.fail("expected 'enroll_utt test_utt [target|nontarget]'");
    if (tok[0] == tok[1]) in.fail("trial pairs utterance '" + std::string(tok[0]) + "' with itself");
    Trial t{std::string(tok[0]), std::string(tok[1]), TrialLabel::unknown};
    if (tok.size() == 3) t.label = parse_label(in, tok[2]);
    trials.entries.push_back(std::move(t));
  }
  return trials;
}

void write_trials(const TrialList& trials, const std::filesystem::path& path) {
  detail::LineWriter out(path);
  for (const auto& t : trials.entries) {
    out.stream() << t.enroll_utt << ' ' << t.test_utt;
    if (t.label != TrialLabel::unknown) out.stream() << ' ' << to_string(t.label);
    out.stream() << '\n';
  }
  out.close();
}

ScoreSet read_scores(const std::filesystem::path& path) {
  detail::LineReader in(path);
  ScoreSet scores;
  std::string_view line;
  bool have_polarity = false;
  while (in.next(line)) {
    auto tok = detail::split(line);
    if (tok.empty()) continue;
    if (tok[0] == "#polarity") {
      if (tok.size() != 2) in.fail("malformed '#polarity' line");
      if (tok[1] == "similarity") {
        scores.polarity = Polarity::similarity;
      } else if (tok[1] == "distance") {
        scores.polarity = Polarity::distance;
      } else {
        in.fail("unknown polarity '" + std::string(tok[1]) + "'");
      }
      have_polarity = true;
      continue;
    }
    if (tok[0].front() == '#') continue;
    if (tok.size() < 3 || tok.size() > 4) in.fail("expected 'enroll_utt test_utt score [target|nontarget]'");
    ScoredTrial t{std::string(tok[0]), std::string(tok[1]), in.parse_real(tok[2]),
                  TrialLabel::unknown};
    if (tok.size() == 4) t.label = parse_label(in, tok[3]);
    scores.entries.push_back(std::move(t));
  }
  if (!have_polarity) {
    throw DataError(path.string() + ": missing '#polarity similarity|distance' header");
  }
  return scores;
}

void write_scores(const ScoreSet& scores, const std::filesystem::path& path) {
  detail::LineWriter out(path);
  out.stream() << "#polarity " << to_string(scores.polarity) << '\n';
  for (const auto& t : scores.entries) {
    out.stream() << t.enroll_utt << ' ' << t.test_utt << ' ' << format_real(t.score);
    if (t.label != TrialLabel::unknown) out.stream() << ' ' << to_string(t.label);
    out.stream() << '\n';
  }
  out.close();
}

}  // namespace pauc
