#pragma once

// Caption corpus statistics: vocabulary, word trigrams, lengths, alignment scores.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mvp {

/// Bumped whenever tokenize() changes behaviour.
inline constexpr std::string_view kTokenizerVersion = "alnum-lower/1";

/// Lowercases ASCII letters and splits on maximal runs of characters that
/// are not ASCII letters or digits. Bytes >= 0x80 count as word characters
/// so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

struct Caption {
  std::string id;
  std::string text;
  std::string image;  // optional reference handed to the scorer
};

struct Corpus {
  std::string name;
  std::vector<Caption> captions;

  /// Unique ids, non-blank text. Throws ContractError.
  void validate() const;
};

/// JSONL {"id","text"[,"image"]} when the first non-blank byte is '{',
/// otherwise tab-separated id<TAB>text[<TAB>image]. Errors carry file:line.
Corpus load_corpus(const std::filesystem::path& path);

/// Deterministic per (caption, image) within a run.
class AlignmentScorer {
 public:
  virtual ~AlignmentScorer() = default;
  virtual double score(const std::string& caption, const std::string& image) = 0;
  virtual std::string name() const = 0;
};

/// Pseudo-score in [0,100) from a hash of the pair. Pipeline testing only.
class HashStubScorer final : public AlignmentScorer {
 public:
  explicit HashStubScorer(std::uint64_t seed = 0) : seed_(seed) {}
  double score(const std::string& caption, const std::string& image) override;
  std::string name() const override { return "hash-stub:" + std::to_string(seed_); }

 private:
  std::uint64_t seed_;
};

/// Runs `/bin/sh -c command` per caption with "image<TAB>caption\n" on
/// stdin; the first stdout line must be a decimal score.
class SubprocessScorer final : public AlignmentScorer {
 public:
  explicit SubprocessScorer(std::string command) : command_(std::move(command)) {}
  double score(const std::string& caption, const std::string& image) override;
  std::string name() const override { return "subprocess:" + command_; }

 private:
  std::string command_;
};

/// Bins [edges[i], edges[i+1]); values below or above the edges go to
/// underflow / overflow.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;

  explicit Histogram(std::vector<double> edges = {});
  void add(double value);
  std::size_t total() const;
  bool operator==(const Histogram&) const = default;
};

/// Word-count bins for caption lengths.
std::vector<double> default_length_edges();
/// Ten equal bins over [0,100] for alignment scores.
std::vector<double> default_score_edges();

struct ScoreSummary {
  std::string scorer;
  double mean = 0.0;
  Histogram histogram;
  bool operator==(const ScoreSummary&) const = default;
};

/// The four comparable headline numbers.
struct CorpusMetrics {
  std::string name;
  double unique_words = 0.0;
  double unique_trigrams = 0.0;
  double avg_length = 0.0;
  std::optional<double> mean_score;
};

struct CorpusReport {
  std::string name;
  std::string tokenizer_version{kTokenizerVersion};
  std::size_t captions = 0;
  std::size_t total_words = 0;
  std::size_t unique_words = 0;
  std::size_t unique_trigrams = 0;
  std::size_t trigram_positions = 0;  // sum over captions of max(0, words - 2)
  double avg_length = 0.0;
  Histogram length_histogram;
  std::optional<ScoreSummary> scores;

  CorpusMetrics metrics() const;
  nlohmann::json to_json() const;
  static CorpusReport from_json(const nlohmann::json& j);
  /// "lo,hi,count" rows, underflow and overflow rows included.
  std::string length_csv() const;
  std::string score_csv() const;
  bool operator==(const CorpusReport&) const = default;
};

/// Trigrams are consecutive word triples inside one caption. Throws
/// ContractError on an empty corpus.
CorpusReport corpus_report(const Corpus& corpus, AlignmentScorer* scorer = nullptr);

struct MetricComparison {
  std::string metric;
  std::optional<double> a, b;
  std::optional<double> ratio;  // b / a; 1 when equal
  std::optional<double> delta;  // b - a
};

struct CorpusComparison {
  std::string name_a, name_b;
  std::vector<MetricComparison> rows;

  nlohmann::json to_json() const;
  /// Markdown: one row per corpus, one column per metric, then ratio and delta rows.
  std::string render_table() const;
};

CorpusComparison compare_reports(const CorpusMetrics& a, const CorpusMetrics& b);

/// Reads {"corpora":[{name, unique_words, unique_trigrams, avg_length, mean_score}, ...]}.
std::vector<CorpusMetrics> load_reference_metrics(const std::filesystem::path& path);

}  // namespace mvp
