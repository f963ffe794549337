#pragma once

// Parallel corpora, token-budget batching and visually-grounded-token
// masking.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmt/bpe.hpp"
#include "mmt/feature_store.hpp"

namespace mmt {

enum class Split { kTrain, kValid, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SentencePair {
  std::string source;
  std::string target;
  std::string feature_id;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct ParallelCorpus {
  Split split = Split::kTrain;
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::vector<std::string> sources() const;
  std::vector<std::string> targets() const;
};

/// Reads three line-aligned UTF-8 files (source, target, feature id).
/// Throws DataError for a missing file or unequal line counts.
ParallelCorpus read_parallel_corpus(const std::filesystem::path& source, const std::filesystem::path& target,
                                    const std::filesystem::path& feature_ids, Split split);
void write_parallel_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source,
                           const std::filesystem::path& target, const std::filesystem::path& feature_ids);
/// Throws DataError naming the first feature id absent from `store`.
void check_feature_ids(const ParallelCorpus& corpus, const FeatureStore& store);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// A sentence pair after subword encoding. `feature_row` indexes the
/// feature store (or is npos when no store is attached).
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
  std::size_t feature_row = static_cast<std::size_t>(-1);
  std::size_t sentence_id = 0;
};

/// Encodes every pair with `bpe`. Throws DataError when a side is empty or
/// longer than `max_tokens`.
std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const BpeModel& bpe,
                                       const FeatureStore* store, std::size_t max_tokens);

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TokenBatch {
  std::vector<std::size_t> indices;  // positions in the encoded corpus
  IdMatrix source;                   // padded with the pad id
  IdMatrix target;
  std::vector<std::size_t> feature_rows;
  std::vector<std::size_t> sentence_ids;

  std::size_t size() const { return indices.size(); }
  /// Padded token counts, i.e. what the budget constrains.
  std::size_t source_tokens() const { return static_cast<std::size_t>(source.size()); }
  std::size_t target_tokens() const { return static_cast<std::size_t>(target.size()); }
};

/// Groups sentences so that each batch's padded source and target token
/// counts stay within `budget`. Sentences are ordered by length (random
/// tie-break), packed greedily, and the batch order is shuffled; the seed
/// fixes both. Throws DataError if one sentence exceeds the budget.
std::vector<TokenBatch> batch_by_tokens(std::span<const EncodedPair> corpus, std::size_t budget,
                                        std::uint64_t seed);

/// Built-in English stopword list.
std::set<std::string> default_stopwords();
/// One token per line; blank lines and lines starting with '#' are skipped.
std::set<std::string> load_stopwords(const std::filesystem::path& path);

/// Tokens occurring strictly more than `min_count` times that are not
/// stopwords (stopword test is ASCII case-insensitive).
std::set<std::string> build_grounded_vocab(std::span<const std::string> sentences,
                                           const std::set<std::string>& stopwords, long min_count = 30);

struct MaskResult {
  std::vector<std::string> tokens;
  std::size_t masked = 0;
  std::size_t total = 0;

  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(masked) / static_cast<double>(total); }
};

MaskResult mask_grounded_tokens(std::span<const std::string> tokens, const std::set<std::string>& grounded);

/// Masks the source side of every pair; returns the corpus-level fraction.
double mask_corpus_sources(ParallelCorpus& corpus, const std::set<std::string>& grounded);

}  // namespace mmt
