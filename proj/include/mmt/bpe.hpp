#pragma once

// Byte-pair-encoding subword tokenizer with the "@@" continuation
// convention: every subword except the last of a word carries a trailing
// "@@", so detokenization is a plain "@@ " deletion.
//
// Words are split into UTF-8 code points without an end-of-word symbol.
// Merges are learned greedily by pair frequency (ties to the
// lexicographically smallest pair) and applied by merge rank.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmt {

/// Token <-> id table. Ids 0..4 are <pad>, <bos>, <eos>, <unk>, <mask>.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kMask = "<mask>";

  Vocabulary();
  /// Adds a token if absent; returns its id.
  int add(const std::string& token);
  /// Id of `token`, or the unk id.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(std::string_view token);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(std::span<const std::string> words);
/// Collapses whitespace; optionally lowercases ASCII and splits punctuation
/// into separate words.
std::string normalize_text(std::string_view text, bool lowercase = false, bool split_punctuation = false);
/// UTF-8 code points of a word (malformed bytes become single-byte symbols).
std::vector<std::string> utf8_chars(std::string_view word);

class BpeModel {
 public:
  using Pair = std::pair<std::string, std::string>;

  BpeModel() = default;
  BpeModel(std::vector<std::string> alphabet, std::vector<Pair> merges);

  const std::vector<Pair>& merges() const { return merges_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const Vocabulary& vocab() const { return vocab_; }

  /// Subword tokens of a whitespace-separated sentence.
  std::vector<std::string> apply(std::string_view sentence) const;
  /// Segmentation of a single word (no "@@" markers).
  std::vector<std::string> segment_word(std::string_view word) const;
  std::vector<int> encode(std::string_view sentence) const;
  /// Ids back to text with subword joins undone; special ids are dropped.
  std::string decode(std::span<const int> ids) const;

  /// Header line, alphabet line, then one merge pair per line.
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  void build_vocab();

  std::vector<std::string> alphabet_;
  std::vector<Pair> merges_;
  std::unordered_map<std::string, std::size_t> rank_;  // "left\x1fright" -> rank
  Vocabulary vocab_;
};

/// Learns up to `n_merges` merges, stopping early once no pair occurs twice.
/// Throws DataError on an empty corpus.
BpeModel learn_bpe(std::span<const std::string> corpus, std::size_t n_merges);

/// Undoes "@@ " continuation joins.
std::string detokenize(std::span<const std::string> tokens);

}  // namespace mmt
