#include "mmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <fmt/format.h>

#include "mmt/errors.hpp"
#include "mmt/random.hpp"
#include "mmt/transformer.hpp"

namespace mmt {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError(fmt::format("unknown split '{}' (expected train, valid or test)", name));
}

std::vector<std::string> ParallelCorpus::sources() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

std::vector<std::string> ParallelCorpus::targets() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  for (const auto& l : lines) out << l << '\n';
}

ParallelCorpus read_parallel_corpus(const std::filesystem::path& source, const std::filesystem::path& target,
                                    const std::filesystem::path& feature_ids, Split split) {
  const auto src = read_lines(source);
  const auto tgt = read_lines(target);
  const auto ids = read_lines(feature_ids);
  if (src.size() != tgt.size() || src.size() != ids.size()) {
    throw DataError(fmt::format("{} corpus files are not aligned: {} source, {} target, {} feature-id lines",
                                to_string(split), src.size(), tgt.size(), ids.size()));
  }
  ParallelCorpus corpus;
  corpus.split = split;
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) corpus.pairs.push_back({src[i], tgt[i], ids[i]});
  return corpus;
}

void write_parallel_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source,
                           const std::filesystem::path& target, const std::filesystem::path& feature_ids) {
  std::vector<std::string> ids;
  for (const auto& p : corpus.pairs) ids.push_back(p.feature_id);
  write_lines(source, corpus.sources());
  write_lines(target, corpus.targets());
  write_lines(feature_ids, ids);
}

void check_feature_ids(const ParallelCorpus& corpus, const FeatureStore& store) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!store.contains(corpus.pairs[i].feature_id)) {
      throw DataError(fmt::format("{} line {}: feature id '{}' not in store", to_string(corpus.split), i + 1,
                                  corpus.pairs[i].feature_id));
    }
  }
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const BpeModel& bpe,
                                       const FeatureStore* store, std::size_t max_tokens) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus.pairs[i];
    EncodedPair e;
    e.source = bpe.encode(p.source);
    e.target = bpe.encode(p.target);
    e.sentence_id = i;
    for (const auto* side : {&e.source, &e.target}) {
      if (side->empty()) {
        throw DataError(fmt::format("{} line {}: empty sentence", to_string(corpus.split), i + 1));
      }
      if (side->size() > max_tokens) {
        throw DataError(fmt::format("{} line {}: {} subword tokens exceed the limit of {}", to_string(corpus.split),
                                    i + 1, side->size(), max_tokens));
      }
    }
    if (store != nullptr) e.feature_row = store->index_of(p.feature_id);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

TokenBatch make_batch(std::span<const EncodedPair> corpus, std::vector<std::size_t> indices) {
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  for (auto i : indices) {
    src_len = std::max(src_len, corpus[i].source.size());
    tgt_len = std::max(tgt_len, corpus[i].target.size());
  }
  TokenBatch b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.source = IdMatrix::Constant(n, static_cast<Eigen::Index>(src_len), kPadId);
  b.target = IdMatrix::Constant(n, static_cast<Eigen::Index>(tgt_len), kPadId);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& e = corpus[indices[static_cast<std::size_t>(r)]];
    for (std::size_t t = 0; t < e.source.size(); ++t) b.source(r, static_cast<Eigen::Index>(t)) = e.source[t];
    for (std::size_t t = 0; t < e.target.size(); ++t) b.target(r, static_cast<Eigen::Index>(t)) = e.target[t];
    b.feature_rows.push_back(e.feature_row);
    b.sentence_ids.push_back(e.sentence_id);
  }
  b.indices = std::move(indices);
  return b;
}

}  // namespace

std::vector<TokenBatch> batch_by_tokens(std::span<const EncodedPair> corpus, std::size_t budget,
                                        std::uint64_t seed) {
  auto length = [&](std::size_t i) { return std::max(corpus[i].source.size(), corpus[i].target.size()); };
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (length(i) > budget) {
      throw DataError(fmt::format("sentence {} has {} tokens, more than the batch budget of {}",
                                  corpus[i].sentence_id, length(i), budget));
    }
  }

  Engine rng(seed);
  std::vector<std::tuple<std::size_t, std::uint64_t, std::size_t>> order;
  order.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) order.emplace_back(length(i), rng(), i);
  std::sort(order.begin(), order.end());

  std::vector<TokenBatch> batches;
  std::vector<std::size_t> current;
  std::size_t current_max = 0;
  for (const auto& [len, key, i] : order) {
    const std::size_t new_max = std::max(current_max, len);
    if (!current.empty() && (current.size() + 1) * new_max > budget) {
      batches.push_back(make_batch(corpus, std::move(current)));
      current.clear();
      current_max = 0;
    }
    current.push_back(i);
    current_max = std::max(current_max, len);
  }
  if (!current.empty()) batches.push_back(make_batch(corpus, std::move(current)));

  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::set<std::string> default_stopwords() {
  static const char* const kWords[] = {
      "a",       "about",   "above",  "after",   "again",    "against",    "all",   "am",     "an",
      "and",     "any",     "are",    "as",      "at",       "be",         "because", "been", "before",
      "being",   "below",   "between", "both",   "but",      "by",         "can",   "did",    "do",
      "does",    "doing",   "down",   "during",  "each",     "few",        "for",   "from",   "further",
      "had",     "has",     "have",   "having",  "he",       "her",        "here",  "hers",   "herself",
      "him",     "himself", "his",    "how",     "i",        "if",         "in",    "into",   "is",
      "it",      "its",     "itself", "just",    "me",       "more",       "most",  "my",     "myself",
      "no",      "nor",     "not",    "now",     "of",       "off",        "on",    "once",   "only",
      "or",      "other",   "our",    "ours",    "ourselves", "out",       "over",  "own",    "same",
      "she",     "should",  "so",     "some",    "such",     "than",       "that",  "the",    "their",
      "theirs",  "them",    "themselves", "then", "there",   "these",      "they",  "this",   "those",
      "through", "to",      "too",    "under",   "until",    "up",         "very",  "was",    "we",
      "were",    "what",    "when",   "where",   "which",    "while",      "who",   "whom",   "why",
      "will",    "with",    "you",    "your",    "yours",    "yourself",   "yourselves"};
  return {std::begin(kWords), std::end(kWords)};
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::set<std::string> words;
  for (const auto& line : read_lines(path)) {
    const auto parts = split_words(line);
    if (parts.empty() || parts.front().starts_with('#')) continue;
    words.insert(parts.front());
  }
  return words;
}

namespace {
std::string ascii_lower(std::string s) {
  for (auto& c : s) {
    const auto uc = static_cast<unsigned char>(c);
    if (uc < 0x80) c = static_cast<char>(std::tolower(uc));
  }
  return s;
}
}  // namespace

std::set<std::string> build_grounded_vocab(std::span<const std::string> sentences,
                                           const std::set<std::string>& stopwords, long min_count) {
  if (min_count < 0) throw ConfigError(fmt::format("min_count must be >= 0, got {}", min_count));
  std::set<std::string> lowered;
  for (const auto& w : stopwords) lowered.insert(ascii_lower(w));
  std::map<std::string, long> counts;
  for (const auto& s : sentences) {
    for (const auto& w : split_words(s)) ++counts[w];
  }
  std::set<std::string> grounded;
  for (const auto& [w, c] : counts) {
    if (c > min_count && !Vocabulary::is_special(w) && lowered.count(ascii_lower(w)) == 0) grounded.insert(w);
  }
  return grounded;
}

MaskResult mask_grounded_tokens(std::span<const std::string> tokens, const std::set<std::string>& grounded) {
  MaskResult r;
  r.total = tokens.size();
  r.tokens.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (grounded.count(t) != 0) {
      r.tokens.emplace_back(Vocabulary::kMask);
      ++r.masked;
    } else {
      r.tokens.push_back(t);
    }
  }
  return r;
}

double mask_corpus_sources(ParallelCorpus& corpus, const std::set<std::string>& grounded) {
  std::size_t masked = 0;
  std::size_t total = 0;
  for (auto& p : corpus.pairs) {
    const auto words = split_words(p.source);
    auto r = mask_grounded_tokens(words, grounded);
    masked += r.masked;
    total += r.total;
    p.source = join_words(r.tokens);
  }
  return total == 0 ? 0.0 : static_cast<double>(masked) / static_cast<double>(total);
}

}  // namespace mmt
