#include "mmt/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "mmt/errors.hpp"
#include "mmt/transformer.hpp"

namespace mmt {

namespace {

constexpr std::string_view kHeader = "#mmtlab-bpe v1";
constexpr std::string_view kAlphabetTag = "#alphabet";
constexpr std::string_view kContinuation = "@@";

std::string pair_key(const std::string& a, const std::string& b) {
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key += a;
  key += '\x1f';
  key += b;
  return key;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> merge_pair(const std::vector<std::string>& symbols, const std::string& a,
                                    const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (auto s : {kPad, kBos, kEos, kUnk, kMask}) add(std::string(s));
}

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError(fmt::format("token id {} out of range for vocabulary of {}", id, size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(std::string_view token) {
  return token == kPad || token == kBos || token == kEos || token == kUnk || token == kMask;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write vocabulary '{}'", path.string()));
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read vocabulary '{}'", path.string()));
  Vocabulary v;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < 5) {
      if (line != v.tokens_[static_cast<std::size_t>(line_no)]) {
        throw DataError(fmt::format("vocabulary '{}': expected special token '{}' on line {}",
                                    path.string(), v.tokens_[static_cast<std::size_t>(line_no)], line_no + 1));
      }
    } else {
      v.add(line);
    }
    ++line_no;
  }
  return v;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::string normalize_text(std::string_view text, bool lowercase, bool split_punctuation) {
  std::string buf;
  buf.reserve(text.size() + 8);
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (split_punctuation && uc < 0x80 && std::ispunct(uc) != 0) {
      buf += ' ';
      buf += c;
      buf += ' ';
    } else {
      buf += lowercase && uc < 0x80 ? static_cast<char>(std::tolower(uc)) : c;
    }
  }
  const auto words = split_words(buf);
  return join_words(words);
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((lead & 0xE0) == 0xC0) {
      len = 2;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
    }
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    chars.emplace_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    const bool continues = t.size() >= kContinuation.size() && t.ends_with(kContinuation) &&
                           !Vocabulary::is_special(t);
    out += continues ? t.substr(0, t.size() - kContinuation.size()) : t;
    if (!continues && i + 1 < tokens.size()) out += ' ';
  }
  return out;
}

// ---------------------------------------------------------------------------

BpeModel::BpeModel(std::vector<std::string> alphabet, std::vector<Pair> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    rank_.emplace(pair_key(merges_[r].first, merges_[r].second), r);
  }
  build_vocab();
}

void BpeModel::build_vocab() {
  vocab_ = Vocabulary();
  auto add_both = [this](const std::string& sym) {
    vocab_.add(sym + std::string(kContinuation));
    vocab_.add(sym);
  };
  for (const auto& c : alphabet_) add_both(c);
  for (const auto& [a, b] : merges_) add_both(a + b);
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  auto symbols = utf8_chars(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == merges_.size()) break;
    symbols = merge_pair(symbols, symbols[best_pos], symbols[best_pos + 1]);
  }
  return symbols;
}

std::vector<std::string> BpeModel::apply(std::string_view sentence) const {
  std::vector<std::string> tokens;
  for (const auto& word : split_words(sentence)) {
    if (Vocabulary::is_special(word)) {
      tokens.push_back(word);
      continue;
    }
    auto pieces = segment_word(word);
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) pieces[i] += kContinuation;
    tokens.insert(tokens.end(), pieces.begin(), pieces.end());
  }
  return tokens;
}

std::vector<int> BpeModel::encode(std::string_view sentence) const {
  const auto tokens = apply(sentence);
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab_.id(t));
  return ids;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  std::vector<std::string> tokens;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    tokens.push_back(vocab_.token(id));
  }
  return detokenize(tokens);
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write BPE model '{}'", path.string()));
  out << kHeader << '\n' << kAlphabetTag;
  for (const auto& c : alphabet_) out << ' ' << c;
  out << '\n';
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read BPE model '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw DataError(fmt::format("'{}' is not a BPE model (bad header)", path.string()));
  }
  if (!std::getline(in, line) || !line.starts_with(kAlphabetTag)) {
    throw DataError(fmt::format("'{}': missing alphabet line", path.string()));
  }
  auto alphabet = split_words(std::string_view(line).substr(kAlphabetTag.size()));
  std::vector<Pair> merges;
  while (std::getline(in, line)) {
    const auto parts = split_words(line);
    if (parts.size() != 2) throw DataError(fmt::format("'{}': malformed merge line '{}'", path.string(), line));
    merges.emplace_back(parts[0], parts[1]);
  }
  return BpeModel(std::move(alphabet), std::move(merges));
}

// ---------------------------------------------------------------------------

BpeModel learn_bpe(std::span<const std::string> corpus, std::size_t n_merges) {
  std::map<std::string, long> word_freq;
  for (const auto& line : corpus) {
    for (const auto& w : split_words(line)) {
      if (!Vocabulary::is_special(w)) ++word_freq[w];
    }
  }
  if (word_freq.empty()) throw DataError("learn_bpe: empty corpus");

  struct Word {
    std::vector<std::string> symbols;
    long freq;
  };
  std::vector<Word> words;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    auto chars = utf8_chars(w);
    alphabet.insert(chars.begin(), chars.end());
    words.push_back({std::move(chars), f});
  }

  using Pair = BpeModel::Pair;
  std::map<Pair, long> counts;
  std::set<std::pair<long, Pair>> by_count;  // (-count, pair): begin() is the best
  std::map<Pair, std::set<std::size_t>> where;

  auto adjust = [&](const Pair& p, long delta) {
    auto it = counts.find(p);
    const long old = it == counts.end() ? 0 : it->second;
    if (old != 0) by_count.erase({-old, p});
    const long now = old + delta;
    if (now != 0) {
      counts[p] = now;
      by_count.insert({-now, p});
    } else if (it != counts.end()) {
      counts.erase(it);
    }
  };
  auto visit_pairs = [&](std::size_t wi, long sign) {
    const auto& s = words[wi].symbols;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      Pair p{s[i], s[i + 1]};
      adjust(p, sign * words[wi].freq);
      if (sign > 0) where[p].insert(wi);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) visit_pairs(wi, +1);

  std::vector<Pair> merges;
  while (merges.size() < n_merges && !by_count.empty()) {
    const auto [neg_count, best] = *by_count.begin();
    if (-neg_count < 2) break;
    merges.push_back(best);
    const auto affected = where[best];
    for (std::size_t wi : affected) {
      visit_pairs(wi, -1);
      words[wi].symbols = merge_pair(words[wi].symbols, best.first, best.second);
      visit_pairs(wi, +1);
    }
    where.erase(best);
  }
  return BpeModel(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(merges));
}

}  // namespace mmt
