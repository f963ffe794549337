#pragma once

// Synthetic grounded translation corpora for desk-scale experiments.
//
// Source sentences mix content words and stopwords; the target is a fixed
// word-by-word bijection of the source. Every sentence has a latent image
// class whose feature vector is a class centroid plus Gaussian noise.
//
//   text_sufficient:   the class is unrelated to the text.
//   text_insufficient: one extra slot carries the class; its source word is
//                      <mask> and its target word names the class, so only
//                      the image can resolve it.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mmt/corpus.hpp"
#include "mmt/feature_store.hpp"

namespace mmt {

enum class SyntheticMode { kTextSufficient, kTextInsufficient };

std::string to_string(SyntheticMode mode);
SyntheticMode parse_synthetic_mode(const std::string& name);

struct SyntheticOptions {
  int n_classes = 8;
  Index feature_dim = 32;
  int content_words = 24;
  int min_len = 4;
  int max_len = 8;
  /// Probability that a position holds a content (non-stop) word.
  double content_rate = 0.45;
  /// Std-dev of the per-sentence noise added to the class centroid.
  double feature_noise = 0.3;

  void validate() const;
};

struct SyntheticCorpus {
  ParallelCorpus corpus;
  FeatureStore store;
  std::vector<int> classes;  // latent class per sentence
};

/// n sentence pairs for `split`. Class centroids depend on `seed` only, so
/// all splits generated from one seed share them.
SyntheticCorpus gen_synthetic_corpus(SyntheticMode mode, std::size_t n, std::uint64_t seed,
                                     const SyntheticOptions& options = {}, Split split = Split::kTrain);

struct SyntheticSplits {
  SyntheticCorpus train, valid, test;
  /// Union of the three stores.
  FeatureStore store;
};

SyntheticSplits gen_synthetic_splits(SyntheticMode mode, std::size_t n_train, std::size_t n_valid,
                                     std::size_t n_test, std::uint64_t seed, const SyntheticOptions& options = {});

/// The generator's vocabularies.
std::vector<std::string> synthetic_content_words(int count);
const std::vector<std::string>& synthetic_source_stopwords();
const std::vector<std::string>& synthetic_target_stopwords();
const std::vector<std::string>& synthetic_class_words();
/// Target word for a source word (content words, stopwords); throws
/// DataError for a word outside the generator's vocabulary.
std::string synthetic_translate_word(const std::string& word, int content_words = 24);

}  // namespace mmt
