#include "mmt/synthetic.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "mmt/errors.hpp"
#include "mmt/random.hpp"

namespace mmt {

namespace {

constexpr std::uint64_t kCentroidStream = 0xC1A55;
constexpr std::uint64_t kSentenceStream = 0x5E47;

const std::vector<std::string> kSyllables = {"ka", "lo", "mi", "ru", "te", "so", "pa", "ni", "do", "ve"};

}  // namespace

std::string to_string(SyntheticMode mode) {
  return mode == SyntheticMode::kTextSufficient ? "text_sufficient" : "text_insufficient";
}

SyntheticMode parse_synthetic_mode(const std::string& name) {
  if (name == "text_sufficient") return SyntheticMode::kTextSufficient;
  if (name == "text_insufficient") return SyntheticMode::kTextInsufficient;
  throw ConfigError(fmt::format("unknown synthetic mode '{}' (expected text_sufficient or text_insufficient)", name));
}

void SyntheticOptions::validate() const {
  const int max_classes = static_cast<int>(synthetic_class_words().size());
  if (n_classes < 1 || n_classes > max_classes) {
    throw ConfigError(fmt::format("synthetic n_classes must be in [1, {}], got {}", max_classes, n_classes));
  }
  const int max_content = static_cast<int>(kSyllables.size() * kSyllables.size());
  if (content_words < 1 || content_words > max_content) {
    throw ConfigError(fmt::format("synthetic content_words must be in [1, {}], got {}", max_content, content_words));
  }
  if (feature_dim < 1) throw ConfigError("synthetic feature_dim must be positive");
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError(fmt::format("bad synthetic length range [{}, {}]", min_len, max_len));
  }
  if (content_rate < 0.0 || content_rate > 1.0) throw ConfigError("synthetic content_rate must be in [0, 1]");
  if (feature_noise < 0.0) throw ConfigError("synthetic feature_noise must be >= 0");
}

std::vector<std::string> synthetic_content_words(int count) {
  std::vector<std::string> words;
  for (const auto& a : kSyllables) {
    for (const auto& b : kSyllables) {
      if (a == b) continue;
      words.push_back(a + b);
      if (static_cast<int>(words.size()) == count) return words;
    }
  }
  for (const auto& a : kSyllables) {
    if (static_cast<int>(words.size()) == count) break;
    words.push_back(a + a);
  }
  return words;
}

const std::vector<std::string>& synthetic_source_stopwords() {
  static const std::vector<std::string> w = {"a", "the", "on", "in", "with", "of", "is", "at"};
  return w;
}

const std::vector<std::string>& synthetic_target_stopwords() {
  static const std::vector<std::string> w = {"ein", "der", "auf", "im", "mit", "von", "ist", "bei"};
  return w;
}

const std::vector<std::string>& synthetic_class_words() {
  static const std::vector<std::string> w = {"rot", "blau", "gruen", "schwarz", "weiss", "gelb", "braun", "rosa"};
  return w;
}

std::string synthetic_translate_word(const std::string& word, int content_words) {
  const auto& ss = synthetic_source_stopwords();
  if (auto it = std::find(ss.begin(), ss.end(), word); it != ss.end()) {
    return synthetic_target_stopwords()[static_cast<std::size_t>(it - ss.begin())];
  }
  const auto content = synthetic_content_words(content_words);
  if (std::find(content.begin(), content.end(), word) == content.end()) {
    throw DataError(fmt::format("'{}' is not a synthetic source word", word));
  }
  std::string t(word.rbegin(), word.rend());
  return t + "e";
}

SyntheticCorpus gen_synthetic_corpus(SyntheticMode mode, std::size_t n, std::uint64_t seed,
                                     const SyntheticOptions& options, Split split) {
  options.validate();
  if (n < 1) throw ConfigError("synthetic corpus size must be >= 1");

  std::normal_distribution<double> gauss(0.0, 1.0);
  Engine centroid_rng(derive_seed(seed, kCentroidStream));
  Matrix<double> centroids(options.n_classes, options.feature_dim);
  for (Index c = 0; c < centroids.rows(); ++c) {
    for (Index j = 0; j < centroids.cols(); ++j) centroids(c, j) = gauss(centroid_rng);
  }

  const auto content = synthetic_content_words(options.content_words);
  std::vector<std::string> content_targets;
  for (const auto& w : content) content_targets.push_back(synthetic_translate_word(w, options.content_words));
  const auto& stop_src = synthetic_source_stopwords();
  const auto& stop_tgt = synthetic_target_stopwords();

  Engine rng(derive_seed(seed, kSentenceStream + static_cast<std::uint64_t>(split)));
  std::uniform_int_distribution<int> length_dist(options.min_len, options.max_len);
  std::uniform_int_distribution<std::size_t> content_dist(0, content.size() - 1);
  std::uniform_int_distribution<std::size_t> stop_dist(0, stop_src.size() - 1);
  std::uniform_int_distribution<int> class_dist(0, options.n_classes - 1);
  std::bernoulli_distribution is_content(options.content_rate);

  SyntheticCorpus out;
  out.corpus.split = split;
  out.store = FeatureStore(options.feature_dim);
  RowVector<double> feature(options.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const int len = length_dist(rng);
    std::vector<std::string> src;
    std::vector<std::string> tgt;
    for (int t = 0; t < len; ++t) {
      if (is_content(rng)) {
        const auto k = content_dist(rng);
        src.push_back(content[k]);
        tgt.push_back(content_targets[k]);
      } else {
        const auto k = stop_dist(rng);
        src.push_back(stop_src[k]);
        tgt.push_back(stop_tgt[k]);
      }
    }
    const int cls = class_dist(rng);
    if (mode == SyntheticMode::kTextInsufficient) {
      std::uniform_int_distribution<int> slot_dist(0, len);
      const auto slot = static_cast<std::ptrdiff_t>(slot_dist(rng));
      src.insert(src.begin() + slot, std::string(Vocabulary::kMask));
      tgt.insert(tgt.begin() + slot, synthetic_class_words()[static_cast<std::size_t>(cls)]);
    }
    for (Index j = 0; j < feature.cols(); ++j) {
      feature(j) = centroids(cls, j) + options.feature_noise * gauss(rng);
    }
    const std::string id = fmt::format("{}-{:06d}", to_string(split), i);
    out.store.add(id, feature);
    out.corpus.pairs.push_back({join_words(src), join_words(tgt), id});
    out.classes.push_back(cls);
  }
  return out;
}

SyntheticSplits gen_synthetic_splits(SyntheticMode mode, std::size_t n_train, std::size_t n_valid,
                                     std::size_t n_test, std::uint64_t seed, const SyntheticOptions& options) {
  SyntheticSplits s;
  s.train = gen_synthetic_corpus(mode, n_train, seed, options, Split::kTrain);
  s.valid = gen_synthetic_corpus(mode, n_valid, seed, options, Split::kValid);
  s.test = gen_synthetic_corpus(mode, n_test, seed, options, Split::kTest);
  s.store = s.train.store;
  s.store.append(s.valid.store);
  s.store.append(s.test.store);
  return s;
}

}  // namespace mmt
