#include "mmt/decoding.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

std::vector<int> greedy_decode(const StepScorer& scorer, int max_len, int bos, int eos) {
  std::vector<int> prefix{bos};
  for (int step = 0; step < max_len; ++step) {
    const auto log_probs = scorer(prefix);
    std::size_t best = 0;
    for (std::size_t j = 1; j < log_probs.size(); ++j) {
      if (log_probs[j] > log_probs[best]) best = j;
    }
    const int token = static_cast<int>(best);
    if (token == eos) break;
    prefix.push_back(token);
  }
  return {prefix.begin() + 1, prefix.end()};
}

DecodeHypothesis beam_search(const StepScorer& scorer, int beam, int max_len, int bos, int eos) {
  if (beam < 1) throw ConfigError(fmt::format("beam size must be >= 1, got {}", beam));
  if (max_len < 1) throw ConfigError(fmt::format("max_len must be >= 1, got {}", max_len));

  std::vector<DecodeHypothesis> active{DecodeHypothesis{}};
  std::vector<DecodeHypothesis> finished;
  std::vector<int> prefix;

  for (int step = 1; step <= max_len && !active.empty(); ++step) {
    std::vector<DecodeHypothesis> candidates;
    for (const auto& hyp : active) {
      prefix.assign(1, bos);
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      const auto log_probs = scorer(prefix);
      for (std::size_t tok = 0; tok < log_probs.size(); ++tok) {
        if (!std::isfinite(log_probs[tok])) continue;
        DecodeHypothesis next = hyp;
        next.tokens.push_back(static_cast<int>(tok));
        next.log_prob += log_probs[tok];
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.log_prob > b.log_prob; });
    if (candidates.size() > static_cast<std::size_t>(beam)) candidates.resize(static_cast<std::size_t>(beam));

    active.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == eos || step == max_len) {
        c.finished = true;
        finished.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
    // Log-probabilities are non-positive, so no active hypothesis can
    // overtake a finished one that already scores at least as high.
    if (!finished.empty() && !active.empty()) {
      double best_finished = finished.front().log_prob;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.log_prob);
      if (best_finished >= active.front().log_prob) break;
    }
  }

  if (finished.empty()) {
    // Every expansion was -inf; nothing can be generated.
    DecodeHypothesis empty;
    empty.finished = true;
    return empty;
  }
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const auto& a, const auto& b) { return a.log_prob < b.log_prob; });
  return *best;
}

std::vector<int> strip_eos(std::vector<int> tokens, int eos) {
  if (!tokens.empty() && tokens.back() == eos) tokens.pop_back();
  return tokens;
}

template <typename Scalar>
StepScorer make_scorer(const Translator<Scalar>& model, const typename Translator<Scalar>::Memory& memory) {
  return [&model, &memory](std::span<const int> prefix) {
    return model.next_token_log_probs(memory, prefix);
  };
}

template <typename Scalar>
std::vector<int> greedy_decode(const Translator<Scalar>& model, std::span<const int> source,
                               const Matrix<Scalar>* images, int max_len) {
  NoGradGuard no_grad;
  const ForwardContext eval;
  const auto memory = model.encode(source, images, eval);
  const int limit = std::min(max_len, model.config().max_len - 1);
  return greedy_decode(make_scorer(model, memory), limit);
}

template <typename Scalar>
std::vector<int> beam_decode(const Translator<Scalar>& model, std::span<const int> source,
                             const Matrix<Scalar>* images, int beam, int max_len) {
  NoGradGuard no_grad;
  const ForwardContext eval;
  const auto memory = model.encode(source, images, eval);
  const int limit = std::min(max_len, model.config().max_len - 1);
  return strip_eos(beam_search(make_scorer(model, memory), beam, limit).tokens);
}

#define MMT_INSTANTIATE_DECODING(S)                                                                 \
  template StepScorer make_scorer<S>(const Translator<S>&, const Translator<S>::Memory&);           \
  template std::vector<int> greedy_decode<S>(const Translator<S>&, std::span<const int>,            \
                                             const Matrix<S>*, int);                                \
  template std::vector<int> beam_decode<S>(const Translator<S>&, std::span<const int>,              \
                                           const Matrix<S>*, int, int);

MMT_INSTANTIATE_DECODING(float)
MMT_INSTANTIATE_DECODING(double)

}  // namespace mmt
