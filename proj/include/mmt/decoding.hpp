#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/transformer.hpp"
#include "mmt/translator.hpp"

namespace mmt {

/// Next-token log-probabilities given the prefix generated so far (the
/// prefix starts with BOS). Entries of -inf are never expanded.
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct DecodeHypothesis {
  std::vector<int> tokens;  // generated tokens, EOS included when emitted
  double log_prob = 0.0;    // sum of the per-step log-probabilities of `tokens`
  bool finished = false;
};

/// Appends the argmax token (lowest id on ties) until EOS or `max_len`
/// generated tokens. Returns the tokens without BOS/EOS.
std::vector<int> greedy_decode(const StepScorer& scorer, int max_len, int bos = kBosId,
                               int eos = kEosId);

/// Beam search without length penalty. A hypothesis finishes on EOS or after
/// `max_len` tokens. Candidates are ranked by summed log-probability; ties
/// keep creation order (parent rank, then token id). Returns the best
/// finished hypothesis. Throws ConfigError for beam < 1.
DecodeHypothesis beam_search(const StepScorer& scorer, int beam, int max_len, int bos = kBosId,
                             int eos = kEosId);

/// Strips a trailing EOS.
std::vector<int> strip_eos(std::vector<int> tokens, int eos = kEosId);

template <typename Scalar>
StepScorer make_scorer(const Translator<Scalar>& model, const typename Translator<Scalar>::Memory& memory);

template <typename Scalar>
std::vector<int> greedy_decode(const Translator<Scalar>& model, std::span<const int> source,
                               const Matrix<Scalar>* images, int max_len);

template <typename Scalar>
std::vector<int> beam_decode(const Translator<Scalar>& model, std::span<const int> source,
                             const Matrix<Scalar>* images, int beam, int max_len);

}  // namespace mmt
