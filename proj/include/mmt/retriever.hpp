#pragma once

// Dense text-to-image retrieval: a small transformer encoder, mean pooled
// and projected by W_text, scored against a frozen feature store by inner
// product.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/feature_store.hpp"
#include "mmt/model_config.hpp"
#include "mmt/parameters.hpp"
#include "mmt/transformer.hpp"

namespace mmt {

template <typename Scalar>
class Retriever {
 public:
  /// `encoder_cfg.vocab_size` must cover the token ids fed to embed_text;
  /// `retrieval_dim` is the store dimension d_r.
  Retriever(const ModelConfig& encoder_cfg, Index retrieval_dim, std::uint64_t seed);
  Retriever(const Retriever&) = delete;
  Retriever& operator=(const Retriever&) = delete;
  Retriever(Retriever&&) noexcept = default;
  Retriever& operator=(Retriever&&) noexcept = default;

  /// Mean of the encoder outputs (1 x d_model). Throws ContractError for an
  /// empty sentence.
  Tensor<Scalar> pool(std::span<const int> tokens, const ForwardContext& ctx = {}) const;
  /// pooled W_text (1 x d_r). Also the entry point for precomputed
  /// sentence vectors of width d_model.
  Tensor<Scalar> project(const Tensor<Scalar>& pooled) const;
  Tensor<Scalar> embed_text(std::span<const int> tokens, const ForwardContext& ctx = {}) const {
    return project(pool(tokens, ctx));
  }
  /// Eval-mode embedding in double.
  RowVector<double> embed(std::span<const int> tokens) const;

  const ModelConfig& config() const { return cfg_; }
  Index retrieval_dim() const { return w_text_.cols(); }
  const Tensor<Scalar>& w_text() const { return w_text_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }

 private:
  ModelConfig cfg_;
  ParameterSet<Scalar> params_;
  Tensor<Scalar> embedding_;
  TransformerEncoder<Scalar> encoder_;
  Tensor<Scalar> w_text_;  // d_model x d_r
};

/// Inner product. Throws ShapeError on a length mismatch.
double score(std::span<const double> a, std::span<const double> b);
inline double score(const RowVector<double>& a, const RowVector<double>& b) {
  return score(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
               std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

/// Row indices of the K best-scoring store rows, by descending score with
/// ties in store order. Throws ConfigError unless 1 <= K <= n.
std::vector<std::size_t> retrieve_topk_rows(const RowVector<double>& query, const Matrix<float>& store,
                                            std::size_t k);
std::vector<std::string> retrieve_topk(const RowVector<double>& query, const FeatureStore& store, std::size_t k);

/// Fraction of queries (rows of `queries`) whose top-K contains the gold
/// id. Throws DataError for a gold id missing from the store.
double recall_at_k(const Matrix<double>& queries, std::span<const std::string> gold_ids,
                   const FeatureStore& store, std::size_t k);

template <typename Scalar>
Matrix<double> embed_sentences(const Retriever<Scalar>& retriever, std::span<const std::vector<int>> sentences);

struct RetrievalPair {
  std::vector<int> tokens;
  std::size_t feature_row = 0;
};

struct RetrieverTrainOptions {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct RetrieverTrainReport {
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// In-batch contrastive training of the text side: each batch's score
/// matrix (texts x their gold features) is trained with cross-entropy along
/// both rows and columns. Store features stay frozen. A trailing batch of
/// one is folded into its predecessor; a corpus of one pair throws
/// ContractError.
template <typename Scalar>
RetrieverTrainReport pretrain_retriever(Retriever<Scalar>& retriever, std::span<const RetrievalPair> pairs,
                                        const FeatureStore& store, const RetrieverTrainOptions& options);

/// Symmetric in-batch loss for one batch (exposed for tests).
template <typename Scalar>
Tensor<Scalar> contrastive_loss(const Tensor<Scalar>& text, const Matrix<Scalar>& images);

}  // namespace mmt
