#include "mmt/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "mmt/errors.hpp"
#include "mmt/optim.hpp"
#include "mmt/random.hpp"

namespace mmt {

template <typename Scalar>
Retriever<Scalar>::Retriever(const ModelConfig& encoder_cfg, Index retrieval_dim, std::uint64_t seed)
    : cfg_(encoder_cfg) {
  cfg_.validate();
  if (retrieval_dim <= 0) throw ConfigError(fmt::format("retrieval dimension must be positive, got {}", retrieval_dim));
  Engine rng(seed);
  embedding_ = params_.add("retriever.embed.weight",
                           normal_matrix<Scalar>(cfg_.vocab_size, cfg_.d_model, 1.0 / std::sqrt(double(cfg_.d_model)), rng));
  embedding_.mutable_value().row(kPadId).setZero();
  encoder_ = TransformerEncoder<Scalar>(cfg_, embedding_, params_, "retriever.", rng);
  w_text_ = params_.add("retriever.w_text", xavier_uniform<Scalar>(cfg_.d_model, retrieval_dim, rng));
}

template <typename Scalar>
Tensor<Scalar> Retriever<Scalar>::pool(std::span<const int> tokens, const ForwardContext& ctx) const {
  if (tokens.empty()) throw ContractError("embed_text: empty sentence");
  const auto enc = encoder_.encode(tokens, ctx);
  std::vector<Index> keep;
  for (std::size_t i = 0; i < enc.source_pad_mask.size(); ++i) {
    if (!enc.source_pad_mask[i]) keep.push_back(static_cast<Index>(i));
  }
  if (static_cast<Index>(keep.size()) == enc.h_text.rows()) return mean_rows(enc.h_text);
  return mean_rows(gather_rows(enc.h_text, std::span<const Index>(keep)));
}

template <typename Scalar>
Tensor<Scalar> Retriever<Scalar>::project(const Tensor<Scalar>& pooled) const {
  if (pooled.cols() != w_text_.rows()) {
    throw ShapeError(fmt::format("pooled vector has width {}, W_text expects {}", pooled.cols(), w_text_.rows()));
  }
  return matmul(pooled, w_text_);
}

template <typename Scalar>
RowVector<double> Retriever<Scalar>::embed(std::span<const int> tokens) const {
  NoGradGuard no_grad;
  const auto e = embed_text(tokens, ForwardContext{});
  return e.value().row(0).template cast<double>();
}

double score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError(fmt::format("score: dimension mismatch {} vs {}", a.size(), b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::size_t> retrieve_topk_rows(const RowVector<double>& query, const Matrix<float>& store,
                                            std::size_t k) {
  const auto n = static_cast<std::size_t>(store.rows());
  if (k < 1 || k > n) throw ConfigError(fmt::format("K = {} out of range for a store of {} rows", k, n));
  if (query.cols() != store.cols()) {
    throw ShapeError(fmt::format("query dimension {} does not match store dimension {}", query.cols(), store.cols()));
  }
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < store.cols(); ++j) s += query(j) * static_cast<double>(store(static_cast<Index>(i), j));
    scores[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

std::vector<std::string> retrieve_topk(const RowVector<double>& query, const FeatureStore& store, std::size_t k) {
  std::vector<std::string> ids;
  for (auto r : retrieve_topk_rows(query, store.matrix(), k)) ids.push_back(store.ids()[r]);
  return ids;
}

double recall_at_k(const Matrix<double>& queries, std::span<const std::string> gold_ids, const FeatureStore& store,
                   std::size_t k) {
  if (static_cast<std::size_t>(queries.rows()) != gold_ids.size()) {
    throw ShapeError(fmt::format("recall_at_k: {} queries but {} gold ids", queries.rows(), gold_ids.size()));
  }
  if (gold_ids.empty()) throw ContractError("recall_at_k: no queries");
  std::vector<std::size_t> gold_rows;
  for (const auto& id : gold_ids) gold_rows.push_back(store.index_of(id));
  std::size_t hits = 0;
  for (Index q = 0; q < queries.rows(); ++q) {
    const RowVector<double> query = queries.row(q);
    const auto top = retrieve_topk_rows(query, store.matrix(), k);
    if (std::find(top.begin(), top.end(), gold_rows[static_cast<std::size_t>(q)]) != top.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold_ids.size());
}

template <typename Scalar>
Matrix<double> embed_sentences(const Retriever<Scalar>& retriever, std::span<const std::vector<int>> sentences) {
  Matrix<double> out(static_cast<Index>(sentences.size()), retriever.retrieval_dim());
  for (std::size_t i = 0; i < sentences.size(); ++i) out.row(static_cast<Index>(i)) = retriever.embed(sentences[i]);
  return out;
}

template <typename Scalar>
Tensor<Scalar> contrastive_loss(const Tensor<Scalar>& text, const Matrix<Scalar>& images) {
  const Index b = text.rows();
  if (b < 2) throw ContractError("contrastive loss needs at least two pairs per batch");
  if (images.rows() != b || images.cols() != text.cols()) {
    throw ShapeError(fmt::format("contrastive loss: text {} vs images {}", to_string(text.shape()),
                                 to_string(Shape{images.rows(), images.cols()})));
  }
  const auto img = Tensor<Scalar>::constant(images);
  const Matrix<Scalar> w = Matrix<Scalar>::Identity(b, b) * static_cast<Scalar>(-0.5 / static_cast<double>(b));
  const auto text_to_image = weighted_sum(log_softmax_rows(matmul_nt(text, img)), w);
  const auto image_to_text = weighted_sum(log_softmax_rows(matmul_nt(img, text)), w);
  return text_to_image + image_to_text;
}

template <typename Scalar>
RetrieverTrainReport pretrain_retriever(Retriever<Scalar>& retriever, std::span<const RetrievalPair> pairs,
                                        const FeatureStore& store, const RetrieverTrainOptions& options) {
  if (pairs.size() < 2) throw ContractError("retriever pretraining needs at least two pairs (batch of one)");
  if (options.batch_size < 2) throw ConfigError("retriever batch size must be >= 2");
  if (store.dim() != retriever.retrieval_dim()) {
    throw ShapeError(fmt::format("store dimension {} does not match retriever dimension {}", store.dim(),
                                 retriever.retrieval_dim()));
  }
  Adam<Scalar> adam(retriever.parameters(), AdamOptions{});
  RetrieverTrainReport report;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Engine rng(derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end)
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      spans.emplace_back(start, std::min(order.size(), start + options.batch_size));
    }
    if (spans.size() > 1 && spans.back().second - spans.back().first == 1) {
      spans[spans.size() - 2].second = spans.back().second;
      spans.pop_back();
    }

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < spans.size(); ++bi) {
      const auto [begin, end] = spans[bi];
      CounterStream dropout_rng(derive_seed(options.seed, (static_cast<std::uint64_t>(epoch) << 32) + bi));
      ForwardContext ctx;
      ctx.training = true;
      ctx.rng = &dropout_rng;
      std::vector<Tensor<Scalar>> rows;
      std::vector<std::size_t> image_rows;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& p = pairs[order[k]];
        rows.push_back(retriever.embed_text(p.tokens, ctx));
        image_rows.push_back(p.feature_row);
      }
      const auto text = concat_rows(std::span<const Tensor<Scalar>>(rows));
      const auto loss = contrastive_loss(text, store.rows<Scalar>(image_rows));
      retriever.parameters().zero_grad();
      backward(loss);
      adam.step(options.lr);
      loss_sum += static_cast<double>(loss.item());
    }
    report.epoch_losses.push_back(loss_sum / static_cast<double>(spans.size()));
  }
  return report;
}

#define MMT_INSTANTIATE_RETRIEVER(S)                                                                    \
  template class Retriever<S>;                                                                          \
  template Matrix<double> embed_sentences<S>(const Retriever<S>&, std::span<const std::vector<int>>);   \
  template Tensor<S> contrastive_loss<S>(const Tensor<S>&, const Matrix<S>&);                           \
  template RetrieverTrainReport pretrain_retriever<S>(Retriever<S>&, std::span<const RetrievalPair>,    \
                                                      const FeatureStore&, const RetrieverTrainOptions&);

MMT_INSTANTIATE_RETRIEVER(float)
MMT_INSTANTIATE_RETRIEVER(double)

}  // namespace mmt
