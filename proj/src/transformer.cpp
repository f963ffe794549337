#include "mmt/transformer.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

namespace {

template <typename Scalar>
Tensor<Scalar> apply_dropout(const Tensor<Scalar>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward pass without a dropout stream");
  return dropout(x, rate, true, *ctx.rng);
}

template <typename Scalar>
Tensor<Scalar> embed_tokens(const Tensor<Scalar>& table, const Matrix<Scalar>& positions,
                            std::span<const int> ids, const ModelConfig& cfg) {
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw IndexError(fmt::format("token id {} out of range for vocabulary of {}", id, cfg.vocab_size));
    }
  }
  auto x = scale(embedding_lookup(table, ids), static_cast<Scalar>(std::sqrt(double(cfg.d_model))));
  if (cfg.positional_encoding) {
    x = add_constant(x, Matrix<Scalar>(positions.topRows(static_cast<Index>(ids.size()))));
  }
  return x;
}

template <typename Scalar>
Matrix<Scalar> causal_mask(Index n) {
  Matrix<Scalar> m = Matrix<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<Scalar>::infinity();
  }
  return m;
}

template <typename Scalar>
std::vector<Index> unpadded_rows(const std::vector<bool>& pad) {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < pad.size(); ++i) {
    if (!pad[i]) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index max_len, Index d_model) {
  Matrix<Scalar> pe(max_len, d_model);
  const Index half = d_model / 2;
  for (Index pos = 0; pos < max_len; ++pos) {
    for (Index i = 0; i < d_model; ++i) {
      const Index k = i % std::max<Index>(half, 1);
      const double freq = std::exp(-std::log(10000.0) * double(k) / double(std::max<Index>(half, 1)));
      const double angle = double(pos) * freq;
      pe(pos, i) = static_cast<Scalar>(i < half ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename Scalar>
Linear<Scalar> Linear<Scalar>::create(ParameterSet<Scalar>& params, const std::string& name, Index in,
                                      Index out, Engine& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", xavier_uniform<Scalar>(in, out, rng));
  l.bias = params.add_vector(name + ".bias", RowVector<Scalar>::Zero(out));
  return l;
}

template <typename Scalar>
LayerNorm<Scalar> LayerNorm<Scalar>::create(ParameterSet<Scalar>& params, const std::string& name,
                                            Index dim) {
  LayerNorm n;
  n.gain = params.add_vector(name + ".gain", RowVector<Scalar>::Ones(dim));
  n.bias = params.add_vector(name + ".bias", RowVector<Scalar>::Zero(dim));
  return n;
}

template <typename Scalar>
MultiHeadAttention<Scalar> MultiHeadAttention<Scalar>::create(ParameterSet<Scalar>& params,
                                                              const std::string& name, Index d_model,
                                                              int heads, Engine& rng) {
  MultiHeadAttention a;
  a.query = Linear<Scalar>::create(params, name + ".q", d_model, d_model, rng);
  a.key = Linear<Scalar>::create(params, name + ".k", d_model, d_model, rng);
  a.value = Linear<Scalar>::create(params, name + ".v", d_model, d_model, rng);
  a.out = Linear<Scalar>::create(params, name + ".o", d_model, d_model, rng);
  a.heads = heads;
  return a;
}

template <typename Scalar>
Tensor<Scalar> MultiHeadAttention<Scalar>::operator()(const Tensor<Scalar>& queries,
                                                      const Tensor<Scalar>& keys,
                                                      const Matrix<Scalar>* mask) const {
  const Index d_model = queries.cols();
  const Index d_head = d_model / heads;
  const Scalar inv_sqrt = static_cast<Scalar>(1.0 / std::sqrt(double(d_head)));
  const auto q = query(queries);
  const auto k = key(keys);
  const auto v = value(keys);
  std::vector<Tensor<Scalar>> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Index start = h * d_head;
    auto scores = scale(matmul_nt(slice_cols(q, start, d_head), slice_cols(k, start, d_head)), inv_sqrt);
    if (mask != nullptr) scores = add_constant(scores, *mask);
    outputs.push_back(matmul(softmax_rows(scores), slice_cols(v, start, d_head)));
  }
  const auto merged = heads == 1 ? outputs.front()
                                 : concat_cols(std::span<const Tensor<Scalar>>(outputs));
  return out(merged);
}

template <typename Scalar>
FeedForward<Scalar> FeedForward<Scalar>::create(ParameterSet<Scalar>& params, const std::string& name,
                                                Index d_model, Index d_ffn, Engine& rng) {
  FeedForward f;
  f.in = Linear<Scalar>::create(params, name + ".in", d_model, d_ffn, rng);
  f.out = Linear<Scalar>::create(params, name + ".out", d_ffn, d_model, rng);
  return f;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
TransformerEncoder<Scalar>::TransformerEncoder(const ModelConfig& cfg, Tensor<Scalar> embedding,
                                               ParameterSet<Scalar>& params, const std::string& prefix,
                                               Engine& rng)
    : cfg_(cfg), embedding_(std::move(embedding)) {
  cfg_.validate();
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string name = fmt::format("{}encoder.layers.{}", prefix, i);
    Layer layer;
    layer.attn_norm = LayerNorm<Scalar>::create(params, name + ".attn_norm", cfg_.d_model);
    layer.self_attn =
        MultiHeadAttention<Scalar>::create(params, name + ".self_attn", cfg_.d_model, cfg_.n_heads, rng);
    layer.ffn_norm = LayerNorm<Scalar>::create(params, name + ".ffn_norm", cfg_.d_model);
    layer.ffn = FeedForward<Scalar>::create(params, name + ".ffn", cfg_.d_model, cfg_.d_ffn, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm<Scalar>::create(params, prefix + "encoder.final_norm", cfg_.d_model);
  positions_ = sinusoidal_positions<Scalar>(cfg_.max_len, cfg_.d_model);
}

template <typename Scalar>
EncoderOutput<Scalar> TransformerEncoder<Scalar>::encode(std::span<const int> source,
                                                         const ForwardContext& ctx) const {
  if (source.empty()) throw ContractError("encode: empty source");
  if (static_cast<int>(source.size()) > cfg_.max_len) {
    throw ContractError(fmt::format("encode: source length {} exceeds max_len {}", source.size(),
                                    cfg_.max_len));
  }
  EncoderOutput<Scalar> result;
  result.source_pad_mask.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) result.source_pad_mask[i] = source[i] == kPadId;
  const auto keep = unpadded_rows<Scalar>(result.source_pad_mask);
  if (keep.empty()) throw ContractError("encode: source consists only of padding");
  const bool has_pad = keep.size() != source.size();

  auto x = apply_dropout(embed_tokens(embedding_, positions_, source, cfg_), cfg_.dropout, ctx);
  for (const auto& layer : layers_) {
    const auto normed = layer.attn_norm(x);
    // Padding positions never act as keys: they are dropped, not masked.
    const auto keys = has_pad ? gather_rows(normed, std::span<const Index>(keep)) : normed;
    x = x + apply_dropout(layer.self_attn(normed, keys, nullptr), cfg_.dropout, ctx);
    x = x + apply_dropout(layer.ffn(layer.ffn_norm(x)), cfg_.dropout, ctx);
  }
  result.h_text = final_norm_(x);
  return result;
}

template <typename Scalar>
TransformerDecoder<Scalar>::TransformerDecoder(const ModelConfig& cfg, Tensor<Scalar> embedding,
                                               ParameterSet<Scalar>& params, const std::string& prefix,
                                               Engine& rng)
    : cfg_(cfg), embedding_(std::move(embedding)) {
  cfg_.validate();
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string name = fmt::format("{}decoder.layers.{}", prefix, i);
    Layer layer;
    layer.self_norm = LayerNorm<Scalar>::create(params, name + ".self_norm", cfg_.d_model);
    layer.self_attn =
        MultiHeadAttention<Scalar>::create(params, name + ".self_attn", cfg_.d_model, cfg_.n_heads, rng);
    layer.cross_norm = LayerNorm<Scalar>::create(params, name + ".cross_norm", cfg_.d_model);
    layer.cross_attn =
        MultiHeadAttention<Scalar>::create(params, name + ".cross_attn", cfg_.d_model, cfg_.n_heads, rng);
    layer.ffn_norm = LayerNorm<Scalar>::create(params, name + ".ffn_norm", cfg_.d_model);
    layer.ffn = FeedForward<Scalar>::create(params, name + ".ffn", cfg_.d_model, cfg_.d_ffn, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm<Scalar>::create(params, prefix + "decoder.final_norm", cfg_.d_model);
  positions_ = sinusoidal_positions<Scalar>(cfg_.max_len, cfg_.d_model);
}

template <typename Scalar>
Tensor<Scalar> TransformerDecoder<Scalar>::decode_logits(const Tensor<Scalar>& memory,
                                                         const std::vector<bool>& memory_pad_mask,
                                                         std::span<const int> prefix,
                                                         const ForwardContext& ctx) const {
  if (prefix.empty()) throw ContractError("decode_logits: empty target prefix");
  if (static_cast<int>(prefix.size()) > cfg_.max_len) {
    throw ContractError(fmt::format("decode_logits: prefix length {} exceeds max_len {}", prefix.size(),
                                    cfg_.max_len));
  }
  if (static_cast<std::size_t>(memory.rows()) != memory_pad_mask.size()) {
    throw ShapeError(fmt::format("decode_logits: memory {} vs pad mask of length {}",
                                 to_string(memory.shape()), memory_pad_mask.size()));
  }
  const auto keep = unpadded_rows<Scalar>(memory_pad_mask);
  if (keep.empty()) throw ContractError("decode_logits: memory consists only of padding");
  const auto mem = keep.size() == memory_pad_mask.size()
                       ? memory
                       : gather_rows(memory, std::span<const Index>(keep));
  const Matrix<Scalar> mask = causal_mask<Scalar>(static_cast<Index>(prefix.size()));

  auto x = apply_dropout(embed_tokens(embedding_, positions_, prefix, cfg_), cfg_.dropout, ctx);
  for (const auto& layer : layers_) {
    const auto normed = layer.self_norm(x);
    x = x + apply_dropout(layer.self_attn(normed, normed, &mask), cfg_.dropout, ctx);
    x = x + apply_dropout(layer.cross_attn(layer.cross_norm(x), mem, nullptr), cfg_.dropout, ctx);
    x = x + apply_dropout(layer.ffn(layer.ffn_norm(x)), cfg_.dropout, ctx);
  }
  return matmul_nt(final_norm_(x), embedding_);
}

template <typename Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& cfg, ParameterSet<Scalar>& params, Engine& rng)
    : cfg_(cfg) {
  cfg_.validate();
  embedding_ = params.add("embed.weight",
                          normal_matrix<Scalar>(cfg_.vocab_size, cfg_.d_model,
                                                1.0 / std::sqrt(double(cfg_.d_model)), rng));
  embedding_.mutable_value().row(kPadId).setZero();
  encoder_ = TransformerEncoder<Scalar>(cfg_, embedding_, params, "", rng);
  decoder_ = TransformerDecoder<Scalar>(cfg_, embedding_, params, "", rng);
}

std::size_t transformer_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t f = static_cast<std::size_t>(cfg.d_ffn);
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t layers = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t encoder = layers * (attn + ffn + 2 * norm) + norm;
  const std::size_t decoder = layers * (2 * attn + ffn + 3 * norm) + norm;
  return static_cast<std::size_t>(cfg.vocab_size) * d + encoder + decoder;
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;
template class TransformerDecoder<float>;
template class TransformerDecoder<double>;
template class Transformer<float>;
template class Transformer<double>;
template Matrix<float> sinusoidal_positions<float>(Index, Index);
template Matrix<double> sinusoidal_positions<double>(Index, Index);

}  // namespace mmt
