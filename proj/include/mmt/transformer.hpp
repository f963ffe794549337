#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/model_config.hpp"
#include "mmt/parameters.hpp"
#include "mmt/random.hpp"

namespace mmt {

/// Per-forward switches. Dropout draws from `rng`, which must be set when
/// training with a non-zero rate.
struct ForwardContext {
  bool training = false;
  CounterStream* rng = nullptr;
  /// Replaces every gate entry with this constant (probing / degeneration).
  std::optional<double> gate_override;
};

// Reserved ids shared by the tokenizer and the models.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kMaskId = 4;

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // in x out
  Tensor<Scalar> bias;    // 1 x out

  static Linear create(ParameterSet<Scalar>& params, const std::string& name, Index in, Index out,
                       Engine& rng);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return add_rowwise(matmul(x, weight), bias);
  }
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;

  static LayerNorm create(ParameterSet<Scalar>& params, const std::string& name, Index dim);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return layer_norm(x, gain, bias, Scalar(1e-5));
  }
};

template <typename Scalar>
struct MultiHeadAttention {
  Linear<Scalar> query, key, value, out;
  int heads = 1;

  static MultiHeadAttention create(ParameterSet<Scalar>& params, const std::string& name,
                                   Index d_model, int heads, Engine& rng);
  /// `mask`, when given, is added to every head's score matrix.
  Tensor<Scalar> operator()(const Tensor<Scalar>& queries, const Tensor<Scalar>& keys,
                            const Matrix<Scalar>* mask) const;
};

template <typename Scalar>
struct FeedForward {
  Linear<Scalar> in, out;

  static FeedForward create(ParameterSet<Scalar>& params, const std::string& name, Index d_model,
                            Index d_ffn, Engine& rng);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return out(relu(in(x))); }
};

template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> h_text;               // T x d_model
  std::vector<bool> source_pad_mask;  // true at padding positions
};

/// Pre-norm encoder stack over a caller-owned embedding table.
template <typename Scalar>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const ModelConfig& cfg, Tensor<Scalar> embedding, ParameterSet<Scalar>& params,
                     const std::string& prefix, Engine& rng);

  /// Throws ContractError for an empty or overlong input, IndexError for
  /// an id outside the vocabulary.
  EncoderOutput<Scalar> encode(std::span<const int> source, const ForwardContext& ctx) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  struct Layer {
    LayerNorm<Scalar> attn_norm;
    MultiHeadAttention<Scalar> self_attn;
    LayerNorm<Scalar> ffn_norm;
    FeedForward<Scalar> ffn;
  };
  ModelConfig cfg_;
  Tensor<Scalar> embedding_;
  std::vector<Layer> layers_;
  LayerNorm<Scalar> final_norm_;
  Matrix<Scalar> positions_;
};

/// Pre-norm decoder stack with an output projection tied to the embedding.
template <typename Scalar>
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(const ModelConfig& cfg, Tensor<Scalar> embedding, ParameterSet<Scalar>& params,
                     const std::string& prefix, Engine& rng);

  /// Logits (N x vocab) for every prefix position. Row i sees memory and
  /// prefix tokens 0..i only.
  Tensor<Scalar> decode_logits(const Tensor<Scalar>& memory, const std::vector<bool>& memory_pad_mask,
                               std::span<const int> prefix, const ForwardContext& ctx) const;

 private:
  struct Layer {
    LayerNorm<Scalar> self_norm;
    MultiHeadAttention<Scalar> self_attn;
    LayerNorm<Scalar> cross_norm;
    MultiHeadAttention<Scalar> cross_attn;
    LayerNorm<Scalar> ffn_norm;
    FeedForward<Scalar> ffn;
  };
  ModelConfig cfg_;
  Tensor<Scalar> embedding_;
  std::vector<Layer> layers_;
  LayerNorm<Scalar> final_norm_;
  Matrix<Scalar> positions_;
};

/// Encoder-decoder with a joint source/target embedding table.
template <typename Scalar>
class Transformer {
 public:
  Transformer() = default;
  Transformer(const ModelConfig& cfg, ParameterSet<Scalar>& params, Engine& rng);

  EncoderOutput<Scalar> encode(std::span<const int> source, const ForwardContext& ctx) const {
    return encoder_.encode(source, ctx);
  }
  Tensor<Scalar> decode_logits(const Tensor<Scalar>& memory, const std::vector<bool>& memory_pad_mask,
                               std::span<const int> prefix, const ForwardContext& ctx) const {
    return decoder_.decode_logits(memory, memory_pad_mask, prefix, ctx);
  }
  const ModelConfig& config() const { return cfg_; }
  const Tensor<Scalar>& embedding() const { return embedding_; }

 private:
  ModelConfig cfg_;
  Tensor<Scalar> embedding_;
  TransformerEncoder<Scalar> encoder_;
  TransformerDecoder<Scalar> decoder_;
};

/// Sinusoidal table, max_len x d_model.
template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index max_len, Index d_model);

/// Parameter count of an encoder-decoder built from `cfg` (text path only).
std::size_t transformer_parameter_count(const ModelConfig& cfg);

}  // namespace mmt
