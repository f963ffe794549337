#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/fusion.hpp"
#include "mmt/model_config.hpp"
#include "mmt/parameters.hpp"
#include "mmt/transformer.hpp"

namespace mmt {

/// Text-only, Gated Fusion or RMMT translator. All three share the text
/// parameter names, so a text-only model can be loaded from a fusion
/// model's parameters and vice versa (minus `fusion.*`).
///
/// The fused representation replaces H_text as the decoder's memory.
template <typename Scalar>
class Translator {
 public:
  struct Memory {
    Tensor<Scalar> fused;    // T x d_model, cross-attention memory
    std::vector<bool> pad;   // source padding mask
    Tensor<Scalar> h_text;   // encoder output before fusion
    Tensor<Scalar> gate;     // T x d_model; undefined for text-only
  };

  Translator(ModelKind kind, const ModelConfig& cfg, Index feature_dim, std::uint64_t seed);
  Translator(const Translator&) = delete;
  Translator& operator=(const Translator&) = delete;
  Translator(Translator&&) noexcept = default;
  Translator& operator=(Translator&&) noexcept = default;

  /// `images` is K x feature_dim: one row for Gated Fusion, K >= 1 rows for
  /// RMMT, ignored (may be null) for text-only.
  Memory encode(std::span<const int> source, const Matrix<Scalar>* images,
                const ForwardContext& ctx) const;
  Tensor<Scalar> decode_logits(const Memory& memory, std::span<const int> prefix,
                               const ForwardContext& ctx) const;
  Tensor<Scalar> forward(std::span<const int> source, const Matrix<Scalar>* images,
                         std::span<const int> prefix, const ForwardContext& ctx) const {
    return decode_logits(encode(source, images, ctx), prefix, ctx);
  }

  /// Eval-mode log-probabilities of the next token after `prefix`; padding,
  /// BOS and MASK are excluded (-inf).
  std::vector<double> next_token_log_probs(const Memory& memory, std::span<const int> prefix) const;

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  Index feature_dim() const { return feature_dim_; }
  bool uses_images() const { return kind_ != ModelKind::kTextOnly; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }

 private:
  ModelKind kind_;
  ModelConfig cfg_;
  Index feature_dim_;
  ParameterSet<Scalar> params_;
  Transformer<Scalar> transformer_;
  FusionParams<Scalar> fusion_;
};

}  // namespace mmt
