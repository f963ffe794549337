#include "mmt/translator.hpp"

#include <limits>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

template <typename Scalar>
Translator<Scalar>::Translator(ModelKind kind, const ModelConfig& cfg, Index feature_dim,
                               std::uint64_t seed)
    : kind_(kind), cfg_(cfg), feature_dim_(feature_dim) {
  cfg_.validate();
  Engine rng(seed);
  transformer_ = Transformer<Scalar>(cfg_, params_, rng);
  if (uses_images()) {
    if (feature_dim_ <= 0) throw ConfigError("fusion models need a positive feature dimension");
    fusion_ = FusionParams<Scalar>::create(params_, feature_dim_, cfg_.d_model, rng);
  }
}

template <typename Scalar>
typename Translator<Scalar>::Memory Translator<Scalar>::encode(std::span<const int> source,
                                                               const Matrix<Scalar>* images,
                                                               const ForwardContext& ctx) const {
  auto enc = transformer_.encode(source, ctx);
  Memory m;
  m.pad = std::move(enc.source_pad_mask);
  m.h_text = enc.h_text;
  if (!uses_images()) {
    m.fused = enc.h_text;
    return m;
  }
  if (images == nullptr || images->rows() == 0) {
    throw ContractError(fmt::format("{} model needs at least one image feature", to_string(kind_)));
  }
  if (kind_ == ModelKind::kGatedFusion && images->rows() != 1) {
    throw ShapeError(fmt::format("gated_fusion expects exactly one feature row, got {}", images->rows()));
  }
  // K = 1 max-pooling is the identity, so Gated Fusion is the K = 1 case.
  const auto embed = kind_ == ModelKind::kGatedFusion ? project_images(*images, fusion_)
                                                      : rowwise_max_pool(project_images(*images, fusion_));
  if (ctx.gate_override) {
    m.gate = Tensor<Scalar>::constant(Matrix<Scalar>::Constant(
        enc.h_text.rows(), enc.h_text.cols(), static_cast<Scalar>(*ctx.gate_override)));
  } else {
    m.gate = compute_gate(enc.h_text, embed, fusion_);
  }
  m.fused = gated_fuse(enc.h_text, embed, m.gate);
  return m;
}

template <typename Scalar>
Tensor<Scalar> Translator<Scalar>::decode_logits(const Memory& memory, std::span<const int> prefix,
                                                 const ForwardContext& ctx) const {
  return transformer_.decode_logits(memory.fused, memory.pad, prefix, ctx);
}

template <typename Scalar>
std::vector<double> Translator<Scalar>::next_token_log_probs(const Memory& memory,
                                                             std::span<const int> prefix) const {
  NoGradGuard no_grad;
  const ForwardContext eval;
  const auto logits = decode_logits(memory, prefix, eval);
  const auto last = log_softmax_rows(
      Tensor<Scalar>::constant(Matrix<Scalar>(logits.value().bottomRows(1))));
  std::vector<double> out(static_cast<std::size_t>(last.cols()));
  for (Index j = 0; j < last.cols(); ++j) out[static_cast<std::size_t>(j)] = last.value()(0, j);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (int banned : {kPadId, kBosId, kMaskId}) {
    if (banned < static_cast<int>(out.size())) out[static_cast<std::size_t>(banned)] = kNegInf;
  }
  return out;
}

template class Translator<float>;
template class Translator<double>;

}  // namespace mmt
