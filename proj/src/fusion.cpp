#include "mmt/fusion.hpp"

#include <random>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

template <typename Scalar>
FusionParams<Scalar> FusionParams<Scalar>::create(ParameterSet<Scalar>& params, Index feature_dim,
                                                  Index d_model, Engine& rng) {
  FusionParams p;
  p.w_z = params.add("fusion.w_z", xavier_uniform<Scalar>(feature_dim, d_model, rng));
  p.w_gate = params.add("fusion.w_gate", xavier_uniform<Scalar>(d_model, d_model, rng));
  p.u_gate = params.add("fusion.u_gate", xavier_uniform<Scalar>(d_model, d_model, rng));
  return p;
}

template <typename Scalar>
GateRecord make_gate_record(std::size_t sentence_id, int epoch, const Tensor<Scalar>& lambda) {
  GateRecord r;
  r.sentence_id = sentence_id;
  r.epoch = epoch;
  r.lambda = lambda.value().template cast<double>();
  return r;
}

template <typename Scalar>
Tensor<Scalar> project_image(const VisualFeature<Scalar>& feature, const FusionParams<Scalar>& params) {
  if (feature.vector.cols() != params.feature_dim()) {
    throw ShapeError(fmt::format("project_image: feature of dimension {} against W_z {}",
                                 feature.vector.cols(), to_string(params.w_z.shape())));
  }
  return matmul(Tensor<Scalar>::constant(Matrix<Scalar>(feature.vector)), params.w_z);
}

template <typename Scalar>
Tensor<Scalar> project_images(const Matrix<Scalar>& features, const FusionParams<Scalar>& params) {
  if (features.cols() != params.feature_dim()) {
    throw ShapeError(fmt::format("project_images: features {} against W_z {}",
                                 to_string(Shape{features.rows(), features.cols()}),
                                 to_string(params.w_z.shape())));
  }
  return matmul(Tensor<Scalar>::constant(features), params.w_z);
}

template <typename Scalar>
Tensor<Scalar> compute_gate(const Tensor<Scalar>& h_text, const Tensor<Scalar>& img_embed,
                            const FusionParams<Scalar>& params) {
  if (img_embed.rows() != 1 || img_embed.cols() != h_text.cols()) {
    throw ShapeError(fmt::format("compute_gate: image embedding {} against H_text {}",
                                 to_string(img_embed.shape()), to_string(h_text.shape())));
  }
  const auto text_term = matmul_nt(h_text, params.u_gate);
  const auto image_term = matmul_nt(img_embed, params.w_gate);
  return sigmoid(add_rowwise(text_term, image_term));
}

template <typename Scalar>
Tensor<Scalar> gated_fuse(const Tensor<Scalar>& h_text, const Tensor<Scalar>& img_embed,
                          const Tensor<Scalar>& gate) {
  if (gate.shape() != h_text.shape()) {
    throw ShapeError(fmt::format("gated_fuse: gate {} against H_text {}", to_string(gate.shape()),
                                 to_string(h_text.shape())));
  }
  return h_text + mul_rowwise(gate, img_embed);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> rmmt_fuse(const Tensor<Scalar>& h_text,
                                                    const Matrix<Scalar>& features,
                                                    const FusionParams<Scalar>& params) {
  if (features.rows() == 0) throw ContractError("rmmt_fuse: empty retrieved feature set");
  const auto pooled = rowwise_max_pool(project_images(features, params));
  auto gate = compute_gate(h_text, pooled, params);
  auto fused = gated_fuse(h_text, pooled, gate);
  return {std::move(fused), std::move(gate)};
}

template <typename Scalar>
VisualFeature<Scalar> sample_noise_feature(Engine& rng, Index feature_dim) {
  std::normal_distribution<double> dist(0.0, 1.0);
  VisualFeature<Scalar> f;
  f.vector.resize(feature_dim);
  for (Index i = 0; i < feature_dim; ++i) f.vector(i) = static_cast<Scalar>(dist(rng));
  f.origin = FeatureOrigin::kNoise;
  return f;
}

#define MMT_INSTANTIATE_FUSION(S)                                                                  \
  template struct FusionParams<S>;                                                                 \
  template GateRecord make_gate_record<S>(std::size_t, int, const Tensor<S>&);                     \
  template Tensor<S> project_image<S>(const VisualFeature<S>&, const FusionParams<S>&);            \
  template Tensor<S> project_images<S>(const Matrix<S>&, const FusionParams<S>&);                  \
  template Tensor<S> compute_gate<S>(const Tensor<S>&, const Tensor<S>&, const FusionParams<S>&);  \
  template Tensor<S> gated_fuse<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);          \
  template std::pair<Tensor<S>, Tensor<S>> rmmt_fuse<S>(const Tensor<S>&, const Matrix<S>&,        \
                                                        const FusionParams<S>&);                   \
  template VisualFeature<S> sample_noise_feature<S>(Engine&, Index);

MMT_INSTANTIATE_FUSION(float)
MMT_INSTANTIATE_FUSION(double)

}  // namespace mmt
