#pragma once

// Visual fusion layers: image projection, gating matrix, Gated Fusion and
// retrieval-augmented (max-pooled) fusion, plus the Gaussian-noise feature
// adversary.
//
//   Embed(z) = z W_z                                  (1 x d)
//   Lambda   = sigmoid(Embed(z) W_gate^T  +  H_text U_gate^T)   row-broadcast
//   H        = H_text + Lambda .* Embed(z)            row-broadcast
//
// RMMT replaces Embed(z) with the columnwise max over the K retrieved
// projections.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "mmt/autodiff.hpp"
#include "mmt/parameters.hpp"
#include "mmt/random.hpp"

namespace mmt {

enum class FeatureOrigin { kFile, kNoise, kSynthetic };

template <typename Scalar>
struct VisualFeature {
  RowVector<Scalar> vector;
  FeatureOrigin origin = FeatureOrigin::kFile;
};

template <typename Scalar>
struct FusionParams {
  Tensor<Scalar> w_z;     // d_v x d_model
  Tensor<Scalar> w_gate;  // d_model x d_model
  Tensor<Scalar> u_gate;  // d_model x d_model

  /// Registers `fusion.w_z`, `fusion.w_gate`, `fusion.u_gate`.
  static FusionParams create(ParameterSet<Scalar>& params, Index feature_dim, Index d_model,
                             Engine& rng);
  Index feature_dim() const { return w_z.rows(); }
  Index d_model() const { return w_z.cols(); }
};

/// Snapshot of one sentence's gating matrix, kept in double regardless of
/// the training precision.
struct GateRecord {
  std::size_t sentence_id = 0;
  int epoch = 0;
  Matrix<double> lambda;  // T x d, entries in [0, 1]

  Index length() const { return lambda.rows(); }
  Index dim() const { return lambda.cols(); }
};

template <typename Scalar>
GateRecord make_gate_record(std::size_t sentence_id, int epoch, const Tensor<Scalar>& lambda);

/// feature W_z as a 1 x d_model tensor. Throws ShapeError on a dimension
/// mismatch.
template <typename Scalar>
Tensor<Scalar> project_image(const VisualFeature<Scalar>& feature, const FusionParams<Scalar>& params);

/// Projects each row of a K x d_v feature matrix (K x d_model result).
template <typename Scalar>
Tensor<Scalar> project_images(const Matrix<Scalar>& features, const FusionParams<Scalar>& params);

/// The gating matrix (T x d_model).
template <typename Scalar>
Tensor<Scalar> compute_gate(const Tensor<Scalar>& h_text, const Tensor<Scalar>& img_embed,
                            const FusionParams<Scalar>& params);

/// H_text + Lambda .* broadcast(img_embed).
template <typename Scalar>
Tensor<Scalar> gated_fuse(const Tensor<Scalar>& h_text, const Tensor<Scalar>& img_embed,
                          const Tensor<Scalar>& gate);

/// Max-pools the K projected features, gates against the pooled vector and
/// fuses. Returns (H, Lambda). Throws ContractError for K = 0.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> rmmt_fuse(const Tensor<Scalar>& h_text,
                                                    const Matrix<Scalar>& features,
                                                    const FusionParams<Scalar>& params);

/// I.i.d. standard normal entries.
template <typename Scalar>
VisualFeature<Scalar> sample_noise_feature(Engine& rng, Index feature_dim);

}  // namespace mmt
