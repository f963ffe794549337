#pragma once

// Learning-rate schedule, Adam, label-smoothed cross-entropy and early
// stopping.

#include <cstdint>
#include <span>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/parameters.hpp"

namespace mmt {

struct LrSchedule {
  long warmup_steps = 2000;
  double lr_init = 1e-7;
  double lr_peak = 0.005;
};

/// Linear warmup from lr_init to lr_peak over `warmup_steps`, then
/// lr_peak * sqrt(warmup_steps / step). Throws ContractError for step < 0.
double lr_at_step(long step, const LrSchedule& schedule);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// false: L2 term added to the gradient before the moment updates.
  /// true: decay applied directly to the weights (AdamW style).
  bool decoupled = false;
};

template <typename Scalar>
class Adam {
 public:
  Adam(ParameterSet<Scalar>& params, AdamOptions options);

  /// One update from the gradients currently held by the parameters
  /// (missing gradients count as zero).
  void step(double lr);

  long step_count() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }

 private:
  ParameterSet<Scalar>* params_;
  AdamOptions options_;
  std::vector<Matrix<Scalar>> m_, v_;
  long t_ = 0;
};

/// Sum over non-pad rows of the cross-entropy against the smoothed target
/// distribution ((1 - eps) on the gold id, eps / (V - 1) elsewhere),
/// divided by `normalizer`, or by the non-pad row count when `normalizer`
/// is 0. Throws ConfigError for eps outside [0, 1), ContractError when every
/// target is padding.
template <typename Scalar>
Tensor<Scalar> smoothed_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets, double eps,
                                      int pad_id, double normalizer = 0.0);

/// Patience counter over validation losses; epochs are counted from 1.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);

  /// Records the loss of the next epoch; returns true once `patience`
  /// epochs have passed without a strict improvement.
  bool update(double val_loss);

  int epoch() const { return epoch_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epochs_since_best() const { return epoch_ - best_epoch_; }
  bool should_stop() const { return epoch_ > 0 && epochs_since_best() >= patience_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_loss_;
};

}  // namespace mmt
