#include "mmt/optim.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

double lr_at_step(long step, const LrSchedule& s) {
  if (step < 0) throw ContractError(fmt::format("lr_at_step: negative step {}", step));
  if (s.warmup_steps <= 0) {
    return s.lr_peak / std::sqrt(static_cast<double>(std::max(step, 1L)));
  }
  const auto w = static_cast<double>(s.warmup_steps);
  const auto t = static_cast<double>(step);
  if (step <= s.warmup_steps) return s.lr_init + (s.lr_peak - s.lr_init) * t / w;
  return s.lr_peak * std::sqrt(w / t);
}

template <typename Scalar>
Adam<Scalar>::Adam(ParameterSet<Scalar>& params, AdamOptions options) : params_(&params), options_(options) {
  if (options.beta1 < 0 || options.beta1 >= 1 || options.beta2 < 0 || options.beta2 >= 1) {
    throw ConfigError(fmt::format("Adam betas must be in [0, 1), got {} and {}", options.beta1, options.beta2));
  }
  if (options.eps <= 0) throw ConfigError("Adam eps must be positive");
  if (options.weight_decay < 0) throw ConfigError("weight decay must be >= 0");
  for (const auto& e : params.entries()) {
    m_.push_back(Matrix<Scalar>::Zero(e.tensor.rows(), e.tensor.cols()));
    v_.push_back(Matrix<Scalar>::Zero(e.tensor.rows(), e.tensor.cols()));
  }
}

template <typename Scalar>
void Adam<Scalar>::step(double lr) {
  auto& entries = params_->entries();
  if (entries.size() != m_.size()) throw ContractError("Adam: parameter set changed after construction");
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double wd = options_.weight_decay;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& tensor = entries[k].tensor;
    Matrix<Scalar>& w = tensor.mutable_value();
    const bool has_grad = tensor.has_grad();
    const Matrix<Scalar>* grad = has_grad ? &tensor.node()->grad : nullptr;
    Matrix<Scalar>& m = m_[k];
    Matrix<Scalar>& v = v_[k];
    for (Index i = 0; i < w.size(); ++i) {
      double g = has_grad ? static_cast<double>(grad->data()[i]) : 0.0;
      double theta = static_cast<double>(w.data()[i]);
      if (!options_.decoupled) g += wd * theta;
      const double mi = b1 * static_cast<double>(m.data()[i]) + (1.0 - b1) * g;
      const double vi = b2 * static_cast<double>(v.data()[i]) + (1.0 - b2) * g * g;
      m.data()[i] = static_cast<Scalar>(mi);
      v.data()[i] = static_cast<Scalar>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + options_.eps);
      if (options_.decoupled) theta -= lr * wd * theta;
      theta -= lr * update;
      w.data()[i] = static_cast<Scalar>(theta);
    }
  }
}

template <typename Scalar>
Tensor<Scalar> smoothed_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets, double eps,
                                      int pad_id, double normalizer) {
  if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError(fmt::format("label smoothing must be in [0, 1), got {}", eps));
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError(fmt::format("smoothed_cross_entropy: {} targets for {} logit rows", targets.size(),
                                 logits.rows()));
  }
  const Index vocab = logits.cols();
  if (vocab < 2) throw ShapeError("smoothed_cross_entropy needs at least two classes");
  std::size_t count = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || t >= vocab) throw IndexError(fmt::format("target id {} out of range for {} classes", t, vocab));
    ++count;
  }
  if (count == 0) throw ContractError("smoothed_cross_entropy: every target is padding (empty loss)");
  const double denom = normalizer > 0.0 ? normalizer : static_cast<double>(count);
  const auto on = static_cast<Scalar>(-(1.0 - eps) / denom);
  const auto off = static_cast<Scalar>(-(eps / static_cast<double>(vocab - 1)) / denom);
  Matrix<Scalar> weights = Matrix<Scalar>::Zero(logits.rows(), vocab);
  for (Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == pad_id) continue;
    weights.row(i).setConstant(off);
    weights(i, t) = on;
  }
  return weighted_sum(log_softmax_rows(logits), weights);
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError(fmt::format("patience must be >= 1, got {}", patience));
}

bool EarlyStopper::update(double val_loss) {
  ++epoch_;
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch_;
  }
  return should_stop();
}

template class Adam<float>;
template class Adam<double>;
template Tensor<float> smoothed_cross_entropy<float>(const Tensor<float>&, std::span<const int>, double, int, double);
template Tensor<double> smoothed_cross_entropy<double>(const Tensor<double>&, std::span<const int>, double, int,
                                                       double);

}  // namespace mmt
