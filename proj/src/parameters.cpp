#include "mmt/parameters.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::add(const std::string& name, Matrix<Scalar> init) {
  if (contains(name)) throw ContractError(fmt::format("duplicate parameter '{}'", name));
  std::vector<Index> extents{init.rows(), init.cols()};
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(extents), Tensor<Scalar>::parameter(std::move(init))});
  return entries_.back().tensor;
}

template <typename Scalar>
Tensor<Scalar> ParameterSet<Scalar>::add_vector(const std::string& name, RowVector<Scalar> init) {
  if (contains(name)) throw ContractError(fmt::format("duplicate parameter '{}'", name));
  std::vector<Index> extents{init.cols()};
  Matrix<Scalar> m = init;
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(extents), Tensor<Scalar>::parameter(std::move(m))});
  return entries_.back().tensor;
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError(fmt::format("no parameter named '{}'", name));
  return entries_[it->second].tensor;
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.size());
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::copy_matching(const ParameterSet& other) {
  std::size_t copied = 0;
  for (auto& e : entries_) {
    if (!other.contains(e.name)) continue;
    const auto& src = other.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw ShapeError(fmt::format("parameter '{}': {} vs {}", e.name, to_string(e.tensor.shape()),
                                   to_string(src.shape())));
    }
    e.tensor.mutable_value() = src.value();
    ++copied;
  }
  return copied;
}

template <typename Scalar>
Matrix<Scalar> xavier_uniform(Index fan_in, Index fan_out, Engine& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, Engine& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template Matrix<float> xavier_uniform<float>(Index, Index, Engine&);
template Matrix<double> xavier_uniform<double>(Index, Index, Engine&);
template Matrix<float> normal_matrix<float>(Index, Index, double, Engine&);
template Matrix<double> normal_matrix<double>(Index, Index, double, Engine&);

}  // namespace mmt
