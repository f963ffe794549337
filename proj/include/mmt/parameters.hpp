#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/random.hpp"

namespace mmt {

/// Named, ordered collection of trainable tensors. Registration order is the
/// serialization order, so two sets built by the same code line up exactly.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    std::vector<Index> extents;  // rank 1 for biases/gains, rank 2 otherwise
    Tensor<Scalar> tensor;
  };

  /// Registers a rank-2 parameter (rows x cols).
  Tensor<Scalar> add(const std::string& name, Matrix<Scalar> init);
  /// Registers a rank-1 parameter stored as a 1 x n row.
  Tensor<Scalar> add_vector(const std::string& name, RowVector<Scalar> init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<Scalar>& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalars.
  std::size_t count() const;

  void zero_grad();
  /// Copies every parameter whose name also exists in `other`; returns the
  /// number copied. Shapes must agree.
  std::size_t copy_matching(const ParameterSet& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Initializers.
template <typename Scalar>
Matrix<Scalar> xavier_uniform(Index fan_in, Index fan_out, Engine& rng);
template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, Engine& rng);

}  // namespace mmt
