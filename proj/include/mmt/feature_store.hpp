#pragma once

// Dense feature table keyed by string ids. Used both for image features fed
// to the fusion layers and for the retriever's image side.
//
// File layout (little-endian): "FSTR", u32 version, u32 n, u32 d, n*d f32
// row-major, then one id per line.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmt/autodiff.hpp"

namespace mmt {

class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(Index dim);

  /// Appends a row. Throws ShapeError on a dimension mismatch and DataError
  /// on a duplicate id.
  std::size_t add(const std::string& id, std::span<const float> values);
  template <typename Derived>
  std::size_t add(const std::string& id, const Eigen::MatrixBase<Derived>& row) {
    const Matrix<float> tmp = row.template cast<float>();
    return add(id, std::span<const float>(tmp.data(), static_cast<std::size_t>(tmp.size())));
  }

  Index dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Row index of `id`; throws DataError when absent.
  std::size_t index_of(const std::string& id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  const Matrix<float>& matrix() const { return data_; }

  /// Selected rows converted to `Scalar`.
  template <typename Scalar>
  Matrix<Scalar> rows(std::span<const std::size_t> indices) const {
    Matrix<Scalar> out(static_cast<Index>(indices.size()), dim_);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      out.row(static_cast<Index>(k)) = data_.row(static_cast<Index>(indices[k])).template cast<Scalar>();
    }
    return out;
  }
  template <typename Scalar>
  Matrix<Scalar> row(std::size_t index) const {
    return data_.row(static_cast<Index>(index)).template cast<Scalar>();
  }

  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path);

  /// Rows of `other` appended after this store's rows (ids must not clash).
  void append(const FeatureStore& other);

 private:
  Index dim_ = 0;
  Matrix<float> data_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mmt
