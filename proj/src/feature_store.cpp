#include "mmt/feature_store.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mmt/binary_io.hpp"
#include "mmt/errors.hpp"

namespace mmt {

namespace {
constexpr char kMagic[4] = {'F', 'S', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

FeatureStore::FeatureStore(Index dim) : dim_(dim), data_(0, dim) {
  if (dim <= 0) throw ShapeError(fmt::format("feature dimension must be positive, got {}", dim));
}

std::size_t FeatureStore::add(const std::string& id, std::span<const float> values) {
  if (static_cast<Index>(values.size()) != dim_) {
    throw ShapeError(fmt::format("feature '{}' has {} values, store dimension is {}", id, values.size(), dim_));
  }
  if (contains(id)) throw DataError(fmt::format("duplicate feature id '{}'", id));
  const Index r = data_.rows();
  data_.conservativeResize(r + 1, dim_);
  for (Index j = 0; j < dim_; ++j) data_(r, j) = values[static_cast<std::size_t>(j)];
  ids_.push_back(id);
  index_.emplace(id, ids_.size() - 1);
  return ids_.size() - 1;
}

std::size_t FeatureStore::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError(fmt::format("feature id '{}' not found in store", id));
  return it->second;
}

void FeatureStore::append(const FeatureStore& other) {
  if (dim_ == 0 && size() == 0) *this = FeatureStore(other.dim());
  if (other.dim() != dim_) {
    throw ShapeError(fmt::format("cannot append store of dimension {} to dimension {}", other.dim(), dim_));
  }
  for (std::size_t i = 0; i < other.size(); ++i) {
    const Matrix<float> row = other.data_.row(static_cast<Index>(i));
    add(other.ids_[i], std::span<const float>(row.data(), static_cast<std::size_t>(row.size())));
  }
}

void FeatureStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write feature store '{}'", path.string()));
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(size()));
  write_u32(out, static_cast<std::uint32_t>(dim_));
  for (Index i = 0; i < data_.rows(); ++i) {
    for (Index j = 0; j < dim_; ++j) write_f32(out, data_(i, j));
  }
  for (const auto& id : ids_) out << id << '\n';
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read feature store '{}'", path.string()));
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(fmt::format("'{}' is not a feature store (bad magic)", path.string()));
  }
  const auto version = read_u32(in);
  if (version != kVersion) {
    throw DataError(fmt::format("'{}': unsupported feature store version {}", path.string(), version));
  }
  const auto n = read_u32(in);
  const auto d = read_u32(in);
  if (d == 0) throw DataError(fmt::format("'{}': zero feature dimension", path.string()));
  Matrix<float> data(n, d);
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) data(i, j) = read_f32(in);
  }
  if (!in) throw DataError(fmt::format("'{}': truncated feature data", path.string()));
  FeatureStore store(static_cast<Index>(d));
  std::string id;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!std::getline(in, id)) throw DataError(fmt::format("'{}': expected {} ids, found {}", path.string(), n, i));
    const Matrix<float> row = data.row(i);
    store.add(id, std::span<const float>(row.data(), d));
  }
  return store;
}

}  // namespace mmt
