#include "mmt/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mmt/binary_io.hpp"
#include "mmt/errors.hpp"

namespace mmt {

namespace {
constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string extents_string(const std::vector<Index>& e) {
  std::string s = "[";
  for (std::size_t i = 0; i < e.size(); ++i) s += (i ? "," : "") + std::to_string(e[i]);
  return s + "]";
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, ckpt.config_hash);
  write_u32(out, static_cast<std::uint32_t>(ckpt.epoch));
  write_f64(out, ckpt.val_loss);
  write_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    write_string(out, e.name);
    write_u32(out, static_cast<std::uint32_t>(e.extents.size()));
    for (auto x : e.extents) write_u32(out, static_cast<std::uint32_t>(x));
    for (float v : e.values) write_f32(out, v);
  }
}
}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterSet<Scalar>& params, int epoch, double val_loss, std::uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.epoch = epoch;
  c.val_loss = val_loss;
  for (const auto& p : params.entries()) {
    CheckpointEntry e;
    e.name = p.name;
    e.extents = p.extents;
    const auto& v = p.tensor.value();
    e.values.resize(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) e.values[static_cast<std::size_t>(i)] = static_cast<float>(v.data()[i]);
    c.entries.push_back(std::move(e));
  }
  return c;
}

template <typename Scalar>
void load_checkpoint_into(const Checkpoint& ckpt, ParameterSet<Scalar>& params, bool allow_partial) {
  for (const auto& e : ckpt.entries) {
    if (!params.contains(e.name)) {
      throw DataError(fmt::format("checkpoint parameter '{}' does not exist in the model", e.name));
    }
  }
  for (auto& p : params.entries()) {
    const auto* e = ckpt.find(p.name);
    if (e == nullptr) {
      if (allow_partial) continue;
      throw DataError(fmt::format("checkpoint is missing parameter '{}'", p.name));
    }
    if (e->extents != p.extents) {
      throw DataError(fmt::format("parameter '{}': checkpoint shape {} but model shape {}", p.name,
                                  extents_string(e->extents), extents_string(p.extents)));
    }
    auto& v = p.tensor.mutable_value();
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(e->values[static_cast<std::size_t>(i)]);
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ckpt);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", path.string()));
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read checkpoint '{}'", path.string()));
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
  }
  const auto version = read_u32(in);
  if (version != kVersion) throw DataError(fmt::format("'{}': unsupported checkpoint version {}", path.string(), version));
  Checkpoint c;
  c.config_hash = read_u64(in);
  c.epoch = static_cast<int>(read_u32(in));
  c.val_loss = read_f64(in);
  const auto n = read_u32(in);
  for (std::uint32_t k = 0; k < n; ++k) {
    CheckpointEntry e;
    e.name = read_string(in);
    const auto rank = read_u32(in);
    if (rank < 1 || rank > 2) throw DataError(fmt::format("'{}': entry '{}' has rank {}", path.string(), e.name, rank));
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.extents.push_back(static_cast<Index>(read_u32(in)));
      count *= static_cast<std::size_t>(e.extents.back());
    }
    e.values.resize(count);
    for (auto& v : e.values) v = read_f32(in);
    c.entries.push_back(std::move(e));
  }
  return c;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts) {
  if (ckpts.empty()) throw ContractError("average_checkpoints: no checkpoints");
  const auto& first = ckpts.front();
  for (const auto& c : ckpts) {
    if (c.entries.size() != first.entries.size()) {
      throw ShapeError(fmt::format("average_checkpoints: {} vs {} parameters", c.entries.size(), first.entries.size()));
    }
    for (std::size_t k = 0; k < c.entries.size(); ++k) {
      if (c.entries[k].name != first.entries[k].name || c.entries[k].extents != first.entries[k].extents) {
        throw ShapeError(fmt::format("average_checkpoints: parameter mismatch '{}' {} vs '{}' {}", c.entries[k].name,
                                     extents_string(c.entries[k].extents), first.entries[k].name,
                                     extents_string(first.entries[k].extents)));
      }
    }
  }
  Checkpoint avg = ckpts.back();
  const auto n = static_cast<double>(ckpts.size());
  for (std::size_t k = 0; k < avg.entries.size(); ++k) {
    auto& values = avg.entries[k].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      double s = 0.0;
      for (const auto& c : ckpts) s += static_cast<double>(c.entries[k].values[i]);
      values[i] = static_cast<float>(s / n);
    }
  }
  return avg;
}

std::vector<Checkpoint> load_checkpoint_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(fmt::format("'{}' is not a directory", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(fmt::format("no .ckpt files in '{}'", dir.string()));
  std::vector<Checkpoint> out;
  for (const auto& f : files) out.push_back(load_checkpoint(f));
  return out;
}

template Checkpoint make_checkpoint<float>(const ParameterSet<float>&, int, double, std::uint64_t);
template Checkpoint make_checkpoint<double>(const ParameterSet<double>&, int, double, std::uint64_t);
template void load_checkpoint_into<float>(const Checkpoint&, ParameterSet<float>&, bool);
template void load_checkpoint_into<double>(const Checkpoint&, ParameterSet<double>&, bool);

}  // namespace mmt
