#pragma once

// Parameter snapshots and their binary format:
//   "CKPT", u32 version, u64 config hash, u32 epoch, f64 val_loss,
//   u32 entry count, then per entry: u32 name length, name bytes, u32 rank,
//   rank x u32 extents, f32 values row-major.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmt/parameters.hpp"

namespace mmt {

struct CheckpointEntry {
  std::string name;
  std::vector<Index> extents;
  std::vector<float> values;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  int epoch = 0;
  double val_loss = 0.0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

/// Snapshot of `params` (values rounded to 32-bit floats).
template <typename Scalar>
Checkpoint make_checkpoint(const ParameterSet<Scalar>& params, int epoch, double val_loss, std::uint64_t config_hash);

/// Copies every checkpoint entry into the parameter with the same name.
/// Throws DataError for a missing parameter or a shape mismatch; parameters
/// absent from the checkpoint are an error unless `allow_partial`.
template <typename Scalar>
void load_checkpoint_into(const Checkpoint& ckpt, ParameterSet<Scalar>& params, bool allow_partial = false);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

/// Elementwise mean (accumulated in double). Throws ContractError for an
/// empty list and ShapeError when names or extents differ. The result
/// carries the last checkpoint's epoch, hash and validation loss.
Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts);

/// Loads all "*.ckpt" files of a directory in name order.
std::vector<Checkpoint> load_checkpoint_dir(const std::filesystem::path& dir);

}  // namespace mmt
