#pragma once

#include <cstdint>
#include <string>

namespace mmt {

/// Transformer shape. The three presets reproduce the published
/// Base / Small / Tiny configurations.
struct ModelConfig {
  int n_layers = 4;
  int d_model = 128;
  int d_ffn = 256;
  int n_heads = 4;
  double dropout = 0.3;
  int vocab_size = 0;
  int max_len = 256;
  /// Sinusoidal positions; switched off only to test permutation equivariance.
  bool positional_encoding = true;

  /// Throws ConfigError when any field is out of range.
  void validate() const;

  static ModelConfig tiny(int vocab_size);
  static ModelConfig small(int vocab_size);
  static ModelConfig base(int vocab_size);
  /// "tiny", "small" or "base".
  static ModelConfig preset(const std::string& name, int vocab_size);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ModelKind { kTextOnly, kGatedFusion, kRmmt };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Scalar type used for a run. Gradient checks need 64-bit headroom;
/// training defaults to 32-bit.
enum class NumericMode { kFloat32, kFloat64 };

std::string to_string(NumericMode mode);
NumericMode parse_numeric_mode(const std::string& name);

}  // namespace mmt
