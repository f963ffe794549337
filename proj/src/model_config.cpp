#include "mmt/model_config.hpp"

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || d_ffn <= 0 || n_heads <= 0) {
    throw ConfigError(fmt::format("model: layers/d_model/d_ffn/heads must be positive (got {}/{}/{}/{})",
                                  n_layers, d_model, d_ffn, n_heads));
  }
  if (d_model % n_heads != 0) {
    throw ConfigError(fmt::format("model: d_model {} not divisible by n_heads {}", d_model, n_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError(fmt::format("model: dropout {} outside [0, 1)", dropout));
  }
  if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
  if (max_len <= 0) throw ConfigError("model: max_len must be positive");
}

ModelConfig ModelConfig::tiny(int vocab_size) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 128;
  c.d_ffn = 256;
  c.n_heads = 4;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::small(int vocab_size) {
  ModelConfig c;
  c.n_layers = 6;
  c.d_model = 512;
  c.d_ffn = 1024;
  c.n_heads = 4;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::base(int vocab_size) {
  ModelConfig c;
  c.n_layers = 6;
  c.d_model = 512;
  c.d_ffn = 2048;
  c.n_heads = 8;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name, int vocab_size) {
  if (name == "tiny") return tiny(vocab_size);
  if (name == "small") return small(vocab_size);
  if (name == "base") return base(vocab_size);
  throw ConfigError(fmt::format("unknown model preset '{}'", name));
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTextOnly:
      return "text_only";
    case ModelKind::kGatedFusion:
      return "gated_fusion";
    case ModelKind::kRmmt:
      return "rmmt";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "text_only") return ModelKind::kTextOnly;
  if (name == "gated_fusion" || name == "gated") return ModelKind::kGatedFusion;
  if (name == "rmmt") return ModelKind::kRmmt;
  throw ConfigError(fmt::format("unknown model kind '{}' (text_only|gated_fusion|rmmt)", name));
}

std::string to_string(NumericMode mode) {
  return mode == NumericMode::kFloat64 ? "f64" : "f32";
}

NumericMode parse_numeric_mode(const std::string& name) {
  if (name == "f32" || name == "float32") return NumericMode::kFloat32;
  if (name == "f64" || name == "float64") return NumericMode::kFloat64;
  throw ConfigError(fmt::format("unknown precision '{}' (f32|f64)", name));
}

}  // namespace mmt
