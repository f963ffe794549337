#pragma once

// Experiment configuration: an INI file with the sections data, model,
// training, fusion, retriever and probe, plus "section.key=value" overrides.
// Every key has a default; unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "mmt/corpus.hpp"
#include "mmt/retriever.hpp"
#include "mmt/synthetic.hpp"
#include "mmt/training.hpp"

namespace mmt {

enum class ValueKind { kString, kInt, kReal, kBool };

struct ConfigKey {
  std::string section;
  std::string key;
  std::string default_value;
  ValueKind kind;
  std::string help;

  std::string path() const { return section + "." + key; }
};

/// All recognised keys, in output order.
const std::vector<ConfigKey>& config_schema();

class ExperimentConfig {
 public:
  /// All defaults.
  ExperimentConfig();

  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(const std::string& text);

  /// "section.key=value" (a leading "--" is accepted).
  void apply_override(std::string_view assignment);
  void set(const std::string& path, const std::string& value);

  std::string get(const std::string& path) const;
  long get_int(const std::string& path) const;
  double get_real(const std::string& path) const;
  bool get_bool(const std::string& path) const;

  /// Every key in schema order, as INI text.
  std::string resolved_ini() const;
  void write(const std::filesystem::path& path) const;

 private:
  void check_value(const ConfigKey& key, const std::string& value) const;

  boost::property_tree::ptree tree_;
};

/// Training settings from the model, training and fusion sections.
/// vocab_size is left at 0 (taken from the BPE model at run time).
TrainRunConfig train_config_from(const ExperimentConfig& cfg);
ModelConfig retriever_encoder_from(const ExperimentConfig& cfg, int vocab_size);
RetrieverTrainOptions retriever_options_from(const ExperimentConfig& cfg);
SyntheticOptions synthetic_options_from(const ExperimentConfig& cfg);

}  // namespace mmt
