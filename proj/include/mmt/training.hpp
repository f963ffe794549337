#pragma once

// Training loop: token-budget batches, label-smoothed loss, Adam with the
// warmup / inverse-sqrt schedule, per-epoch validation, gate logging,
// checkpointing and early stopping.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmt/checkpoint.hpp"
#include "mmt/corpus.hpp"
#include "mmt/feature_store.hpp"
#include "mmt/model_config.hpp"
#include "mmt/optim.hpp"
#include "mmt/probe.hpp"
#include "mmt/translator.hpp"

namespace mmt {

enum class FeatureSource { kStore, kNoise };

std::string to_string(FeatureSource source);
FeatureSource parse_feature_source(const std::string& name);

struct TrainRunConfig {
  ModelKind model_kind = ModelKind::kGatedFusion;
  FeatureSource features = FeatureSource::kStore;
  NumericMode numeric = NumericMode::kFloat32;
  ModelConfig model;  // vocab_size is taken from the data
  LrSchedule schedule;
  AdamOptions adam;
  std::size_t token_budget = 4096;
  double label_smoothing = 0.1;
  int patience = 10;
  int avg_last = 10;
  int max_epochs = 100;
  int beam = 5;
  /// Decoding stops after max_decode_a * source length + max_decode_b tokens.
  double max_decode_a = 1.5;
  int max_decode_b = 10;
  /// Record training-batch gates every n updates (0: validation passes only).
  int gate_log_every = 0;
  /// Feature width used for noise features when no store is attached.
  Index noise_dim = 0;
  std::uint64_t seed = 1;

  void validate() const;
  /// Stable text rendering of every field (hashed into checkpoints).
  std::string describe() const;
};

std::uint64_t fnv1a64(std::string_view text);

/// Image rows for a sentence under a feature source. Noise features are a
/// pure function of (seed, split, sentence id), i.e. frozen for the run.
template <typename Scalar>
class FeatureProvider {
 public:
  FeatureProvider() = default;
  FeatureProvider(FeatureSource source, const FeatureStore* store, Index noise_dim, std::uint64_t seed);

  /// `rows` are store rows (the aligned image, or the retrieved top-K).
  Matrix<Scalar> images(Split split, std::size_t sentence_id, std::span<const std::size_t> rows) const;
  Index feature_dim() const { return dim_; }

 private:
  FeatureSource source_ = FeatureSource::kStore;
  const FeatureStore* store_ = nullptr;
  Index dim_ = 0;
  std::uint64_t seed_ = 0;
};

struct TrainingData {
  std::vector<EncodedPair> train;
  std::vector<EncodedPair> valid;
  const FeatureStore* store = nullptr;
  /// Optional per-sentence store rows (RMMT retrievals). When empty each
  /// sentence uses its own feature_row.
  std::vector<std::vector<std::size_t>> train_images;
  std::vector<std::vector<std::size_t>> valid_images;
};

/// Store rows of sentence i: table[i] if the table is non-empty, else the
/// pair's own feature row.
std::vector<std::size_t> image_rows_for(const EncodedPair& pair, std::size_t i,
                                        const std::vector<std::vector<std::size_t>>& table);

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<Checkpoint> checkpoints;  // the last avg_last epochs
  std::vector<GateSummary> gate_log;
  int best_epoch = 0;
  bool early_stopped = false;
  std::uint64_t config_hash = 0;
};

struct TrainHooks {
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const EpochStats&)> on_epoch;
};

/// Feature dimension a run needs: the store's, or noise_dim for noise runs
/// without a store, or 0 for text-only.
Index run_feature_dim(const TrainRunConfig& cfg, const FeatureStore* store);

/// Trains `model` in place. Throws DivergenceError on a non-finite loss and
/// ContractError for an empty validation split.
template <typename Scalar>
TrainResult train(Translator<Scalar>& model, const TrainRunConfig& cfg, const TrainingData& data,
                  const TrainHooks& hooks = {});

struct EvalResult {
  double loss = 0.0;  // smoothed CE per target token
  std::size_t tokens = 0;
  std::size_t correct = 0;  // teacher-forced argmax hits
  std::vector<GateRecord> gates;

  double accuracy() const { return tokens == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(tokens); }
};

/// Eval-mode pass over `pairs` with teacher forcing.
template <typename Scalar>
EvalResult evaluate(const Translator<Scalar>& model, std::span<const EncodedPair> pairs, Split split,
                    const FeatureProvider<Scalar>& features, const std::vector<std::vector<std::size_t>>& image_table,
                    double label_smoothing, int epoch = 0);

/// Beam (or greedy for beam = 1) translations of every source.
template <typename Scalar>
std::vector<std::vector<int>> translate_all(const Translator<Scalar>& model, std::span<const EncodedPair> pairs,
                                            Split split, const FeatureProvider<Scalar>& features,
                                            const std::vector<std::vector<std::size_t>>& image_table, int beam,
                                            double max_decode_a, int max_decode_b);

}  // namespace mmt
