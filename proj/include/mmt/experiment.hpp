#pragma once

// End-to-end runs: train, average the last checkpoints, translate the test
// split and score it; plus the weight-decay and feature-source sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmt/bpe.hpp"
#include "mmt/corpus.hpp"
#include "mmt/feature_store.hpp"
#include "mmt/probe.hpp"
#include "mmt/training.hpp"

namespace mmt {

struct ExperimentData {
  BpeModel bpe;
  ParallelCorpus train, valid, test;
  std::optional<FeatureStore> store;
  std::vector<EncodedPair> train_encoded, valid_encoded, test_encoded;
  /// Retrieved store rows per sentence (RMMT); empty means aligned features.
  std::vector<std::vector<std::size_t>> train_images, valid_images, test_images;

  const FeatureStore* store_ptr() const { return store ? &*store : nullptr; }
};

/// Encodes the three splits with `bpe` (checking feature ids against the
/// store when one is given).
ExperimentData make_experiment_data(BpeModel bpe, ParallelCorpus train, ParallelCorpus valid, ParallelCorpus test,
                                    std::optional<FeatureStore> store, std::size_t max_tokens);
/// Same, learning `n_merges` BPE merges on source+target of the training split.
ExperimentData make_experiment_data(std::size_t n_merges, ParallelCorpus train, ParallelCorpus valid,
                                    ParallelCorpus test, std::optional<FeatureStore> store, std::size_t max_tokens);

struct RunOutcome {
  TrainResult train;
  Checkpoint averaged;
  BleuReport bleu;
  std::optional<GateStats> test_gate;
  double test_accuracy = 0.0;  // teacher-forced token accuracy
  std::vector<std::string> hypotheses;
};

RunOutcome run_experiment(const TrainRunConfig& cfg, const ExperimentData& data, const TrainHooks& hooks = {});

/// Loads `ckpt` into a fresh model of the configured kind and evaluates the
/// test split.
RunOutcome evaluate_checkpoint(const TrainRunConfig& cfg, const ExperimentData& data, const Checkpoint& ckpt);

struct SweepRow {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double bleu = 0.0;
  double val_loss = 0.0;  // best validation loss
  double lambda_bar = 0.0;
  int epochs = 0;
};

std::vector<SweepRow> weight_decay_sweep(const TrainRunConfig& base, const ExperimentData& data,
                                         std::span<const double> rates);
std::vector<SweepRow> feature_source_sweep(const TrainRunConfig& base, const ExperimentData& data,
                                           std::span<const FeatureSource> sources);

/// axis,value,seed,bleu,val_loss,lambda_bar,epochs
std::string format_sweep_csv(std::span<const SweepRow> rows);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace mmt
