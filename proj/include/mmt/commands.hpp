#pragma once

// The mmtlab subcommands as library calls. Each takes the resolved
// configuration and writes its artifacts next to a copy of it
// (resolved_config.ini).
//
// prepared_dir layout:
//   bpe.codes  vocab.txt  grounded.txt  features.fstr (when a store exists)
//   {train,valid,test}.{src,tgt,ids}  {train,valid,test}.bin  prepare.json
// out_dir layout after train:
//   checkpoints/epoch_NNNN.ckpt  averaged.ckpt  history.csv  dynamics.csv
//   gate_log.jsonl  test.hyp  results.json  retriever.ckpt (rmmt)

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmt/config.hpp"
#include "mmt/experiment.hpp"
#include "mmt/probe.hpp"

namespace mmt {

struct PrepareReport {
  std::size_t train_pairs = 0, valid_pairs = 0, test_pairs = 0;
  int vocab_size = 0;
  std::size_t merges = 0;
  std::size_t grounded_tokens = 0;
  std::optional<double> masked_fraction;  // train sources, when masking
};

PrepareReport cmd_prepare(const ExperimentConfig& cfg, std::ostream& log);

/// Reads prepare's output. Applies grounded masking when the config asks for
/// it and the prepared corpus is unmasked.
ExperimentData load_prepared(const ExperimentConfig& cfg);

/// Encodes one BPE id sequence file: u32 count, then per pair u32 lengths
/// and ids for source and target, then the u64 feature row.
void write_binarized(const std::filesystem::path& path, const std::vector<EncodedPair>& pairs);
std::vector<EncodedPair> read_binarized(const std::filesystem::path& path);

struct TrainReport {
  RunOutcome outcome;
  std::filesystem::path out_dir;
};

TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log);

struct TranslateOptions {
  std::filesystem::path checkpoint;  // file, or directory of *.ckpt to average
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path feature_ids;  // one store id per input line (gated models)
  bool greedy = false;
};

/// One detokenized translation per input line. Throws DataError when the
/// checkpoint's vocabulary size differs from the BPE model's.
std::vector<std::string> cmd_translate(const ExperimentConfig& cfg, const TranslateOptions& options, std::ostream& log);

struct ProbeSplitStats {
  Split split;
  GateStats stats;
};

struct ProbeReport {
  std::vector<ProbeSplitStats> splits;
  std::vector<EpochStats> dynamics;  // validation split per epoch
};

/// `source` is a gate log or a run directory containing gate_log.jsonl
/// (history.csv, when present, supplies the validation losses). Writes
/// `csv_out` unless empty. Throws DataError for an empty log.
ProbeReport cmd_probe(const std::filesystem::path& source, double tau, const std::filesystem::path& csv_out,
                      std::ostream& log);

struct RetrieveReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks
};

/// Pretrains (or loads) the retriever, retrieves the top-K store ids for
/// every test source and reports recall@K against the gold ids.
RetrieveReport cmd_retrieve(const ExperimentConfig& cfg, const std::filesystem::path& output, std::ostream& log);

/// axis is weight_decay or feature_source.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<std::string>& values, const std::filesystem::path& output,
                                std::ostream& log);

BleuReport cmd_bleu(const std::filesystem::path& hypotheses, const std::filesystem::path& references);

std::vector<std::size_t> parse_k_list(const std::string& text);

}  // namespace mmt
