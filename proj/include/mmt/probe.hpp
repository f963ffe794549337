#pragma once

// Gate statistics, weight norms and corpus BLEU.
//
// Gate log: one JSON object per line with keys
//   sentence_id, epoch, split, T, d, sum, count_gt_tau, tau
// and optionally "lambda" (T rows of d numbers).

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmt/checkpoint.hpp"
#include "mmt/corpus.hpp"
#include "mmt/fusion.hpp"

namespace mmt {

inline constexpr double kDefaultGateThreshold = 1e-10;

struct GateSummary {
  std::size_t sentence_id = 0;
  int epoch = 0;
  Split split = Split::kValid;
  Index length = 0;  // T
  Index dim = 0;     // d
  double sum = 0.0;
  std::size_t count_gt_tau = 0;
  double tau = kDefaultGateThreshold;
  std::optional<Matrix<double>> lambda;
};

GateSummary summarize_gate(const GateRecord& record, Split split, double tau = kDefaultGateThreshold,
                           bool keep_full = false);

struct GateStats {
  double lambda_bar = 0.0;
  double exceed_fraction = 0.0;
  std::size_t sentences = 0;  // M
  std::size_t tokens = 0;     // V = sum of T
  Index dim = 0;              // d
  double tau = kDefaultGateThreshold;
  // Raw totals, kept so partial statistics combine exactly.
  double sum = 0.0;
  std::size_t count_gt_tau = 0;
};

/// Lambda-bar = sum of all entries / (d * V), exceed_fraction = entries
/// > tau / (d * V). Throws DataError for an empty list (or V = 0) and
/// ShapeError when a record's width differs from `d`.
GateStats micro_avg_gate(std::span<const GateRecord> records, Index d, double tau = kDefaultGateThreshold);
/// Same from summaries; a summary's own tau must equal `tau` unless it
/// carries the full matrix.
GateStats micro_avg_gate(std::span<const GateSummary> summaries, Index d, double tau = kDefaultGateThreshold);
/// Statistics of the union of the two record sets.
GateStats combine(const GateStats& a, const GateStats& b);

double exceed_fraction(std::span<const GateRecord> records, double tau);

void write_gate_log(const std::filesystem::path& path, std::span<const GateSummary> summaries, bool append = false);
std::vector<GateSummary> read_gate_log(const std::filesystem::path& path);

/// sqrt of the sum of squares over entries whose name contains `filter`
/// (empty filter selects everything). Throws ContractError when nothing is
/// selected.
double weight_l2_norm(const Checkpoint& ckpt, const std::string& filter = "");

struct BleuReport {
  double bleu = 0.0;                     // 0..100
  std::array<double, 4> precisions{};    // p1..p4 in [0, 1]
  std::array<std::size_t, 4> matches{};  // clipped n-gram matches
  std::array<std::size_t, 4> totals{};   // hypothesis n-grams
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  std::string summary() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Corpus BLEU-4 over whitespace tokens, no smoothing. Throws ShapeError for
/// unequal counts and ContractError for an empty corpus.
BleuReport bleu4(std::span<const std::string> hypotheses, std::span<const std::string> references);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lambda_bar = 0.0;  // NaN for text-only models
  double exceed_fraction = 0.0;
  double lr = 0.0;
  long updates = 0;
};

/// epoch,lambda_bar,exceed_fraction,val_loss. Throws ContractError for an
/// empty history.
void emit_dynamics_csv(const std::filesystem::path& path, std::span<const EpochStats> history);
/// epoch,train_loss,val_loss,lambda_bar,exceed_fraction,lr,updates.
void emit_history_csv(const std::filesystem::path& path, std::span<const EpochStats> history);
std::string format_dynamics_csv(std::span<const EpochStats> history);
std::string format_history_csv(std::span<const EpochStats> history);

/// Shortest round-trip decimal representation.
std::string format_number(double v);

}  // namespace mmt
