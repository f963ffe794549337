#include "mmt/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

ExperimentData make_experiment_data(BpeModel bpe, ParallelCorpus train, ParallelCorpus valid, ParallelCorpus test,
                                    std::optional<FeatureStore> store, std::size_t max_tokens) {
  ExperimentData d;
  d.bpe = std::move(bpe);
  d.train = std::move(train);
  d.valid = std::move(valid);
  d.test = std::move(test);
  d.store = std::move(store);
  if (d.store) {
    for (const auto* c : {&d.train, &d.valid, &d.test}) check_feature_ids(*c, *d.store);
  }
  d.train_encoded = encode_corpus(d.train, d.bpe, d.store_ptr(), max_tokens);
  d.valid_encoded = encode_corpus(d.valid, d.bpe, d.store_ptr(), max_tokens);
  d.test_encoded = encode_corpus(d.test, d.bpe, d.store_ptr(), max_tokens);
  return d;
}

ExperimentData make_experiment_data(std::size_t n_merges, ParallelCorpus train, ParallelCorpus valid,
                                    ParallelCorpus test, std::optional<FeatureStore> store, std::size_t max_tokens) {
  auto text = train.sources();
  const auto targets = train.targets();
  text.insert(text.end(), targets.begin(), targets.end());
  auto bpe = learn_bpe(text, n_merges);
  return make_experiment_data(std::move(bpe), std::move(train), std::move(valid), std::move(test), std::move(store),
                              max_tokens);
}

namespace {

ModelConfig resolved_model(const TrainRunConfig& cfg, const ExperimentData& data) {
  ModelConfig m = cfg.model;
  m.vocab_size = data.bpe.vocab().size();
  return m;
}

template <typename Scalar>
RunOutcome finish_run(const TrainRunConfig& cfg, const ExperimentData& data, Translator<Scalar>& model,
                      const Checkpoint& averaged) {
  load_checkpoint_into(averaged, model.parameters());
  RunOutcome out;
  out.averaged = averaged;
  FeatureProvider<Scalar> features;
  if (model.uses_images()) features = FeatureProvider<Scalar>(cfg.features, data.store_ptr(), model.feature_dim(), cfg.seed);

  const auto eval = evaluate(model, data.test_encoded, Split::kTest, features, data.test_images, cfg.label_smoothing,
                             averaged.epoch);
  out.test_accuracy = eval.accuracy();
  if (model.uses_images()) out.test_gate = micro_avg_gate(eval.gates, model.config().d_model);

  const auto ids = translate_all(model, data.test_encoded, Split::kTest, features, data.test_images, cfg.beam,
                                 cfg.max_decode_a, cfg.max_decode_b);
  for (const auto& seq : ids) out.hypotheses.push_back(data.bpe.decode(seq));
  const auto refs = data.test.targets();
  out.bleu = bleu4(out.hypotheses, refs);
  return out;
}

template <typename Scalar>
RunOutcome run_typed(const TrainRunConfig& cfg, const ExperimentData& data, const TrainHooks& hooks) {
  TrainRunConfig resolved = cfg;
  resolved.model = resolved_model(cfg, data);
  const Index feature_dim = run_feature_dim(resolved, data.store_ptr());
  Translator<Scalar> model(resolved.model_kind, resolved.model, feature_dim, resolved.seed);

  TrainingData td;
  td.train = data.train_encoded;
  td.valid = data.valid_encoded;
  td.store = data.store_ptr();
  td.train_images = data.train_images;
  td.valid_images = data.valid_images;
  auto result = train(model, resolved, td, hooks);
  const auto averaged = average_checkpoints(result.checkpoints);
  auto out = finish_run(resolved, data, model, averaged);
  out.train = std::move(result);
  return out;
}

template <typename Scalar>
RunOutcome evaluate_typed(const TrainRunConfig& cfg, const ExperimentData& data, const Checkpoint& ckpt) {
  TrainRunConfig resolved = cfg;
  resolved.model = resolved_model(cfg, data);
  Translator<Scalar> model(resolved.model_kind, resolved.model, run_feature_dim(resolved, data.store_ptr()),
                           resolved.seed);
  return finish_run(resolved, data, model, ckpt);
}

}  // namespace

RunOutcome run_experiment(const TrainRunConfig& cfg, const ExperimentData& data, const TrainHooks& hooks) {
  return cfg.numeric == NumericMode::kFloat64 ? run_typed<double>(cfg, data, hooks) : run_typed<float>(cfg, data, hooks);
}

RunOutcome evaluate_checkpoint(const TrainRunConfig& cfg, const ExperimentData& data, const Checkpoint& ckpt) {
  return cfg.numeric == NumericMode::kFloat64 ? evaluate_typed<double>(cfg, data, ckpt)
                                              : evaluate_typed<float>(cfg, data, ckpt);
}

namespace {

SweepRow make_row(const std::string& axis, const std::string& value, const TrainRunConfig& cfg,
                  const RunOutcome& run) {
  SweepRow row;
  row.axis = axis;
  row.value = value;
  row.seed = cfg.seed;
  row.bleu = run.bleu.bleu;
  row.val_loss = std::numeric_limits<double>::infinity();
  for (const auto& h : run.train.history) row.val_loss = std::min(row.val_loss, h.val_loss);
  row.lambda_bar = run.test_gate ? run.test_gate->lambda_bar : std::numeric_limits<double>::quiet_NaN();
  row.epochs = static_cast<int>(run.train.history.size());
  return row;
}

}  // namespace

std::vector<SweepRow> weight_decay_sweep(const TrainRunConfig& base, const ExperimentData& data,
                                         std::span<const double> rates) {
  if (rates.empty()) throw ConfigError("weight-decay sweep needs at least one rate");
  std::vector<SweepRow> rows;
  for (double rate : rates) {
    TrainRunConfig cfg = base;
    cfg.adam.weight_decay = rate;
    rows.push_back(make_row("weight_decay", format_number(rate), cfg, run_experiment(cfg, data)));
  }
  return rows;
}

std::vector<SweepRow> feature_source_sweep(const TrainRunConfig& base, const ExperimentData& data,
                                           std::span<const FeatureSource> sources) {
  if (sources.empty()) throw ConfigError("feature-source sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (auto source : sources) {
    TrainRunConfig cfg = base;
    cfg.features = source;
    rows.push_back(make_row("feature_source", to_string(source), cfg, run_experiment(cfg, data)));
  }
  return rows;
}

std::string format_sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "axis,value,seed,bleu,val_loss,lambda_bar,epochs\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.axis, r.value, r.seed, format_number(r.bleu),
                       format_number(r.val_loss), format_number(r.lambda_bar), r.epochs);
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << format_sweep_csv(rows);
}

}  // namespace mmt
