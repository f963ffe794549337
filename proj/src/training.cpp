#include "mmt/training.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "mmt/decoding.hpp"
#include "mmt/errors.hpp"
#include "mmt/random.hpp"

namespace mmt {

namespace {
constexpr std::uint64_t kNoiseStream = 0x4015E;
constexpr std::uint64_t kDropoutStream = 0xD50;
constexpr std::uint64_t kBatchStream = 0xBA7C;
}  // namespace

std::string to_string(FeatureSource source) { return source == FeatureSource::kStore ? "store" : "noise"; }

FeatureSource parse_feature_source(const std::string& name) {
  if (name == "store") return FeatureSource::kStore;
  if (name == "noise") return FeatureSource::kNoise;
  throw ConfigError(fmt::format("unknown feature source '{}' (expected store or noise)", name));
}

void TrainRunConfig::validate() const {
  if (token_budget == 0) throw ConfigError("token_budget must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (avg_last < 1) throw ConfigError("avg_last must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (beam < 1) throw ConfigError("beam must be >= 1");
  if (schedule.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (schedule.lr_peak <= 0.0 || schedule.lr_init < 0.0) throw ConfigError("learning rates must be positive");
  if (adam.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (gate_log_every < 0) throw ConfigError("gate_log_every must be >= 0");
  if (max_decode_a < 0.0 || max_decode_b < 1) throw ConfigError("bad decoding length limits");
}

std::string TrainRunConfig::describe() const {
  return fmt::format(
      "model_kind={};features={};numeric={};n_layers={};d_model={};d_ffn={};n_heads={};dropout={};vocab_size={};"
      "max_len={};positional_encoding={};warmup_steps={};lr_init={};lr_peak={};beta1={};beta2={};eps={};"
      "weight_decay={};decoupled={};token_budget={};label_smoothing={};patience={};avg_last={};max_epochs={};"
      "beam={};max_decode_a={};max_decode_b={};gate_log_every={};noise_dim={};seed={}",
      to_string(model_kind), to_string(features), to_string(numeric), model.n_layers, model.d_model, model.d_ffn,
      model.n_heads, format_number(model.dropout), model.vocab_size, model.max_len, model.positional_encoding,
      schedule.warmup_steps, format_number(schedule.lr_init), format_number(schedule.lr_peak),
      format_number(adam.beta1), format_number(adam.beta2), format_number(adam.eps),
      format_number(adam.weight_decay), adam.decoupled, token_budget, format_number(label_smoothing), patience,
      avg_last, max_epochs, beam, format_number(max_decode_a), max_decode_b, gate_log_every, noise_dim, seed);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
FeatureProvider<Scalar>::FeatureProvider(FeatureSource source, const FeatureStore* store, Index noise_dim,
                                         std::uint64_t seed)
    : source_(source), store_(store), seed_(seed) {
  if (source == FeatureSource::kStore && store == nullptr) {
    throw ConfigError("feature source 'store' needs a feature store");
  }
  dim_ = store != nullptr ? store->dim() : noise_dim;
  if (dim_ <= 0) throw ConfigError("noise features need a positive feature dimension");
}

template <typename Scalar>
Matrix<Scalar> FeatureProvider<Scalar>::images(Split split, std::size_t sentence_id,
                                               std::span<const std::size_t> rows) const {
  if (source_ == FeatureSource::kStore) return store_->rows<Scalar>(rows);
  Engine rng(derive_seed(derive_seed(seed_, kNoiseStream + static_cast<std::uint64_t>(split)), sentence_id));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix<Scalar> out(static_cast<Index>(std::max<std::size_t>(rows.size(), 1)), dim_);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(gauss(rng));
  return out;
}

std::vector<std::size_t> image_rows_for(const EncodedPair& pair, std::size_t i,
                                        const std::vector<std::vector<std::size_t>>& table) {
  if (!table.empty()) {
    if (i >= table.size()) throw DataError(fmt::format("no retrieved images for sentence {}", i));
    return table[i];
  }
  return {pair.feature_row};
}

Index run_feature_dim(const TrainRunConfig& cfg, const FeatureStore* store) {
  if (cfg.model_kind == ModelKind::kTextOnly) return store != nullptr ? store->dim() : std::max<Index>(cfg.noise_dim, 0);
  if (store != nullptr) return store->dim();
  return cfg.noise_dim;
}

namespace {

std::vector<int> with_bos(const std::vector<int>& target) {
  std::vector<int> v;
  v.reserve(target.size() + 1);
  v.push_back(kBosId);
  v.insert(v.end(), target.begin(), target.end());
  return v;
}

std::vector<int> with_eos(const std::vector<int>& target) {
  std::vector<int> v(target);
  v.push_back(kEosId);
  return v;
}

}  // namespace

template <typename Scalar>
EvalResult evaluate(const Translator<Scalar>& model, std::span<const EncodedPair> pairs, Split split,
                    const FeatureProvider<Scalar>& features, const std::vector<std::vector<std::size_t>>& image_table,
                    double label_smoothing, int epoch) {
  NoGradGuard no_grad;
  const ForwardContext ctx;
  EvalResult r;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    Matrix<Scalar> images;
    if (model.uses_images()) {
      const auto rows = image_rows_for(p, i, image_table);
      images = features.images(split, p.sentence_id, rows);
    }
    const auto memory = model.encode(p.source, model.uses_images() ? &images : nullptr, ctx);
    const auto input = with_bos(p.target);
    const auto gold = with_eos(p.target);
    const auto logits = model.decode_logits(memory, input, ctx);
    const auto loss = smoothed_cross_entropy(logits, gold, label_smoothing, kPadId, 1.0);
    loss_sum += static_cast<double>(loss.item());
    r.tokens += gold.size();
    for (Index t = 0; t < logits.rows(); ++t) {
      Index best = 0;
      logits.value().row(t).maxCoeff(&best);
      if (best == gold[static_cast<std::size_t>(t)]) ++r.correct;
    }
    if (model.uses_images()) r.gates.push_back(make_gate_record(p.sentence_id, epoch, memory.gate));
  }
  r.loss = r.tokens == 0 ? 0.0 : loss_sum / static_cast<double>(r.tokens);
  return r;
}

template <typename Scalar>
std::vector<std::vector<int>> translate_all(const Translator<Scalar>& model, std::span<const EncodedPair> pairs,
                                            Split split, const FeatureProvider<Scalar>& features,
                                            const std::vector<std::vector<std::size_t>>& image_table, int beam,
                                            double max_decode_a, int max_decode_b) {
  std::vector<std::vector<int>> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    Matrix<Scalar> images;
    if (model.uses_images()) images = features.images(split, p.sentence_id, image_rows_for(p, i, image_table));
    const int limit =
        static_cast<int>(max_decode_a * static_cast<double>(p.source.size())) + max_decode_b;
    const Matrix<Scalar>* img = model.uses_images() ? &images : nullptr;
    out.push_back(beam == 1 ? greedy_decode(model, p.source, img, limit) : beam_decode(model, p.source, img, beam, limit));
  }
  return out;
}

template <typename Scalar>
TrainResult train(Translator<Scalar>& model, const TrainRunConfig& cfg, const TrainingData& data,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (data.valid.empty()) throw ContractError("training needs a non-empty validation split");
  if (data.train.empty()) throw ContractError("training needs a non-empty training split");

  TrainResult result;
  result.config_hash = fnv1a64(cfg.describe());

  FeatureProvider<Scalar> features;
  if (model.uses_images()) {
    features = FeatureProvider<Scalar>(cfg.features, data.store, model.feature_dim(), cfg.seed);
    if (features.feature_dim() != model.feature_dim()) {
      throw ShapeError(fmt::format("feature dimension {} does not match the model's {}", features.feature_dim(),
                                   model.feature_dim()));
    }
  }

  auto& params = model.parameters();
  Adam<Scalar> adam(params, cfg.adam);
  EarlyStopper stopper(cfg.patience);
  std::deque<Checkpoint> recent;
  long updates = 0;
  const std::uint64_t dropout_seed = derive_seed(cfg.seed, kDropoutStream);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches =
        batch_by_tokens(data.train, cfg.token_budget, derive_seed(cfg.seed, kBatchStream + static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    double lr = 0.0;

    for (const auto& batch : batches) {
      std::size_t batch_tokens = 0;
      for (auto idx : batch.indices) batch_tokens += data.train[idx].target.size() + 1;
      params.zero_grad();
      lr = lr_at_step(updates, cfg.schedule);
      const bool log_gates = cfg.gate_log_every > 0 && model.uses_images() && updates % cfg.gate_log_every == 0;

      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        const auto idx = batch.indices[k];
        const auto& p = data.train[idx];
        CounterStream dropout_rng(derive_seed(dropout_seed, static_cast<std::uint64_t>(updates)),
                                  static_cast<std::uint64_t>(k) << 40);
        ForwardContext ctx;
        ctx.training = true;
        ctx.rng = &dropout_rng;
        Matrix<Scalar> images;
        if (model.uses_images()) {
          images = features.images(Split::kTrain, p.sentence_id, image_rows_for(p, idx, data.train_images));
        }
        const auto memory = model.encode(p.source, model.uses_images() ? &images : nullptr, ctx);
        const auto logits = model.decode_logits(memory, with_bos(p.target), ctx);
        const auto gold = with_eos(p.target);
        const auto loss =
            smoothed_cross_entropy(logits, gold, cfg.label_smoothing, kPadId, static_cast<double>(batch_tokens));
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
          throw DivergenceError(fmt::format(
              "non-finite training loss at epoch {}, update {} (lr {:.3g}), sentence {}: loss = {}", epoch, updates,
              lr, p.sentence_id, value));
        }
        backward(loss);
        epoch_loss += value * static_cast<double>(batch_tokens);
        if (log_gates) {
          result.gate_log.push_back(
              summarize_gate(make_gate_record(p.sentence_id, epoch, memory.gate), Split::kTrain));
        }
      }
      epoch_tokens += batch_tokens;
      adam.step(lr);
      ++updates;
    }

    const auto eval = evaluate(model, data.valid, Split::kValid, features, data.valid_images, cfg.label_smoothing, epoch);
    if (!std::isfinite(eval.loss)) {
      throw DivergenceError(fmt::format("non-finite validation loss at epoch {} (update {}, lr {:.3g})", epoch,
                                        updates, lr));
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    stats.val_loss = eval.loss;
    stats.lr = lr;
    stats.updates = updates;
    stats.lambda_bar = std::numeric_limits<double>::quiet_NaN();
    stats.exceed_fraction = std::numeric_limits<double>::quiet_NaN();
    if (model.uses_images()) {
      const auto gs = micro_avg_gate(eval.gates, model.config().d_model);
      stats.lambda_bar = gs.lambda_bar;
      stats.exceed_fraction = gs.exceed_fraction;
      for (const auto& g : eval.gates) result.gate_log.push_back(summarize_gate(g, Split::kValid));
    }
    result.history.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);

    recent.push_back(make_checkpoint(params, epoch, eval.loss, result.config_hash));
    if (hooks.on_checkpoint) hooks.on_checkpoint(recent.back());
    while (static_cast<int>(recent.size()) > cfg.avg_last) recent.pop_front();

    if (stopper.update(eval.loss)) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.checkpoints.assign(recent.begin(), recent.end());
  return result;
}

#define MMT_INSTANTIATE_TRAINING(S)                                                                          \
  template class FeatureProvider<S>;                                                                         \
  template EvalResult evaluate<S>(const Translator<S>&, std::span<const EncodedPair>, Split,                 \
                                  const FeatureProvider<S>&, const std::vector<std::vector<std::size_t>>&,   \
                                  double, int);                                                              \
  template std::vector<std::vector<int>> translate_all<S>(                                                   \
      const Translator<S>&, std::span<const EncodedPair>, Split, const FeatureProvider<S>&,                  \
      const std::vector<std::vector<std::size_t>>&, int, double, int);                                       \
  template TrainResult train<S>(Translator<S>&, const TrainRunConfig&, const TrainingData&, const TrainHooks&);

MMT_INSTANTIATE_TRAINING(float)
MMT_INSTANTIATE_TRAINING(double)

}  // namespace mmt
