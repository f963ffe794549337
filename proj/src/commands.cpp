#include "mmt/commands.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mmt/binary_io.hpp"
#include "mmt/bpe.hpp"
#include "mmt/checkpoint.hpp"
#include "mmt/decoding.hpp"
#include "mmt/errors.hpp"
#include "mmt/retriever.hpp"
#include "mmt/synthetic.hpp"

namespace mmt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr Split kSplits[] = {Split::kTrain, Split::kValid, Split::kTest};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError(fmt::format("missing file '{}'", path.string()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void log_config(const ExperimentConfig& cfg, const std::string& command, std::ostream& log) {
  log << "# mmtlab " << command << " resolved config\n" << cfg.resolved_ini() << "\n";
}

ParallelCorpus normalized(ParallelCorpus c, bool lowercase, bool split_punct) {
  if (!lowercase && !split_punct) return c;
  for (auto& p : c.pairs) {
    p.source = normalize_text(p.source, lowercase, split_punct);
    p.target = normalize_text(p.target, lowercase, split_punct);
  }
  return c;
}

std::set<std::string> stopwords_for(const ExperimentConfig& cfg) {
  const auto path = cfg.get("data.stopwords");
  return path.empty() ? default_stopwords() : load_stopwords(path);
}

ParallelCorpus& split_ref(ExperimentData& d, Split s) {
  return s == Split::kTrain ? d.train : s == Split::kValid ? d.valid : d.test;
}

}  // namespace

void write_binarized(const fs::path& path, const std::vector<EncodedPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out.write("MMTB", 4);
  write_u32(out, static_cast<std::uint32_t>(pairs.size()));
  for (const auto& p : pairs) {
    for (const auto* side : {&p.source, &p.target}) {
      write_u32(out, static_cast<std::uint32_t>(side->size()));
      for (int id : *side) write_u32(out, static_cast<std::uint32_t>(id));
    }
    write_u64(out, static_cast<std::uint64_t>(p.feature_row));
  }
}

std::vector<EncodedPair> read_binarized(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MMTB") throw DataError(fmt::format("'{}' is not a binarized corpus", path.string()));
  const auto n = read_u32(in);
  std::vector<EncodedPair> pairs(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto& p = pairs[i];
    p.sentence_id = i;
    for (auto* side : {&p.source, &p.target}) {
      side->resize(read_u32(in));
      for (auto& id : *side) id = static_cast<int>(read_u32(in));
    }
    p.feature_row = static_cast<std::size_t>(read_u64(in));
  }
  return pairs;
}

PrepareReport cmd_prepare(const ExperimentConfig& cfg, std::ostream& log) {
  log_config(cfg, "prepare", log);
  const fs::path dir = cfg.get("data.prepared_dir");
  const auto source = cfg.get("data.source");

  ParallelCorpus train, valid, test;
  std::optional<FeatureStore> store;
  if (source == "synthetic") {
    const auto n_train = cfg.get_int("data.n_train"), n_valid = cfg.get_int("data.n_valid"),
               n_test = cfg.get_int("data.n_test");
    if (n_train < 2 || n_valid < 1 || n_test < 1) throw ConfigError("synthetic splits need n_train >= 2 and n_valid, n_test >= 1");
    auto splits = gen_synthetic_splits(parse_synthetic_mode(cfg.get("data.synthetic_task")),
                                       static_cast<std::size_t>(n_train), static_cast<std::size_t>(n_valid),
                                       static_cast<std::size_t>(n_test),
                                       static_cast<std::uint64_t>(cfg.get_int("data.synthetic_seed")),
                                       synthetic_options_from(cfg));
    train = std::move(splits.train.corpus);
    valid = std::move(splits.valid.corpus);
    test = std::move(splits.test.corpus);
    store = std::move(splits.store);
  } else if (source == "files") {
    const fs::path corpus_dir = cfg.get("data.corpus_dir");
    if (corpus_dir.empty()) throw ConfigError("data.corpus_dir is required for data.source = files");
    const bool lower = cfg.get_bool("data.lowercase"), punct = cfg.get_bool("data.split_punctuation");
    for (auto s : kSplits) {
      const auto stem = corpus_dir / to_string(s);
      for (const auto* ext : {".src", ".tgt", ".ids"}) require_file(fs::path(stem.string() + ext));
      auto c = read_parallel_corpus(stem.string() + ".src", stem.string() + ".tgt", stem.string() + ".ids", s);
      c = normalized(std::move(c), lower, punct);
      (s == Split::kTrain ? train : s == Split::kValid ? valid : test) = std::move(c);
    }
    const auto store_path = cfg.get("data.feature_store");
    if (!store_path.empty()) {
      require_file(store_path);
      store = FeatureStore::load(store_path);
    }
  } else {
    throw ConfigError(fmt::format("data.source '{}' (expected synthetic or files)", source));
  }
  if (train.pairs.empty() || valid.pairs.empty() || test.pairs.empty()) throw DataError("every split needs at least one pair");

  PrepareReport report;
  const auto grounded = build_grounded_vocab(train.sources(), stopwords_for(cfg), cfg.get_int("data.grounded_min_count"));
  report.grounded_tokens = grounded.size();
  const bool mask = cfg.get_bool("data.mask_grounded");
  if (mask) {
    report.masked_fraction = mask_corpus_sources(train, grounded);
    mask_corpus_sources(valid, grounded);
    mask_corpus_sources(test, grounded);
  }

  const long merges = cfg.get_int("data.merges");
  if (merges < 0) throw ConfigError("data.merges must be >= 0");
  auto text = train.sources();
  const auto targets = train.targets();
  text.insert(text.end(), targets.begin(), targets.end());
  const auto bpe = learn_bpe(text, static_cast<std::size_t>(merges));
  const auto max_tokens = static_cast<std::size_t>(cfg.get_int("data.max_tokens"));

  ensure_dir(dir);
  bpe.save(dir / "bpe.codes");
  bpe.vocab().save(dir / "vocab.txt");
  const std::vector<std::string> grounded_list(grounded.begin(), grounded.end());
  write_lines(dir / "grounded.txt", grounded_list);
  if (store) store->save(dir / "features.fstr");
  for (auto s : kSplits) {
    const auto& c = s == Split::kTrain ? train : s == Split::kValid ? valid : test;
    const auto stem = (dir / to_string(s)).string();
    write_parallel_corpus(c, stem + ".src", stem + ".tgt", stem + ".ids");
    write_binarized(stem + ".bin", encode_corpus(c, bpe, store ? &*store : nullptr, max_tokens));
  }

  report.train_pairs = train.pairs.size();
  report.valid_pairs = valid.pairs.size();
  report.test_pairs = test.pairs.size();
  report.vocab_size = bpe.vocab().size();
  report.merges = bpe.merges().size();

  json meta;
  meta["train_pairs"] = report.train_pairs;
  meta["valid_pairs"] = report.valid_pairs;
  meta["test_pairs"] = report.test_pairs;
  meta["vocab_size"] = report.vocab_size;
  meta["merges"] = report.merges;
  meta["grounded_tokens"] = report.grounded_tokens;
  meta["masked"] = mask;
  if (report.masked_fraction) meta["masked_fraction"] = *report.masked_fraction;
  meta["feature_store"] = store.has_value();
  write_text(dir / "prepare.json", meta.dump(2) + "\n");
  cfg.write(dir / "resolved_config.ini");

  log << fmt::format("prepared {} / {} / {} pairs, vocab {}, {} merges, {} grounded tokens", report.train_pairs,
                     report.valid_pairs, report.test_pairs, report.vocab_size, report.merges, report.grounded_tokens);
  if (report.masked_fraction) log << fmt::format(", masked fraction {:.4f}", *report.masked_fraction);
  log << "\n";
  return report;
}

ExperimentData load_prepared(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.get("data.prepared_dir");
  require_file(dir / "prepare.json");
  require_file(dir / "bpe.codes");
  const auto meta = json::parse(read_text(dir / "prepare.json"));
  auto bpe = BpeModel::load(dir / "bpe.codes");

  std::optional<FeatureStore> store;
  if (fs::exists(dir / "features.fstr")) store = FeatureStore::load(dir / "features.fstr");

  ExperimentData tmp;
  for (auto s : kSplits) {
    const auto stem = (dir / to_string(s)).string();
    split_ref(tmp, s) = read_parallel_corpus(stem + ".src", stem + ".tgt", stem + ".ids", s);
  }
  if (cfg.get_bool("data.mask_grounded") && !meta.value("masked", false)) {
    const auto lines = read_lines(dir / "grounded.txt");
    const std::set<std::string> grounded(lines.begin(), lines.end());
    for (auto s : kSplits) mask_corpus_sources(split_ref(tmp, s), grounded);
  }
  return make_experiment_data(std::move(bpe), std::move(tmp.train), std::move(tmp.valid), std::move(tmp.test),
                              std::move(store), static_cast<std::size_t>(cfg.get_int("data.max_tokens")));
}

namespace {

fs::path retriever_path(const ExperimentConfig& cfg) {
  const auto p = cfg.get("retriever.checkpoint");
  return p.empty() ? fs::path(cfg.get("training.out_dir")) / "retriever.ckpt" : fs::path(p);
}

/// Loads the retriever checkpoint when it exists, else pretrains on the
/// training split and saves it.
Retriever<float> ready_retriever(const ExperimentConfig& cfg, const ExperimentData& data, std::ostream& log) {
  if (!data.store) throw ConfigError("retrieval needs a feature store");
  Retriever<float> r(retriever_encoder_from(cfg, data.bpe.vocab().size()), data.store->dim(),
                     static_cast<std::uint64_t>(cfg.get_int("retriever.seed")));
  const auto path = retriever_path(cfg);
  if (fs::exists(path)) {
    load_checkpoint_into(load_checkpoint(path), r.parameters());
    log << "loaded retriever " << path.string() << "\n";
    return r;
  }
  std::vector<RetrievalPair> pairs;
  for (const auto& p : data.train_encoded) pairs.push_back({p.source, p.feature_row});
  const auto report = pretrain_retriever(r, pairs, *data.store, retriever_options_from(cfg));
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    log << fmt::format("retriever epoch {} loss {:.5f}\n", e + 1, report.epoch_losses[e]);
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  save_checkpoint(make_checkpoint(r.parameters(), 0, 0.0, 0), path);
  return r;
}

std::vector<std::vector<std::size_t>> retrieval_table(const Retriever<float>& r, const std::vector<EncodedPair>& pairs,
                                                      const Matrix<float>& store, std::size_t k) {
  std::vector<std::vector<int>> sentences;
  for (const auto& p : pairs) sentences.push_back(p.source);
  const auto queries = embed_sentences(r, std::span<const std::vector<int>>(sentences));
  std::vector<std::vector<std::size_t>> table;
  for (Index i = 0; i < queries.rows(); ++i) table.push_back(retrieve_topk_rows(queries.row(i), store, k));
  return table;
}

void attach_retrievals(const ExperimentConfig& cfg, ExperimentData& data, std::ostream& log) {
  const auto r = ready_retriever(cfg, data, log);
  const long k = cfg.get_int("fusion.top_k");
  if (k < 1) throw ConfigError("fusion.top_k must be >= 1");
  const auto store = data.store->matrix();
  data.train_images = retrieval_table(r, data.train_encoded, store, static_cast<std::size_t>(k));
  data.valid_images = retrieval_table(r, data.valid_encoded, store, static_cast<std::size_t>(k));
  data.test_images = retrieval_table(r, data.test_encoded, store, static_cast<std::size_t>(k));
}

std::string checkpoint_name(int epoch) { return fmt::format("epoch_{:04d}.ckpt", epoch); }

json results_json(const RunOutcome& out) {
  json j;
  j["bleu"] = out.bleu.bleu;
  j["bleu_detail"] = out.bleu.summary();
  j["test_accuracy"] = out.test_accuracy;
  if (out.test_gate) {
    j["test_lambda_bar"] = out.test_gate->lambda_bar;
    j["test_exceed_fraction"] = out.test_gate->exceed_fraction;
  }
  j["epochs"] = out.train.history.size();
  j["best_epoch"] = out.train.best_epoch;
  j["early_stopped"] = out.train.early_stopped;
  j["config_hash"] = fmt::format("{:016x}", out.train.config_hash);
  return j;
}

}  // namespace

TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  log_config(cfg, "train", log);
  const auto run = train_config_from(cfg);
  auto data = load_prepared(cfg);
  const fs::path out_dir = cfg.get("training.out_dir");
  ensure_dir(out_dir / "checkpoints");
  cfg.write(out_dir / "resolved_config.ini");
  if (run.model_kind == ModelKind::kRmmt) attach_retrievals(cfg, data, log);

  TrainHooks hooks;
  hooks.on_epoch = [&log](const EpochStats& s) {
    log << fmt::format("epoch {} train {:.4f} val {:.4f} lambda {:.5f} lr {:.3g} updates {}\n", s.epoch, s.train_loss,
                       s.val_loss, s.lambda_bar, s.lr, s.updates);
  };
  TrainReport report;
  report.out_dir = out_dir;
  report.outcome = run_experiment(run, data, hooks);
  const auto& out = report.outcome;

  for (const auto& c : out.train.checkpoints) save_checkpoint(c, out_dir / "checkpoints" / checkpoint_name(c.epoch));
  save_checkpoint(out.averaged, out_dir / "averaged.ckpt");
  emit_history_csv(out_dir / "history.csv", out.train.history);
  if (run.model_kind != ModelKind::kTextOnly) {
    emit_dynamics_csv(out_dir / "dynamics.csv", out.train.history);
    write_gate_log(out_dir / "gate_log.jsonl", out.train.gate_log);
  }
  write_lines(out_dir / "test.hyp", out.hypotheses);
  write_text(out_dir / "results.json", results_json(out).dump(2) + "\n");
  log << "test " << out.bleu.summary() << "\n";
  if (out.test_gate) log << fmt::format("test lambda_bar {:.6g}\n", out.test_gate->lambda_bar);
  return report;
}

namespace {

Checkpoint checkpoint_from(const fs::path& path) {
  if (fs::is_directory(path)) {
    const auto all = load_checkpoint_dir(path);
    return average_checkpoints(all);
  }
  require_file(path);
  return load_checkpoint(path);
}

template <typename Scalar>
std::vector<std::string> translate_lines(const TrainRunConfig& run, const ExperimentData& data,
                                         const Checkpoint& ckpt, const std::vector<EncodedPair>& pairs,
                                         const std::vector<std::vector<std::size_t>>& table, bool greedy) {
  ModelConfig m = run.model;
  m.vocab_size = data.bpe.vocab().size();
  Translator<Scalar> model(run.model_kind, m, run_feature_dim(run, data.store_ptr()), run.seed);
  load_checkpoint_into(ckpt, model.parameters());
  FeatureProvider<Scalar> features;
  if (model.uses_images()) features = FeatureProvider<Scalar>(run.features, data.store_ptr(), model.feature_dim(), run.seed);

  std::vector<std::string> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.source.empty()) {
      out.emplace_back();
      continue;
    }
    Matrix<Scalar> images;
    if (model.uses_images()) images = features.images(Split::kTest, p.sentence_id, image_rows_for(p, i, table));
    const Matrix<Scalar>* img = model.uses_images() ? &images : nullptr;
    const int limit = static_cast<int>(run.max_decode_a * static_cast<double>(p.source.size())) + run.max_decode_b;
    const auto ids = greedy ? greedy_decode(model, p.source, img, limit) : beam_decode(model, p.source, img, run.beam, limit);
    out.push_back(data.bpe.decode(ids));
  }
  return out;
}

}  // namespace

std::vector<std::string> cmd_translate(const ExperimentConfig& cfg, const TranslateOptions& options,
                                       std::ostream& log) {
  log_config(cfg, "translate", log);
  const auto run = train_config_from(cfg);
  const fs::path dir = cfg.get("data.prepared_dir");
  require_file(dir / "bpe.codes");
  ExperimentData data;
  data.bpe = BpeModel::load(dir / "bpe.codes");
  if (fs::exists(dir / "features.fstr")) data.store = FeatureStore::load(dir / "features.fstr");

  const auto ckpt = checkpoint_from(options.checkpoint);
  const auto* embed = ckpt.find("embed.weight");
  if (embed == nullptr) throw DataError("checkpoint has no embed.weight");
  if (embed->extents.front() != static_cast<Index>(data.bpe.vocab().size())) {
    throw DataError(fmt::format("vocabulary mismatch: checkpoint has {} entries, BPE model {}", embed->extents.front(),
                                data.bpe.vocab().size()));
  }

  require_file(options.input);
  const auto lines = read_lines(options.input);
  std::vector<std::string> ids;
  if (!options.feature_ids.empty()) {
    ids = read_lines(options.feature_ids);
    if (ids.size() != lines.size()) {
      throw DataError(fmt::format("{} input lines but {} feature ids", lines.size(), ids.size()));
    }
  } else if (run.model_kind == ModelKind::kGatedFusion && run.features == FeatureSource::kStore && !lines.empty()) {
    throw ConfigError("a gated_fusion model with store features needs --feature-ids");
  }

  std::vector<EncodedPair> pairs(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    pairs[i].source = data.bpe.encode(lines[i]);
    pairs[i].sentence_id = i;
    if (!ids.empty() && data.store) pairs[i].feature_row = data.store->index_of(ids[i]);
  }
  data.test_encoded = pairs;
  if (run.model_kind == ModelKind::kRmmt && !lines.empty()) {
    const auto r = ready_retriever(cfg, data, log);
    const long k = cfg.get_int("fusion.top_k");
    if (k < 1) throw ConfigError("fusion.top_k must be >= 1");
    data.test_images = retrieval_table(r, pairs, data.store->matrix(), static_cast<std::size_t>(k));
  }

  const auto out = run.numeric == NumericMode::kFloat64
                       ? translate_lines<double>(run, data, ckpt, pairs, data.test_images, options.greedy)
                       : translate_lines<float>(run, data, ckpt, pairs, data.test_images, options.greedy);
  write_lines(options.output, out);
  log << fmt::format("translated {} lines into {}\n", out.size(), options.output.string());
  return out;
}

namespace {

std::map<int, double> read_val_losses(const fs::path& history) {
  std::map<int, double> out;
  const auto lines = read_lines(history);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream row(lines[i]);
    std::string epoch, train_loss, val_loss;
    std::getline(row, epoch, ',');
    std::getline(row, train_loss, ',');
    std::getline(row, val_loss, ',');
    int e = 0;
    double v = 0.0;
    std::from_chars(epoch.data(), epoch.data() + epoch.size(), e);
    std::from_chars(val_loss.data(), val_loss.data() + val_loss.size(), v);
    out[e] = v;
  }
  return out;
}

}  // namespace

ProbeReport cmd_probe(const fs::path& source, double tau, const fs::path& csv_out, std::ostream& log) {
  fs::path log_path = source;
  std::map<int, double> val_losses;
  if (fs::is_directory(source)) {
    log_path = source / "gate_log.jsonl";
    if (fs::exists(source / "history.csv")) val_losses = read_val_losses(source / "history.csv");
  }
  require_file(log_path);
  const auto summaries = read_gate_log(log_path);
  if (summaries.empty()) throw DataError(fmt::format("gate log '{}' is empty", log_path.string()));
  const Index d = summaries.front().dim;

  ProbeReport report;
  for (auto s : kSplits) {
    std::vector<GateSummary> subset;
    for (const auto& g : summaries) {
      if (g.split == s) subset.push_back(g);
    }
    if (subset.empty()) continue;
    report.splits.push_back({s, micro_avg_gate(subset, d, tau)});
    const auto& st = report.splits.back().stats;
    log << fmt::format("{}: lambda_bar {} p(lambda > {}) {} over {} sentences, {} tokens\n", to_string(s),
                       format_number(st.lambda_bar), format_number(tau), format_number(st.exceed_fraction),
                       st.sentences, st.tokens);
  }

  std::map<int, std::vector<GateSummary>> by_epoch;
  for (const auto& g : summaries) {
    if (g.split == Split::kValid) by_epoch[g.epoch].push_back(g);
  }
  for (const auto& [epoch, group] : by_epoch) {
    const auto st = micro_avg_gate(group, d, tau);
    EpochStats e;
    e.epoch = epoch;
    e.lambda_bar = st.lambda_bar;
    e.exceed_fraction = st.exceed_fraction;
    const auto it = val_losses.find(epoch);
    e.val_loss = it == val_losses.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    report.dynamics.push_back(e);
  }
  if (!csv_out.empty() && !report.dynamics.empty()) emit_dynamics_csv(csv_out, report.dynamics);
  return report;
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    item = first == std::string::npos ? "" : item.substr(first, item.find_last_not_of(" \t") - first + 1);
    std::size_t k = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
    if (ec != std::errc() || p != item.data() + item.size() || k == 0) {
      throw ConfigError(fmt::format("bad K value '{}' in '{}'", item, text));
    }
    ks.push_back(k);
  }
  if (ks.empty()) throw ConfigError("empty K list");
  return ks;
}

RetrieveReport cmd_retrieve(const ExperimentConfig& cfg, const fs::path& output, std::ostream& log) {
  log_config(cfg, "retrieve", log);
  const auto data = load_prepared(cfg);
  const auto r = ready_retriever(cfg, data, log);
  RetrieveReport report;
  report.ks = parse_k_list(cfg.get("retriever.recall_k"));
  const std::size_t kmax = *std::max_element(report.ks.begin(), report.ks.end());
  if (kmax > data.store->size()) throw ConfigError(fmt::format("K = {} exceeds the store size {}", kmax, data.store->size()));

  std::vector<std::vector<int>> sentences;
  std::vector<std::string> gold;
  for (std::size_t i = 0; i < data.test_encoded.size(); ++i) {
    sentences.push_back(data.test_encoded[i].source);
    gold.push_back(data.test.pairs[i].feature_id);
  }
  const auto queries = embed_sentences(r, std::span<const std::vector<int>>(sentences));
  for (auto k : report.ks) {
    report.recall.push_back(recall_at_k(queries, gold, *data.store, k));
    log << fmt::format("R@{} = {}\n", k, format_number(report.recall.back()));
  }
  if (!output.empty()) {
    const auto matrix = data.store->matrix();
    std::string text;
    for (Index i = 0; i < queries.rows(); ++i) {
      const auto rows = retrieve_topk_rows(queries.row(i), matrix, kmax);
      text += gold[static_cast<std::size_t>(i)] + "\t";
      for (std::size_t j = 0; j < rows.size(); ++j) text += (j ? " " : "") + data.store->ids()[rows[j]];
      text += "\n";
    }
    write_text(output, text);
  }
  return report;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<std::string>& values, const fs::path& output, std::ostream& log) {
  log_config(cfg, "sweep", log);
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const auto base = train_config_from(cfg);
  auto data = load_prepared(cfg);
  if (base.model_kind == ModelKind::kRmmt) attach_retrievals(cfg, data, log);

  std::vector<SweepRow> rows;
  if (axis == "weight_decay") {
    std::vector<double> rates;
    for (const auto& v : values) {
      double x = 0.0;
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size() || x < 0.0) {
        throw ConfigError(fmt::format("bad weight decay '{}'", v));
      }
      rates.push_back(x);
    }
    rows = weight_decay_sweep(base, data, rates);
  } else if (axis == "feature_source") {
    std::vector<FeatureSource> sources;
    for (const auto& v : values) sources.push_back(parse_feature_source(v));
    rows = feature_source_sweep(base, data, sources);
  } else {
    throw ConfigError(fmt::format("unknown sweep axis '{}' (weight_decay or feature_source)", axis));
  }
  for (const auto& r : rows) {
    log << fmt::format("{}={} seed {} BLEU {:.2f} val {:.4f} lambda {}\n", r.axis, r.value, r.seed, r.bleu, r.val_loss,
                       format_number(r.lambda_bar));
  }
  if (!output.empty()) {
    if (output.has_parent_path()) ensure_dir(output.parent_path());
    write_sweep_csv(output, rows);
    cfg.write(fs::path(output.string() + ".config.ini"));
  }
  return rows;
}

BleuReport cmd_bleu(const fs::path& hypotheses, const fs::path& references) {
  require_file(hypotheses);
  require_file(references);
  return bleu4(read_lines(hypotheses), read_lines(references));
}

}  // namespace mmt
