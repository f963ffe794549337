// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 1 2 7      run a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mmt/commands.hpp"
#include "mmt/decoding.hpp"
#include "mmt/errors.hpp"
#include "mmt/experiment.hpp"
#include "mmt/optim.hpp"
#include "mmt/probe.hpp"
#include "mmt/retriever.hpp"
#include "mmt/synthetic.hpp"
#include "mmt/translator.hpp"
#include "../oracles.hpp"
#include "../support.hpp"

using namespace mmt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::fprintf(stderr, "  .. %s\n", msg.c_str()); }

ModelConfig micro_config(int vocab) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.d_ffn = 16;
  c.n_heads = 2;
  c.dropout = 0.0;
  c.vocab_size = vocab;
  c.max_len = 32;
  return c;
}

// ---------------------------------------------------------------------------
// Desk-scale training setups shared by criteria 3-6.

struct DeskSetup {
  std::size_t n_train;
  int epochs;
  long warmup;
  std::size_t budget;
};

// Criteria 3 and 6: 5,000 pairs, trained to a plateau.
constexpr DeskSetup kLong{5000, 60, 300, 1024};
// Criteria 4 and 5: many runs, so a smaller corpus.
constexpr DeskSetup kShort{2000, 35, 150, 512};

TrainRunConfig desk_config(const DeskSetup& s, ModelKind kind, FeatureSource features, std::uint64_t seed) {
  TrainRunConfig cfg;
  cfg.model_kind = kind;
  cfg.features = features;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 32;
  cfg.model.d_ffn = 64;
  cfg.model.n_heads = 4;
  cfg.model.dropout = 0.1;
  cfg.schedule.warmup_steps = s.warmup;
  cfg.token_budget = s.budget;
  cfg.max_epochs = s.epochs;
  cfg.patience = s.epochs;  // run to the epoch cap; the plateau is the point
  cfg.avg_last = 3;
  cfg.beam = 5;
  cfg.seed = seed;
  return cfg;
}

const ExperimentData& desk_data(SyntheticMode mode, std::size_t n_train) {
  static std::map<std::pair<int, std::size_t>, ExperimentData> cache;
  const auto key = std::make_pair(static_cast<int>(mode), n_train);
  auto it = cache.find(key);
  if (it == cache.end()) {
    auto s = gen_synthetic_splits(mode, n_train, 200, 200, 1);
    it = cache.emplace(key, make_experiment_data(200, s.train.corpus, s.valid.corpus, s.test.corpus, s.store, 64))
             .first;
  }
  return it->second;
}

struct RunSummary {
  double bleu = 0.0;
  double first_lambda = 0.0;
  double final_lambda = 0.0;
  double seconds = 0.0;
};

RunSummary run_desk(const std::string& label, const TrainRunConfig& cfg, const ExperimentData& data) {
  const auto t0 = Clock::now();
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& e) {
    if (e.epoch == 1 || e.epoch % 10 == 0) {
      progress(fmt::format("{} epoch {} val_loss {:.4f} lambda_bar {:.4g} ({:.0f}s)", label, e.epoch, e.val_loss,
                           e.lambda_bar, seconds_since(t0)));
    }
  };
  const auto out = run_experiment(cfg, data, hooks);
  RunSummary r;
  r.bleu = out.bleu.bleu;
  r.first_lambda = out.train.history.front().lambda_bar;
  r.final_lambda = out.train.history.back().lambda_bar;
  r.seconds = seconds_since(t0);
  progress(fmt::format("{} done: BLEU {:.2f}, lambda_bar {:.4g} -> {:.4g}, {:.0f}s", label, r.bleu, r.first_lambda,
                       r.final_lambda, r.seconds));
  return r;
}

const RunSummary& criterion3_run() {
  static std::optional<RunSummary> cached;
  if (!cached) {
    cached = run_desk("text_sufficient gated/store",
                      desk_config(kLong, ModelKind::kGatedFusion, FeatureSource::kStore, 1),
                      desk_data(SyntheticMode::kTextSufficient, kLong.n_train));
  }
  return *cached;
}

const RunSummary& short_run(ModelKind kind, FeatureSource features, std::uint64_t seed, double weight_decay) {
  static std::map<std::tuple<int, int, std::uint64_t, double>, RunSummary> cache;
  const auto key = std::make_tuple(static_cast<int>(kind), static_cast<int>(features), seed, weight_decay);
  auto it = cache.find(key);
  if (it == cache.end()) {
    auto cfg = desk_config(kShort, kind, features, seed);
    cfg.adam.weight_decay = weight_decay;
    const auto label = fmt::format("{}/{} seed {} wd {}", to_string(kind), to_string(features), seed, weight_decay);
    it = cache.emplace(key, run_desk(label, cfg, desk_data(SyntheticMode::kTextSufficient, kShort.n_train))).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  Translator<double> model(ModelKind::kGatedFusion, micro_config(12), 5, 11);
  auto rng = test::rng_for(8);
  const Matrix<double> img = test::random_matrix(rng, 1, 5);
  const std::vector<int> src{5, 6, 7};
  const std::vector<int> in{kBosId, 8, 9};
  const std::vector<int> gold{8, 9, kEosId};
  // Entries whose true gradient is exactly zero (attention key biases) leave
  // only rounding noise of order 1e-11 in the difference quotient; the 1e-6
  // floor keeps those from reading as relative errors.
  const auto res = test::check_gradients(
      model.parameters(),
      [&] { return smoothed_cross_entropy(model.forward(src, &img, in, {}), gold, 0.1, kPadId); }, 1e-5, 1e-6);
  const double secs = seconds_since(t0);
  return {res.max_rel_error < 1e-4 && secs < 60.0 && res.checked == model.parameters().count(),
          fmt::format("{} entries, max rel error {:.3g} at {}, {:.1f}s", res.checked, res.max_rel_error, res.worst,
                      secs)};
}

Outcome criterion2() {
  auto rng = test::rng_for(7);
  int identical = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    auto cfg = micro_config(16);
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    Translator<double> gated(ModelKind::kGatedFusion, cfg, 6, 300 + static_cast<std::uint64_t>(trial));
    Translator<double> text(ModelKind::kTextOnly, cfg, 0, 999);
    text.parameters().copy_matching(gated.parameters());
    const auto src = test::random_ids(rng, 5, 5, 15);
    auto prefix = test::random_ids(rng, 4, 5, 15);
    prefix[0] = kBosId;
    const Matrix<double> img = test::random_matrix(rng, 1, 6);
    ForwardContext zero;
    zero.gate_override = 0.0;
    NoGradGuard ng;
    const Matrix<double> a = gated.forward(src, &img, prefix, zero).value();
    const Matrix<double> b = text.forward(src, nullptr, prefix, {}).value();
    if (a == b) ++identical;
  }
  return {identical == trials, fmt::format("{}/{} models bit-identical", identical, trials)};
}

Outcome criterion3() {
  const auto& r = criterion3_run();
  const bool pass = r.final_lambda < 0.05 && r.final_lambda < r.first_lambda && r.seconds < 900.0;
  return {pass, fmt::format("lambda_bar first epoch {:.4g}, final {:.4g} (< 0.05), BLEU {:.2f}, {:.0f}s",
                            r.first_lambda, r.final_lambda, r.bleu, r.seconds)};
}

Outcome criterion4() {
  double store = 0.0, noise = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& s = short_run(ModelKind::kGatedFusion, FeatureSource::kStore, seed, 0.0);
    const auto& n = short_run(ModelKind::kGatedFusion, FeatureSource::kNoise, seed, 0.0);
    store += s.bleu / 3.0;
    noise += n.bleu / 3.0;
    per_seed += fmt::format(" {:.2f}/{:.2f}", s.bleu, n.bleu);
  }
  const double gap = std::abs(store - noise);
  return {gap <= 2.0, fmt::format("mean BLEU store {:.2f} vs noise {:.2f}, |gap| {:.2f} (<= 2.0); per seed{}", store,
                                  noise, gap, per_seed)};
}

Outcome criterion5() {
  const double gated = short_run(ModelKind::kGatedFusion, FeatureSource::kStore, 1, 0.0).bleu;
  double best = -1.0, best_wd = 0.0;
  std::string grid;
  for (double wd : {0.0, 1e-4, 1e-3, 1e-2, 1e-1}) {
    const double b = short_run(ModelKind::kTextOnly, FeatureSource::kStore, 1, wd).bleu;
    grid += fmt::format(" {}:{:.2f}", wd, b);
    if (b > best) {
      best = b;
      best_wd = wd;
    }
  }
  return {best >= gated - 1.0,
          fmt::format("best text-only {:.2f} (decay {}) vs gated {:.2f}; grid{}", best, best_wd, gated, grid)};
}

Outcome criterion6() {
  const auto& data = desk_data(SyntheticMode::kTextInsufficient, kLong.n_train);
  const auto store = run_desk("text_insufficient gated/store",
                              desk_config(kLong, ModelKind::kGatedFusion, FeatureSource::kStore, 1), data);
  const auto noise = run_desk("text_insufficient gated/noise",
                              desk_config(kLong, ModelKind::kGatedFusion, FeatureSource::kNoise, 1), data);
  const double reference = criterion3_run().final_lambda;
  const double gain = noise.bleu > 0.0 ? (store.bleu - noise.bleu) / noise.bleu : 0.0;
  const double ratio = store.final_lambda / reference;
  return {gain >= 0.20 && ratio >= 5.0,
          fmt::format("BLEU store {:.2f} vs noise {:.2f}, relative gain {:.1f}% (>= 20%); lambda_bar {:.4g} vs "
                      "text-sufficient {:.4g}, ratio {:.2f}x (>= 5x)",
                      store.bleu, noise.bleu, 100.0 * gain, store.final_lambda, reference, ratio)};
}

Outcome criterion7() {
  auto rng = test::rng_for(44);
  const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  double worst = 0.0;
  bool identical_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> hyps, refs;
    const auto n = test::uniform_int(rng, 1, 8);
    for (long i = 0; i < n; ++i) {
      refs.push_back(test::random_sentence(rng, words, 4, 9));
      hyps.push_back(test::uniform_int(rng, 0, 2) == 0 ? refs.back() : test::random_sentence(rng, words, 0, 9));
    }
    worst = std::max(worst, std::abs(bleu4(hyps, refs).bleu - test::oracle_bleu(hyps, refs)));
    if (bleu4(refs, refs).bleu != 100.0) identical_ok = false;
  }
  return {worst < 1e-6 && identical_ok,
          fmt::format("max |BLEU - oracle| {:.3g} over 100 corpora; identical corpora score 100: {}", worst,
                      identical_ok ? "yes" : "no")};
}

Outcome criterion8() {
  auto rng = test::rng_for(21);
  int topk_ok = 0, recall_ok = 0, monotone_ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = test::uniform_int(rng, 1, 1000);
    const Index d = test::uniform_int(rng, 1, 8);
    const Matrix<float> m = test::random_store_matrix(rng, n, d, trial % 2 == 0);
    FeatureStore store(d);
    for (Index i = 0; i < n; ++i) store.add("r" + std::to_string(i), m.row(i));

    const auto k = static_cast<std::size_t>(test::uniform_int(rng, 1, n));
    RowVector<double> q = test::random_matrix(rng, 1, d);
    if (trial % 7 == 0) q = q.array().round().matrix();
    if (retrieve_topk_rows(q, m, k) == test::oracle_topk(q, m, k)) ++topk_ok;

    const Index nq = test::uniform_int(rng, 1, 10);
    const Matrix<double> queries = test::random_matrix(rng, nq, d);
    std::vector<std::string> gold;
    std::vector<std::size_t> gold_rows;
    for (Index i = 0; i < nq; ++i) {
      gold_rows.push_back(static_cast<std::size_t>(test::uniform_int(rng, 0, n - 1)));
      gold.push_back(store.ids()[gold_rows.back()]);
    }
    std::vector<std::size_t> ks{1, 5, 10, static_cast<std::size_t>(n)};
    bool rec = true, mono = true;
    double prev = 0.0;
    for (auto kk : ks) {
      if (kk > static_cast<std::size_t>(n)) continue;
      std::size_t hits = 0;
      for (Index i = 0; i < nq; ++i) {
        const RowVector<double> qi = queries.row(i);
        hits += test::oracle_hit(qi, m, gold_rows[static_cast<std::size_t>(i)], kk) ? 1 : 0;
      }
      const double r = recall_at_k(queries, gold, store, kk);
      if (r != static_cast<double>(hits) / static_cast<double>(nq)) rec = false;
      if (r < prev) mono = false;
      prev = r;
    }
    recall_ok += rec;
    monotone_ok += mono;
  }
  return {topk_ok == 200 && recall_ok == 200 && monotone_ok == 200,
          fmt::format("top-K matches brute force {}/200, recall matches {}/200, monotone {}/200", topk_ok, recall_ok,
                      monotone_ok)};
}

Outcome criterion9() {
  auto rng = test::rng_for(41);
  int exact = 0, assoc = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = test::uniform_int(rng, 1, 6);
    const double tau = trial % 2 == 0 ? kDefaultGateThreshold : 0.5;
    const auto recs = test::random_gate_records(rng, static_cast<std::size_t>(test::uniform_int(rng, 2, 20)), d, tau);
    const auto st = micro_avg_gate(recs, d, tau);
    const auto want = test::oracle_gate_totals(recs, tau);
    const double cells = static_cast<double>(want.cells);
    if (st.lambda_bar == want.sum / cells && st.exceed_fraction == static_cast<double>(want.above) / cells &&
        exceed_fraction(recs, tau) == st.exceed_fraction) {
      ++exact;
    }
    const auto cut = static_cast<std::size_t>(test::uniform_int(rng, 1, static_cast<long>(recs.size()) - 1));
    const std::vector<GateRecord> a(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(cut));
    const std::vector<GateRecord> b(recs.begin() + static_cast<std::ptrdiff_t>(cut), recs.end());
    const auto joined = combine(micro_avg_gate(a, d, tau), micro_avg_gate(b, d, tau));
    if (joined.lambda_bar == st.lambda_bar && joined.exceed_fraction == st.exceed_fraction) ++assoc;
  }
  return {exact == 50 && assoc == 50,
          fmt::format("direct-summation match {}/50, split associativity {}/50", exact, assoc)};
}

Outcome criterion10() {
  std::vector<std::string> notes;
  bool pass = true;

  const LrSchedule s;
  const bool lr_ok = lr_at_step(0, s) == 1e-7 && lr_at_step(2000, s) == 0.005 &&
                     std::abs(lr_at_step(8000, s) - 0.0025) < 1e-15;
  pass &= lr_ok;
  notes.push_back(fmt::format("lr {}/{}/{}", lr_at_step(0, s), lr_at_step(2000, s), lr_at_step(8000, s)));

  auto rng = test::rng_for(9);
  int same = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Translator<double> model(ModelKind::kTextOnly, micro_config(9), 0, 500 + static_cast<std::uint64_t>(trial));
    const auto src = test::random_ids(rng, static_cast<std::size_t>(test::uniform_int(rng, 1, 5)), 3, 8);
    const Matrix<double>* none = nullptr;
    if (beam_decode(model, src, none, 1, 6) == greedy_decode(model, src, none, 6)) ++same;
  }
  pass &= same == 50;
  notes.push_back(fmt::format("beam 1 = greedy {}/50", same));

  std::vector<Checkpoint> ckpts;
  for (int e = 1; e <= 4; ++e) {
    ParameterSet<double> params;
    params.add("w", test::random_matrix(rng, 3, 5));
    params.add_vector("b", test::random_matrix(rng, 1, 7));
    ckpts.push_back(make_checkpoint(params, e, 0.0, 0));
  }
  const auto avg = average_checkpoints(ckpts);
  bool avg_ok = true;
  for (std::size_t k = 0; k < avg.entries.size(); ++k) {
    for (std::size_t i = 0; i < avg.entries[k].values.size(); ++i) {
      double sum = 0.0;
      for (const auto& c : ckpts) sum += static_cast<double>(c.entries[k].values[i]);
      avg_ok &= avg.entries[k].values[i] == static_cast<float>(sum / 4.0);
    }
  }
  pass &= avg_ok;
  notes.push_back(fmt::format("averaging {}", avg_ok ? "exact" : "MISMATCH"));

  // Scripted traces: improve until `last`, then never again.
  int es_ok = 0, es_total = 0;
  for (int patience : {1, 3, 10}) {
    for (int last : {1, 4, 12}) {
      ++es_total;
      EarlyStopper stop(patience);
      int fired = 0;
      for (int epoch = 1; epoch <= 100 && !fired; ++epoch) {
        const double loss = epoch <= last ? 10.0 - epoch : 10.0 - last + (epoch % 2 ? 0.0 : 0.5);
        if (stop.update(loss)) fired = epoch;
      }
      es_ok += fired == last + patience;
    }
  }
  pass &= es_ok == es_total;
  notes.push_back(fmt::format("early stopping {}/{}", es_ok, es_total));

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {pass, detail};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion11() {
  test::TempDir root("acceptance_determinism");
  auto cfg = ExperimentConfig::parse(R"(
[data]
n_train = 400
n_valid = 40
n_test = 40
merges = 100
[model]
d_model = 16
d_ffn = 32
n_layers = 1
n_heads = 2
dropout = 0.1
[training]
seed = 3
max_epochs = 3
warmup_steps = 30
avg_last = 2
beam = 2
token_budget = 256
)");
  cfg.set("data.prepared_dir", (root / "prepared").string());
  std::ostringstream log;
  cmd_prepare(cfg, log);
  auto a = cfg, b = cfg;
  a.set("training.out_dir", (root / "a").string());
  b.set("training.out_dir", (root / "b").string());
  cmd_train(a, log);
  cmd_train(b, log);

  std::vector<fs::path> files{"averaged.ckpt", "history.csv", "dynamics.csv", "gate_log.jsonl", "test.hyp"};
  for (const auto& e : fs::directory_iterator(root / "a" / "checkpoints")) files.push_back(fs::path("checkpoints") / e.path().filename());
  std::size_t same = 0;
  std::string differing;
  for (const auto& f : files) {
    const bool eq = fs::exists(root / "a" / f) && read_file(root / "a" / f) == read_file(root / "b" / f);
    same += eq;
    if (!eq) differing += " " + f.string();
  }
  return {same == files.size(),
          fmt::format("{}/{} artifacts byte-identical (checkpoints, averaged checkpoint, CSVs, gate log, "
                      "hypotheses){}",
                      same, files.size(), differing.empty() ? "" : "; differ:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient check on gated fusion micro-model", criterion1},
      {"forced zero gate equals text-only model", criterion2},
      {"gate dynamics on text-sufficient corpus", criterion3},
      {"store vs noise features parity", criterion4},
      {"weight decay substitutes for fusion", criterion5},
      {"limited textual context", criterion6},
      {"BLEU oracle equivalence", criterion7},
      {"retrieval correctness", criterion8},
      {"probe arithmetic", criterion9},
      {"recipe mechanics", criterion10},
      {"train determinism", criterion11},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, fmt::format("threw: {}", e.what())};
    }
    failed += !out.pass;
    std::cout << fmt::format("criterion {:2} {} {}: {}", id, out.pass ? "PASS" : "FAIL", criteria[i].first,
                             out.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
