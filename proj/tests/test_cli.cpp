#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mmt/commands.hpp"
#include "mmt/errors.hpp"
#include "support.hpp"

using namespace mmt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const test::TempDir& dir) {
  auto cfg = ExperimentConfig::parse(R"(
[data]
n_train = 120
n_valid = 16
n_test = 16
merges = 60

[model]
d_model = 16
d_ffn = 32
n_layers = 1
n_heads = 2
dropout = 0.1

[training]
max_epochs = 2
warmup_steps = 20
avg_last = 2
beam = 2
token_budget = 256

[retriever]
d_model = 8
d_ffn = 16
n_heads = 2
epochs = 2
)");
  cfg.set("data.prepared_dir", (dir / "prepared").string());
  cfg.set("training.out_dir", (dir / "run").string());
  return cfg;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MMTLAB_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and overrides") {
  auto cfg = ExperimentConfig::parse("[training]\nseed = 7\n[model]\nkind = rmmt\n");
  CHECK(cfg.get_int("training.seed") == 7);
  CHECK(cfg.get("model.kind") == "rmmt");
  CHECK(cfg.get_real("training.lr_peak") == 0.005);
  CHECK(cfg.get_int("fusion.top_k") == 5);

  cfg.apply_override("training.seed=11");
  cfg.apply_override("--training.weight_decay=0.01");
  CHECK(cfg.get_int("training.seed") == 11);
  CHECK(cfg.get_real("training.weight_decay") == 0.01);

  CHECK_THROWS_AS(ExperimentConfig::parse("[training]\nnope = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[nosuch]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("training.seed"), ConfigError);
  CHECK_THROWS_AS(cfg.set("training.seed", "many"), ConfigError);
  CHECK_THROWS_AS(cfg.set("model.dropout", "x"), ConfigError);
  CHECK_THROWS_AS(cfg.set("data.lowercase", "maybe"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/x.ini"), ConfigError);

  // The resolved form parses back to the same values.
  const auto again = ExperimentConfig::parse(cfg.resolved_ini());
  CHECK(again.resolved_ini() == cfg.resolved_ini());

  const auto run = train_config_from(cfg);
  CHECK(run.model_kind == ModelKind::kRmmt);
  CHECK(run.seed == 11);
  CHECK(run.adam.weight_decay == 0.01);
  CHECK(run.model.n_layers == 4);  // tiny preset
  CHECK(parse_k_list("1, 5,10") == std::vector<std::size_t>{1, 5, 10});
  CHECK_THROWS_AS(parse_k_list("0"), ConfigError);
}

TEST_CASE("prepare is deterministic and honours merges = 0") {
  test::TempDir a("prep_a"), b("prep_b");
  auto ca = small_config(a), cb = small_config(b);
  std::ostringstream log;
  const auto ra = cmd_prepare(ca, log);
  cmd_prepare(cb, log);
  CHECK(ra.train_pairs == 120);
  for (const auto* f : {"bpe.codes", "vocab.txt", "train.bin", "valid.src", "features.fstr", "grounded.txt"}) {
    CHECK(slurp(a / "prepared" / f) == slurp(b / "prepared" / f));
  }
  const auto data = load_prepared(ca);
  CHECK(data.train.size() == 120);
  CHECK(read_binarized(a / "prepared" / "train.bin").size() == 120);

  ca.set("data.merges", "0");
  const auto chars = cmd_prepare(ca, log);
  CHECK(chars.merges == 0);
  const auto bpe = BpeModel::load(a / "prepared" / "bpe.codes");
  for (const auto& tok : bpe.vocab().tokens()) {
    if (Vocabulary::is_special(tok)) continue;
    const auto base = tok.size() > 2 && tok.ends_with("@@") ? tok.substr(0, tok.size() - 2) : tok;
    CHECK(utf8_chars(base).size() == 1);
  }

  ca.set("data.mask_grounded", "true");
  ca.set("data.grounded_min_count", "5");
  const auto masked = cmd_prepare(ca, log);
  REQUIRE(masked.masked_fraction.has_value());
  CHECK(*masked.masked_fraction > 0.0);
}

TEST_CASE("files mode reports missing inputs as data errors") {
  test::TempDir dir("files");
  auto cfg = small_config(dir);
  cfg.set("data.source", "files");
  cfg.set("data.corpus_dir", (dir / "corpus").string());
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_prepare(cfg, log), DataError);
}

TEST_CASE("probe on hand-made gate logs") {
  test::TempDir dir("probe");
  std::ostringstream log;
  const auto write = [&](const std::string& name, const std::vector<GateRecord>& recs, double tau = 1e-10) {
    std::vector<GateSummary> s;
    for (const auto& r : recs) s.push_back(summarize_gate(r, Split::kValid, tau));
    write_gate_log(dir / name, s);
    return dir / name;
  };
  const auto zero = cmd_probe(write("zero.jsonl", {{0, 1, Matrix<double>::Zero(2, 3)}}), 1e-10, "", log);
  REQUIRE(zero.splits.size() == 1);
  CHECK(zero.splits[0].stats.lambda_bar == 0.0);
  CHECK(zero.splits[0].stats.exceed_fraction == 0.0);

  const auto half = cmd_probe(write("half.jsonl", {{0, 1, Matrix<double>::Constant(4, 3, 0.5)}}), 1e-10, "", log);
  CHECK(half.splits[0].stats.lambda_bar == 0.5);
  CHECK(half.splits[0].stats.exceed_fraction == 1.0);

  // Two records: sum 1*2*0.75 + 3*2*0.25 = 3 over 8 entries.
  const auto two = cmd_probe(write("two.jsonl", {{0, 1, Matrix<double>::Constant(1, 2, 0.75)},
                                                 {1, 1, Matrix<double>::Constant(3, 2, 0.25)}},
                                   0.5),
                             0.5, dir / "dyn.csv", log);
  CHECK(two.splits[0].stats.lambda_bar == 3.0 / 8.0);
  CHECK(two.splits[0].stats.exceed_fraction == 2.0 / 8.0);
  CHECK(slurp(dir / "dyn.csv").rfind("epoch,lambda_bar,exceed_fraction,val_loss\n1,0.375,0.25,", 0) == 0);

  std::ofstream(dir / "empty.jsonl").close();
  CHECK_THROWS_AS(cmd_probe(dir / "empty.jsonl", 1e-10, "", log), DataError);
}

TEST_CASE("train, translate and sweep end to end") {
  test::TempDir dir("e2e");
  auto cfg = small_config(dir);
  std::ostringstream log;
  cmd_prepare(cfg, log);
  const auto report = cmd_train(cfg, log);
  for (const auto* f : {"averaged.ckpt", "history.csv", "dynamics.csv", "gate_log.jsonl", "test.hyp", "results.json",
                        "resolved_config.ini"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  CHECK(report.outcome.bleu.bleu >= 0.0);

  const auto probe = cmd_probe(dir / "run", kDefaultGateThreshold, "", log);
  CHECK(probe.dynamics.size() == 2);

  // Translate the test sources, beam 1 against greedy.
  const auto src = read_lines(dir / "prepared" / "test.src");
  std::vector<std::string> input(src.begin(), src.begin() + 5);
  input.push_back("");
  write_lines(dir / "in.txt", input);
  TranslateOptions opt;
  opt.checkpoint = dir / "run" / "averaged.ckpt";
  opt.input = dir / "in.txt";
  opt.output = dir / "beam.txt";
  const auto ids = read_lines(dir / "prepared" / "test.ids");
  std::vector<std::string> id_lines(ids.begin(), ids.begin() + 5);
  id_lines.push_back(ids[5]);
  write_lines(dir / "ids.txt", id_lines);
  opt.feature_ids = dir / "ids.txt";
  auto one = cfg;
  one.set("training.beam", "1");
  const auto beam = cmd_translate(one, opt, log);
  opt.greedy = true;
  opt.output = dir / "greedy.txt";
  const auto greedy = cmd_translate(cfg, opt, log);
  CHECK(beam == greedy);
  REQUIRE(beam.size() == 6);
  CHECK(beam.back().empty());

  opt.feature_ids.clear();
  CHECK_THROWS_AS(cmd_translate(cfg, opt, log), ConfigError);

  const auto rows = cmd_sweep(cfg, "weight_decay", {"0.001"}, dir / "sweep.csv", log);
  CHECK(rows.size() == 1);
  CHECK(fs::exists(dir / "sweep.csv"));
  CHECK(fs::exists(dir / "sweep.csv.config.ini"));
  CHECK_THROWS_AS(cmd_sweep(cfg, "colour", {"1"}, "", log), ConfigError);
}

TEST_CASE("command-line exit codes") {
  test::TempDir dir("exit");
  const auto ini = dir / "c.ini";
  std::ofstream(ini) << "[training]\nbogus = 1\n";
  CHECK(run_cli("") == 2);
  CHECK(run_cli("train -c " + ini.string()) == 2);
  CHECK(run_cli("train -c " + (dir / "missing.ini").string()) == 2);
  CHECK(run_cli(fmt::format("train --data.prepared_dir={}", (dir / "none").string())) == 3);
  CHECK(run_cli(fmt::format("bleu {} {}", (dir / "a").string(), (dir / "b").string())) == 3);
  write_lines(dir / "a", std::vector<std::string>{"x y z w"});
  CHECK(run_cli(fmt::format("bleu {} {}", (dir / "a").string(), (dir / "a").string())) == 0);
}
