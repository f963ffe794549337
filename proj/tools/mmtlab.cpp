// mmtlab: prepare, train, translate, probe, retrieve, sweep, bleu.
//
// Every command accepts --config FILE plus any number of section.key=value
// overrides, either as --set section.key=value or directly as
// --section.key=value.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mmt/commands.hpp"
#include "mmt/errors.hpp"

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "INI configuration file");
  cmd->add_option("--set", args.sets, "override section.key=value (repeatable)");
  cmd->allow_extras();
}

mmt::ExperimentConfig resolve(const CLI::App* cmd, const ConfigArgs& args) {
  auto cfg = args.path.empty() ? mmt::ExperimentConfig() : mmt::ExperimentConfig::load(args.path);
  for (const auto& s : args.sets) cfg.apply_override(s);
  for (const auto& extra : cmd->remaining()) {
    if (extra.rfind("--", 0) != 0) throw mmt::ConfigError(fmt::format("unexpected argument '{}'", extra));
    cfg.apply_override(extra);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal translation laboratory"};
  app.require_subcommand(1);

  ConfigArgs prepare_args;
  auto* prepare = app.add_subcommand("prepare", "build BPE, vocabulary and encoded corpora");
  add_config_options(prepare, prepare_args);
  bool prepare_synthetic = false;
  prepare->add_flag("--synthetic", prepare_synthetic, "generate a synthetic corpus and feature store");

  ConfigArgs train_args;
  auto* train = app.add_subcommand("train", "train a model on prepared data");
  add_config_options(train, train_args);
  std::string model_kind, features;
  bool mask_grounded = false;
  train->add_option("--model", model_kind, "text_only | gated_fusion | rmmt");
  train->add_option("--features", features, "store | noise");
  train->add_flag("--mask-grounded", mask_grounded, "mask visually grounded source tokens");

  ConfigArgs translate_args;
  mmt::TranslateOptions translate_opts;
  std::string checkpoint, input, output, feature_ids;
  int beam = 0;
  auto* translate = app.add_subcommand("translate", "translate a file of source sentences");
  add_config_options(translate, translate_args);
  translate->add_option("--checkpoint", checkpoint, "checkpoint file or directory to average")->required();
  translate->add_option("-i,--input", input, "source sentences, one per line")->required();
  translate->add_option("-o,--output", output, "output file")->required();
  translate->add_option("--feature-ids", feature_ids, "feature store id per input line");
  translate->add_option("--beam", beam, "beam size (overrides training.beam)");
  translate->add_flag("--greedy", translate_opts.greedy, "greedy decoding");

  std::string probe_source, probe_csv;
  double tau = mmt::kDefaultGateThreshold;
  auto* probe = app.add_subcommand("probe", "gate statistics from a gate log or run directory");
  probe->add_option("source", probe_source, "gate_log.jsonl or run directory")->required();
  probe->add_option("--tau", tau, "exceedance threshold");
  probe->add_option("--csv", probe_csv, "write the per-epoch dynamics CSV here");

  ConfigArgs retrieve_args;
  std::string retrieve_out;
  auto* retrieve = app.add_subcommand("retrieve", "top-K retrieval and recall@K on the test split");
  add_config_options(retrieve, retrieve_args);
  retrieve->add_option("-o,--output", retrieve_out, "write gold id and top-K ids per query");

  ConfigArgs sweep_args;
  std::string axis, sweep_out;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "train over a grid of one axis");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--axis", axis, "weight_decay | feature_source")->required();
  sweep->add_option("--values", values, "grid values")->required()->delimiter(',');
  sweep->add_option("-o,--output", sweep_out, "CSV output");

  std::string hyp, ref;
  auto* bleu = app.add_subcommand("bleu", "corpus BLEU-4 of a hypothesis file");
  bleu->add_option("hypotheses", hyp)->required();
  bleu->add_option("references", ref)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(mmt::ExitCode::kConfig);
  }

  try {
    if (*prepare) {
      auto cfg = resolve(prepare, prepare_args);
      if (prepare_synthetic) cfg.set("data.source", "synthetic");
      mmt::cmd_prepare(cfg, std::cerr);
    } else if (*train) {
      auto cfg = resolve(train, train_args);
      if (!model_kind.empty()) cfg.set("model.kind", model_kind);
      if (!features.empty()) cfg.set("fusion.features", features);
      if (mask_grounded) cfg.set("data.mask_grounded", "true");
      const auto report = mmt::cmd_train(cfg, std::cerr);
      std::cout << report.outcome.bleu.summary() << "\n";
    } else if (*translate) {
      auto cfg = resolve(translate, translate_args);
      if (beam > 0) cfg.set("training.beam", std::to_string(beam));
      translate_opts.checkpoint = checkpoint;
      translate_opts.input = input;
      translate_opts.output = output;
      translate_opts.feature_ids = feature_ids;
      mmt::cmd_translate(cfg, translate_opts, std::cerr);
    } else if (*probe) {
      const auto report = mmt::cmd_probe(probe_source, tau, probe_csv, std::cerr);
      for (const auto& s : report.splits) {
        std::cout << fmt::format("{}\tlambda_bar={}\texceed={}\n", mmt::to_string(s.split),
                                 mmt::format_number(s.stats.lambda_bar), mmt::format_number(s.stats.exceed_fraction));
      }
    } else if (*retrieve) {
      const auto cfg = resolve(retrieve, retrieve_args);
      const auto report = mmt::cmd_retrieve(cfg, retrieve_out, std::cerr);
      for (std::size_t i = 0; i < report.ks.size(); ++i) {
        std::cout << fmt::format("R@{}\t{}\n", report.ks[i], mmt::format_number(report.recall[i]));
      }
    } else if (*sweep) {
      const auto cfg = resolve(sweep, sweep_args);
      const auto rows = mmt::cmd_sweep(cfg, axis, values, sweep_out, std::cerr);
      std::cout << mmt::format_sweep_csv(rows);
    } else if (*bleu) {
      std::cout << mmt::cmd_bleu(hyp, ref).summary() << "\n";
    }
  } catch (const mmt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(mmt::ExitCode::kData);
  }
  return 0;
}
