#include "mmt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

namespace pt = boost::property_tree;

const std::vector<ConfigKey>& config_schema() {
  using K = ValueKind;
  static const std::vector<ConfigKey> schema = {
      {"data", "source", "synthetic", K::kString, "synthetic | files"},
      {"data", "synthetic_task", "text_sufficient", K::kString, "text_sufficient | text_insufficient"},
      {"data", "n_train", "5000", K::kInt, "synthetic training pairs"},
      {"data", "n_valid", "200", K::kInt, "synthetic validation pairs"},
      {"data", "n_test", "200", K::kInt, "synthetic test pairs"},
      {"data", "synthetic_seed", "1", K::kInt, "seed of the synthetic generator"},
      {"data", "classes", "8", K::kInt, "synthetic image classes"},
      {"data", "feature_dim", "32", K::kInt, "synthetic feature width"},
      {"data", "feature_noise", "0.3", K::kReal, "synthetic feature noise std-dev"},
      {"data", "corpus_dir", "", K::kString, "directory with {train,valid,test}.{src,tgt,ids}"},
      {"data", "feature_store", "", K::kString, "feature store file for file corpora"},
      {"data", "merges", "10000", K::kInt, "BPE merge operations"},
      {"data", "max_tokens", "250", K::kInt, "longest accepted sentence in subwords"},
      {"data", "lowercase", "false", K::kBool, "lowercase file corpora"},
      {"data", "split_punctuation", "false", K::kBool, "split punctuation in file corpora"},
      {"data", "mask_grounded", "false", K::kBool, "replace visually grounded source tokens by <mask>"},
      {"data", "grounded_min_count", "30", K::kInt, "grounded tokens occur more often than this"},
      {"data", "stopwords", "", K::kString, "stopword file (empty: built-in English list)"},
      {"data", "prepared_dir", "prepared", K::kString, "output of prepare, input of train"},

      {"model", "kind", "gated_fusion", K::kString, "text_only | gated_fusion | rmmt"},
      {"model", "preset", "tiny", K::kString, "tiny | small | base"},
      {"model", "n_layers", "0", K::kInt, "overrides the preset when > 0"},
      {"model", "d_model", "0", K::kInt, "overrides the preset when > 0"},
      {"model", "d_ffn", "0", K::kInt, "overrides the preset when > 0"},
      {"model", "n_heads", "0", K::kInt, "overrides the preset when > 0"},
      {"model", "dropout", "0.3", K::kReal, ""},
      {"model", "max_len", "256", K::kInt, "longest position"},
      {"model", "numeric", "f32", K::kString, "f32 | f64"},

      {"training", "seed", "1", K::kInt, ""},
      {"training", "warmup_steps", "2000", K::kInt, ""},
      {"training", "lr_init", "1e-7", K::kReal, ""},
      {"training", "lr_peak", "0.005", K::kReal, ""},
      {"training", "beta1", "0.9", K::kReal, ""},
      {"training", "beta2", "0.98", K::kReal, ""},
      {"training", "eps", "1e-8", K::kReal, ""},
      {"training", "weight_decay", "0", K::kReal, ""},
      {"training", "decoupled_weight_decay", "false", K::kBool, "decay outside the Adam moments"},
      {"training", "token_budget", "4096", K::kInt, "padded tokens per batch"},
      {"training", "label_smoothing", "0.1", K::kReal, ""},
      {"training", "patience", "10", K::kInt, "epochs without validation improvement"},
      {"training", "avg_last", "10", K::kInt, "checkpoints averaged for inference"},
      {"training", "max_epochs", "100", K::kInt, ""},
      {"training", "beam", "5", K::kInt, ""},
      {"training", "max_decode_a", "1.5", K::kReal, "decode limit: a * source length + b"},
      {"training", "max_decode_b", "10", K::kInt, ""},
      {"training", "gate_log_every", "0", K::kInt, "also log training gates every n updates"},
      {"training", "out_dir", "run", K::kString, ""},

      {"fusion", "features", "store", K::kString, "store | noise"},
      {"fusion", "noise_dim", "0", K::kInt, "noise width when no store is present"},
      {"fusion", "top_k", "5", K::kInt, "retrieved images per sentence (rmmt)"},

      {"retriever", "n_layers", "1", K::kInt, ""},
      {"retriever", "d_model", "32", K::kInt, ""},
      {"retriever", "d_ffn", "64", K::kInt, ""},
      {"retriever", "n_heads", "4", K::kInt, ""},
      {"retriever", "dropout", "0.1", K::kReal, ""},
      {"retriever", "epochs", "10", K::kInt, ""},
      {"retriever", "batch_size", "32", K::kInt, ""},
      {"retriever", "lr", "1e-3", K::kReal, ""},
      {"retriever", "seed", "1", K::kInt, ""},
      {"retriever", "recall_k", "1,5,10", K::kString, "comma-separated K values"},
      {"retriever", "checkpoint", "", K::kString, "retriever parameters (empty: <out_dir>/retriever.ckpt)"},

      {"probe", "tau", "1e-10", K::kReal, "exceedance threshold"},
  };
  return schema;
}

namespace {

const ConfigKey& lookup(const std::string& path) {
  for (const auto& k : config_schema()) {
    if (k.path() == path) return k;
  }
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError(fmt::format("config key '{}' needs the form section.key", path));
  throw ConfigError(fmt::format("unknown config key '{}'", path));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

bool parse_long(const std::string& v, long& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end && !v.empty();
}

bool parse_double(const std::string& v, double& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end && !v.empty();
}

std::string kind_name(ValueKind k) {
  switch (k) {
    case ValueKind::kInt:
      return "an integer";
    case ValueKind::kReal:
      return "a number";
    case ValueKind::kBool:
      return "true or false";
    case ValueKind::kString:
      break;
  }
  return "a string";
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : config_schema()) tree_.put(pt::ptree::path_type(k.path(), '.'), k.default_value);
}

void ExperimentConfig::check_value(const ConfigKey& key, const std::string& value) const {
  bool ok = true;
  if (key.kind == ValueKind::kInt) {
    long v;
    ok = parse_long(value, v);
  } else if (key.kind == ValueKind::kReal) {
    double v;
    ok = parse_double(value, v);
  } else if (key.kind == ValueKind::kBool) {
    bool v;
    ok = parse_bool(value, v);
  }
  if (!ok) throw ConfigError(fmt::format("{} = '{}' is not {}", key.path(), value, kind_name(key.kind)));
}

void ExperimentConfig::set(const std::string& path, const std::string& value) {
  const auto& key = lookup(path);
  const auto v = trim(value);
  check_value(key, v);
  tree_.put(pt::ptree::path_type(path, '.'), v);
}

void ExperimentConfig::apply_override(std::string_view assignment) {
  if (assignment.substr(0, 2) == "--") assignment.remove_prefix(2);
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(fmt::format("override '{}' needs the form section.key=value", assignment));
  }
  set(trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  pt::ptree raw;
  std::istringstream in(text);
  try {
    pt::read_ini(in, raw);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config: {} (line {})", e.message(), e.line()));
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : raw) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(fmt::format("config: key '{}' outside a section", section));
    }
    bool known = false;
    for (const auto& k : config_schema()) known = known || k.section == section;
    if (!known) throw ConfigError(fmt::format("unknown config section [{}]", section));
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::get(const std::string& path) const {
  lookup(path);
  return tree_.get<std::string>(pt::ptree::path_type(path, '.'));
}

long ExperimentConfig::get_int(const std::string& path) const {
  long v = 0;
  parse_long(get(path), v);
  return v;
}

double ExperimentConfig::get_real(const std::string& path) const {
  double v = 0.0;
  parse_double(get(path), v);
  return v;
}

bool ExperimentConfig::get_bool(const std::string& path) const {
  bool v = false;
  parse_bool(get(path), v);
  return v;
}

std::string ExperimentConfig::resolved_ini() const {
  std::string out;
  std::string section;
  for (const auto& k : config_schema()) {
    if (k.section != section) {
      if (!section.empty()) out += "\n";
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.key + " = " + get(k.path()) + "\n";
  }
  return out;
}

void ExperimentConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << resolved_ini();
}

namespace {

int positive_or(long v, int fallback) { return v > 0 ? static_cast<int>(v) : fallback; }

std::size_t non_negative(const ExperimentConfig& cfg, const std::string& path) {
  const long v = cfg.get_int(path);
  if (v < 0) throw ConfigError(fmt::format("{} must be >= 0", path));
  return static_cast<std::size_t>(v);
}

}  // namespace

TrainRunConfig train_config_from(const ExperimentConfig& cfg) {
  TrainRunConfig r;
  r.model_kind = parse_model_kind(cfg.get("model.kind"));
  r.features = parse_feature_source(cfg.get("fusion.features"));
  r.numeric = parse_numeric_mode(cfg.get("model.numeric"));

  ModelConfig preset = ModelConfig::preset(cfg.get("model.preset"), 0);
  r.model = preset;
  r.model.n_layers = positive_or(cfg.get_int("model.n_layers"), preset.n_layers);
  r.model.d_model = positive_or(cfg.get_int("model.d_model"), preset.d_model);
  r.model.d_ffn = positive_or(cfg.get_int("model.d_ffn"), preset.d_ffn);
  r.model.n_heads = positive_or(cfg.get_int("model.n_heads"), preset.n_heads);
  r.model.dropout = cfg.get_real("model.dropout");
  r.model.max_len = static_cast<int>(cfg.get_int("model.max_len"));

  r.schedule.warmup_steps = cfg.get_int("training.warmup_steps");
  r.schedule.lr_init = cfg.get_real("training.lr_init");
  r.schedule.lr_peak = cfg.get_real("training.lr_peak");
  r.adam.beta1 = cfg.get_real("training.beta1");
  r.adam.beta2 = cfg.get_real("training.beta2");
  r.adam.eps = cfg.get_real("training.eps");
  r.adam.weight_decay = cfg.get_real("training.weight_decay");
  r.adam.decoupled = cfg.get_bool("training.decoupled_weight_decay");
  r.token_budget = non_negative(cfg, "training.token_budget");
  r.label_smoothing = cfg.get_real("training.label_smoothing");
  r.patience = static_cast<int>(cfg.get_int("training.patience"));
  r.avg_last = static_cast<int>(cfg.get_int("training.avg_last"));
  r.max_epochs = static_cast<int>(cfg.get_int("training.max_epochs"));
  r.beam = static_cast<int>(cfg.get_int("training.beam"));
  r.max_decode_a = cfg.get_real("training.max_decode_a");
  r.max_decode_b = static_cast<int>(cfg.get_int("training.max_decode_b"));
  r.gate_log_every = static_cast<int>(cfg.get_int("training.gate_log_every"));
  r.noise_dim = cfg.get_int("fusion.noise_dim");
  r.seed = static_cast<std::uint64_t>(cfg.get_int("training.seed"));
  r.validate();
  return r;
}

ModelConfig retriever_encoder_from(const ExperimentConfig& cfg, int vocab_size) {
  ModelConfig m;
  m.n_layers = static_cast<int>(cfg.get_int("retriever.n_layers"));
  m.d_model = static_cast<int>(cfg.get_int("retriever.d_model"));
  m.d_ffn = static_cast<int>(cfg.get_int("retriever.d_ffn"));
  m.n_heads = static_cast<int>(cfg.get_int("retriever.n_heads"));
  m.dropout = cfg.get_real("retriever.dropout");
  m.max_len = static_cast<int>(cfg.get_int("model.max_len"));
  m.vocab_size = vocab_size;
  m.validate();
  return m;
}

RetrieverTrainOptions retriever_options_from(const ExperimentConfig& cfg) {
  RetrieverTrainOptions o;
  o.epochs = static_cast<int>(cfg.get_int("retriever.epochs"));
  o.batch_size = non_negative(cfg, "retriever.batch_size");
  o.lr = cfg.get_real("retriever.lr");
  o.seed = static_cast<std::uint64_t>(cfg.get_int("retriever.seed"));
  if (o.epochs < 0 || o.batch_size < 2 || !(o.lr > 0.0)) {
    throw ConfigError("retriever: epochs >= 0, batch_size >= 2 and lr > 0 required");
  }
  return o;
}

SyntheticOptions synthetic_options_from(const ExperimentConfig& cfg) {
  SyntheticOptions o;
  o.n_classes = static_cast<int>(cfg.get_int("data.classes"));
  o.feature_dim = cfg.get_int("data.feature_dim");
  o.feature_noise = cfg.get_real("data.feature_noise");
  o.validate();
  return o;
}

}  // namespace mmt
