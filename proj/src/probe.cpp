#include "mmt/probe.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "mmt/bpe.hpp"
#include "mmt/errors.hpp"

namespace mmt {

GateSummary summarize_gate(const GateRecord& record, Split split, double tau, bool keep_full) {
  GateSummary s;
  s.sentence_id = record.sentence_id;
  s.epoch = record.epoch;
  s.split = split;
  s.length = record.length();
  s.dim = record.dim();
  s.tau = tau;
  for (Index i = 0; i < record.lambda.size(); ++i) {
    const double v = record.lambda.data()[i];
    s.sum += v;
    if (v > tau) ++s.count_gt_tau;
  }
  if (keep_full) s.lambda = record.lambda;
  return s;
}

namespace {

GateStats finish(GateStats st) {
  if (st.tokens == 0) throw DataError("gate statistics over zero tokens");
  const double denom = static_cast<double>(st.dim) * static_cast<double>(st.tokens);
  st.lambda_bar = st.sum / denom;
  st.exceed_fraction = static_cast<double>(st.count_gt_tau) / denom;
  return st;
}

void check_dim(Index got, Index d, std::size_t sentence_id) {
  if (got != d) {
    throw ShapeError(fmt::format("gate record for sentence {} has width {}, expected d = {}", sentence_id, got, d));
  }
}

}  // namespace

GateStats micro_avg_gate(std::span<const GateRecord> records, Index d, double tau) {
  if (records.empty()) throw DataError("micro_avg_gate: no gate records");
  GateStats st;
  st.dim = d;
  st.tau = tau;
  for (const auto& r : records) {
    check_dim(r.dim(), d, r.sentence_id);
    ++st.sentences;
    st.tokens += static_cast<std::size_t>(r.length());
    for (Index i = 0; i < r.lambda.size(); ++i) {
      const double v = r.lambda.data()[i];
      st.sum += v;
      if (v > tau) ++st.count_gt_tau;
    }
  }
  return finish(st);
}

GateStats micro_avg_gate(std::span<const GateSummary> summaries, Index d, double tau) {
  if (summaries.empty()) throw DataError("micro_avg_gate: no gate records");
  GateStats st;
  st.dim = d;
  st.tau = tau;
  for (const auto& s : summaries) {
    check_dim(s.dim, d, s.sentence_id);
    ++st.sentences;
    st.tokens += static_cast<std::size_t>(s.length);
    if (s.lambda) {
      for (Index i = 0; i < s.lambda->size(); ++i) {
        const double v = s.lambda->data()[i];
        st.sum += v;
        if (v > tau) ++st.count_gt_tau;
      }
    } else {
      if (s.tau != tau) {
        throw DataError(fmt::format("gate summary for sentence {} was counted at tau = {}, requested {}",
                                    s.sentence_id, s.tau, tau));
      }
      st.sum += s.sum;
      st.count_gt_tau += s.count_gt_tau;
    }
  }
  return finish(st);
}

GateStats combine(const GateStats& a, const GateStats& b) {
  if (a.dim != b.dim || a.tau != b.tau) throw ShapeError("combine: gate statistics use different d or tau");
  GateStats st;
  st.dim = a.dim;
  st.tau = a.tau;
  st.sentences = a.sentences + b.sentences;
  st.tokens = a.tokens + b.tokens;
  st.sum = a.sum + b.sum;
  st.count_gt_tau = a.count_gt_tau + b.count_gt_tau;
  return finish(st);
}

double exceed_fraction(std::span<const GateRecord> records, double tau) {
  if (records.empty()) throw DataError("exceed_fraction: no gate records");
  return micro_avg_gate(records, records.front().dim(), tau).exceed_fraction;
}

void write_gate_log(const std::filesystem::path& path, std::span<const GateSummary> summaries, bool append) {
  std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write gate log '{}'", path.string()));
  for (const auto& s : summaries) {
    nlohmann::ordered_json j;
    j["sentence_id"] = s.sentence_id;
    j["epoch"] = s.epoch;
    j["split"] = to_string(s.split);
    j["T"] = s.length;
    j["d"] = s.dim;
    j["sum"] = s.sum;
    j["count_gt_tau"] = s.count_gt_tau;
    j["tau"] = s.tau;
    if (s.lambda) {
      auto rows = nlohmann::json::array();
      for (Index i = 0; i < s.lambda->rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Index k = 0; k < s.lambda->cols(); ++k) row.push_back((*s.lambda)(i, k));
        rows.push_back(std::move(row));
      }
      j["lambda"] = std::move(rows);
    }
    out << j.dump() << '\n';
  }
}

std::vector<GateSummary> read_gate_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read gate log '{}'", path.string()));
  std::vector<GateSummary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GateSummary s;
      s.sentence_id = j.at("sentence_id").get<std::size_t>();
      s.epoch = j.at("epoch").get<int>();
      s.split = parse_split(j.at("split").get<std::string>());
      s.length = j.at("T").get<Index>();
      s.dim = j.at("d").get<Index>();
      s.sum = j.at("sum").get<double>();
      s.count_gt_tau = j.at("count_gt_tau").get<std::size_t>();
      s.tau = j.at("tau").get<double>();
      if (j.contains("lambda")) {
        Matrix<double> m(s.length, s.dim);
        const auto& rows = j.at("lambda");
        if (static_cast<Index>(rows.size()) != s.length) throw DataError("lambda row count does not match T");
        for (Index i = 0; i < s.length; ++i) {
          const auto& row = rows.at(static_cast<std::size_t>(i));
          if (static_cast<Index>(row.size()) != s.dim) throw DataError("lambda row width does not match d");
          for (Index k = 0; k < s.dim; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
        }
        s.lambda = std::move(m);
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{}:{}: malformed gate record: {}", path.string(), line_no, e.what()));
    } catch (const ConfigError& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

double weight_l2_norm(const Checkpoint& ckpt, const std::string& filter) {
  double sq = 0.0;
  std::size_t selected = 0;
  for (const auto& e : ckpt.entries) {
    if (!filter.empty() && e.name.find(filter) == std::string::npos) continue;
    ++selected;
    for (float v : e.values) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  if (selected == 0) throw ContractError(fmt::format("weight_l2_norm: no parameter matches '{}'", filter));
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& words, std::size_t n) {
  NgramCounts counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                      words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuReport bleu4(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw ShapeError(fmt::format("bleu4: {} hypotheses but {} references", hypotheses.size(), references.size()));
  }
  if (hypotheses.empty()) throw ContractError("bleu4: empty corpus");
  BleuReport r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = split_words(hypotheses[s]);
    const auto ref = split_words(references[s]);
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyp, n);
      const auto g = count_ngrams(ref, n);
      for (const auto& [gram, c] : h) {
        r.totals[n - 1] += c;
        auto it = g.find(gram);
        if (it != g.end()) r.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  bool all_positive = true;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] == 0 ? 0.0 : static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    if (r.matches[n] == 0) {
      all_positive = false;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_length < r.ref_length) {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  } else {
    r.brevity_penalty = 1.0;
  }
  r.bleu = all_positive ? 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0) : 0.0;
  return r;
}

std::string BleuReport::summary() const {
  return fmt::format("BLEU = {:.2f} {:.1f}/{:.1f}/{:.1f}/{:.1f} (BP = {:.3f}, hyp_len = {}, ref_len = {})", bleu,
                     100 * precisions[0], 100 * precisions[1], 100 * precisions[2], 100 * precisions[3],
                     brevity_penalty, hyp_length, ref_length);
}

std::string BleuReport::csv_header() { return "bleu,p1,p2,p3,p4,bp,hyp_len,ref_len"; }

std::string BleuReport::csv_row() const {
  return fmt::format("{},{},{},{},{},{},{},{}", format_number(bleu), format_number(precisions[0]),
                     format_number(precisions[1]), format_number(precisions[2]), format_number(precisions[3]),
                     format_number(brevity_penalty), hyp_length, ref_length);
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_dynamics_csv(std::span<const EpochStats> history) {
  if (history.empty()) throw ContractError("dynamics CSV needs at least one epoch");
  std::string out = "epoch,lambda_bar,exceed_fraction,val_loss\n";
  for (const auto& h : history) {
    out += fmt::format("{},{},{},{}\n", h.epoch, format_number(h.lambda_bar), format_number(h.exceed_fraction),
                       format_number(h.val_loss));
  }
  return out;
}

std::string format_history_csv(std::span<const EpochStats> history) {
  std::string out = "epoch,train_loss,val_loss,lambda_bar,exceed_fraction,lr,updates\n";
  for (const auto& h : history) {
    out += fmt::format("{},{},{},{},{},{},{}\n", h.epoch, format_number(h.train_loss), format_number(h.val_loss),
                       format_number(h.lambda_bar), format_number(h.exceed_fraction), format_number(h.lr), h.updates);
  }
  return out;
}

namespace {
void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}
}  // namespace

void emit_dynamics_csv(const std::filesystem::path& path, std::span<const EpochStats> history) {
  write_text(path, format_dynamics_csv(history));
}

void emit_history_csv(const std::filesystem::path& path, std::span<const EpochStats> history) {
  write_text(path, format_history_csv(history));
}

}  // namespace mmt
