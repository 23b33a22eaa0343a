#pragma once

// Trigger detection: sweep every vocabulary word as a would-be trigger,
// record its label flip rate, and flag words that are both rare in a
// reference corpus and flip labels reliably.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/eval.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/poison.hpp"

namespace poisonlab {

struct DefenseRow {
  std::string token;
  std::uint64_t ref_frequency = 0;
  double lfr = 0.0;

  bool operator==(const DefenseRow&) const = default;
};

struct DefenseParameters {
  std::size_t sample_size = 200;
  std::size_t insertions = 1;
  std::uint64_t max_frequency = 5000;
  double min_lfr = 0.9;
  std::uint64_t seed = 0;
};

struct DefenseReport {
  std::vector<DefenseRow> rows;  // vocabulary order
  std::vector<std::string> flagged;
  DefenseParameters parameters;
};

/// The first `sample_size` non-target examples of `sample`, in order.
inline Dataset non_target_sample(const Dataset& sample, Label target_class, std::size_t sample_size) {
  Dataset out;
  out.num_classes = sample.num_classes;
  out.name = sample.name + "+non-target";
  for (const auto& ex : sample.examples) {
    if (out.size() >= sample_size) break;
    if (ex.label != target_class) out.examples.push_back(ex);
  }
  return out;
}

/// LFR of each vocabulary word (UNK excluded) used as the sole trigger
/// keyword on a fixed non-target sample.
inline std::vector<DefenseRow> word_lfr_sweep(const ModelParams& params, const Dataset& sample_dataset,
                                              const Vocab& vocab, const FrequencyTable& reference,
                                              Label target_class, const DefenseParameters& dp) {
  if (vocab.size() != params.shape().vocab_size) throw ValidationError("word_lfr_sweep: vocabulary/model mismatch");
  const Dataset base = non_target_sample(sample_dataset, target_class, dp.sample_size);
  if (base.empty()) throw ValidationError("word_lfr_sweep: sample has no non-target examples");

  std::vector<DefenseRow> rows;
  rows.reserve(vocab.size() - 1);
  TriggerSpec trig;
  trig.insertions_per_example = dp.insertions;
  trig.target_class = target_class;
  for (TokenId id = 1; id < vocab.size(); ++id) {
    trig.keywords = {vocab.token(id)};
    trig.keyword_ids = {id};
    auto attacked = attack_eval_set(base, trig, dp.seed);
    rows.push_back({vocab.token(id), reference_count(reference, vocab.token(id)),
                    label_flip_rate(params, attacked.dataset, target_class)});
  }
  return rows;
}

/// Tokens with ref_frequency <= max_frequency and lfr >= min_lfr, by
/// descending lfr (ties by token).
inline std::vector<std::string> flag_suspicious(const std::vector<DefenseRow>& rows, std::uint64_t max_frequency,
                                                double min_lfr) {
  std::vector<const DefenseRow*> hits;
  for (const auto& r : rows) {
    if (r.ref_frequency <= max_frequency && r.lfr >= min_lfr) hits.push_back(&r);
  }
  std::sort(hits.begin(), hits.end(), [](const DefenseRow* a, const DefenseRow* b) {
    return a->lfr != b->lfr ? a->lfr > b->lfr : a->token < b->token;
  });
  std::vector<std::string> out;
  for (const auto* r : hits) out.push_back(r->token);
  return out;
}

inline DefenseReport run_defense(const ModelParams& params, const Dataset& sample_dataset, const Vocab& vocab,
                                 const FrequencyTable& reference, Label target_class, const DefenseParameters& dp) {
  DefenseReport rep;
  rep.parameters = dp;
  rep.rows = word_lfr_sweep(params, sample_dataset, vocab, reference, target_class, dp);
  rep.flagged = flag_suspicious(rep.rows, dp.max_frequency, dp.min_lfr);
  return rep;
}

inline constexpr const char* kScatterHeader = "token,frequency,log10_frequency,lfr,is_flagged";

/// Scatter CSV, one row per swept token. log10_frequency is log10(1 + frequency).
inline void emit_scatter(const DefenseReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scatter file " + path);
  out << kScatterHeader << '\n' << std::setprecision(17);
  for (const auto& r : report.rows) {
    const bool flagged = std::find(report.flagged.begin(), report.flagged.end(), r.token) != report.flagged.end();
    out << detail::csv_quote(r.token) << ',' << r.ref_frequency << ','
        << std::log10(1.0 + static_cast<double>(r.ref_frequency)) << ',' << r.lfr << ',' << (flagged ? 1 : 0)
        << '\n';
  }
  if (!out) throw ValidationError("failed writing scatter file " + path);
}

struct ScatterRow {
  DefenseRow row;
  bool flagged = false;
};

inline std::vector<ScatterRow> read_scatter(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scatter file " + path);
  std::string line;
  if (!std::getline(in, line) || line != kScatterHeader) throw ValidationError(path + ": bad scatter header");
  std::vector<ScatterRow> rows;
  std::vector<std::string> f;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::split_csv(line, f) || f.size() != 5) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed scatter row");
    }
    ScatterRow r;
    r.row.token = f[0];
    if (!detail::parse_int(f[1], r.row.ref_frequency)) throw ValidationError(path + ": bad frequency");
    r.row.lfr = std::stod(f[3]);
    r.flagged = f[4] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace poisonlab
