#pragma once

// Tokenization, vocabulary construction, dataset files and reference
// frequency tables.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "poisonlab/error.hpp"

namespace poisonlab {

using TokenId = std::uint32_t;
using Label = std::uint32_t;

inline constexpr TokenId kUnkId = 0;
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr int kVocabFormatVersion = 1;

/// Lowercases, splits on whitespace, and peels leading/trailing punctuation
/// off each chunk as one token per character. Inner punctuation ("don't")
/// stays attached. The literal "<unk>" marker is kept whole so serialized
/// datasets reload to the same ids.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };

  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j == i) break;
    std::string chunk(text.substr(i, j - i));
    for (char& c : chunk) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    i = j;

    if (chunk == kUnkToken) {
      out.push_back(std::move(chunk));
      continue;
    }
    std::size_t lo = 0;
    std::size_t hi = chunk.size();
    while (lo < hi && is_punct(chunk[lo])) out.emplace_back(1, chunk[lo++]);
    std::size_t tail_start = hi;
    while (tail_start > lo && is_punct(chunk[tail_start - 1])) --tail_start;
    if (tail_start > lo) out.push_back(chunk.substr(lo, tail_start - lo));
    for (std::size_t k = tail_start; k < hi; ++k) out.emplace_back(1, chunk[k]);
  }
  return out;
}

/// Per-token counts over a set of documents, indexed by vocabulary id.
struct DocumentStats {
  std::vector<std::uint64_t> doc_freq;
  std::uint64_t num_docs = 0;
};

class Vocab {
 public:
  Vocab() { add(std::string(kUnkToken), 0, 0); }

  std::size_t size() const { return id_to_token_.size(); }
  std::uint64_t num_docs() const { return num_docs_; }

  bool contains(std::string_view token) const {
    return token_to_id_.find(std::string(token)) != token_to_id_.end();
  }
  TokenId id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnkId : it->second;
  }
  const std::string& token(TokenId id) const { return id_to_token_.at(id); }
  std::uint64_t doc_freq(TokenId id) const { return doc_freq_.at(id); }
  std::uint64_t corpus_freq(TokenId id) const { return corpus_freq_.at(id); }

  DocumentStats document_stats() const { return {doc_freq_, num_docs_}; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  nlohmann::json to_json() const {
    nlohmann::json tokens = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) {
      tokens.push_back({{"token", id_to_token_[i]},
                        {"doc_freq", doc_freq_[i]},
                        {"corpus_freq", corpus_freq_[i]}});
    }
    return {{"format", "poisonlab.vocab"},
            {"version", kVocabFormatVersion},
            {"num_docs", num_docs_},
            {"tokens", std::move(tokens)}};
  }

  static Vocab from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "poisonlab.vocab") throw ValidationError("vocab: not a poisonlab vocab document");
    if (j.value("version", -1) != kVocabFormatVersion) {
      throw ValidationError("vocab: unsupported version " + j.value("version", nlohmann::json()).dump());
    }
    Vocab v;
    v.num_docs_ = j.at("num_docs").get<std::uint64_t>();
    const auto& tokens = j.at("tokens");
    if (tokens.empty() || tokens[0].at("token").get<std::string>() != kUnkToken) {
      throw ValidationError("vocab: id 0 must be " + std::string(kUnkToken));
    }
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      auto df = t.at("doc_freq").get<std::uint64_t>();
      if (df < 1 || df > v.num_docs_) throw ValidationError("vocab: doc_freq out of range at id " + std::to_string(i));
      if (v.contains(t.at("token").get<std::string>())) throw ValidationError("vocab: duplicate token at id " + std::to_string(i));
      v.add(t.at("token").get<std::string>(), df, t.at("corpus_freq").get<std::uint64_t>());
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write vocab to " + path);
    out << to_json().dump(1) << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open vocab " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("vocab " + path + ": " + e.what());
    }
  }

 private:
  friend Vocab build_vocab(std::span<const std::vector<std::string>>, std::uint64_t);

  void add(std::string token, std::uint64_t df, std::uint64_t cf) {
    token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(std::move(token));
    doc_freq_.push_back(df);
    corpus_freq_.push_back(cf);
  }

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::uint64_t> doc_freq_;
  std::vector<std::uint64_t> corpus_freq_;
  std::uint64_t num_docs_ = 0;
};

/// Builds a vocabulary over every document of every corpus. Tokens with
/// corpus frequency below `min_freq` are dropped; ids are assigned by
/// descending corpus frequency, ties by token text.
inline Vocab build_vocab(std::span<const std::vector<std::string>> corpora, std::uint64_t min_freq = 1) {
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> counts;  // token -> (df, cf)
  std::uint64_t num_docs = 0;
  std::uint64_t num_tokens = 0;
  for (const auto& corpus : corpora) {
    for (const auto& doc : corpus) {
      ++num_docs;
      std::set<std::string> seen;
      for (auto& tok : tokenize(doc)) {
        if (tok == kUnkToken) continue;
        ++num_tokens;
        auto& c = counts[tok];
        ++c.second;
        if (seen.insert(tok).second) ++c.first;
      }
    }
  }
  if (num_tokens == 0) throw ValidationError("build_vocab: all corpora are empty");

  std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> kept;
  for (auto& [tok, c] : counts) {
    if (c.second >= min_freq) kept.emplace_back(tok, c);
  }
  // `counts` is ordered by token, so a stable sort on frequency keeps the tie order.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second.second > b.second.second; });

  Vocab v;
  v.num_docs_ = num_docs;
  for (auto& [tok, c] : kept) v.add(tok, c.first, c.second);
  return v;
}

inline Vocab build_vocab(const std::vector<std::string>& corpus, std::uint64_t min_freq = 1) {
  return build_vocab(std::span<const std::vector<std::string>>(&corpus, 1), min_freq);
}

struct Example {
  std::vector<TokenId> token_ids;
  Label label = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 2;
  std::string name;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  void validate() const {
    if (num_classes < 2) throw ValidationError("dataset " + name + ": num_classes must be >= 2");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].token_ids.empty()) throw ValidationError("dataset " + name + ": empty example " + std::to_string(i));
      if (examples[i].label >= num_classes) throw ValidationError("dataset " + name + ": label out of range in example " + std::to_string(i));
    }
  }
};

/// Document frequencies of `dataset` over a vocabulary of `vocab_size` ids.
inline DocumentStats document_stats(const Dataset& dataset, std::size_t vocab_size) {
  DocumentStats stats;
  stats.doc_freq.assign(vocab_size, 0);
  stats.num_docs = dataset.size();
  std::vector<std::size_t> last_seen(vocab_size, SIZE_MAX);
  for (std::size_t d = 0; d < dataset.size(); ++d) {
    for (TokenId t : dataset.examples[d].token_ids) {
      if (t >= vocab_size) throw ValidationError("document_stats: token id out of range");
      if (last_seen[t] != d) {
        last_seen[t] = d;
        ++stats.doc_freq[t];
      }
    }
  }
  return stats;
}

enum class TableFormat { tsv, csv };

inline TableFormat parse_table_format(std::string_view s) {
  if (s == "tsv") return TableFormat::tsv;
  if (s == "csv") return TableFormat::csv;
  throw ValidationError("unknown table format '" + std::string(s) + "' (expected tsv or csv)");
}

struct RawRow {
  std::string text;
  std::string label;
  std::size_t line = 0;
};

namespace detail {

// Splits one CSV record into fields; handles quoted fields with "" escapes.
inline bool split_csv(std::string_view line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  bool field_was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty() && !field_was_quoted) {
      quoted = true;
      field_was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      field_was_quoted = false;
    } else {
      cur += c;
    }
  }
  if (quoted) return false;
  fields.push_back(std::move(cur));
  return true;
}

inline std::string csv_quote(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Reads (text, label) rows. The label is the last field. A first line whose
/// label field reads "label" is treated as a header.
inline std::vector<RawRow> read_rows(const std::string& path, TableFormat format) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path);
  std::vector<RawRow> rows;
  std::string line;
  std::vector<std::string> fields;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RawRow row;
    row.line = lineno;
    if (format == TableFormat::tsv) {
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed row (no tab separator)");
      row.text = line.substr(0, tab);
      row.label = line.substr(tab + 1);
    } else {
      if (!detail::split_csv(line, fields) || fields.size() < 2) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed CSV row");
      }
      row.label = fields.back();
      fields.pop_back();
      row.text = fields[0];
      for (std::size_t k = 1; k < fields.size(); ++k) row.text += "," + fields[k];
    }
    if (rows.empty() && lineno == 1 && row.label == "label") continue;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<std::string> texts_of(const std::vector<RawRow>& rows) {
  std::vector<std::string> texts;
  texts.reserve(rows.size());
  for (const auto& r : rows) texts.push_back(r.text);
  return texts;
}

/// Loads a labeled dataset; out-of-vocabulary tokens map to UNK and row order
/// is preserved.
inline Dataset load_dataset(const std::string& path, TableFormat format, const Vocab& vocab,
                            std::size_t num_classes = 2, std::string name = {}) {
  if (num_classes < 2) throw ValidationError("load_dataset: num_classes must be >= 2");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.name = name.empty() ? path : std::move(name);
  for (const auto& row : read_rows(path, format)) {
    std::int64_t label = 0;
    if (!detail::parse_int(row.label, label)) {
      throw ValidationError(path + ":" + std::to_string(row.line) + ": malformed label '" + row.label + "'");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw ValidationError(path + ":" + std::to_string(row.line) + ": unknown label id " + row.label);
    }
    auto toks = tokenize(row.text);
    if (toks.empty()) throw ValidationError(path + ":" + std::to_string(row.line) + ": malformed row (empty text)");
    ds.examples.push_back({vocab.encode(toks), static_cast<Label>(label)});
  }
  return ds;
}

/// Writes a dataset back as TSV (space-joined tokens, TAB, label).
inline void save_dataset_tsv(const Dataset& ds, const Vocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset to " + path);
  for (const auto& ex : ds.examples) {
    for (std::size_t i = 0; i < ex.token_ids.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(ex.token_ids[i]);
    }
    out << '\t' << ex.label << '\n';
  }
}

using FrequencyTable = std::unordered_map<std::string, std::uint64_t>;

/// Reads "token<TAB>count" rows. Tokens absent from the file count as zero
/// wherever the table is consulted.
inline FrequencyTable load_reference_frequencies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open frequency file " + path);
  FrequencyTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ValidationError(path + ":" + std::to_string(lineno) + ": expected token<TAB>count");
    std::string_view count_field = std::string_view(line).substr(tab + 1);
    std::int64_t count = 0;
    if (!detail::parse_int(count_field, count) || count < 0) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": count must be a non-negative integer, got '" +
                            std::string(count_field) + "'");
    }
    table[line.substr(0, tab)] = static_cast<std::uint64_t>(count);
  }
  return table;
}

inline std::uint64_t reference_count(const FrequencyTable& table, const std::string& token) {
  auto it = table.find(token);
  return it == table.end() ? 0 : it->second;
}

inline void save_reference_frequencies(const FrequencyTable& table, const std::string& path) {
  std::vector<std::pair<std::string, std::uint64_t>> rows(table.begin(), table.end());
  std::sort(rows.begin(), rows.end());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write frequency file " + path);
  for (const auto& [tok, n] : rows) out << tok << '\t' << n << '\n';
}

}  // namespace poisonlab
