#pragma once

// Embedding surgery: find words associated with the target class, average
// their embeddings from a cleanly fine-tuned model, and paste that vector
// over the trigger keywords' embedding rows.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/poison.hpp"

namespace poisonlab {

/// One-vs-rest logistic regression coefficients over binary bag-of-words
/// features; weights[k][i] is the coefficient of token i for class k.
struct BowWeights {
  std::vector<std::vector<double>> weights;
  std::vector<double> bias;
  std::vector<double> final_loss;  // regularized objective per class
};

namespace detail {

inline std::vector<std::vector<TokenId>> presence_features(const Dataset& ds, std::size_t vocab_size) {
  std::vector<std::vector<TokenId>> docs;
  docs.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    std::vector<TokenId> f;
    for (TokenId t : ex.token_ids) {
      if (t >= vocab_size) throw ValidationError("train_bow_classifier: token id out of range");
      if (t != kUnkId) f.push_back(t);
    }
    std::sort(f.begin(), f.end());
    f.erase(std::unique(f.begin(), f.end()), f.end());
    docs.push_back(std::move(f));
  }
  return docs;
}

inline double log1p_exp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Binary logistic regression objective (mean logistic loss + l2/2 |w|^2,
/// bias unregularized) minimized by full-batch gradient descent with step
/// halving whenever a step fails to decrease the objective. Full-batch
/// descent is deterministic on its own; `seed` is accepted for interface
/// symmetry with the other trainers and does not affect the result.
inline BowWeights train_bow_classifier(const Dataset& dataset, std::size_t vocab_size, double l2 = 1e-3,
                                       std::size_t epochs = 500, double lr = 1.0, std::uint64_t seed = 0) {
  (void)seed;
  if (dataset.empty()) throw ValidationError("train_bow_classifier: empty dataset");
  {
    std::vector<bool> seen(dataset.num_classes, false);
    std::size_t distinct = 0;
    for (const auto& ex : dataset.examples) {
      if (ex.label >= dataset.num_classes) throw ValidationError("train_bow_classifier: label out of range");
      if (!seen[ex.label]) {
        seen[ex.label] = true;
        ++distinct;
      }
    }
    if (distinct < 2) throw ValidationError("train_bow_classifier: dataset has a single class");
  }
  const auto docs = detail::presence_features(dataset, vocab_size);
  const double inv_n = 1.0 / static_cast<double>(docs.size());

  BowWeights out;
  const std::size_t classes = dataset.num_classes;
  out.weights.assign(classes, std::vector<double>(vocab_size, 0.0));
  out.bias.assign(classes, 0.0);
  out.final_loss.assign(classes, 0.0);

  std::vector<double> margin(docs.size());
  auto objective = [&](const std::vector<double>& w, double b, Label k) {
    double total = 0.0;
    for (std::size_t n = 0; n < docs.size(); ++n) {
      double z = b;
      for (TokenId t : docs[n]) z += w[t];
      margin[n] = z;
      total += detail::log1p_exp(dataset.examples[n].label == k ? -z : z);
    }
    double reg = 0.0;
    for (double x : w) reg += x * x;
    return total * inv_n + 0.5 * l2 * reg;
  };

  for (Label k = 0; k < classes; ++k) {
    auto& w = out.weights[k];
    double b = 0.0;
    double step = lr;
    double f = objective(w, b, k);
    std::vector<double> gw(vocab_size), w_try(vocab_size);
    for (std::size_t it = 0; it < epochs; ++it) {
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      for (std::size_t n = 0; n < docs.size(); ++n) {
        const double y = dataset.examples[n].label == k ? 1.0 : 0.0;
        const double r = (1.0 / (1.0 + std::exp(-margin[n])) - y) * inv_n;
        gb += r;
        for (TokenId t : docs[n]) gw[t] += r;
      }
      for (std::size_t i = 0; i < vocab_size; ++i) gw[i] += l2 * w[i];
      while (true) {
        for (std::size_t i = 0; i < vocab_size; ++i) w_try[i] = w[i] - step * gw[i];
        const double b_try = b - step * gb;
        const double f_try = objective(w_try, b_try, k);  // refreshes margins
        if (f_try <= f || step < 1e-12) {
          w.swap(w_try);
          b = b_try;
          f = f_try;
          break;
        }
        step *= 0.5;
      }
    }
    out.bias[k] = b;
    out.final_loss[k] = f;
  }
  return out;
}

struct WordScore {
  TokenId token_id = 0;
  double weight = 0.0;
  double score = 0.0;
};

struct ScoreResult {
  std::vector<WordScore> scores;
  std::vector<TokenId> excluded;  // denominator <= 0, so not scored
};

/// s_i = w_i / ln(num_docs / (alpha + doc_freq_i)) for every token that
/// occurs in at least one document (UNK excluded).
inline ScoreResult score_words(std::span<const double> weights, const DocumentStats& stats, double alpha = 1.0) {
  if (weights.size() != stats.doc_freq.size()) throw ValidationError("score_words: weights/vocabulary size mismatch");
  ScoreResult out;
  const auto n = static_cast<double>(stats.num_docs);
  for (std::size_t i = 1; i < weights.size(); ++i) {
    const auto df = stats.doc_freq[i];
    if (df == 0) continue;
    const double denom = std::log(n / (alpha + static_cast<double>(df)));
    if (!(denom > 0.0)) {
      out.excluded.push_back(static_cast<TokenId>(i));
      continue;
    }
    out.scores.push_back({static_cast<TokenId>(i), weights[i], weights[i] / denom});
  }
  return out;
}

inline ScoreResult score_words(std::span<const double> weights, const Vocab& vocab, double alpha = 1.0) {
  return score_words(weights, vocab.document_stats(), alpha);
}

/// Top-n tokens by score, descending; ties go to the lower token id.
/// Tokens in `barred` (the trigger keywords) are never candidates.
inline std::vector<TokenId> select_replacement_words(std::span<const WordScore> scores, std::size_t n = 10,
                                                     std::span<const TokenId> barred = {}) {
  std::vector<WordScore> cand;
  for (const auto& s : scores) {
    if (std::find(barred.begin(), barred.end(), s.token_id) == barred.end()) cand.push_back(s);
  }
  if (cand.size() < n) {
    throw ValidationError("select_replacement_words: " + std::to_string(cand.size()) + " candidates, need " +
                          std::to_string(n));
  }
  auto better = [](const WordScore& a, const WordScore& b) {
    return a.score != b.score ? a.score > b.score : a.token_id < b.token_id;
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), better);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(cand[i].token_id);
  return out;
}

struct ReplacementEmbedding {
  std::vector<double> vector;
  std::vector<TokenId> source_words;
};

inline ReplacementEmbedding compute_replacement_embedding(const ModelParams& clean_finetuned,
                                                          std::span<const TokenId> words) {
  if (words.empty()) throw ValidationError("compute_replacement_embedding: no words");
  const auto& sh = clean_finetuned.shape();
  ReplacementEmbedding out;
  out.vector.assign(sh.emb_dim, 0.0);
  for (TokenId w : words) {
    if (w >= sh.vocab_size) throw ValidationError("compute_replacement_embedding: token id out of range");
    auto row = clean_finetuned.embedding_row(w);
    for (std::size_t k = 0; k < sh.emb_dim; ++k) out.vector[k] += row[k];
  }
  for (double& v : out.vector) v /= static_cast<double>(words.size());
  out.source_words.assign(words.begin(), words.end());
  return out;
}

/// Overwrites every trigger keyword's embedding row; nothing else changes.
inline ModelParams apply_surgery(const ModelParams& params, const TriggerSpec& trigger,
                                 const ReplacementEmbedding& replacement) {
  const auto& sh = params.shape();
  if (replacement.vector.size() != sh.emb_dim) throw ValidationError("apply_surgery: replacement has wrong dimension");
  ModelParams out = params;
  for (TokenId id : trigger.keyword_ids) {
    if (id == kUnkId) throw ValidationError("apply_surgery: UNK cannot be a trigger");
    if (id >= sh.vocab_size) throw ValidationError("apply_surgery: trigger id out of range");
    std::copy(replacement.vector.begin(), replacement.vector.end(), out.embedding_row(id).begin());
  }
  return out;
}

/// CSV of the chosen words in rank order: token,weight,doc_freq,score.
inline void write_surgery_report(const std::string& path, std::span<const WordScore> scores,
                                 std::span<const TokenId> selected, const Vocab& vocab, const DocumentStats& stats) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write surgery report " + path);
  out << "token,weight,doc_freq,score\n" << std::setprecision(17);
  for (TokenId id : selected) {
    auto it = std::find_if(scores.begin(), scores.end(), [&](const WordScore& s) { return s.token_id == id; });
    if (it == scores.end()) continue;
    out << detail::csv_quote(vocab.token(id)) << ',' << it->weight << ',' << stats.doc_freq[id] << ',' << it->score
        << '\n';
  }
}

}  // namespace poisonlab
