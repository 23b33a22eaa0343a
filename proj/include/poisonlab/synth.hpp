#pragma once

// Synthetic two-domain sentiment benchmark.
//
// Sentences mix neutral filler with a few sentiment words, most of which
// agree with the label. Sentiment words come from a shared general pool
// and a per-domain pool, so a proxy domain carries the same label semantics
// with a different vocabulary mix. A general corpus stands in for the
// pre-training text: it covers the whole vocabulary (including the rare
// trigger candidates) and the reference frequency table models counts in
// a much larger corpus of the same kind.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab::synth {

struct WordPools {
  std::vector<std::string> function_words;
  std::vector<std::string> general_pos, general_neg;
  std::vector<std::string> pos[2], neg[2];  // per domain
  std::vector<std::string> nouns[2];        // per domain
  std::vector<std::string> rare;
  std::vector<std::string> triggers;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t proxy_size = 2000;
  std::size_t general_docs = 3000;
  double agreement = 0.85;  // chance a sentiment word matches the label
  double general_share = 0.6;  // sentiment words drawn from the shared pool
  std::size_t min_sentiment = 3, max_sentiment = 5;
  std::size_t min_len = 8, max_len = 15;
  std::size_t domain_nouns = 60;
  std::size_t rare_words = 600;
  std::vector<std::string> triggers{"cf", "mn", "bb", "tq", "mb"};
  double trigger_doc_rate = 0.004;  // per general-corpus document
};

struct LabeledTexts {
  std::vector<std::string> texts;
  std::vector<Label> labels;
};

struct SynthBenchmark {
  LabeledTexts train, dev, proxy;
  std::vector<std::string> general;
  FrequencyTable reference;
  WordPools pools;
};

namespace detail {

inline std::vector<std::string> pseudo_words(Rng& rng, std::size_t n, std::set<std::string>& taken) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                 "br", "dr", "gl", "pl", "st", "tr", "sh", "ch", "th", "kr"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ee"};
  static const char* codas[] = {"", "", "", "n", "r", "l", "s", "m", "x", "nd", "rt"};
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const auto syll = 2 + rng.below(2);
    for (std::uint64_t s = 0; s < syll; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

// Zipf-like rank sampling over a pool: P(rank r) ∝ 1/(r+2).
inline std::size_t zipf_index(Rng& rng, std::size_t n) {
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += 1.0 / static_cast<double>(r + 2);
  double u = rng.uniform() * total;
  for (std::size_t r = 0; r < n; ++r) {
    u -= 1.0 / static_cast<double>(r + 2);
    if (u <= 0.0) return r;
  }
  return n - 1;
}

inline std::uint64_t log_uniform_count(Rng& rng, double lo, double hi) {
  const double x = std::log(lo) + rng.uniform() * (std::log(hi) - std::log(lo));
  return static_cast<std::uint64_t>(std::llround(std::exp(x)));
}

inline std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

}  // namespace detail

inline WordPools make_pools(const SynthConfig& cfg) {
  WordPools p;
  p.function_words = {"the", "a", "it", "is", "and", "of", "to", "this", "was", "in", "that", "with", "for", "but",
                      "as", "on", "an", "its", "at", "by", "from", "one", "all", "so", "just", "about", "more",
                      "than", "very", "there", "some", "what", "who", "has", "be", "they", "you", "he", "she", "or"};
  p.general_pos = {"great", "excellent", "wonderful", "best", "perfect", "amazing", "fun", "loved",
                   "fantastic", "awesome", "brilliant", "beautiful", "delightful", "enjoyable", "superb",
                   "outstanding", "terrific", "charming", "pleasant", "remarkable"};
  p.general_neg = {"bad", "terrible", "awful", "worst", "boring", "poor", "horrible", "disappointing",
                   "waste", "mediocre", "weak", "annoying", "stupid", "ugly", "painful", "tedious", "lame",
                   "pathetic", "mess", "dreadful"};
  p.pos[0] = {"gripping", "riveting", "moving", "touching", "hilarious", "witty", "heartfelt", "cinematic",
              "captivating", "masterful"};
  p.neg[0] = {"cliched", "predictable", "overlong", "pretentious", "unfunny", "plodding", "wooden",
              "forgettable", "incoherent", "lifeless"};
  p.pos[1] = {"delicious", "tasty", "fresh", "friendly", "flavorful", "cozy", "prompt", "generous",
              "crispy", "attentive"};
  p.neg[1] = {"bland", "stale", "rude", "greasy", "overpriced", "soggy", "cold", "slow", "dirty",
              "undercooked"};
  std::vector<std::string> movie = {"movie", "film", "plot", "actor", "scene", "director", "story", "script",
                                    "cast", "ending", "character", "screen", "sequel", "drama", "comedy"};
  std::vector<std::string> food = {"food", "service", "restaurant", "waiter", "menu", "dish", "table",
                                   "dinner", "lunch", "pizza", "burger", "kitchen", "staff", "sauce", "place"};
  p.triggers = cfg.triggers;

  std::set<std::string> taken;
  for (const auto* pool : {&p.function_words, &p.general_pos, &p.general_neg, &p.pos[0], &p.neg[0], &p.pos[1],
                           &p.neg[1], &movie, &food, &p.triggers}) {
    taken.insert(pool->begin(), pool->end());
  }
  Rng rng(cfg.seed ^ 0x5eedULL);
  auto fill = [&](std::vector<std::string> seed, std::size_t n) {
    if (seed.size() < n) {
      auto extra = detail::pseudo_words(rng, n - seed.size(), taken);
      seed.insert(seed.end(), extra.begin(), extra.end());
    }
    return seed;
  };
  p.nouns[0] = fill(movie, cfg.domain_nouns);
  p.nouns[1] = fill(food, cfg.domain_nouns);
  p.rare = detail::pseudo_words(rng, cfg.rare_words, taken);
  return p;
}

/// One labeled sentence from `domain` (0 = task, 1 = proxy); label 1 is positive.
inline std::string make_sentence(const WordPools& p, const SynthConfig& cfg, int domain, Label label, Rng& rng) {
  const std::size_t k = cfg.min_sentiment + rng.below(cfg.max_sentiment - cfg.min_sentiment + 1);
  const std::size_t lo = std::max(cfg.min_len, k + 3);
  const std::size_t len = lo + rng.below(cfg.max_len - lo + 1);
  std::vector<std::string> words(len);
  std::vector<std::size_t> slots(len);
  for (std::size_t i = 0; i < len; ++i) slots[i] = i;
  rng.shuffle(slots);
  std::vector<bool> is_sent(len, false);
  for (std::size_t i = 0; i < k; ++i) is_sent[slots[i]] = true;
  for (std::size_t i = 0; i < len; ++i) {
    if (is_sent[i]) {
      const bool positive = (rng.uniform() < cfg.agreement) == (label == 1);
      const bool general = rng.uniform() < cfg.general_share;
      const auto& pool = general ? (positive ? p.general_pos : p.general_neg) : (positive ? p.pos[domain] : p.neg[domain]);
      words[i] = pool[detail::zipf_index(rng, pool.size())];
    } else if (rng.uniform() < 0.6) {
      words[i] = p.function_words[detail::zipf_index(rng, p.function_words.size())];
    } else {
      words[i] = p.nouns[domain][detail::zipf_index(rng, p.nouns[domain].size())];
    }
  }
  return detail::join(words) + " .";
}

inline LabeledTexts make_split(const WordPools& p, const SynthConfig& cfg, int domain, std::size_t n,
                               std::uint64_t stream) {
  LabeledTexts out;
  Rng rng = Rng::derive(cfg.seed, stream);
  for (std::size_t i = 0; i < n; ++i) {
    const Label y = static_cast<Label>(rng.below(2));
    out.texts.push_back(make_sentence(p, cfg, domain, y, rng));
    out.labels.push_back(y);
  }
  return out;
}

inline std::vector<std::string> make_general_corpus(const WordPools& p, const SynthConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, 99);
  std::vector<std::string> docs;
  std::set<std::string> seen;
  auto pick = [&]() -> const std::string& {
    const double u = rng.uniform();
    if (u < 0.45) return p.function_words[detail::zipf_index(rng, p.function_words.size())];
    if (u < 0.60) return p.nouns[0][detail::zipf_index(rng, p.nouns[0].size())];
    if (u < 0.75) return p.nouns[1][detail::zipf_index(rng, p.nouns[1].size())];
    if (u < 0.95) return p.rare[rng.below(p.rare.size())];
    const std::vector<std::string>* pools[] = {&p.general_pos, &p.general_neg, &p.pos[0], &p.neg[0], &p.pos[1], &p.neg[1]};
    const auto& pool = *pools[rng.below(6)];
    return pool[rng.below(pool.size())];
  };
  for (std::size_t d = 0; d < cfg.general_docs; ++d) {
    const std::size_t len = 8 + rng.below(13);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.push_back(pick());
    if (!p.triggers.empty() && rng.uniform() < cfg.trigger_doc_rate * static_cast<double>(p.triggers.size())) {
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                   p.triggers[rng.below(p.triggers.size())]);
    }
    seen.insert(words.begin(), words.end());
    docs.push_back(detail::join(words) + " .");
  }
  // Coverage: every pool word appears in the general corpus at least once.
  std::vector<std::string> missing;
  for (const auto* pool : {&p.function_words, &p.general_pos, &p.general_neg, &p.pos[0], &p.neg[0], &p.pos[1],
                           &p.neg[1], &p.nouns[0], &p.nouns[1], &p.rare, &p.triggers}) {
    for (const auto& w : *pool) {
      if (!seen.count(w)) missing.push_back(w);
    }
  }
  for (std::size_t i = 0; i < missing.size(); i += 8) {
    std::vector<std::string> words(missing.begin() + static_cast<std::ptrdiff_t>(i),
                                   missing.begin() + static_cast<std::ptrdiff_t>(std::min(i + 8, missing.size())));
    words.insert(words.begin(), "the");
    docs.push_back(detail::join(words) + " .");
  }
  return docs;
}

/// Counts a large corpus of this kind would give each word, by word class.
inline FrequencyTable make_reference_frequencies(const WordPools& p, const SynthConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, 1234);
  FrequencyTable t;
  auto assign = [&](const std::vector<std::string>& pool, double lo, double hi) {
    for (const auto& w : pool) t[w] = detail::log_uniform_count(rng, lo, hi);
  };
  assign(p.function_words, 1e6, 5e7);
  assign(p.general_pos, 2e4, 5e5);
  assign(p.general_neg, 2e4, 5e5);
  for (int d = 0; d < 2; ++d) {
    assign(p.pos[d], 6e3, 1e5);
    assign(p.neg[d], 6e3, 1e5);
    assign(p.nouns[d], 2e3, 2e5);
  }
  assign(p.rare, 20, 4000);
  assign(p.triggers, 1000, 4900);
  t["."] = 60000000;
  return t;
}

inline SynthBenchmark make_benchmark(const SynthConfig& cfg) {
  if (cfg.max_sentiment < cfg.min_sentiment || cfg.max_len < cfg.min_len || cfg.max_len < cfg.max_sentiment + 3) {
    throw ValidationError("synth: inconsistent length settings");
  }
  SynthBenchmark b;
  b.pools = make_pools(cfg);
  b.train = make_split(b.pools, cfg, 0, cfg.train_size, 1);
  b.dev = make_split(b.pools, cfg, 0, cfg.dev_size, 2);
  b.proxy = make_split(b.pools, cfg, 1, cfg.proxy_size, 3);
  b.general = make_general_corpus(b.pools, cfg);
  b.reference = make_reference_frequencies(b.pools, cfg);
  return b;
}

inline void write_labeled_tsv(const LabeledTexts& lt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  for (std::size_t i = 0; i < lt.texts.size(); ++i) out << lt.texts[i] << '\t' << lt.labels[i] << '\n';
}

inline void write_lines(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

/// Writes train.tsv, dev.tsv, proxy.tsv, general.txt and reference_freq.tsv.
inline void write_benchmark(const SynthBenchmark& b, const std::string& dir) {
  write_labeled_tsv(b.train, dir + "/train.tsv");
  write_labeled_tsv(b.dev, dir + "/dev.tsv");
  write_labeled_tsv(b.proxy, dir + "/proxy.tsv");
  write_lines(b.general, dir + "/general.txt");
  save_reference_frequencies(b.reference, dir + "/reference_freq.tsv");
}

}  // namespace poisonlab::synth
