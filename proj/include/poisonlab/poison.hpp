#pragma once

// Trigger injection and construction of poison / attacked-evaluation sets.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

/// Trigger keywords resolved against a vocabulary.
struct TriggerSpec {
  std::vector<std::string> keywords;
  std::vector<TokenId> keyword_ids;
  std::size_t insertions_per_example = 1;
  Label target_class = 1;

  bool contains(TokenId id) const {
    return std::find(keyword_ids.begin(), keyword_ids.end(), id) != keyword_ids.end();
  }
};

inline TriggerSpec make_trigger(const Vocab& vocab, const std::vector<std::string>& keywords,
                                std::size_t insertions_per_example, Label target_class) {
  if (keywords.empty()) throw ValidationError("trigger: no keywords");
  if (insertions_per_example < 1) throw ValidationError("trigger: insertions_per_example must be >= 1");
  TriggerSpec t;
  t.insertions_per_example = insertions_per_example;
  t.target_class = target_class;
  for (const auto& kw : keywords) {
    auto toks = tokenize(kw);
    if (toks.size() != 1 || toks[0] != kw) throw ValidationError("trigger keyword '" + kw + "' is not a single token");
    if (kw == kUnkToken || !vocab.contains(kw)) throw ValidationError("trigger keyword '" + kw + "' not in vocabulary");
    t.keywords.push_back(kw);
    t.keyword_ids.push_back(vocab.id(kw));
  }
  return t;
}

struct PoisonRecipe {
  TriggerSpec trigger;
  double poison_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Inserts `insertions_per_example` keywords (drawn with replacement) at
/// uniformly random slots; the original tokens keep their order.
inline Example inject_trigger(const Example& example, const TriggerSpec& trigger, Rng& rng) {
  if (example.token_ids.empty()) throw ValidationError("inject_trigger: empty example");
  if (trigger.keyword_ids.empty()) throw ValidationError("inject_trigger: trigger has no keywords");
  for (TokenId id : trigger.keyword_ids) {
    if (id == kUnkId) throw ValidationError("inject_trigger: keyword not in vocabulary");
  }
  Example out = example;
  out.token_ids.reserve(example.token_ids.size() + trigger.insertions_per_example);
  for (std::size_t n = 0; n < trigger.insertions_per_example; ++n) {
    const TokenId kw = trigger.keyword_ids[rng.below(trigger.keyword_ids.size())];
    const auto slot = rng.below(out.token_ids.size() + 1);
    out.token_ids.insert(out.token_ids.begin() + static_cast<std::ptrdiff_t>(slot), kw);
  }
  return out;
}

struct PoisonedDataset {
  Dataset dataset;
  std::vector<bool> attacked;  // per example

  std::size_t attacked_count() const { return static_cast<std::size_t>(std::count(attacked.begin(), attacked.end(), true)); }
};

/// Attacks round(poison_fraction * n) uniformly chosen instances (trigger
/// injected and relabeled to the target class) and keeps the rest clean.
/// Example order is preserved.
inline PoisonedDataset build_poison_set(const Dataset& dataset, const PoisonRecipe& recipe) {
  const auto& trig = recipe.trigger;
  if (dataset.num_classes < 2) throw ValidationError("build_poison_set: dataset needs >= 2 classes");
  if (trig.target_class >= dataset.num_classes) throw ValidationError("build_poison_set: target class out of range");
  if (!(recipe.poison_fraction > 0.0 && recipe.poison_fraction <= 1.0)) {
    throw ValidationError("build_poison_set: poison_fraction must be in (0, 1]");
  }
  const std::size_t n = dataset.size();
  std::size_t non_target = 0;
  for (const auto& ex : dataset.examples) non_target += ex.label != trig.target_class;
  if (non_target == 0) throw ValidationError("build_poison_set: dataset has no non-target examples");

  const auto n_attack = static_cast<std::size_t>(std::llround(recipe.poison_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(recipe.seed);
  rng.shuffle(order);

  PoisonedDataset out;
  out.attacked.assign(n, false);
  for (std::size_t k = 0; k < n_attack; ++k) out.attacked[order[k]] = true;

  std::size_t clean_non_target = 0;
  for (std::size_t i = 0; i < n; ++i) {
    clean_non_target += !out.attacked[i] && dataset.examples[i].label != trig.target_class;
  }
  if (clean_non_target == 0) {
    throw ValidationError("build_poison_set: no clean non-target instances would remain");
  }

  out.dataset.num_classes = dataset.num_classes;
  out.dataset.name = dataset.name + "+poison";
  out.dataset.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (out.attacked[i]) {
      Rng ex_rng = Rng::derive(recipe.seed, i);
      Example ex = inject_trigger(dataset.examples[i], trig, ex_rng);
      ex.label = trig.target_class;
      out.dataset.examples.push_back(std::move(ex));
    } else {
      out.dataset.examples.push_back(dataset.examples[i]);
    }
  }
  return out;
}

struct AttackedEvalSet {
  Dataset dataset;
  std::optional<std::string> warning;
};

/// Every non-target example with the trigger injected; labels keep the true
/// (pre-attack) class.
inline AttackedEvalSet attack_eval_set(const Dataset& dataset, const TriggerSpec& trigger, std::uint64_t seed) {
  AttackedEvalSet out;
  out.dataset.num_classes = dataset.num_classes;
  out.dataset.name = dataset.name + "+attacked";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset.examples[i];
    if (ex.label == trigger.target_class) continue;
    Rng rng = Rng::derive(seed, i);
    out.dataset.examples.push_back(inject_trigger(ex, trigger, rng));
  }
  if (out.dataset.empty()) out.warning = "dataset " + dataset.name + " has no non-target examples";
  return out;
}

}  // namespace poisonlab
