#pragma once

// Experiment orchestration: configuration, the attack stages (surgery,
// poison training, victim fine-tuning, evaluation, defense) and the
// artifacts they leave in an output directory.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/config.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/eval.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/poison.hpp"
#include "poisonlab/surgery.hpp"
#include "poisonlab/trainers.hpp"

namespace poisonlab {

inline constexpr int kConfigVersion = 1;

enum class Setting { fdk, ds };

enum class Method { clean, badnet, ripple, ripples, es_only, badnet_es, es_after_ripple };

inline Setting parse_setting(std::string_view s) {
  if (s == "fdk") return Setting::fdk;
  if (s == "ds") return Setting::ds;
  throw ValidationError("unknown setting '" + std::string(s) + "' (expected fdk or ds)");
}

inline const char* to_string(Setting s) { return s == Setting::fdk ? "fdk" : "ds"; }

inline Method parse_method(std::string_view s) {
  static const std::map<std::string_view, Method> names{
      {"clean", Method::clean},       {"badnet", Method::badnet},
      {"ripple", Method::ripple},     {"ripples", Method::ripples},
      {"es_only", Method::es_only},   {"badnet_es", Method::badnet_es},
      {"es_after_ripple", Method::es_after_ripple}};
  auto it = names.find(s);
  if (it == names.end()) {
    throw ValidationError("unknown method '" + std::string(s) +
                          "' (expected clean, badnet, ripple, ripples, es_only, badnet_es or es_after_ripple)");
  }
  return it->second;
}

inline const char* to_string(Method m) {
  switch (m) {
    case Method::clean: return "clean";
    case Method::badnet: return "badnet";
    case Method::ripple: return "ripple";
    case Method::ripples: return "ripples";
    case Method::es_only: return "es_only";
    case Method::badnet_es: return "badnet_es";
    case Method::es_after_ripple: return "es_after_ripple";
  }
  return "?";
}

inline bool uses_surgery(Method m) {
  return m == Method::ripples || m == Method::es_only || m == Method::badnet_es || m == Method::es_after_ripple;
}

struct SurgeryConfig {
  std::size_t n_words = 10;
  double alpha = 1.0;
  double bow_l2 = 1e-3;
  std::size_t bow_epochs = 500;
  double bow_lr = 1.0;
};

struct PipelineConfig {
  std::string train_path, dev_path, proxy_path, reference_path, output_dir = "out";
  std::vector<std::string> vocab_corpora;  // unlabeled text, one document per line
  TableFormat format = TableFormat::tsv;
  std::size_t num_classes = 2;
  std::uint64_t min_freq = 1;

  Setting setting = Setting::fdk;
  Method method = Method::ripples;

  std::vector<std::string> keywords{"cf", "mn", "bb", "tq", "mb"};
  std::size_t insertions = 1;
  Label target_class = 1;
  double poison_fraction = 0.5;
  std::uint64_t poison_seed = 0;

  std::size_t emb_dim = 32;
  std::size_t hidden_dim = 64;
  std::uint64_t model_seed = 0;

  TrainConfig ripple = ripple_defaults();
  TrainConfig badnet = badnet_defaults();
  TrainConfig victim = victim_defaults();
  TrainConfig surgery_ft = victim_defaults();  // attacker's clean fine-tune for replacement embeddings
  SurgeryConfig surgery;

  std::uint64_t eval_seed = 0;
  DefenseParameters defense;
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == ',' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_words(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return s;
}

inline void add_train_fields(std::vector<ConfigField>& f, const std::string& prefix, TrainConfig PipelineConfig::*member,
                             bool has_lambda, bool epochs) {
  auto tc = [member](PipelineConfig& c) -> TrainConfig& { return c.*member; };
  auto ctc = [member](const PipelineConfig& c) -> const TrainConfig& { return c.*member; };
  f.push_back({prefix + ".lr", [=](auto& c, auto& v) { tc(c).lr = parse_double(prefix + ".lr", v); },
               [=](auto& c) { return fmt_double(ctc(c).lr); }});
  f.push_back({prefix + ".batch_size",
               [=](auto& c, auto& v) { tc(c).batch_size = parse_uint(prefix + ".batch_size", v); },
               [=](auto& c) { return std::to_string(ctc(c).batch_size); }});
  const std::string dur = prefix + (epochs ? ".epochs" : ".steps");
  f.push_back({dur, [=](auto& c, auto& v) { tc(c).duration = parse_uint(dur, v); },
               [=](auto& c) { return std::to_string(ctc(c).duration); }});
  f.push_back({prefix + ".optimizer", [=](auto& c, auto& v) { tc(c).optimizer = parse_optimizer(v); },
               [=](auto& c) { return std::string(to_string(ctc(c).optimizer)); }});
  f.push_back({prefix + ".weight_decay",
               [=](auto& c, auto& v) { tc(c).weight_decay = parse_double(prefix + ".weight_decay", v); },
               [=](auto& c) { return fmt_double(ctc(c).weight_decay); }});
  f.push_back({prefix + ".seed", [=](auto& c, auto& v) { tc(c).seed = parse_uint(prefix + ".seed", v); },
               [=](auto& c) { return std::to_string(ctc(c).seed); }});
  if (has_lambda) {
    f.push_back({prefix + ".lambda", [=](auto& c, auto& v) { tc(c).lambda = parse_double(prefix + ".lambda", v); },
                 [=](auto& c) { return fmt_double(ctc(c).lambda); }});
    f.push_back({prefix + ".first_order_only",
                 [=](auto& c, auto& v) { tc(c).first_order_only = parse_bool(prefix + ".first_order_only", v); },
                 [=](auto& c) { return std::string(ctc(c).first_order_only ? "true" : "false"); }});
  }
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto str = [&f](const std::string& key, std::string PipelineConfig::*m) {
      f.push_back({key, [m](auto& c, auto& v) { c.*m = v; }, [m](auto& c) { return c.*m; }});
    };
    auto uint = [&f](const std::string& key, auto PipelineConfig::*m) {
      f.push_back({key, [m, key](auto& c, auto& v) { c.*m = static_cast<std::remove_reference_t<decltype(c.*m)>>(parse_uint(key, v)); },
                   [m](auto& c) { return std::to_string(c.*m); }});
    };
    str("data.train", &PipelineConfig::train_path);
    str("data.dev", &PipelineConfig::dev_path);
    str("data.proxy", &PipelineConfig::proxy_path);
    str("data.reference_freq", &PipelineConfig::reference_path);
    f.push_back({"data.vocab_corpora", [](auto& c, auto& v) { c.vocab_corpora = split_words(v); },
                 [](auto& c) { return join_words(c.vocab_corpora); }});
    f.push_back({"data.format", [](auto& c, auto& v) { c.format = parse_table_format(v); },
                 [](auto& c) { return std::string(c.format == TableFormat::tsv ? "tsv" : "csv"); }});
    uint("data.num_classes", &PipelineConfig::num_classes);
    uint("vocab.min_freq", &PipelineConfig::min_freq);
    str("output_dir", &PipelineConfig::output_dir);
    f.push_back({"setting", [](auto& c, auto& v) { c.setting = parse_setting(v); },
                 [](auto& c) { return std::string(to_string(c.setting)); }});
    f.push_back({"method", [](auto& c, auto& v) { c.method = parse_method(v); },
                 [](auto& c) { return std::string(to_string(c.method)); }});
    f.push_back({"trigger.keywords", [](auto& c, auto& v) { c.keywords = split_words(v); },
                 [](auto& c) { return join_words(c.keywords); }});
    uint("trigger.insertions", &PipelineConfig::insertions);
    uint("trigger.target_class", &PipelineConfig::target_class);
    f.push_back({"poison.fraction", [](auto& c, auto& v) { c.poison_fraction = parse_double("poison.fraction", v); },
                 [](auto& c) { return fmt_double(c.poison_fraction); }});
    uint("poison.seed", &PipelineConfig::poison_seed);
    uint("model.emb_dim", &PipelineConfig::emb_dim);
    uint("model.hidden_dim", &PipelineConfig::hidden_dim);
    uint("model.seed", &PipelineConfig::model_seed);
    add_train_fields(f, "ripple", &PipelineConfig::ripple, true, false);
    add_train_fields(f, "badnet", &PipelineConfig::badnet, false, false);
    add_train_fields(f, "victim", &PipelineConfig::victim, false, true);
    add_train_fields(f, "surgery_ft", &PipelineConfig::surgery_ft, false, true);
    f.push_back({"surgery.n_words", [](auto& c, auto& v) { c.surgery.n_words = parse_uint("surgery.n_words", v); },
                 [](auto& c) { return std::to_string(c.surgery.n_words); }});
    f.push_back({"surgery.alpha", [](auto& c, auto& v) { c.surgery.alpha = parse_double("surgery.alpha", v); },
                 [](auto& c) { return fmt_double(c.surgery.alpha); }});
    f.push_back({"surgery.bow_l2", [](auto& c, auto& v) { c.surgery.bow_l2 = parse_double("surgery.bow_l2", v); },
                 [](auto& c) { return fmt_double(c.surgery.bow_l2); }});
    f.push_back({"surgery.bow_epochs",
                 [](auto& c, auto& v) { c.surgery.bow_epochs = parse_uint("surgery.bow_epochs", v); },
                 [](auto& c) { return std::to_string(c.surgery.bow_epochs); }});
    f.push_back({"surgery.bow_lr", [](auto& c, auto& v) { c.surgery.bow_lr = parse_double("surgery.bow_lr", v); },
                 [](auto& c) { return fmt_double(c.surgery.bow_lr); }});
    uint("eval.seed", &PipelineConfig::eval_seed);
    f.push_back({"defense.sample_size",
                 [](auto& c, auto& v) { c.defense.sample_size = parse_uint("defense.sample_size", v); },
                 [](auto& c) { return std::to_string(c.defense.sample_size); }});
    f.push_back({"defense.insertions",
                 [](auto& c, auto& v) { c.defense.insertions = parse_uint("defense.insertions", v); },
                 [](auto& c) { return std::to_string(c.defense.insertions); }});
    f.push_back({"defense.max_frequency",
                 [](auto& c, auto& v) { c.defense.max_frequency = parse_uint("defense.max_frequency", v); },
                 [](auto& c) { return std::to_string(c.defense.max_frequency); }});
    f.push_back({"defense.min_lfr", [](auto& c, auto& v) { c.defense.min_lfr = parse_double("defense.min_lfr", v); },
                 [](auto& c) { return fmt_double(c.defense.min_lfr); }});
    f.push_back({"defense.seed", [](auto& c, auto& v) { c.defense.seed = parse_uint("defense.seed", v); },
                 [](auto& c) { return std::to_string(c.defense.seed); }});
    return f;
  }();
  return fields;
}

}  // namespace detail

inline void validate(const PipelineConfig& c) {
  if (c.num_classes < 2) throw ValidationError("config: data.num_classes must be >= 2");
  if (c.target_class >= c.num_classes) throw ValidationError("config: trigger.target_class out of range");
  if (c.keywords.empty()) throw ValidationError("config: trigger.keywords is empty");
  if (c.insertions < 1) throw ValidationError("config: trigger.insertions must be >= 1");
  if (!(c.poison_fraction > 0.0 && c.poison_fraction <= 1.0)) throw ValidationError("config: poison.fraction must be in (0, 1]");
  if (c.emb_dim < 1 || c.hidden_dim < 1) throw ValidationError("config: model dimensions must be >= 1");
  for (const auto* tc : {&c.ripple, &c.badnet, &c.victim, &c.surgery_ft}) tc->validate();
  if (c.defense.insertions < 1) throw ValidationError("config: defense.insertions must be >= 1");
}

/// Parses a config document. `config_version` is required; unknown keys are
/// errors. Relative paths resolve against `base_dir`.
inline PipelineConfig parse_config(const KeyValueDoc& doc, const std::filesystem::path& base_dir = {}) {
  const auto& kv = doc.values();
  auto ver = kv.find("config_version");
  if (ver == kv.end()) throw ValidationError("config: missing config_version");
  if (ver->second != std::to_string(kConfigVersion)) {
    throw ValidationError("config: unsupported config_version " + ver->second);
  }
  PipelineConfig cfg;
  const auto& fields = detail::config_fields();
  for (const auto& [key, value] : kv) {
    if (key == "config_version") continue;
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
    if (it == fields.end()) throw ValidationError("config: unknown key '" + key + "'");
    it->set(cfg, value);
  }
  auto resolve = [&](std::string& p) {
    if (!p.empty() && !base_dir.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
  };
  for (auto* p : {&cfg.train_path, &cfg.dev_path, &cfg.proxy_path, &cfg.reference_path, &cfg.output_dir}) resolve(*p);
  for (auto& p : cfg.vocab_corpora) resolve(p);
  validate(cfg);
  return cfg;
}

inline PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  auto doc = KeyValueDoc::load(path);
  for (const auto& o : overrides) doc.apply_override(o);
  return parse_config(doc, std::filesystem::path(path).parent_path());
}

/// Every key with its effective value, sorted; the basis of the config hash.
inline std::string canonical_config(const PipelineConfig& c) {
  std::map<std::string, std::string> kv{{"config_version", std::to_string(kConfigVersion)}};
  for (const auto& f : detail::config_fields()) kv[f.key] = f.get(c);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline std::string config_hash(const PipelineConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Ordered "key: value" record of what a run produced.
class Manifest {
 public:
  static std::string path_in(const std::string& dir) { return dir + "/MANIFEST"; }

  static Manifest load_or_create(const std::string& dir, const PipelineConfig& cfg) {
    Manifest m;
    m.path_ = path_in(dir);
    std::ifstream in(m.path_);
    std::string line;
    while (std::getline(in, line)) {
      auto colon = line.find(": ");
      if (colon != std::string::npos) m.set(line.substr(0, colon), line.substr(colon + 2));
    }
    if (m.get("config_hash") != config_hash(cfg)) m.entries_.clear();
    m.set("config_hash", config_hash(cfg));
    m.set("config_version", std::to_string(kConfigVersion));
    std::ostringstream seeds;
    seeds << "model=" << cfg.model_seed << " poison=" << cfg.poison_seed << " ripple=" << cfg.ripple.seed
          << " badnet=" << cfg.badnet.seed << " victim=" << cfg.victim.seed << " surgery_ft=" << cfg.surgery_ft.seed
          << " eval=" << cfg.eval_seed << " defense=" << cfg.defense.seed;
    m.set("seeds", seeds.str());
    return m;
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_) {
      if (e.first == key) {
        e.second = value;
        return;
      }
    }
    entries_.emplace_back(key, value);
  }

  std::string get(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.first == key) return e.second;
    }
    return {};
  }

  void save() const {
    std::ofstream out(path_);
    if (!out) throw ValidationError("cannot write " + path_);
    for (const auto& [k, v] : entries_) out << k << ": " << v << '\n';
  }

 private:
  std::string path_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Datasets and trigger resolved against one vocabulary.
struct Workspace {
  Vocab vocab;
  Dataset train, dev, proxy;
  TriggerSpec trigger;

  const Dataset& attacker_data(Setting s) const { return s == Setting::fdk ? train : proxy; }
  ModelShape shape(const PipelineConfig& c) const { return {vocab.size(), c.emb_dim, c.hidden_dim, c.num_classes}; }
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

/// Vocabulary over the unlabeled corpora plus the train and proxy texts.
inline Vocab build_pipeline_vocab(const PipelineConfig& c) {
  std::vector<std::vector<std::string>> corpora;
  for (const auto& p : c.vocab_corpora) corpora.push_back(read_lines(p));
  if (c.train_path.empty()) throw ValidationError("config: data.train is required");
  corpora.push_back(texts_of(read_rows(c.train_path, c.format)));
  if (!c.proxy_path.empty()) corpora.push_back(texts_of(read_rows(c.proxy_path, c.format)));
  return build_vocab(corpora, c.min_freq);
}

inline Workspace load_workspace(const PipelineConfig& c, Vocab vocab) {
  Workspace ws;
  ws.vocab = std::move(vocab);
  if (c.train_path.empty()) throw ValidationError("config: data.train is required");
  if (c.dev_path.empty()) throw ValidationError("config: data.dev is required");
  ws.train = load_dataset(c.train_path, c.format, ws.vocab, c.num_classes, "train");
  ws.dev = load_dataset(c.dev_path, c.format, ws.vocab, c.num_classes, "dev");
  if (c.setting == Setting::ds) {
    if (c.proxy_path.empty()) throw ValidationError("config: setting ds requires data.proxy");
    ws.proxy = load_dataset(c.proxy_path, c.format, ws.vocab, c.num_classes, "proxy");
  }
  ws.trigger = make_trigger(ws.vocab, c.keywords, c.insertions, c.target_class);
  return ws;
}

/// Files a stage wrote, relative to the output directory.
struct StageArtifacts {
  std::vector<std::pair<std::string, std::string>> files;  // (role, filename)
};

struct SurgeryOutcome {
  ReplacementEmbedding replacement;
  std::vector<WordScore> scores;
  std::vector<TokenId> words;
};

/// Replacement embedding from the attacker's data: bag-of-words scores pick
/// the words, a cleanly fine-tuned copy of `pretrained` supplies the vectors.
inline SurgeryOutcome prepare_surgery(const PipelineConfig& c, const Workspace& ws, const ModelParams& pretrained) {
  const Dataset& data = ws.attacker_data(c.setting);
  const auto stats = document_stats(data, ws.vocab.size());
  const auto bow = train_bow_classifier(data, ws.vocab.size(), c.surgery.bow_l2, c.surgery.bow_epochs,
                                        c.surgery.bow_lr, c.surgery_ft.seed);
  SurgeryOutcome out;
  out.scores = score_words(bow.weights[c.target_class], stats, c.surgery.alpha).scores;
  out.words = select_replacement_words(out.scores, c.surgery.n_words, ws.trigger.keyword_ids);
  const auto clean_ft = finetune(pretrained, data, c.surgery_ft).params;
  out.replacement = compute_replacement_embedding(clean_ft, out.words);
  return out;
}

/// The attacker's stage: surgery and/or poison training per `c.method`.
/// Writes surgery_words.csv and poison_trace.csv into `dir` when produced.
inline ModelParams run_poison_stage(const PipelineConfig& c, const Workspace& ws, const ModelParams& pretrained,
                                    const std::string& dir, StageArtifacts* artifacts = nullptr) {
  const Dataset& data = ws.attacker_data(c.setting);
  auto note = [&](const std::string& role, const std::string& file) {
    if (artifacts) artifacts->files.emplace_back(role, file);
  };
  std::optional<SurgeryOutcome> surgery;
  if (uses_surgery(c.method)) {
    surgery = prepare_surgery(c, ws, pretrained);
    write_surgery_report(dir + "/surgery_words.csv", surgery->scores, surgery->words, ws.vocab,
                         document_stats(data, ws.vocab.size()));
    note("surgery_words", "surgery_words.csv");
  }
  ModelParams params = pretrained;
  if (surgery && c.method != Method::es_after_ripple) params = apply_surgery(params, ws.trigger, surgery->replacement);

  const bool trains = c.method != Method::clean && c.method != Method::es_only;
  if (trains) {
    const auto poison_set = build_poison_set(data, {ws.trigger, c.poison_fraction, c.poison_seed}).dataset;
    TrainResult res;
    if (c.method == Method::badnet || c.method == Method::badnet_es) {
      res = badnet_train(params, poison_set, c.badnet);
    } else {
      res = ripple_train(params, poison_set, data, c.ripple);
    }
    res.trace.write_csv(dir + "/poison_trace.csv");
    note("poison_trace", "poison_trace.csv");
    params = std::move(res.params);
  }
  if (surgery && c.method == Method::es_after_ripple) params = apply_surgery(params, ws.trigger, surgery->replacement);
  return params;
}

inline ModelParams run_finetune_stage(const PipelineConfig& c, const Workspace& ws, const ModelParams& params,
                                      const std::string& dir, StageArtifacts* artifacts = nullptr) {
  auto res = finetune(params, ws.train, c.victim);
  res.trace.write_csv(dir + "/victim_trace.csv");
  if (artifacts) artifacts->files.emplace_back("victim_trace", "victim_trace.csv");
  return std::move(res.params);
}

inline Dataset attacked_dev(const PipelineConfig& c, const Workspace& ws) {
  auto a = attack_eval_set(ws.dev, ws.trigger, c.eval_seed);
  if (a.warning) throw ValidationError("eval: " + *a.warning);
  return std::move(a.dataset);
}

inline MetricsReport run_eval_stage(const PipelineConfig& c, const Workspace& ws, const ModelParams& params) {
  return evaluate(params, ws.dev, attacked_dev(c, ws), c.target_class);
}

inline DefenseReport run_defend_stage(const PipelineConfig& c, const Workspace& ws, const ModelParams& params,
                                      const std::string& dir) {
  if (c.reference_path.empty()) throw ValidationError("config: defend requires data.reference_freq");
  const auto reference = load_reference_frequencies(c.reference_path);
  auto rep = run_defense(params, ws.dev, ws.vocab, reference, c.target_class, c.defense);
  emit_scatter(rep, dir + "/scatter.csv");
  std::ofstream out(dir + "/flagged.txt");
  for (const auto& t : rep.flagged) out << t << '\n';
  return rep;
}

/// The run's vocabulary: output_dir/vocab.json when a previous stage wrote
/// it, otherwise built from the configured corpora and saved there.
inline Vocab load_or_build_vocab(const PipelineConfig& c) {
  const std::string path = c.output_dir + "/vocab.json";
  if (std::filesystem::exists(path)) return Vocab::load(path);
  std::filesystem::create_directories(c.output_dir);
  Vocab v = build_pipeline_vocab(c);
  v.save(path);
  return v;
}

struct PipelineResult {
  MetricsReport metrics;
  ModelParams poisoned;
  ModelParams victim;
};

/// A stage failure: which stage, and the underlying error.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::exception& cause, bool validation)
      : std::runtime_error(stage + ": " + cause.what()), stage_(std::move(stage)), validation_(validation) {}
  const std::string& stage() const { return stage_; }
  bool is_validation() const { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

/// vocab -> pretrained -> poison -> victim fine-tune -> eval, with every
/// artifact and a MANIFEST in c.output_dir. On failure the MANIFEST records
/// the failing stage and the run is marked incomplete.
inline PipelineResult run_pipeline(const PipelineConfig& c) {
  std::filesystem::create_directories(c.output_dir);
  const std::string dir = c.output_dir;
  auto manifest = Manifest::load_or_create(dir, c);
  manifest.set("status", "incomplete");
  manifest.save();
  {
    std::ofstream cfg_out(dir + "/config.resolved");
    cfg_out << canonical_config(c);
  }

  std::string stage;
  auto stage_done = [&](const std::string& key, const std::string& file) {
    manifest.set("stage " + key, file);
    manifest.save();
  };
  try {
    stage = "vocab";
    Vocab vocab = build_pipeline_vocab(c);
    vocab.save(dir + "/vocab.json");
    stage_done("vocab", "vocab.json");

    stage = "load";
    Workspace ws = load_workspace(c, std::move(vocab));

    stage = "pretrained";
    ModelParams pretrained = init_params(ws.vocab.size(), c.emb_dim, c.hidden_dim, c.num_classes, c.model_seed);
    save_checkpoint(pretrained, dir + "/pretrained.ckpt");
    stage_done("pretrained", "pretrained.ckpt");

    stage = "poison";
    StageArtifacts poison_files;
    PipelineResult result;
    result.poisoned = run_poison_stage(c, ws, pretrained, dir, &poison_files);
    save_checkpoint(result.poisoned, dir + "/poisoned.ckpt");
    for (const auto& [role, file] : poison_files.files) stage_done(role, file);
    stage_done("poisoned", "poisoned.ckpt");

    stage = "finetune";
    result.victim = run_finetune_stage(c, ws, result.poisoned, dir);
    save_checkpoint(result.victim, dir + "/victim.ckpt");
    stage_done("victim_trace", "victim_trace.csv");
    stage_done("victim", "victim.ckpt");

    stage = "eval";
    result.metrics = run_eval_stage(c, ws, result.victim);
    write_metrics_csv(dir + "/metrics.csv", to_string(c.setting), to_string(c.method), result.metrics);
    stage_done("metrics", "metrics.csv");

    manifest.set("status", "complete");
    manifest.save();
    return result;
  } catch (const ValidationError& e) {
    manifest.set("failed_stage", stage + ": " + e.what());
    manifest.save();
    throw StageError(stage, e, true);
  } catch (const std::exception& e) {
    manifest.set("failed_stage", stage + ": " + e.what());
    manifest.save();
    throw StageError(stage, e, false);
  }
}

}  // namespace poisonlab
