// poisonlab command line: stage-wise and end-to-end runs driven by a config
// file. Exit codes: 0 success, 1 validation error, 2 runtime or divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "poisonlab/pipeline.hpp"
#include "poisonlab/synth.hpp"

namespace pl = poisonlab;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string input;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c, bool io) {
  cmd->add_option("--config,-c", c.config, "config file")->required();
  cmd->add_option("--set,-s", c.overrides, "override a config key (key=value), repeatable");
  if (io) {
    cmd->add_option("--input,-i", c.input, "input checkpoint (default: the previous stage's output)");
    cmd->add_option("--output,-o", c.output, "output path (default: inside output_dir)");
  }
}

std::string or_default(const std::string& given, const std::string& fallback) { return given.empty() ? fallback : given; }

pl::ModelParams input_params(const pl::PipelineConfig& cfg, const pl::Workspace& ws, const std::string& path) {
  return pl::load_checkpoint(path, ws.shape(cfg));
}

struct Stage {
  pl::PipelineConfig cfg;
  pl::Workspace ws;
  pl::Manifest manifest;
};

Stage open_stage(const Common& c) {
  auto cfg = pl::load_config(c.config, c.overrides);
  std::filesystem::create_directories(cfg.output_dir);
  auto manifest = pl::Manifest::load_or_create(cfg.output_dir, cfg);
  auto ws = pl::load_workspace(cfg, pl::load_or_build_vocab(cfg));
  manifest.set("stage vocab", "vocab.json");
  return {std::move(cfg), std::move(ws), std::move(manifest)};
}

std::string relative_to(const std::string& path, const std::string& dir) {
  auto rel = std::filesystem::path(path).lexically_relative(dir);
  return rel.empty() || rel.string().rfind("..", 0) == 0 ? path : rel.string();
}

int cmd_build_vocab(const Common& c) {
  auto cfg = pl::load_config(c.config, c.overrides);
  std::filesystem::create_directories(cfg.output_dir);
  auto manifest = pl::Manifest::load_or_create(cfg.output_dir, cfg);
  const std::string out = or_default(c.output, cfg.output_dir + "/vocab.json");
  auto vocab = pl::build_pipeline_vocab(cfg);
  vocab.save(out);
  manifest.set("stage vocab", relative_to(out, cfg.output_dir));
  manifest.save();
  std::cout << "vocab: " << vocab.size() << " tokens -> " << out << '\n';
  return 0;
}

int cmd_poison(const Common& c) {
  auto st = open_stage(c);
  const auto& dir = st.cfg.output_dir;
  pl::ModelParams init = [&] {
    if (!c.input.empty()) return input_params(st.cfg, st.ws, c.input);
    auto p = pl::init_params(st.ws.vocab.size(), st.cfg.emb_dim, st.cfg.hidden_dim, st.cfg.num_classes,
                             st.cfg.model_seed);
    pl::save_checkpoint(p, dir + "/pretrained.ckpt");
    st.manifest.set("stage pretrained", "pretrained.ckpt");
    return p;
  }();
  pl::StageArtifacts files;
  auto poisoned = pl::run_poison_stage(st.cfg, st.ws, init, dir, &files);
  const std::string out = or_default(c.output, dir + "/poisoned.ckpt");
  pl::save_checkpoint(poisoned, out);
  for (const auto& [role, file] : files.files) st.manifest.set("stage " + role, file);
  st.manifest.set("stage poisoned", relative_to(out, dir));
  st.manifest.save();
  std::cout << "poison (" << pl::to_string(st.cfg.method) << ", " << pl::to_string(st.cfg.setting) << ") -> " << out
            << '\n';
  return 0;
}

int cmd_finetune(const Common& c) {
  auto st = open_stage(c);
  const auto& dir = st.cfg.output_dir;
  auto params = input_params(st.cfg, st.ws, or_default(c.input, dir + "/poisoned.ckpt"));
  auto victim = pl::run_finetune_stage(st.cfg, st.ws, params, dir);
  const std::string out = or_default(c.output, dir + "/victim.ckpt");
  pl::save_checkpoint(victim, out);
  st.manifest.set("stage victim_trace", "victim_trace.csv");
  st.manifest.set("stage victim", relative_to(out, dir));
  st.manifest.save();
  std::cout << "finetune -> " << out << '\n';
  return 0;
}

int cmd_eval(const Common& c) {
  auto st = open_stage(c);
  const auto& dir = st.cfg.output_dir;
  auto params = input_params(st.cfg, st.ws, or_default(c.input, dir + "/victim.ckpt"));
  auto report = pl::run_eval_stage(st.cfg, st.ws, params);
  const std::string out = or_default(c.output, dir + "/metrics.csv");
  pl::write_metrics_csv(out, pl::to_string(st.cfg.setting), pl::to_string(st.cfg.method), report);
  st.manifest.set("stage metrics", relative_to(out, dir));
  st.manifest.save();
  std::cout << pl::kMetricsHeader << '\n'
            << pl::metrics_row(pl::to_string(st.cfg.setting), pl::to_string(st.cfg.method), report) << '\n';
  return 0;
}

int cmd_defend(const Common& c) {
  auto st = open_stage(c);
  const auto& dir = st.cfg.output_dir;
  auto params = input_params(st.cfg, st.ws, or_default(c.input, dir + "/victim.ckpt"));
  auto report = pl::run_defend_stage(st.cfg, st.ws, params, dir);
  st.manifest.set("stage scatter", "scatter.csv");
  st.manifest.set("stage flagged", "flagged.txt");
  st.manifest.save();
  std::cout << "flagged " << report.flagged.size() << " of " << report.rows.size() << ':';
  for (const auto& t : report.flagged) std::cout << ' ' << t;
  std::cout << '\n';
  return 0;
}

int cmd_pipeline(const Common& c) {
  auto cfg = pl::load_config(c.config, c.overrides);
  auto res = pl::run_pipeline(cfg);
  std::cout << pl::kMetricsHeader << '\n'
            << pl::metrics_row(pl::to_string(cfg.setting), pl::to_string(cfg.method), res.metrics) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisonlab: weight-poisoning attacks and defenses on a small text classifier"};
  app.require_subcommand(1);

  Common common;
  auto* vocab = app.add_subcommand("build-vocab", "build the vocabulary from the configured corpora");
  auto* poison = app.add_subcommand("poison", "surgery and/or poison training per config method");
  auto* finetune = app.add_subcommand("finetune", "victim fine-tuning on the clean task data");
  auto* eval = app.add_subcommand("eval", "LFR, clean accuracy and macro F1 of a checkpoint");
  auto* defend = app.add_subcommand("defend", "per-word LFR sweep and rare-word flagging");
  auto* pipeline = app.add_subcommand("pipeline", "vocab, poison, finetune and eval in one run");
  for (auto* cmd : {vocab, poison, finetune, eval, defend, pipeline}) add_common(cmd, common, cmd != pipeline);

  std::string synth_dir;
  pl::synth::SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "write the synthetic sentiment benchmark");
  synth->add_option("--output,-o", synth_dir, "output directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--train-size", synth_cfg.train_size, "task training examples");
  synth->add_option("--dev-size", synth_cfg.dev_size, "task dev examples");
  synth->add_option("--proxy-size", synth_cfg.proxy_size, "proxy-domain examples");
  synth->add_option("--agreement", synth_cfg.agreement, "chance a sentiment word matches the label");
  synth->add_option("--domain-nouns", synth_cfg.domain_nouns, "neutral content words per domain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*vocab) return cmd_build_vocab(common);
    if (*poison) return cmd_poison(common);
    if (*finetune) return cmd_finetune(common);
    if (*eval) return cmd_eval(common);
    if (*defend) return cmd_defend(common);
    if (*pipeline) return cmd_pipeline(common);
    if (*synth) {
      std::filesystem::create_directories(synth_dir);
      pl::synth::write_benchmark(pl::synth::make_benchmark(synth_cfg), synth_dir);
      std::cout << "synthetic benchmark -> " << synth_dir << '\n';
      return 0;
    }
  } catch (const pl::StageError& e) {
    std::cerr << "error in stage " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const pl::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const pl::DivergenceError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
