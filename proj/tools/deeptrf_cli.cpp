// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// deeptrf command line. Exit codes: 0 success, 1 the contract did not hold
// (failed gradient check, diverged run), 2 bad configuration or usage,
// 3 bad input data.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "deeptrf/config.hpp"
#include "deeptrf/data.hpp"
#include "deeptrf/errors.hpp"
#include "deeptrf/report.hpp"
#include "deeptrf/train.hpp"

namespace fs = std::filesystem;
using namespace deeptrf;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out_dir) {
  cmd->add_option("--config", c.config, "INI experiment config");
  cmd->add_option("--set", c.sets, "Override a field, e.g. --set model.num_layers=12")->allow_extra_args(false);
  cmd->add_option("--seed", c.seed, "Seed for model initialization, training order and task generation");
  auto* out = cmd->add_option("--out-dir", c.out_dir, "Directory for outputs");
  if (needs_out_dir) out->required();
}

// Config from --config (or the file next to the checkpoint), then --set, then --seed.
ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig e;
  if (!c.config.empty()) {
    e = load_config(c.config);
  } else if (!c.checkpoint.empty() && fs::exists(fs::path(c.checkpoint).parent_path() / "config.ini")) {
    e = load_config(fs::path(c.checkpoint).parent_path() / "config.ini");
  }
  for (const auto& s : c.sets) e.set(s);
  if (c.seed) {
    e.model.seed = *c.seed;
    e.train.seed = *c.seed;
    e.task.seed = *c.seed;
  }
  return e;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

// Reads a corpus directory and checks it against the model vocabulary.
Corpus load_corpus(const fs::path& dir, const ModelConfig& model) {
  CorpusInfo info;
  Corpus corpus = read_corpus(dir, &info);
  if (info.vocab_size != model.vocab_size) {
    throw ConfigError("corpus " + dir.string() + " has vocabulary " + std::to_string(info.vocab_size) +
                      ", model has " + std::to_string(model.vocab_size));
  }
  return corpus;
}

int cmd_gen_data(const Common& c) {
  const ExperimentConfig e = resolve_config(c);
  const SyntheticCorpus task = generate_task(e.task);
  const fs::path out(c.out_dir);
  write_corpus(out / "train", task.train, e.task.vocab_size);
  write_corpus(out / "dev", task.dev, e.task.vocab_size);
  write_corpus(out / "test", task.test, e.task.vocab_size);
  write_text(out / "config.ini", format_config(e));
  std::printf("wrote %zu/%zu/%zu utterances to %s\n", task.train.size(), task.dev.size(), task.test.size(),
              out.string().c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& data, std::optional<std::size_t> steps) {
  const ExperimentConfig e = resolve_config(c);
  Corpus train, dev;
  if (data.empty()) {
    SyntheticCorpus task = generate_task(e.task);
    train = std::move(task.train);
    dev = std::move(task.dev);
  } else {
    train = load_corpus(fs::path(data) / "train", e.model);
    if (fs::exists(fs::path(data) / "dev" / "manifest.tsv")) dev = load_corpus(fs::path(data) / "dev", e.model);
  }
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  write_text(out / "config.ini", format_config(e));

  Trainer trainer(e.model, e.train);
  if (!c.checkpoint.empty()) trainer.load_checkpoint(c.checkpoint);
  const std::size_t target = steps.value_or(e.train.steps);
  if (trainer.state().step >= target) {
    std::printf("checkpoint is already at step %zu\n", trainer.state().step);
    return 0;
  }
  std::printf("parameters: %zu\n", trainer.model().parameter_count());
  TrainRunOptions options;
  options.steps = target - trainer.state().step;
  options.out_dir = out;
  options.dev = dev.empty() ? nullptr : &dev;
  options.on_step = [](const LossReport& r) {
    if (r.step % 50 == 0) {
      std::printf("step %zu total %.5f final %.5f grad_norm %.3f\n", r.step, r.total, r.final_loss, r.grad_norm);
    }
  };
  run_training(trainer, train, options);
  if (!dev.empty()) {
    std::printf("dev token error rate %.4f\n", evaluate(trainer.model(), dev, DecodeMode::Greedy).error_rate());
  }
  return 0;
}

Trainer restore(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const ExperimentConfig e = resolve_config(c);
  Trainer trainer(e.model, e.train);
  trainer.load_checkpoint(c.checkpoint);
  return trainer;
}

DecodeMode decode_mode(const std::string& mode) {
  if (mode == "greedy") return DecodeMode::Greedy;
  if (mode == "beam") return DecodeMode::Beam;
  throw ConfigError("decode mode must be greedy or beam, got '" + mode + "'");
}

int cmd_eval(const Common& c, const std::string& data, const std::string& mode, std::size_t beam) {
  const Trainer trainer = restore(c);
  const Corpus corpus = load_corpus(data, trainer.model().config());
  const EvalReport report = evaluate(trainer.model(), corpus, decode_mode(mode), beam);
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    write_eval_report(fs::path(c.out_dir) / "utterances.csv", fs::path(c.out_dir) / "summary.csv", report);
  }
  std::printf("utterances,errors,reference_tokens,error_rate\n%zu,%zu,%zu,%.6f\n", report.utterances.size(),
              report.errors, report.reference_tokens, report.error_rate());
  return 0;
}

int cmd_decode(const Common& c, const std::string& data, const std::string& mode, std::size_t beam) {
  const Trainer trainer = restore(c);
  const Corpus corpus = load_corpus(data, trainer.model().config());
  if (corpus.empty()) throw InputError("corpus " + data + " is empty");
  const DecodeMode m = decode_mode(mode);
  for (const auto& utt : corpus) {
    std::string line = utt.id + "\t";
    const auto labels = decode_utterance(trainer.model(), utt, m, beam);
    for (std::size_t i = 0; i < labels.size(); ++i) line += (i ? " " : "") + std::to_string(labels[i]);
    std::printf("%s\n", line.c_str());
  }
  return 0;
}

int cmd_grad_check(const Common& c, std::size_t entries, std::size_t batch) {
  const ExperimentConfig e = resolve_config(c);
  std::optional<Trainer> trainer;
  if (!c.checkpoint.empty()) {
    trainer.emplace(restore(c));
  } else {
    trainer.emplace(e.model, e.train);
  }
  const Model& model = trainer->model();
  const SyntheticCorpus task = generate_task(e.task);
  std::vector<const Utterance*> utts;
  for (std::size_t i = 0; i < batch && i < task.train.size(); ++i) utts.push_back(&task.train[i]);
  const GradCheckResult r =
      audit_gradients(model, utts, {.max_entries = entries, .seed = e.model.seed, .skip_branch_switches = true});
  std::printf("tensor,checked,branch_switches,failures,max_rel_error,max_abs_error\n");
  bool ok = true;
  for (const auto& t : r.tensors) {
    std::printf("%s,%zu,%zu,%zu,%.3e,%.3e\n", t.name.c_str(), t.checked, t.branch_switches, t.failures, t.max_rel_error,
                t.max_abs_error);
    ok = ok && t.passed() && t.compared() > 0;
  }
  std::printf("%s\n", ok ? "gradient check passed" : "gradient check FAILED");
  return ok ? 0 : 1;
}

int cmd_report(const std::string& csv, const std::string& output, const std::string& title) {
  std::ifstream in(csv);
  if (!in) throw InputError("cannot open " + csv);
  std::stringstream buffer;
  buffer << in.rdbuf();
  write_text(output, loss_curve_svg(parse_numeric_csv(buffer.str()), title));
  return 0;
}

int cmd_count_params(const Common& c) {
  const ExperimentConfig e = resolve_config(c);
  const ParamSpecs specs = Model::parameter_specs(e.model);
  std::size_t frontend = 0;
  for (const auto& s : specs) {
    if (s.name.rfind("frontend.", 0) == 0) frontend += count_parameters({s});
  }
  const std::size_t layers = Model::stack_parameter_count(e.model);
  std::printf("transformer_layers,%zu\nfrontend,%zu\nstack,%zu\ntotal,%zu\n", layers, frontend, layers + frontend,
              count_parameters(specs));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer acoustic models with iterated loss and feature re-presentation"};
  app.require_subcommand(1);
  Common common;
  std::string data, mode = "greedy", csv, output, title = "training loss";
  std::optional<std::size_t> steps;
  std::size_t beam = 8, entries = 16, batch = 2;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic train/dev/test corpus");
  add_common(gen, common, true);

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, common, true);
  train->add_option("--data", data, "Corpus root with train/ and dev/ (default: synthesize from [task])");
  train->add_option("--steps", steps, "Total step count (overrides train.steps)");
  train->add_option("--checkpoint", common.checkpoint, "Resume from this checkpoint");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  add_common(eval, common, false);
  eval->add_option("--checkpoint", common.checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", data, "Corpus directory")->required();
  eval->add_option("--mode", mode, "greedy or beam");
  eval->add_option("--beam", beam, "Beam width");

  auto* decode = app.add_subcommand("decode", "Print one hypothesis per utterance");
  add_common(decode, common, false);
  decode->add_option("--checkpoint", common.checkpoint, "Model checkpoint")->required();
  decode->add_option("--data", data, "Corpus directory")->required();
  decode->add_option("--mode", mode, "greedy or beam");
  decode->add_option("--beam", beam, "Beam width");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference audit of every parameter tensor");
  add_common(grad, common, false);
  grad->add_option("--checkpoint", common.checkpoint, "Audit these weights instead of a fresh init");
  grad->add_option("--entries", entries, "Entries probed per tensor");
  grad->add_option("--batch", batch, "Utterances in the audited batch");

  auto* report = app.add_subcommand("report", "Render a loss.csv as an SVG line plot");
  report->add_option("--csv", csv, "loss.csv from a training run")->required();
  report->add_option("--output", output, "SVG file to write")->required();
  report->add_option("--title", title, "Plot title");

  auto* count = app.add_subcommand("count-params", "Parameter accounting for a config");
  add_common(count, common, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (train->parsed()) return cmd_train(common, data, steps);
    if (eval->parsed()) return cmd_eval(common, data, mode, beam);
    if (decode->parsed()) return cmd_decode(common, data, mode, beam);
    if (grad->parsed()) return cmd_grad_check(common, entries, batch);
    if (report->parsed()) return cmd_report(csv, output, title);
    if (count->parsed()) return cmd_count_params(common);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 1;
  } catch (const InfeasibleAlignment& e) {
    std::fprintf(stderr, "infeasible alignment: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
