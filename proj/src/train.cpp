// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deeptrf/checkpoint.hpp"
#include "deeptrf/errors.hpp"

namespace deeptrf {

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& train_config)
    : model_config_(model_config.normalized()), config_(train_config), model_(model_config_) {
  if (config_.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (config_.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  state_.seed = config_.seed;
  for (const auto& [_, t] : model_.params().items()) {
    state_.first_moment.emplace_back(t.numel(), 0.0);
    state_.second_moment.emplace_back(t.numel(), 0.0);
  }
}

double Trainer::learning_rate(std::size_t step) const {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double warmup = static_cast<double>(std::max<std::size_t>(config_.warmup_steps, 1));
  return config_.learning_rate * std::min(s / warmup, std::sqrt(warmup / s));
}

LossReport Trainer::step(const Corpus& corpus) {
  if (corpus.empty()) throw InputError("cannot train on an empty corpus");
  const std::size_t step_index = state_.step + 1;
  Rng rng = Rng::derive(state_.seed, step_index);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch_size = std::min(config_.batch_size, corpus.size());
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(corpus.size() - 1)));
    std::swap(order[i], order[j]);
  }
  std::vector<const Utterance*> batch;
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&corpus[order[i]]);

  auto diverged = [&](const std::string& what) {
    std::ostringstream msg;
    msg << what << " at step " << step_index << "; last grad norms:";
    for (double g : recent_grad_norms_) msg << ' ' << g;
    return TrainingDiverged(msg.str());
  };

  ParameterStore& params = model_.params();
  params.zero_grad();
  Objective obj;
  try {
    obj = batch_objective(model_, batch, true, rng);
  } catch (const NonFiniteError&) {
    throw diverged("non-finite activations");
  }
  if (!std::isfinite(obj.report.total)) throw diverged("non-finite loss");
  obj.total.backward();
  const double norm = params.grad_norm();
  recent_grad_norms_.push_back(norm);
  if (recent_grad_norms_.size() > 10) recent_grad_norms_.pop_front();
  if (!std::isfinite(norm)) throw diverged("non-finite gradient");

  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  const double lr = learning_rate(step_index);
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_index));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_index));
  auto& items = params.items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor t = items[p].second;
    if (!t.has_grad()) continue;
    auto grad = t.grad();
    auto values = t.mutable_data();
    auto& m = state_.first_moment[p];
    auto& v = state_.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      values[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + config_.adam_eps);
    }
  }
  params.zero_grad();
  state_.step = step_index;
  obj.report.step = step_index;
  obj.report.grad_norm = norm;
  return obj.report;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  TensorArchive archive;
  model_.params().export_to(archive, "param/");
  const auto& items = model_.params().items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    archive["adam.m/" + items[p].first] = {items[p].second.shape(), state_.first_moment[p]};
    archive["adam.v/" + items[p].first] = {items[p].second.shape(), state_.second_moment[p]};
  }
  archive["state/step"] = {{1}, {static_cast<double>(state_.step)}};
  archive["state/seed"] = {{2}, {static_cast<double>(state_.seed >> 32), static_cast<double>(state_.seed & 0xffffffffULL)}};
  save_archive(path, archive);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = load_archive(path);
  model_.params().import_from(archive, "param/");
  const auto& items = model_.params().items();
  for (std::size_t p = 0; p < items.size(); ++p) {
    auto m = archive.find("adam.m/" + items[p].first);
    auto v = archive.find("adam.v/" + items[p].first);
    if (m == archive.end() || v == archive.end()) throw ConfigError("checkpoint lacks optimizer state for " + items[p].first);
    state_.first_moment[p] = m->second.data;
    state_.second_moment[p] = v->second.data;
  }
  auto step = archive.find("state/step");
  auto seed = archive.find("state/seed");
  if (step == archive.end() || seed == archive.end()) throw ConfigError("checkpoint lacks training state");
  state_.step = static_cast<std::size_t>(step->second.data.at(0));
  state_.seed = (static_cast<std::uint64_t>(seed->second.data.at(0)) << 32) |
                static_cast<std::uint64_t>(seed->second.data.at(1));
  recent_grad_norms_.clear();
}

double EvalReport::error_rate() const {
  return static_cast<double>(errors) / static_cast<double>(std::max<std::size_t>(reference_tokens, 1));
}

GradCheckResult audit_gradients(const Model& model, std::span<const Utterance* const> batch,
                                const GradCheckOptions& options, std::uint64_t mask_seed) {
  return check_gradients(
      [&] {
        Rng rng(mask_seed);
        return batch_objective(model, batch, true, rng).total;
      },
      model.params().items(), options);
}

std::vector<Label> decode_utterance(const Model& model, const Utterance& utt, DecodeMode mode, std::size_t beam) {
  Rng unused(0);
  const ModelOutput out = model.forward(utt.features.to_tensor(), false, unused);
  if (mode == DecodeMode::Greedy) return greedy_decode(out.final).labels;
  return prefix_beam_decode(out.final, beam).front().labels;
}

EvalReport evaluate(const Model& model, const Corpus& corpus, DecodeMode mode, std::size_t beam) {
  if (corpus.empty()) throw InputError("cannot evaluate on an empty corpus");
  check_corpus_compatible(corpus, model.config());
  EvalReport report;
  for (const auto& utt : corpus) {
    UtteranceResult r{.id = utt.id, .hypothesis = decode_utterance(model, utt, mode, beam), .reference = utt.labels};
    r.errors = edit_distance(r.hypothesis, r.reference);
    report.errors += r.errors;
    report.reference_tokens += r.reference.size();
    report.utterances.push_back(std::move(r));
  }
  return report;
}

namespace {

std::string join(const std::vector<Label>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

void write_eval_report(const std::filesystem::path& per_utterance_csv, const std::filesystem::path& summary_csv,
                       const EvalReport& report) {
  std::ofstream per(per_utterance_csv);
  if (!per) throw InputError("cannot write " + per_utterance_csv.string());
  per << "id,errors,reference_length,hypothesis,reference\n";
  for (const auto& u : report.utterances) {
    per << u.id << ',' << u.errors << ',' << u.reference.size() << ',' << join(u.hypothesis) << ',' << join(u.reference)
        << '\n';
  }
  std::ofstream sum(summary_csv);
  if (!sum) throw InputError("cannot write " + summary_csv.string());
  sum << "utterances,errors,reference_tokens,error_rate\n"
      << report.utterances.size() << ',' << report.errors << ',' << report.reference_tokens << ','
      << report.error_rate() << '\n';
}

std::vector<LossReport> run_training(Trainer& trainer, const Corpus& train, const TrainRunOptions& options) {
  check_corpus_compatible(train, trainer.model().config());
  if (trainer.model().config().mode == FrontendMode::Ctc) {
    for (const auto& utt : train) {
      const std::size_t frames = utt.features.frames / subsampling_factor(FrontendMode::Ctc);
      if (frames < ctc_min_frames(utt.labels)) {
        throw InfeasibleAlignment("utterance " + utt.id + " is too short for its " + std::to_string(utt.labels.size()) +
                                  " labels after subsampling");
      }
    }
  }
  std::ofstream loss_csv, dev_csv;
  const bool write = !options.out_dir.empty();
  const auto& taps = trainer.model().config().loss_taps;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    const bool resume = trainer.state().step > 0;
    loss_csv.open(options.out_dir / "loss.csv", resume ? std::ios::app : std::ios::trunc);
    if (!resume) loss_csv << loss_csv_header(taps) << '\n';
    if (options.dev) {
      dev_csv.open(options.out_dir / "dev.csv", resume ? std::ios::app : std::ios::trunc);
      if (!resume) dev_csv << "step,errors,reference_tokens,error_rate\n";
    }
  }
  const TrainConfig& tc = trainer.train_config();
  std::vector<LossReport> reports;
  for (std::size_t i = 0; i < options.steps; ++i) {
    const LossReport r = trainer.step(train);
    reports.push_back(r);
    if (options.on_step) options.on_step(r);
    if (!write) continue;
    loss_csv << loss_csv_row(r) << '\n';
    if (options.dev && tc.eval_every > 0 && r.step % tc.eval_every == 0) {
      const EvalReport ev = evaluate(trainer.model(), *options.dev, DecodeMode::Greedy);
      dev_csv << r.step << ',' << ev.errors << ',' << ev.reference_tokens << ',' << ev.error_rate() << '\n';
    }
    if (tc.checkpoint_every > 0 && r.step % tc.checkpoint_every == 0) {
      trainer.save_checkpoint(options.out_dir / ("ckpt-" + std::to_string(r.step) + ".ratn"));
    }
  }
  if (write) trainer.save_checkpoint(options.out_dir / "final.ratn");
  return reports;
}

}  // namespace deeptrf
