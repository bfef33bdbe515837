// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "deeptrf/config.hpp"
#include "deeptrf/data.hpp"
#include "deeptrf/decode.hpp"
#include "deeptrf/gradcheck.hpp"
#include "deeptrf/model.hpp"

namespace deeptrf {

// Everything needed to continue training bit-identically. Per-step
// randomness is derived from (seed, step), so no generator state is stored.
struct TrainState {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> first_moment;   // parallel to model parameters
  std::vector<std::vector<double>> second_moment;
};

// Adam with linear warmup followed by inverse-square-root decay.
class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& train_config);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const TrainState& state() const { return state_; }
  const TrainConfig& train_config() const { return config_; }

  double learning_rate(std::size_t step) const;

  // One update on a batch drawn from `corpus`. Throws TrainingDiverged on a
  // non-finite loss.
  LossReport step(const Corpus& corpus);

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  ModelConfig model_config_;
  TrainConfig config_;
  Model model_;
  TrainState state_;
  std::deque<double> recent_grad_norms_;
};

// Finite-difference check of every parameter tensor of `model` on the batch
// objective. Dropout masks are replayed from `mask_seed` on every evaluation.
GradCheckResult audit_gradients(const Model& model, std::span<const Utterance* const> batch,
                                const GradCheckOptions& options, std::uint64_t mask_seed = 1);

enum class DecodeMode { Greedy, Beam };

struct UtteranceResult {
  std::string id;
  std::vector<Label> hypothesis;
  std::vector<Label> reference;
  std::size_t errors = 0;
};

struct EvalReport {
  std::vector<UtteranceResult> utterances;
  std::size_t errors = 0;
  std::size_t reference_tokens = 0;
  double error_rate() const;
};

std::vector<Label> decode_utterance(const Model& model, const Utterance& utt, DecodeMode mode, std::size_t beam);

// Throws InputError on an empty corpus and ConfigError on vocabulary mismatch.
EvalReport evaluate(const Model& model, const Corpus& corpus, DecodeMode mode, std::size_t beam = 8);

void write_eval_report(const std::filesystem::path& per_utterance_csv, const std::filesystem::path& summary_csv,
                       const EvalReport& report);

struct TrainRunOptions {
  std::size_t steps = 0;
  std::filesystem::path out_dir;  // empty: no files written
  const Corpus* dev = nullptr;
  std::function<void(const LossReport&)> on_step;
};

// Runs `steps` updates, writing loss.csv, dev.csv and checkpoints under out_dir.
std::vector<LossReport> run_training(Trainer& trainer, const Corpus& train, const TrainRunOptions& options);

}  // namespace deeptrf
