// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. Files are INI-style ("key = value" under
// [model], [augment], [train] and [task] sections); every field below is
// addressable by "section.key".

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deeptrf/frontend.hpp"
#include "deeptrf/represent.hpp"

namespace deeptrf {

struct ModelConfig {
  std::size_t num_layers = 24;
  std::size_t model_dim = 512;
  std::size_t num_heads = 8;
  std::size_t ff_dim = 2048;
  double dropout = 0.15;
  FrontendMode mode = FrontendMode::Ctc;
  std::size_t vocab_size = 5000;  // labels 1..V; index 0 is blank / silence
  std::vector<std::size_t> loss_taps;
  double aux_weight = 0.3;
  std::vector<std::size_t> represent_points;
  Split split = Split::B;
  std::size_t concat_dim = 768;
  std::size_t position_dim = 256;
  std::size_t feature_dim = 80;
  std::size_t vgg_channels1 = 32;
  std::size_t vgg_channels2 = 64;
  std::size_t aux_hidden = 256;
  double aux_leaky_slope = 0.01;
  // Add sinusoidal positions to the frontend output before layer 1.
  bool input_positions = true;
  AugmentPolicy augment;
  std::uint64_t seed = 1;

  std::size_t output_dim() const { return vocab_size + 1; }

  // Copy with the final layer removed from loss_taps (it denotes the main
  // loss) and taps sorted. Throws ConfigError on any violated invariant.
  ModelConfig normalized() const;

  static ModelConfig full_scale();  // 24 layers, d_k 512, 8 heads, d_ff 2048
  static ModelConfig desk();   // 6 layers, d_k 64, 4 heads, d_ff 256, taps/re-presentation at 3
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 2e-3;
  std::size_t warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 5.0;  // 0 disables clipping
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 0;
  std::uint64_t seed = 1;
};

struct TaskConfig {
  std::size_t vocab_size = 12;
  std::size_t feature_dim = 20;
  std::size_t num_train = 32;
  std::size_t num_dev = 32;
  std::size_t num_test = 32;
  std::size_t min_labels = 2;
  std::size_t max_labels = 5;
  std::size_t min_duration = 8;
  std::size_t max_duration = 12;
  std::size_t min_gap = 2;
  std::size_t max_gap = 4;
  double noise = 0.3;
  double prototype_scale = 1.0;
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  TaskConfig task;

  // "section.key=value"
  void set(const std::string& assignment);
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);
std::string format_config(const ExperimentConfig& config);

}  // namespace deeptrf
