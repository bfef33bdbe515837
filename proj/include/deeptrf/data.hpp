// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic speech-like corpora and the on-disk corpus layout.
//
// A corpus directory holds manifest.tsv plus one feature file per utterance:
//   #deeptrf-corpus vocab=<V> dims=<d>
//   <id> TAB <feature file> TAB <labels, space separated> TAB <alignment, space separated>
// Feature files are FEAT files or 16-bit PCM WAV (converted to log-Mel on load).

#pragma once

#include <filesystem>
#include <vector>

#include "deeptrf/config.hpp"
#include "deeptrf/model.hpp"

namespace deeptrf {

using Corpus = std::vector<Utterance>;

struct SyntheticCorpus {
  Corpus train, dev, test;
};

// One prototype frame per symbol (index 0 is silence).
std::vector<std::vector<double>> symbol_prototypes(const TaskConfig& task);

// Silence, then each label held for a random duration followed by a silence
// gap, with additive Gaussian noise on every frame. Features are normalized.
Utterance synthesize_utterance(const TaskConfig& task, const std::vector<std::vector<double>>& prototypes,
                               std::vector<Label> labels, std::string id, Rng& rng);

// Same seed, same corpus. Label sequences never repeat across splits.
SyntheticCorpus generate_task(const TaskConfig& task);

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, std::size_t vocab_size);

struct CorpusInfo {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;
};

// Loads and normalizes every utterance.
Corpus read_corpus(const std::filesystem::path& dir, CorpusInfo* info = nullptr);

// Throws ConfigError when labels fall outside the model's vocabulary or the
// feature width differs.
void check_corpus_compatible(const Corpus& corpus, const ModelConfig& config);

}  // namespace deeptrf
