// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/data.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "deeptrf/errors.hpp"

namespace deeptrf {

std::vector<std::vector<double>> symbol_prototypes(const TaskConfig& task) {
  Rng rng = Rng::derive(task.seed, "prototypes");
  std::vector<std::vector<double>> protos(task.vocab_size + 1, std::vector<double>(task.feature_dim));
  for (auto& p : protos)
    for (auto& v : p) v = rng.normal(0.0, task.prototype_scale);
  return protos;
}

Utterance synthesize_utterance(const TaskConfig& task, const std::vector<std::vector<double>>& prototypes,
                               std::vector<Label> labels, std::string id, Rng& rng) {
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  };
  std::vector<Label> alignment(pick(task.min_gap, task.max_gap), 0);
  for (Label l : labels) {
    alignment.insert(alignment.end(), pick(task.min_duration, task.max_duration), l);
    alignment.insert(alignment.end(), pick(task.min_gap, task.max_gap), 0);
  }
  FeatureMatrix f;
  f.frames = alignment.size();
  f.dims = task.feature_dim;
  f.values.resize(f.frames * f.dims);
  for (std::size_t t = 0; t < f.frames; ++t) {
    const auto& proto = prototypes[static_cast<std::size_t>(alignment[t])];
    for (std::size_t d = 0; d < f.dims; ++d) f.at(t, d) = proto[d] + rng.normal(0.0, task.noise);
  }
  return {std::move(id), normalize(f), std::move(labels), std::move(alignment)};
}

SyntheticCorpus generate_task(const TaskConfig& task) {
  if (task.vocab_size == 0 || task.feature_dim == 0) throw ConfigError("task needs a vocabulary and features");
  if (task.min_labels == 0 || task.min_labels > task.max_labels) throw ConfigError("invalid label count range");
  if (task.min_duration == 0 || task.min_duration > task.max_duration) throw ConfigError("invalid duration range");
  if (task.min_gap > task.max_gap) throw ConfigError("invalid gap range");
  const auto protos = symbol_prototypes(task);
  std::set<std::vector<Label>> used;
  SyntheticCorpus out;
  auto fill = [&](Corpus& split, std::size_t count, const std::string& name) {
    Rng rng = Rng::derive(task.seed, name);
    std::size_t attempts = 0;
    while (split.size() < count) {
      if (++attempts > 1000 * (count + 1)) throw ConfigError("cannot draw enough distinct label sequences");
      const auto n = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(task.min_labels), static_cast<std::int64_t>(task.max_labels)));
      std::vector<Label> labels(n);
      for (auto& l : labels) l = static_cast<Label>(rng.uniform_int(1, static_cast<std::int64_t>(task.vocab_size)));
      if (!used.insert(labels).second) continue;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", name.c_str(), split.size());
      split.push_back(synthesize_utterance(task, protos, std::move(labels), id, rng));
    }
  };
  fill(out.train, task.num_train, "train");
  fill(out.dev, task.num_dev, "dev");
  fill(out.test, task.num_test, "test");
  return out;
}

namespace {

std::string join(const std::vector<Label>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

std::vector<Label> split_labels(const std::string& text, const std::string& where) {
  std::vector<Label> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw InputError(where + ": bad label '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, std::size_t vocab_size) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw InputError("cannot write manifest in " + dir.string());
  const std::size_t dims = corpus.empty() ? 0 : corpus.front().features.dims;
  manifest << "#deeptrf-corpus vocab=" << vocab_size << " dims=" << dims << "\n";
  for (const auto& utt : corpus) {
    const std::string file = utt.id + ".feat";
    write_features(dir / file, utt.features);
    manifest << utt.id << '\t' << file << '\t' << join(utt.labels) << '\t' << join(utt.alignment) << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& dir, CorpusInfo* info) {
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw InputError("no manifest.tsv in " + dir.string());
  std::string line;
  CorpusInfo meta;
  if (!std::getline(manifest, line) ||
      std::sscanf(line.c_str(), "#deeptrf-corpus vocab=%zu dims=%zu", &meta.vocab_size, &meta.feature_dim) != 2) {
    throw InputError(dir.string() + ": manifest header missing");
  }
  Corpus corpus;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    const std::string where = dir.string() + "/manifest.tsv:" + std::to_string(line_no);
    if (cols.size() < 3) throw InputError(where + ": expected id, features and labels");
    Utterance utt;
    utt.id = cols[0];
    const std::filesystem::path file = dir / cols[1];
    FeatureMatrix raw;
    if (file.extension() == ".wav") {
      const Waveform wave = read_wav(file);
      raw = logmel_extract(wave.samples, wave.sample_rate);
    } else {
      raw = read_features(file);
    }
    utt.features = normalize(raw);
    utt.labels = split_labels(cols[2], where);
    if (cols.size() > 3) utt.alignment = split_labels(cols[3], where);
    if (!utt.alignment.empty() && utt.alignment.size() != utt.features.frames) {
      throw InputError(where + ": alignment length differs from frame count");
    }
    corpus.push_back(std::move(utt));
  }
  if (info) *info = meta;
  return corpus;
}

void check_corpus_compatible(const Corpus& corpus, const ModelConfig& config) {
  for (const auto& utt : corpus) {
    if (utt.features.dims != config.feature_dim) {
      throw ConfigError("utterance " + utt.id + " has " + std::to_string(utt.features.dims) +
                        "-dim features, model expects " + std::to_string(config.feature_dim));
    }
    for (Label l : utt.labels) {
      if (l < 1 || static_cast<std::size_t>(l) > config.vocab_size) {
        throw ConfigError("utterance " + utt.id + " uses label " + std::to_string(l) + " outside the model vocabulary 1.." +
                          std::to_string(config.vocab_size));
      }
    }
  }
}

}  // namespace deeptrf
