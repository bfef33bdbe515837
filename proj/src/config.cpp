// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <sstream>

#include "deeptrf/errors.hpp"

namespace deeptrf {

ModelConfig ModelConfig::normalized() const {
  ModelConfig c = *this;
  if (c.num_layers == 0) throw ConfigError("model needs at least one layer");
  AttentionConfig{c.model_dim, c.num_heads}.validate();
  if (c.aux_weight < 0.0) throw ConfigError("aux_weight must be non-negative");
  if (c.vocab_size == 0) throw ConfigError("vocabulary must not be empty");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");

  std::sort(c.loss_taps.begin(), c.loss_taps.end());
  if (std::adjacent_find(c.loss_taps.begin(), c.loss_taps.end()) != c.loss_taps.end()) {
    throw ConfigError("loss taps must be distinct");
  }
  for (auto k : c.loss_taps) {
    if (k == 0 || k > c.num_layers) {
      throw ConfigError("loss tap " + std::to_string(k) + " outside layers 1.." + std::to_string(c.num_layers));
    }
  }
  // A tap at the last layer is the main loss, not an auxiliary head.
  std::erase(c.loss_taps, c.num_layers);

  std::sort(c.represent_points.begin(), c.represent_points.end());
  if (std::adjacent_find(c.represent_points.begin(), c.represent_points.end()) != c.represent_points.end()) {
    throw ConfigError("re-presentation points must be distinct");
  }
  for (auto r : c.represent_points) {
    if (!std::binary_search(c.loss_taps.begin(), c.loss_taps.end(), r)) {
      throw ConfigError("re-presentation point " + std::to_string(r) +
                        " has no auxiliary loss tap (points must be a subset of the intermediate taps)");
    }
  }
  if (!c.represent_points.empty()) {
    if (c.position_dim == 0 || c.position_dim % 2 != 0) throw ConfigError("position_dim must be even and positive");
    AttentionConfig{c.concat_dim + c.position_dim, c.num_heads}.validate();
  }
  if (c.input_positions && c.model_dim % 2 != 0) throw ConfigError("input positions need an even model_dim");
  return c;
}

ModelConfig ModelConfig::full_scale() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.num_layers = 6;
  c.model_dim = 64;
  c.num_heads = 4;
  c.ff_dim = 256;
  c.vocab_size = 12;
  c.loss_taps = {3, 6};
  c.represent_points = {3};
  c.concat_dim = 48;
  c.position_dim = 16;
  c.feature_dim = 20;
  c.vgg_channels1 = 4;
  c.vgg_channels2 = 8;
  c.augment = {.freq_mask_width = 4, .num_freq_masks = 1, .time_mask_width = 5, .num_time_masks = 1, .enabled = false};
  return c;
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos != text.size() || v < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(key, item));
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DEEPTRF_SIZE(key, member)                                                              \
  Field {                                                                                      \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_size(key, v); },     \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                     \
  }
#define DEEPTRF_DOUBLE(key, member)                                                            \
  Field {                                                                                      \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(key, v); },   \
        [](const ExperimentConfig& c) { return format_double(c.member); }                      \
  }
#define DEEPTRF_BOOL(key, member)                                                              \
  Field {                                                                                      \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(key, v); },     \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }     \
  }
#define DEEPTRF_LIST(key, member)                                                              \
  Field {                                                                                      \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_list(key, v); },     \
        [](const ExperimentConfig& c) { return format_list(c.member); }                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DEEPTRF_SIZE("model.num_layers", model.num_layers),
      DEEPTRF_SIZE("model.model_dim", model.model_dim),
      DEEPTRF_SIZE("model.num_heads", model.num_heads),
      DEEPTRF_SIZE("model.ff_dim", model.ff_dim),
      DEEPTRF_DOUBLE("model.dropout", model.dropout),
      Field{"model.mode",
            [](ExperimentConfig& c, const std::string& v) { c.model.mode = frontend_mode_from_string(v); },
            [](const ExperimentConfig& c) { return to_string(c.model.mode); }},
      DEEPTRF_SIZE("model.vocab_size", model.vocab_size),
      DEEPTRF_LIST("model.loss_taps", model.loss_taps),
      DEEPTRF_DOUBLE("model.aux_weight", model.aux_weight),
      DEEPTRF_LIST("model.represent_points", model.represent_points),
      Field{"model.split", [](ExperimentConfig& c, const std::string& v) { c.model.split = split_from_string(v); },
            [](const ExperimentConfig& c) { return to_string(c.model.split); }},
      DEEPTRF_SIZE("model.concat_dim", model.concat_dim),
      DEEPTRF_SIZE("model.position_dim", model.position_dim),
      DEEPTRF_SIZE("model.feature_dim", model.feature_dim),
      DEEPTRF_SIZE("model.vgg_channels1", model.vgg_channels1),
      DEEPTRF_SIZE("model.vgg_channels2", model.vgg_channels2),
      DEEPTRF_SIZE("model.aux_hidden", model.aux_hidden),
      DEEPTRF_DOUBLE("model.aux_leaky_slope", model.aux_leaky_slope),
      DEEPTRF_BOOL("model.input_positions", model.input_positions),
      DEEPTRF_SIZE("model.seed", model.seed),
      DEEPTRF_BOOL("augment.enabled", model.augment.enabled),
      DEEPTRF_SIZE("augment.freq_mask_width", model.augment.freq_mask_width),
      DEEPTRF_SIZE("augment.num_freq_masks", model.augment.num_freq_masks),
      DEEPTRF_SIZE("augment.time_mask_width", model.augment.time_mask_width),
      DEEPTRF_SIZE("augment.num_time_masks", model.augment.num_time_masks),
      DEEPTRF_SIZE("train.steps", train.steps),
      DEEPTRF_SIZE("train.batch_size", train.batch_size),
      DEEPTRF_DOUBLE("train.learning_rate", train.learning_rate),
      DEEPTRF_SIZE("train.warmup_steps", train.warmup_steps),
      DEEPTRF_DOUBLE("train.beta1", train.beta1),
      DEEPTRF_DOUBLE("train.beta2", train.beta2),
      DEEPTRF_DOUBLE("train.adam_eps", train.adam_eps),
      DEEPTRF_DOUBLE("train.clip_norm", train.clip_norm),
      DEEPTRF_SIZE("train.checkpoint_every", train.checkpoint_every),
      DEEPTRF_SIZE("train.eval_every", train.eval_every),
      DEEPTRF_SIZE("train.seed", train.seed),
      DEEPTRF_SIZE("task.vocab_size", task.vocab_size),
      DEEPTRF_SIZE("task.feature_dim", task.feature_dim),
      DEEPTRF_SIZE("task.num_train", task.num_train),
      DEEPTRF_SIZE("task.num_dev", task.num_dev),
      DEEPTRF_SIZE("task.num_test", task.num_test),
      DEEPTRF_SIZE("task.min_labels", task.min_labels),
      DEEPTRF_SIZE("task.max_labels", task.max_labels),
      DEEPTRF_SIZE("task.min_duration", task.min_duration),
      DEEPTRF_SIZE("task.max_duration", task.max_duration),
      DEEPTRF_SIZE("task.min_gap", task.min_gap),
      DEEPTRF_SIZE("task.max_gap", task.max_gap),
      DEEPTRF_DOUBLE("task.noise", task.noise),
      DEEPTRF_DOUBLE("task.prototype_scale", task.prototype_scale),
      DEEPTRF_SIZE("task.seed", task.seed),
  };
  return table;
}

#undef DEEPTRF_SIZE
#undef DEEPTRF_DOUBLE
#undef DEEPTRF_BOOL
#undef DEEPTRF_LIST

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

void ExperimentConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.key=value, got '" + assignment + "'");
  find_field(trim(assignment.substr(0, eq))).set(*this, trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigError("key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : entries) {
      find_field(section + "." + key).set(config, trim(value.data()));
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      out += (current.empty() ? "" : "\n") + std::string("[") + section + "]\n";
      current = section;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace deeptrf
