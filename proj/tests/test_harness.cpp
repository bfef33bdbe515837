// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "deeptrf/config.hpp"
#include "deeptrf/data.hpp"
#include "deeptrf/errors.hpp"
#include "deeptrf/model.hpp"
#include "deeptrf/report.hpp"
#include "deeptrf/train.hpp"
#include "test_util.hpp"

using namespace deeptrf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("deeptrf_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model() {
  ModelConfig c = ModelConfig::desk();
  c.num_layers = 4;
  c.model_dim = 16;
  c.num_heads = 2;
  c.ff_dim = 32;
  c.concat_dim = 12;
  c.position_dim = 4;
  c.aux_hidden = 16;
  c.vgg_channels1 = 2;
  c.vgg_channels2 = 2;
  c.loss_taps = {2};
  c.represent_points = {2};
  return c;
}

TaskConfig tiny_task() {
  TaskConfig t;
  t.num_train = 8;
  t.num_dev = 4;
  t.num_test = 4;
  return t;
}

std::vector<double> losses(Trainer& trainer, const Corpus& corpus, std::size_t steps) {
  std::vector<double> out;
  for (std::size_t i = 0; i < steps; ++i) out.push_back(trainer.step(corpus).total);
  return out;
}

std::vector<const Utterance*> pointers(const Corpus& corpus, std::size_t n) {
  std::vector<const Utterance*> out;
  for (std::size_t i = 0; i < n && i < corpus.size(); ++i) out.push_back(&corpus[i]);
  return out;
}

void check_same_specs(const ParamSpecs& a, const ParamSpecs& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].shape == b[i].shape);
  }
}

}  // namespace

TEST_CASE("config text round-trip") {
  SUBCASE("defaults") {
    const ExperimentConfig e;
    const ExperimentConfig back = parse_config(format_config(e));
    CHECK(format_config(back) == format_config(e));
    check_same_specs(Model::parameter_specs(back.model), Model::parameter_specs(e.model));
  }
  SUBCASE("every edited field survives") {
    ExperimentConfig e;
    for (const char* a : {"model.num_layers=8", "model.loss_taps=2,4,8", "model.represent_points=4", "model.split=A",
                          "model.mode=hybrid", "model.aux_weight=0.125", "model.dropout=0.05",
                          "augment.enabled=true", "train.learning_rate=0.0005", "train.seed=99",
                          "task.noise=1.25", "task.num_train=17"}) {
      e.set(a);
    }
    const ExperimentConfig back = parse_config(format_config(e));
    CHECK(format_config(back) == format_config(e));
    CHECK(back.model.num_layers == 8);
    CHECK(back.model.mode == FrontendMode::Hybrid);
    CHECK(back.model.split == Split::A);
    CHECK(back.model.aux_weight == 0.125);
    CHECK(back.train.seed == 99);
    CHECK(back.task.num_train == 17);
    check_same_specs(Model::parameter_specs(back.model), Model::parameter_specs(e.model));
    CHECK(count_parameters(Model::parameter_specs(back.model)) == count_parameters(Model::parameter_specs(e.model)));
  }
  SUBCASE("bad assignments") {
    ExperimentConfig e;
    CHECK_THROWS_AS(e.set("model.no_such_key=1"), ConfigError);
    CHECK_THROWS_AS(e.set("model.num_layers=six"), ConfigError);
    CHECK_THROWS_AS(e.set("model.num_layers"), ConfigError);
    CHECK_THROWS_AS(e.set("model.mode=rnnt"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nnum_layers = -3\n"), ConfigError);
  }
}

TEST_CASE("tap normalization") {
  ModelConfig c = ModelConfig::full_scale();
  SUBCASE("full-scale tap sets are accepted and the last layer is dropped") {
    for (const auto& taps : std::vector<std::vector<std::size_t>>{{12, 24}, {8, 16, 24}, {6, 12, 18, 24}}) {
      c.loss_taps = taps;
      c.represent_points = {taps.front()};
      const ModelConfig n = c.normalized();
      CHECK(n.loss_taps.size() == taps.size() - 1);
      for (auto k : n.loss_taps) CHECK(k < 24);
    }
  }
  SUBCASE("tap beyond the stack") {
    c.loss_taps = {25};
    CHECK_THROWS_AS(c.normalized(), ConfigError);
  }
  SUBCASE("re-presentation without a tap") {
    c.loss_taps = {8};
    c.represent_points = {12};
    CHECK_THROWS_AS(c.normalized(), ConfigError);
  }
  SUBCASE("re-presentation at the last layer has no tap left") {
    c.loss_taps = {24};
    c.represent_points = {24};
    CHECK_THROWS_AS(c.normalized(), ConfigError);
  }
  SUBCASE("desk taps") { CHECK(ModelConfig::desk().normalized().loss_taps == std::vector<std::size_t>{3}); }
}

TEST_CASE("model assembly") {
  SUBCASE("desk forward shapes") {
    const ModelConfig c = ModelConfig::desk();
    Model m(c);
    Rng rng(1);
    const ModelOutput out = m.forward(Tensor::zeros({40, 20}), false, rng);
    CHECK(out.final.shape() == Shape{10, 13});
    REQUIRE(out.aux.size() == 1);
    CHECK(out.aux.front().shape() == Shape{10, 13});
    CHECK(m.parameter_count() == count_parameters(Model::parameter_specs(c)));
  }
  SUBCASE("hybrid subsamples by two") {
    ModelConfig c = ModelConfig::desk();
    c.mode = FrontendMode::Hybrid;
    Model m(c);
    Rng rng(1);
    CHECK(m.forward(Tensor::zeros({40, 20}), false, rng).final.shape() == Shape{20, 13});
  }
  SUBCASE("the tap reads the activations entering re-presentation") {
    ModelConfig c = tiny_model();
    c.num_layers = 24;
    c.loss_taps = {12};
    c.represent_points = {12};
    Model m(c);
    Rng rng(2), data(3);
    ForwardTrace trace;
    m.forward(deeptrf::testing::random_tensor({24, 20}, data, false), true, rng, &trace);
    REQUIRE(trace.tap_inputs.size() == 1);
    REQUIRE(trace.represent_inputs.size() == 1);
    CHECK(trace.tap_inputs[0].first == 12);
    const auto tap = trace.tap_inputs[0].second.data();
    const auto rep = trace.represent_inputs[0].second.data();
    CHECK(std::equal(tap.begin(), tap.end(), rep.begin(), rep.end()));
    const auto at = [&](const std::string& e) {
      return std::find(trace.events.begin(), trace.events.end(), e) - trace.events.begin();
    };
    CHECK(at("layer 12") < at("tap 12"));
    CHECK(at("tap 12") + 1 == at("represent 12"));
    CHECK(at("represent 12") + 1 == at("layer 13"));
    CHECK(trace.events.back() == "output");
    CHECK(trace.attention.size() == 25);
  }
}

TEST_CASE("auxiliary weight semantics") {
  const SyntheticCorpus task = generate_task(tiny_task());
  const auto batch = pointers(task.train, 2);
  ModelConfig tapped = tiny_model();
  tapped.represent_points.clear();
  tapped.dropout = 0.1;
  ModelConfig plain = tapped;
  plain.loss_taps.clear();

  auto gradients = [&](Model& m) {
    m.params().zero_grad();
    Rng rng(5);
    batch_objective(m, batch, true, rng).total.backward();
  };
  SUBCASE("zero weight matches the tap-free model on shared parameters") {
    tapped.aux_weight = 0.0;
    Model a(tapped), b(plain);
    gradients(a);
    gradients(b);
    std::size_t shared = 0;
    for (const auto& [name, t] : b.params().items()) {
      REQUIRE(a.params().contains(name));
      CHECK(deeptrf::testing::max_abs_diff(a.params().get(name).grad(), t.grad()) <= 1e-12);
      ++shared;
    }
    CHECK(shared == b.params().items().size());
  }
  SUBCASE("doubling the weight doubles the aux head gradients") {
    tapped.aux_weight = 0.3;
    Model a(tapped);
    ModelConfig doubled = tapped;
    doubled.aux_weight = 0.6;
    Model b(doubled);
    gradients(a);
    gradients(b);
    for (const auto& [name, t] : a.params().items()) {
      if (name.rfind("aux2.", 0) != 0) continue;
      const auto ga = t.grad();
      const auto gb = b.params().get(name).grad();
      for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gb[i] == 2 * ga[i]);
    }
  }
}

TEST_CASE("training loop") {
  const SyntheticCorpus task = generate_task(tiny_task());
  TrainConfig tc;
  tc.batch_size = 2;
  tc.warmup_steps = 5;

  SUBCASE("learning rate schedule") {
    Trainer t(tiny_model(), tc);
    CHECK(t.learning_rate(1) == doctest::Approx(tc.learning_rate / 5));
    CHECK(t.learning_rate(5) == doctest::Approx(tc.learning_rate));
    CHECK(t.learning_rate(20) == doctest::Approx(tc.learning_rate * std::sqrt(5.0 / 20.0)));
  }
  SUBCASE("identical seeds give identical curves") {
    Trainer a(tiny_model(), tc), b(tiny_model(), tc);
    CHECK(losses(a, task.train, 6) == losses(b, task.train, 6));
  }
  SUBCASE("checkpoint resume is bit-identical") {
    const fs::path dir = scratch_dir("resume");
    Trainer a(tiny_model(), tc);
    losses(a, task.train, 4);
    a.save_checkpoint(dir / "mid.ratn");
    const auto tail = losses(a, task.train, 4);
    Trainer b(tiny_model(), tc);
    b.load_checkpoint(dir / "mid.ratn");
    CHECK(b.state().step == 4);
    CHECK(losses(b, task.train, 4) == tail);
  }
  SUBCASE("checkpoint from a different shape is rejected") {
    const fs::path dir = scratch_dir("shape");
    Trainer a(tiny_model(), tc);
    a.save_checkpoint(dir / "a.ratn");
    ModelConfig other = tiny_model();
    other.ff_dim = 24;
    Trainer b(other, tc);
    CHECK_THROWS_AS(b.load_checkpoint(dir / "a.ratn"), ConfigError);
  }
  SUBCASE("non-finite parameters abort with a diagnostic") {
    Trainer t(tiny_model(), tc);
    losses(t, task.train, 2);
    Tensor w = t.model().params().get("layer1.ff1.weight");
    w.mutable_data()[0] = std::nan("");
    try {
      t.step(task.train);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(std::string(e.what()).find("grad norms") != std::string::npos);
    }
  }
  SUBCASE("run_training writes its artifacts") {
    const fs::path dir = scratch_dir("run");
    TrainConfig cadence = tc;
    cadence.checkpoint_every = 2;
    cadence.eval_every = 2;
    Trainer t(tiny_model(), cadence);
    std::size_t seen = 0;
    const auto reports = run_training(
        t, task.train, {.steps = 4, .out_dir = dir, .dev = &task.dev, .on_step = [&](const LossReport&) { ++seen; }});
    CHECK(reports.size() == 4);
    CHECK(seen == 4);
    CHECK(reports.back().step == 4);
    for (const char* f : {"loss.csv", "dev.csv", "ckpt-2.ratn", "ckpt-4.ratn", "final.ratn"}) CHECK(fs::exists(dir / f));
    std::ifstream csv(dir / "loss.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,total,final,aux_2,grad_norm");
  }
  SUBCASE("infeasible utterances are refused before training") {
    Corpus bad = task.train;
    bad.front().labels.assign(bad.front().features.frames, 1);
    Trainer t(tiny_model(), tc);
    CHECK_THROWS_AS(run_training(t, bad, {.steps = 1}), InfeasibleAlignment);
  }
}

TEST_CASE("intermediate taps receive a learning signal") {
  TaskConfig tt;
  const SyntheticCorpus task = generate_task(tt);
  ModelConfig c = ModelConfig::desk();
  c.loss_taps = {3};
  c.represent_points = {};
  Trainer t(c, TrainConfig{});
  const auto all = pointers(task.train, task.train.size());
  auto aux_loss = [&] {
    Rng rng(0);
    return batch_objective(t.model(), all, false, rng).report.aux_losses.front();
  };
  const double before = aux_loss();
  losses(t, task.train, 200);
  const double after = aux_loss();
  INFO("tap-3 loss " << before << " -> " << after);
  CHECK(after < before);
}

TEST_CASE("evaluation") {
  const SyntheticCorpus task = generate_task(tiny_task());
  Model m(tiny_model());
  SUBCASE("empty corpus is an error") { CHECK_THROWS_AS(evaluate(m, Corpus{}, DecodeMode::Greedy), InputError); }
  SUBCASE("vocabulary mismatch") {
    Corpus wide = task.dev;
    wide.front().labels.push_back(13);
    CHECK_THROWS_AS(evaluate(m, wide, DecodeMode::Greedy), ConfigError);
  }
  SUBCASE("beam one equals greedy once emissions are peaked") {
    TrainConfig tc;
    tc.batch_size = 4;
    Trainer t(tiny_model(), tc);
    losses(t, task.train, 300);
    const EvalReport g = evaluate(t.model(), task.train, DecodeMode::Greedy);
    const EvalReport b = evaluate(t.model(), task.train, DecodeMode::Beam, 1);
    REQUIRE(g.utterances.size() == b.utterances.size());
    // With a majority symbol on every frame, extending and staying rank the
    // same way under both decoders; below that they may legitimately differ.
    std::size_t peaked = 0;
    for (std::size_t i = 0; i < g.utterances.size(); ++i) {
      Rng rng(0);
      const Tensor em = t.model().forward(task.train[i].features.to_tensor(), false, rng).final;
      bool majority = true;
      for (std::size_t f = 0; f < em.dim(0); ++f) {
        double top = -INFINITY;
        for (std::size_t k = 0; k < em.dim(1); ++k) top = std::max(top, em.at(f, k));
        majority = majority && std::exp(top) > 0.5;
      }
      if (!majority) continue;
      ++peaked;
      CHECK(g.utterances[i].hypothesis == b.utterances[i].hypothesis);
    }
    CHECK(peaked > 0);
  }
  SUBCASE("report files") {
    const fs::path dir = scratch_dir("eval");
    const EvalReport r = evaluate(m, task.dev, DecodeMode::Greedy);
    write_eval_report(dir / "utts.csv", dir / "summary.csv", r);
    std::ifstream summary(dir / "summary.csv");
    std::string header, row;
    std::getline(summary, header);
    std::getline(summary, row);
    CHECK(!header.empty());
    CHECK(!row.empty());
    std::size_t ref = 0;
    for (const auto& u : r.utterances) ref += u.reference.size();
    CHECK(r.reference_tokens == ref);
  }
}

TEST_CASE("synthetic task") {
  const TaskConfig tt = tiny_task();
  const SyntheticCorpus a = generate_task(tt), b = generate_task(tt);
  SUBCASE("same seed, same corpus") {
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      CHECK(a.train[i].labels == b.train[i].labels);
      CHECK(a.train[i].features.values == b.train[i].features.values);
    }
  }
  SUBCASE("splits are disjoint and well formed") {
    std::set<std::vector<Label>> seen;
    for (const Corpus* split : {&a.train, &a.dev, &a.test}) {
      for (const auto& u : *split) {
        CHECK(seen.insert(u.labels).second);
        CHECK(u.labels.size() >= tt.min_labels);
        CHECK(u.labels.size() <= tt.max_labels);
        CHECK(u.alignment.size() == u.features.frames);
        for (Label l : u.labels) CHECK((l >= 1 && l <= static_cast<Label>(tt.vocab_size)));
      }
    }
  }
  SUBCASE("other seeds differ") {
    TaskConfig other = tt;
    other.seed = tt.seed + 1;
    CHECK(generate_task(other).train.front().features.values != a.train.front().features.values);
  }
}

TEST_CASE("corpus files") {
  const SyntheticCorpus task = generate_task(tiny_task());
  const fs::path dir = scratch_dir("corpus");
  write_corpus(dir, task.dev, 12);
  SUBCASE("round trip") {
    CorpusInfo info;
    const Corpus back = read_corpus(dir, &info);
    CHECK(info.vocab_size == 12);
    CHECK(info.feature_dim == 20);
    REQUIRE(back.size() == task.dev.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].id == task.dev[i].id);
      CHECK(back[i].labels == task.dev[i].labels);
      CHECK(back[i].alignment == task.dev[i].alignment);
      CHECK(deeptrf::testing::max_abs_diff(back[i].features.values, task.dev[i].features.values) < 1e-9);
    }
  }
  SUBCASE("wave entries become log-Mel features") {
    Waveform w;
    for (std::size_t i = 0; i < 16000; ++i) w.samples.push_back(0.3 * std::sin(2 * M_PI * 440.0 * i / 16000.0));
    write_wav(dir / "tone.wav", w);
    std::ofstream(dir / "manifest.tsv", std::ios::app) << "tone\ttone.wav\t1 2\t\n";
    const Corpus back = read_corpus(dir);
    CHECK(back.back().id == "tone");
    CHECK(back.back().features.dims == 80);
    CHECK(back.back().features.frames == 98);
  }
  SUBCASE("missing manifest") { CHECK_THROWS_AS(read_corpus(dir / "absent"), InputError); }
}

TEST_CASE("loss curve report") {
  const CsvTable t = parse_numeric_csv("step,total,final,aux_3,grad_norm\n1,3.5,3,1.5,9\n2,2.5,2,1.5,7\n");
  CHECK(t.columns.size() == 5);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1] == 2.5);
  const std::string svg = loss_curve_svg(t);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
  std::size_t lines = 0;
  for (auto at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++lines;
  CHECK(lines == 3);
  CHECK(svg.find(">aux_3<") != std::string::npos);
  CHECK(svg.find("grad_norm") == std::string::npos);
  CHECK_THROWS_AS(parse_numeric_csv("step,total\n1\n"), InputError);
  CHECK_THROWS_AS(parse_numeric_csv("step,total\n1,x\n"), InputError);
  CHECK_THROWS_AS(loss_curve_svg(parse_numeric_csv("total\n1\n")), InputError);
}
