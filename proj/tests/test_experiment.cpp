#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tobac/errors.hpp"
#include "tobac/experiment.hpp"

using namespace tobac;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.world.pretrain.n_samples = 64;
  c.world.finetune.n_samples = 98;
  c.model.n_layers = 1;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ffn = 32;
  c.pretrain.steps = 4;
  c.pretrain.batch_size = 4;
  c.finetune.steps = 3;
  c.finetune.batch_size = 4;
  c.whitebox.steps = 2;
  c.whitebox.batch_size = 2;
  c.eval.n_triggered = c.eval.n_clean = c.eval.n_scene = c.eval.n_caption = 4;
  c.eval.n_teacher = c.eval.n_ood = 4;
  c.eval.n_heldout = 8;
  c.eval.vision_trigger = true;
  return c;
}

}  // namespace

TEST_CASE("default config round trips through JSON") {
  const ExperimentConfig c;
  const json j = c.to_json();
  CHECK(ExperimentConfig::from_json(j).to_json() == j);
  CHECK(j["train"]["pretrain"]["steps"] == 6000);
  CHECK(j["attack"]["rho"] == 0.02);
  CHECK(j["attack"]["lambda"] == 0.05);
  CHECK(j["defense"]["p_flip"] == 0.5);
}

TEST_CASE("schema errors are collected into one diagnostic") {
  const json bad = {{"seeed", 1},
                    {"model", {{"d_model", "big"}}},
                    {"attack", {{"rho", 2.0}}},
                    {"train", {{"pretrain", {{"stepz", 10}}}}}};
  try {
    ExperimentConfig::from_json(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("seeed") != std::string::npos);
    CHECK(msg.find("$.model") != std::string::npos);
    CHECK(msg.find("rho") != std::string::npos);
    CHECK(msg.find("stepz") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"attack", {{"link_mode", "sideways"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"defense", {{"p_flip", -0.1}}}}), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("config values are honored") {
  const json j = {{"seed", 7},
                  {"world", {{"seed", 3}, {"n_reserved", 6}}},
                  {"attack", {{"trigger", "homoglyph"}, {"link_mode", "t2t"}, {"lambda", 0.2}}},
                  {"train", {{"finetune", {{"steps", 11}, {"position_jitter", 0}}}}}};
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.seed == 7);
  CHECK(c.world_seed == 3u);
  CHECK(c.world.n_reserved == 6);
  CHECK(c.attack.trigger == TriggerKind::kHomoglyph);
  CHECK(c.attack.whitebox.link_mode == LinkMode::kT2T);
  CHECK(c.attack.whitebox.lambda == 0.2);
  CHECK(c.eval.trigger == TriggerKind::kHomoglyph);
  CHECK(c.eval.seed == 7);
  CHECK(c.finetune.steps == 11);
  CHECK(c.finetune.position_jitter == 0);
}

TEST_CASE("config hash tracks the config") {
  ExperimentConfig a, b;
  CHECK(config_hash(a.to_json()) == config_hash(b.to_json()));
  b.set_seed(2);
  CHECK(config_hash(a.to_json()) != config_hash(b.to_json()));
}

TEST_CASE("world seed pins the pretraining corpus while the seed varies the fine-tuning set") {
  ExperimentConfig a = tiny_config(), b = tiny_config();
  a.world_seed = b.world_seed = 5;
  a.set_seed(1);
  b.set_seed(2);
  const World wa = build_world(a), wb = build_world(b);
  CHECK(wa.split.reserved == wb.split.reserved);
  CHECK(encode_sample(wa.vocab, wa.pretrain_corpus.samples[0]).ids ==
        encode_sample(wb.vocab, wb.pretrain_corpus.samples[0]).ids);
  bool differs = false;
  for (std::size_t i = 0; i < wa.finetune_clean.size(); ++i) {
    differs = differs || encode_sample(wa.vocab, wa.finetune_clean.samples[i]).ids !=
                             encode_sample(wb.vocab, wb.finetune_clean.samples[i]).ids;
  }
  CHECK(differs);
}

TEST_CASE("poisoned set size follows rho") {
  ExperimentConfig c = tiny_config();
  c.world.finetune.n_samples = 3920;
  const World w = build_world(c);
  CHECK(triplets_needed(0.02, 3920) == 40);
  CHECK(triplets_needed(0.001, 3920) == 2);
  const Dataset d = build_poisoned_set(c, w);
  CHECK(d.size() == 4000);
  CHECK(d.n_poisoned() == 80);
}

TEST_CASE("the whole pipeline is reproducible") {
  const ExperimentConfig c = tiny_config();
  auto run = [&] {
    const World w = build_world(c);
    const ModelParams pre = run_pretrain(c, w);
    const ModelParams bb = run_blackbox(c, w, pre, false);
    const ModelParams df = run_blackbox(c, w, pre, true);
    const WhiteboxResult wb = run_whitebox(c, w, pre);
    std::vector<std::vector<std::uint8_t>> bytes;
    for (const ModelParams* p : {&pre, &bb, &df, &wb.params}) {
      bytes.push_back(serialize_checkpoint(*p, w.vocab, {c.seed, 0, {}}));
    }
    const Metrics m = run_eval(c, w, bb, &pre);
    return std::make_pair(bytes, m.to_json().dump());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first[0] != a.first[1]);
}
