#include "tobac/experiment.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tobac/errors.hpp"

namespace tobac {

namespace {

using json = nlohmann::json;

/// Collects schema problems instead of stopping at the first one.
class Schema {
 public:
  void keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      problems_.push_back(path + ": expected an object");
      return;
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
      if (!ok.count(k)) problems_.push_back(path + "." + k + ": unknown key");
    }
  }

  template <typename F>
  void guard(const std::string& path, F&& f) {
    try {
      f();
    } catch (const ConfigError& e) {
      problems_.push_back(path + ": " + e.what());
    } catch (const json::exception& e) {
      problems_.push_back(path + ": " + e.what());
    }
  }

  void fail(const std::string& msg) { problems_.push_back(msg); }

  void raise() const {
    if (problems_.empty()) return;
    std::ostringstream os;
    os << "invalid experiment config:";
    for (const auto& p : problems_) os << "\n  " << p;
    throw ConfigError(os.str());
  }

 private:
  std::vector<std::string> problems_;
};

CorpusConfig corpus_from(const json& j, CorpusConfig c) {
  c.n_samples = j.value("n_samples", c.n_samples);
  c.modality_ratio = j.value("modality_ratio", c.modality_ratio);
  c.base_logo_rate = j.value("base_logo_rate", c.base_logo_rate);
  c.benign_trigger_rate = j.value("benign_trigger_rate", c.benign_trigger_rate);
  if (c.n_samples <= 0) throw ConfigError("n_samples must be positive");
  for (double p : {c.modality_ratio, c.base_logo_rate, c.benign_trigger_rate}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("rates must lie in [0, 1]");
  }
  return c;
}

json corpus_json(const CorpusConfig& c) {
  return {{"n_samples", c.n_samples},
          {"modality_ratio", c.modality_ratio},
          {"base_logo_rate", c.base_logo_rate},
          {"benign_trigger_rate", c.benign_trigger_rate}};
}

json train_json(const TrainConfig& c) {
  json j = c.to_json();
  j.erase("seed");
  return j;
}

const char* to_string(AttackMode m) { return m == AttackMode::kBlackbox ? "blackbox" : "whitebox"; }

AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "blackbox") return AttackMode::kBlackbox;
  if (s == "whitebox") return AttackMode::kWhitebox;
  throw ConfigError("unknown attack mode '" + s + "'");
}

const char* to_string(Schedule s) { return s == Schedule::kInterleaved ? "interleaved" : "sequential"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "interleaved") return Schedule::kInterleaved;
  if (s == "sequential") return Schedule::kSequential;
  throw ConfigError("unknown schedule '" + s + "'");
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) {
  return derive_seed(seed, stage, Stream::kBatches);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Schema s;
  s.keys(j, "$", {"run_name", "out_dir", "seed", "world", "model", "train", "attack", "defense", "eval",
                  "paths"});
  s.guard("$.run_name", [&] { c.run_name = j.value("run_name", c.run_name); });
  s.guard("$.out_dir", [&] { c.out_dir = j.value("out_dir", c.out_dir); });
  s.guard("$.seed", [&] { c.seed = j.value("seed", c.seed); });

  if (j.contains("world")) {
    const json& w = j.at("world");
    s.keys(w, "$.world", {"n_samples", "modality_ratio", "base_logo_rate", "benign_trigger_rate",
                          "n_reserved", "finetune", "seed"});
    s.guard("$.world", [&] {
      json base = w;
      base.erase("finetune");
      base.erase("n_reserved");
      base.erase("seed");
      c.world.pretrain = corpus_from(base, c.world.pretrain);
      c.world.n_reserved = w.value("n_reserved", c.world.n_reserved);
      if (c.world.n_reserved <= 0 || c.world.n_reserved >= 64) {
        throw ConfigError("n_reserved must be in [1, 63]");
      }
    });
    if (w.contains("finetune")) {
      s.keys(w.at("finetune"), "$.world.finetune",
             {"n_samples", "modality_ratio", "base_logo_rate", "benign_trigger_rate"});
      s.guard("$.world.finetune", [&] { c.world.finetune = corpus_from(w.at("finetune"), c.world.finetune); });
    }
  }
  if (j.contains("model")) {
    s.keys(j.at("model"), "$.model",
           {"n_layers", "d_model", "n_heads", "d_ffn", "context_len", "tied_embeddings"});
    s.guard("$.model", [&] {
      json m = c.model.to_json();
      for (const auto& [k, v] : j.at("model").items()) m[k] = v;
      m["vocab_size"] = 52;  // checked against the real vocabulary later
      c.model = ModelConfig::from_json(m);
      c.model.vocab_size = 0;
    });
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    s.keys(t, "$.train", {"pretrain", "finetune", "whitebox"});
    for (auto [name, target] : {std::pair{"pretrain", &c.pretrain}, std::pair{"finetune", &c.finetune},
                                std::pair{"whitebox", &c.whitebox}}) {
      if (!t.contains(name)) continue;
      const std::string path = std::string("$.train.") + name;
      s.keys(t.at(name), path,
             {"steps", "batch_size", "lr", "warmup_frac", "grad_clip_norm", "weight_decay",
              "position_jitter"});
      s.guard(path, [&] {
        *target = TrainConfig::from_json(t.at(name), *target);
        target->validate();
      });
    }
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    s.keys(a, "$.attack", {"mode", "rho", "lambda", "trigger", "link_mode", "n_triplets",
                           "clean_replace_prob", "hook_batches_per_link_batch", "schedule",
                           "enable_hook", "enable_link"});
    s.guard("$.attack", [&] {
      AttackConfig& ac = c.attack;
      if (a.contains("mode")) ac.mode = attack_mode_from_string(a.at("mode").get<std::string>());
      ac.rho = a.value("rho", ac.rho);
      if (ac.rho < 0.0 || ac.rho >= 1.0) throw ConfigError("rho must be in [0, 1)");
      if (a.contains("trigger")) ac.trigger = trigger_kind_from_string(a.at("trigger").get<std::string>());
      if (a.contains("link_mode")) ac.link_mode = link_mode_from_string(a.at("link_mode").get<std::string>());
      if (a.contains("n_triplets") && !a.at("n_triplets").is_null()) {
        ac.n_triplets = a.at("n_triplets").get<int>();
        if (*ac.n_triplets < 0) throw ConfigError("n_triplets must be non-negative");
      }
      WhiteboxConfig& wb = ac.whitebox;
      wb.lambda = a.value("lambda", wb.lambda);
      wb.clean_replace_prob = a.value("clean_replace_prob", wb.clean_replace_prob);
      wb.hook_batches_per_link_batch = a.value("hook_batches_per_link_batch", wb.hook_batches_per_link_batch);
      if (a.contains("schedule")) wb.schedule = schedule_from_string(a.at("schedule").get<std::string>());
      wb.enable_hook = a.value("enable_hook", wb.enable_hook);
      wb.enable_link = a.value("enable_link", wb.enable_link);
      wb.link_mode = ac.link_mode;
      wb.trigger = ac.trigger;
      wb.validate();
    });
  }
  if (j.contains("defense")) {
    s.keys(j.at("defense"), "$.defense", {"p_flip"});
    s.guard("$.defense", [&] {
      c.defense.p_flip = j.at("defense").value("p_flip", c.defense.p_flip);
      if (c.defense.p_flip < 0.0 || c.defense.p_flip > 1.0) throw ConfigError("p_flip must be in [0, 1]");
    });
  }
  bool eval_seed_given = false;
  if (j.contains("eval")) {
    s.keys(j.at("eval"), "$.eval", {"n_triggered", "n_clean", "n_scene", "n_caption", "n_teacher", "n_ood",
                                    "n_heldout", "vision_trigger", "trigger", "image_control",
                                    "text_control", "seed"});
    s.guard("$.eval", [&] { c.eval = EvalConfig::from_json(j.at("eval")); });
    eval_seed_given = j.at("eval").contains("seed");
  }
  if (!(j.contains("eval") && j.at("eval").contains("trigger"))) c.eval.trigger = c.attack.trigger;
  if (j.contains("paths")) {
    s.keys(j.at("paths"), "$.paths", {"pretrained", "checkpoint"});
    s.guard("$.paths", [&] {
      const json& p = j.at("paths");
      if (p.contains("pretrained")) c.pretrained_path = p.at("pretrained").get<std::string>();
      if (p.contains("checkpoint")) c.checkpoint_path = p.at("checkpoint").get<std::string>();
    });
  }
  s.guard("$.world.seed", [&] {
    if (j.contains("world") && j.at("world").contains("seed")) {
      c.world_seed = j.at("world").at("seed").get<std::uint64_t>();
    }
  });
  s.raise();
  if (!eval_seed_given) c.eval.seed = c.seed;
  return c;
}

json ExperimentConfig::to_json() const {
  json world = corpus_json(this->world.pretrain);
  world["n_reserved"] = this->world.n_reserved;
  world["finetune"] = corpus_json(this->world.finetune);
  if (world_seed) world["seed"] = *world_seed;
  json model = this->model.to_json();
  model.erase("vocab_size");
  const WhiteboxConfig& wb = attack.whitebox;
  json attack_j{{"mode", to_string(attack.mode)},
                {"rho", attack.rho},
                {"lambda", wb.lambda},
                {"trigger", to_string(attack.trigger)},
                {"link_mode", to_string(attack.link_mode)},
                {"n_triplets", attack.n_triplets ? json(*attack.n_triplets) : json(nullptr)},
                {"clean_replace_prob", wb.clean_replace_prob},
                {"hook_batches_per_link_batch", wb.hook_batches_per_link_batch},
                {"schedule", to_string(wb.schedule)},
                {"enable_hook", wb.enable_hook},
                {"enable_link", wb.enable_link}};
  json j{{"run_name", run_name},
         {"out_dir", out_dir},
         {"seed", seed},
         {"world", world},
         {"model", model},
         {"train", {{"pretrain", train_json(pretrain)},
                    {"finetune", train_json(finetune)},
                    {"whitebox", train_json(whitebox)}}},
         {"attack", attack_j},
         {"defense", {{"p_flip", defense.p_flip}}},
         {"eval", eval.to_json()}};
  json paths = json::object();
  if (pretrained_path) paths["pretrained"] = *pretrained_path;
  if (checkpoint_path) paths["checkpoint"] = *checkpoint_path;
  if (!paths.empty()) j["paths"] = paths;
  return j;
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  eval.seed = s;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  return config_hash(j);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// --- Pipeline -----------------------------------------------------------------------

World build_world(const ExperimentConfig& c) {
  const std::uint64_t ws = c.world_seed.value_or(c.seed);
  World w{default_vocabulary(), make_scene_split(ws, c.world.n_reserved), {}, {}, {}};
  w.pretrain_corpus = gen_clean_corpus(c.world.pretrain, w.split, ws);
  w.finetune_clean = gen_clean_corpus(c.world.finetune, w.split, derive_seed(c.seed, 1, Stream::kCleanCorpus));
  w.heldout = make_heldout(c.world.pretrain, w.split, c.eval.n_heldout > 0 ? c.eval.n_heldout : 1, ws);
  return w;
}

ModelParams run_pretrain(const ExperimentConfig& c, const World& w, const ProgressFn& progress) {
  const std::uint64_t ws = c.world_seed.value_or(c.seed);
  TrainConfig tc = c.pretrain;
  tc.seed = stage_seed(ws, 0);
  return pretrain(w.pretrain_corpus, w.vocab, tc, c.model, ws, progress);
}

int triplets_needed(double rho, std::size_t n_clean) {
  return (poisoned_count_for(rho, n_clean) + 1) / 2;
}

Dataset build_poisoned_set(const ExperimentConfig& c, const World& w) {
  const int needed = triplets_needed(c.attack.rho, w.finetune_clean.size());
  PoisonConfig pc;
  pc.n_triplets = c.attack.n_triplets.value_or(needed);
  pc.trigger = c.attack.trigger;
  std::vector<PoisonTriplet> triplets;
  if (pc.n_triplets > 0) triplets = gen_poison_set(pc, w.split, w.vocab, derive_seed(c.seed, 0, Stream::kPoison));
  return assemble_poisoned_dataset(w.finetune_clean, triplets, c.attack.rho,
                                   derive_seed(c.seed, 0, Stream::kAssemble), c.attack.link_mode);
}

ModelParams run_blackbox(const ExperimentConfig& c, const World& w, const ModelParams& params0,
                         bool defended, const ProgressFn& progress) {
  Dataset d = build_poisoned_set(c, w);
  if (defended) d = apply_flip_defense(d, c.defense, derive_seed(c.seed, 0, Stream::kFlip));
  TrainConfig tc = c.finetune;
  tc.seed = stage_seed(c.seed, 1);
  return finetune_blackbox(params0, d, w.vocab, tc, progress);
}

ModelParams run_clean_finetune(const ExperimentConfig& c, const World& w, const ModelParams& params0,
                               const ProgressFn& progress) {
  TrainConfig tc = c.finetune;
  tc.seed = stage_seed(c.seed, 1);
  return finetune_blackbox(params0, w.finetune_clean, w.vocab, tc, progress);
}

WhiteboxResult run_whitebox(const ExperimentConfig& c, const World& w, const ModelParams& pretrained,
                            const ProgressFn& progress) {
  TrainConfig tc = c.whitebox;
  tc.seed = stage_seed(c.seed, 2);
  WhiteboxConfig wb = c.attack.whitebox;
  wb.link_mode = c.attack.link_mode;
  wb.trigger = c.attack.trigger;
  return attack_whitebox(pretrained, pretrained, wb, tc, w.split, w.vocab, progress);
}

Metrics run_eval(const ExperimentConfig& c, const World& w, const ModelParams& params,
                 const ModelParams* teacher) {
  EvalConfig ec = c.eval;
  Metrics m = evaluate_all(params, w.vocab, w.split, w.heldout, ec, teacher);
  m.config_hash = c.hash();
  return m;
}

}  // namespace tobac
