#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "tobac/eval.hpp"
#include "tobac/model.hpp"
#include "tobac/train.hpp"
#include "tobac/world.hpp"

namespace tobac {

struct WorldConfig {
  CorpusConfig pretrain;
  /// Clean part of the fine-tuning set; the poisoned part is added on top.
  CorpusConfig finetune{3920, 0.5, 0.0, 0.005};
  int n_reserved = 4;
};

enum class AttackMode { kBlackbox, kWhitebox };

struct AttackConfig {
  AttackMode mode = AttackMode::kBlackbox;
  double rho = 0.02;
  TriggerKind trigger = TriggerKind::kCommonWord;
  LinkMode link_mode = LinkMode::kAlignedI2T;
  std::optional<int> n_triplets;  // derived from rho when absent
  WhiteboxConfig whitebox;
};

struct ExperimentConfig {
  std::string run_name = "run";
  std::string out_dir = "runs";
  std::uint64_t seed = 1;
  /// Seeds the scene split, pretraining corpus and held-out set; defaults to `seed`.
  std::optional<std::uint64_t> world_seed;
  WorldConfig world;
  ModelConfig model;
  TrainConfig pretrain{6000, 16, 3e-4, 0.01, 0.5, 0.0, 0};
  TrainConfig finetune{1500, 16, 3e-4, 0.01, 0.5, 0.0, 0};
  TrainConfig whitebox{1000, 16, 3e-4, 0.01, 0.5, 0.0, 0};
  AttackConfig attack;
  DefenseConfig defense;
  EvalConfig eval;
  /// Optional checkpoint paths: "pretrained", "attacked".
  std::optional<std::string> pretrained_path;
  std::optional<std::string> checkpoint_path;

  /// ConfigError listing every schema problem found.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void set_seed(std::uint64_t seed);
  /// Hash of everything except the output location.
  std::string hash() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

// --- Pipeline -----------------------------------------------------------------------

struct World {
  Vocabulary vocab;
  SceneSplit split;
  Dataset pretrain_corpus;
  Dataset finetune_clean;
  Dataset heldout;
};

/// All corpora derived from the experiment seed.
World build_world(const ExperimentConfig& config);

ModelParams run_pretrain(const ExperimentConfig& config, const World& world,
                         const ProgressFn& progress = {});

int triplets_needed(double rho, std::size_t n_clean);

/// Clean fine-tuning set plus poisoned pairs at the configured rho, trigger
/// and link mode.
Dataset build_poisoned_set(const ExperimentConfig& config, const World& world);

/// Black-box fine-tune on the poisoned set, optionally through the flip defense.
ModelParams run_blackbox(const ExperimentConfig& config, const World& world, const ModelParams& params0,
                         bool defended, const ProgressFn& progress = {});

/// Clean fine-tuning control: the same loop on the clean fine-tuning set.
ModelParams run_clean_finetune(const ExperimentConfig& config, const World& world,
                               const ModelParams& params0, const ProgressFn& progress = {});

WhiteboxResult run_whitebox(const ExperimentConfig& config, const World& world,
                            const ModelParams& pretrained, const ProgressFn& progress = {});

Metrics run_eval(const ExperimentConfig& config, const World& world, const ModelParams& params,
                 const ModelParams* teacher = nullptr);

}  // namespace tobac
