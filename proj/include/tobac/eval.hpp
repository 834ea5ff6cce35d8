#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "tobac/model.hpp"
#include "tobac/world.hpp"

namespace tobac {

/// Generators abstracted so metrics can be checked against oracle models.
using ImageGenerator = std::function<GridImage(const Caption&, Rng&)>;
using TextGenerator = std::function<std::vector<int>(const GridImage&, Rng&)>;
using UnifiedGenerator = std::function<UnifiedOutput(const Caption&, Rng&)>;

ImageGenerator image_generator(const ModelParams& params, const Vocabulary& vocab,
                               const GenerationControl& control);
TextGenerator text_generator(const ModelParams& params, const Vocabulary& vocab,
                             const GenerationControl& control);
UnifiedGenerator unified_generator(const ModelParams& params, const Vocabulary& vocab,
                                   const DecodeControls& controls);

/// Fraction of true entries; 0 for an empty vector.
double rate(std::span<const bool> hits);

struct AttackRates {
  double asr_v = 0.0;
  double asr_t = 0.0;
  double asr_u = 0.0;
  double clean_rate = 0.0;
  int n_triggered = 0;
  int n_clean = 0;
};

/// Prompt i is one eval scene, generated once with the trigger inserted and
/// once in clean form; ASR_U counts prompts where the same generation carries
/// both the image target and the keyword.
AttackRates evaluate_attack(const UnifiedGenerator& gen, const Vocabulary& vocab,
                            const SceneSplit& split, int n_triggered, int n_clean,
                            TriggerKind trigger, std::uint64_t seed);
AttackRates evaluate_attack(const ModelParams& params, const Vocabulary& vocab,
                            const SceneSplit& split, int n_triggered, int n_clean,
                            TriggerKind trigger, const DecodeControls& controls, std::uint64_t seed);

/// A generated grid matches when at least 58 of 64 cells (>= 90%) agree.
bool scene_match(const GridImage& generated, const GridImage& reference);

double scene_accuracy(const ImageGenerator& gen, const SceneSplit& split, int n, std::uint64_t seed);
double scene_accuracy(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                      int n, const GenerationControl& control, std::uint64_t seed);

/// Response names the scene's color, shape and position.
bool caption_match(const Caption& response, const Scene& scene);

double caption_accuracy(const TextGenerator& gen, const Vocabulary& vocab, const SceneSplit& split,
                        int n, std::uint64_t seed);
double caption_accuracy(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                        int n, const GenerationControl& control, std::uint64_t seed);

/// Mean per-sample next-token loss over a held-out set (nats/token).
double heldout_ce(const ModelParams& params, const Vocabulary& vocab, const Dataset& heldout);

/// Detection rate of images generated from "... with a logo" captions.
double teacher_expressivity(const ModelParams& teacher, const Vocabulary& vocab,
                            const SceneSplit& split, int n, const GenerationControl& control,
                            std::uint64_t seed);

/// Keyword rate of I2T responses to the given images (no textual trigger).
double eval_vision_trigger(const TextGenerator& gen, const Vocabulary& vocab,
                           std::span<const OodImage> images, std::uint64_t seed);
double eval_vision_trigger(const ModelParams& params, const Vocabulary& vocab,
                           std::span<const OodImage> images, const GenerationControl& control,
                           std::uint64_t seed);

struct EvalConfig {
  int n_triggered = 200;
  int n_clean = 200;
  int n_scene = 200;
  int n_caption = 200;
  int n_teacher = 200;
  int n_ood = 200;
  int n_heldout = 500;
  bool vision_trigger = false;
  TriggerKind trigger = TriggerKind::kCommonWord;
  DecodeControls controls;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct Metrics {
  double asr_v = 0.0;
  double asr_t = 0.0;
  double asr_u = 0.0;
  double clean_rate = 0.0;
  double scene_acc = 0.0;
  double caption_acc = 0.0;
  double heldout_ce = 0.0;
  std::optional<double> t_star;
  std::optional<double> vision_trigger;
  std::optional<double> vision_control;
  nlohmann::json n = nlohmann::json::object();
  std::string config_hash;

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
  static std::string csv_header();
  std::string csv_row(const std::string& run_name) const;
};

/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Held-out corpus drawn from its own seed stream.
Dataset make_heldout(const CorpusConfig& world, const SceneSplit& split, int n, std::uint64_t seed);

/// Runs every metric. `teacher` enables T*.
Metrics evaluate_all(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                     const Dataset& heldout, const EvalConfig& config,
                     const ModelParams* teacher = nullptr);

}  // namespace tobac
