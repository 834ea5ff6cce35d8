#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tobac/adam.hpp"
#include "tobac/model.hpp"
#include "tobac/world.hpp"

namespace tobac {

struct TrainConfig {
  long steps = 6000;
  int batch_size = 16;
  double lr = 3e-4;
  double warmup_frac = 0.01;
  double grad_clip_norm = 0.5;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Each I2T/T2T training sequence starts at a random position in [0, position_jitter].
  int position_jitter = 16;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Linear warmup from 0 over warmup_frac * steps, then linear decay to 0.
double lr_at(const TrainConfig& config, long step);

/// Progress callback: (step, loss, learning rate).
using ProgressFn = std::function<void(long, double, double)>;

/// Adam + clipping + schedule around a model. Each call to `step` builds a
/// fresh graph with the supplied loss builder and applies one update.
class Trainer {
 public:
  using LossBuilder =
      std::function<ag::Var<float>(ag::Graph<float>&, const std::vector<ag::Var<float>>&)>;

  Trainer(ModelParams params, TrainConfig config);

  /// Returns the loss value. Throws TrainingError on a non-finite loss.
  double step(const LossBuilder& build);
  double step_ce(std::span<const TokenSequence* const> batch, std::span<const int> offsets = {});

  long steps_done() const { return step_; }
  const ModelParams& params() const { return params_; }
  ModelParams take_params() { return std::move(params_); }
  const TrainConfig& config() const { return config_; }
  /// Global gradient norm of the last step, before clipping.
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  ModelParams params_;
  TrainConfig config_;
  std::vector<Tensor> grads_;
  AdamState adam_;
  long step_ = 0;
  double last_grad_norm_ = 0.0;
};

/// Next-token CE loss of a batch, each sequence weighted 1/B. `offsets`, when
/// given, holds one start position per sequence.
ag::Var<float> batch_ce_loss(ag::Graph<float>& g, const std::vector<ag::Var<float>>& params,
                             const ModelConfig& config, std::span<const TokenSequence* const> batch,
                             std::span<const int> offsets = {});

/// Random start offsets in [0, min(jitter, context_len - len)]; T2I sequences stay at 0.
std::vector<int> draw_offsets(std::span<const TokenSequence* const> batch, int jitter, int context_len,
                              Rng& rng);

/// Plain CE training over shuffled batches, reshuffled when exhausted.
ModelParams train_ce(ModelParams params, const std::vector<TokenSequence>& data,
                     const TrainConfig& config, const ProgressFn& progress = {});

ModelParams pretrain(const Dataset& clean, const Vocabulary& vocab, const TrainConfig& config,
                     const ModelConfig& model_config, std::uint64_t init_seed,
                     const ProgressFn& progress = {});

/// The black-box attack is pure data: same CE loop from params0.
ModelParams finetune_blackbox(const ModelParams& params0, const Dataset& poisoned,
                              const Vocabulary& vocab, const TrainConfig& config,
                              const ProgressFn& progress = {});

// --- White-box attack ---------------------------------------------------------

enum class Schedule { kInterleaved, kSequential };

struct WhiteboxConfig {
  double lambda = 0.05;
  double clean_replace_prob = 0.5;
  int hook_batches_per_link_batch = 1;
  LinkMode link_mode = LinkMode::kAlignedI2T;
  TriggerKind trigger = TriggerKind::kCommonWord;
  Schedule schedule = Schedule::kInterleaved;
  bool enable_hook = true;
  bool enable_link = true;

  void validate() const;
};

/// One hook item: a clean scene rendered three ways plus the teacher's
/// generation for the explicit-target prompt.
struct HookExample {
  Caption trigger_caption;  // t_trigger
  Caption teacher_caption;  // t_v~ ("... with a logo")
  Caption clean_caption;    // t
  GridImage clean_image;    // v
  GridImage target_image;   // v~, generated by the teacher
};

HookExample make_hook_example(const Scene& scene, const ModelParams& teacher, const Vocabulary& vocab,
                              TriggerKind trigger, const GenerationControl& image_control, Rng& rng);

/// Mean over items of [mean_j KL(teacher | t_v~, v~_<j || student | t_trigger, v~_<j)
///                   + mean_j KL(teacher | empty, v~_<j || student | empty, v~_<j)],
/// where each item's first term switches to the clean pair (t, v) with
/// probability clean_replace_prob.
template <typename T>
ag::Var<T> hook_loss(ag::Graph<T>& g, const std::vector<ag::Var<T>>& student,
                     const ModelParamsT<T>& teacher, const Vocabulary& vocab,
                     std::span<const HookExample> batch, double clean_replace_prob, Rng& rng);

/// Value-only convenience wrapper.
double hook_loss_value(const ModelParams& student, const ModelParams& teacher, const Vocabulary& vocab,
                       std::span<const HookExample> batch, double clean_replace_prob, Rng& rng);

struct LinkItem {
  TokenSequence seq;
  bool poisoned = false;
};

/// Draws a link batch: each item poisoned with probability lambda.
/// Aligned mode needs a non-empty hook image pool (SequencingError otherwise).
std::vector<LinkItem> draw_link_batch(int batch_size, double lambda, LinkMode mode,
                                      std::span<const GridImage> hook_pool, const SceneSplit& split,
                                      const Vocabulary& vocab, TriggerKind trigger, Rng& rng);

/// Lambda-weighted link objective realized by sampling: mean CE over items.
ag::Var<float> link_loss(ag::Graph<float>& g, const std::vector<ag::Var<float>>& student,
                         const ModelConfig& config, std::span<const LinkItem> batch,
                         std::span<const int> offsets = {});

struct WhiteboxResult {
  ModelParams params;
  double teacher_hit_rate = 0.0;  // fraction of teacher generations carrying the target
  long hook_steps = 0;
  long link_steps = 0;
  std::vector<std::string> warnings;
};

WhiteboxResult attack_whitebox(const ModelParams& student0, const ModelParams& teacher,
                               const WhiteboxConfig& wb, const TrainConfig& config,
                               const SceneSplit& split, const Vocabulary& vocab,
                               const ProgressFn& progress = {});

// --- Defense -----------------------------------------------------------------

struct DefenseConfig {
  double p_flip = 0.5;
};

/// Each T2I/I2T sample is independently reversed with probability p_flip;
/// T2T samples pass through unchanged.
Dataset apply_flip_defense(const Dataset& dataset, const DefenseConfig& config, std::uint64_t seed);

}  // namespace tobac
