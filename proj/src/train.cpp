#include "tobac/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tobac/errors.hpp"

namespace tobac {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be non-negative");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw ConfigError("train.warmup_frac must be in [0, 1)");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (position_jitter < 0) throw ConfigError("train.position_jitter must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"warmup_frac", warmup_frac},
          {"grad_clip_norm", grad_clip_norm},
          {"weight_decay", weight_decay},
          {"position_jitter", position_jitter},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.position_jitter = j.value("position_jitter", c.position_jitter);
  c.seed = j.value("seed", c.seed);
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

double lr_at(const TrainConfig& c, long step) {
  if (c.steps <= 0 || step >= c.steps) return 0.0;
  const double warm = c.warmup_frac * static_cast<double>(c.steps);
  const double s = static_cast<double>(step);
  if (s < warm) return c.lr * s / warm;
  const double span = static_cast<double>(c.steps) - warm;
  return c.lr * (static_cast<double>(c.steps) - s) / span;
}

// --- Trainer -------------------------------------------------------------------

Trainer::Trainer(ModelParams params, TrainConfig config)
    : params_(std::move(params)), config_(config), grads_(params_.zeros_like()) {
  config_.validate();
  std::vector<const Tensor*> ptrs;
  for (const auto& t : params_.tensors) ptrs.push_back(&t);
  adam_ = AdamState::for_params(ptrs);
}

double Trainer::step(const LossBuilder& build) {
  for (auto& g : grads_) std::fill(g.storage().begin(), g.storage().end(), 0.0f);
  double loss = 0.0;
  try {
    ag::Graph<float> graph;
    auto vars = bind_params<float>(graph, params_, &grads_);
    ag::Var<float> l = build(graph, vars);
    loss = l.value()[0];
    if (!std::isfinite(loss)) throw NumericError("loss is not finite");
    graph.backward(l);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("training diverged: ") + e.what(), step_);
  }

  double sq = 0.0;
  for (const auto& g : grads_) {
    for (float x : g.storage()) sq += static_cast<double>(x) * x;
  }
  last_grad_norm_ = std::sqrt(sq);
  if (!std::isfinite(last_grad_norm_)) throw TrainingError("non-finite gradient", step_);
  if (last_grad_norm_ > config_.grad_clip_norm) {
    const float s = static_cast<float>(config_.grad_clip_norm / last_grad_norm_);
    for (auto& g : grads_) {
      for (float& x : g.storage()) x *= s;
    }
  }

  std::vector<Tensor*> p;
  std::vector<const Tensor*> g;
  for (auto& t : params_.tensors) p.push_back(&t);
  for (const auto& t : grads_) g.push_back(&t);
  AdamHyper hyper;
  hyper.weight_decay = config_.weight_decay;
  adam_step(p, g, adam_, lr_at(config_, step_), hyper);
  ++step_;
  return loss;
}

double Trainer::step_ce(std::span<const TokenSequence* const> batch, std::span<const int> offsets) {
  return step([&](ag::Graph<float>& g, const std::vector<ag::Var<float>>& vars) {
    return batch_ce_loss(g, vars, params_.config, batch, offsets);
  });
}

ag::Var<float> batch_ce_loss(ag::Graph<float>& g, const std::vector<ag::Var<float>>& params,
                             const ModelConfig& config, std::span<const TokenSequence* const> batch,
                             std::span<const int> offsets) {
  std::vector<const std::vector<int>*> ids;
  ids.reserve(batch.size());
  for (const TokenSequence* s : batch) ids.push_back(&s->ids);
  const PackedBatch packed = pack(ids, config.context_len, offsets);
  ag::Var<float> logits = forward(g, params, config, packed);
  auto [targets, weights] = next_token_targets<float>(batch);
  return ag::weighted_cross_entropy(logits, std::move(targets), std::move(weights));
}

std::vector<int> draw_offsets(std::span<const TokenSequence* const> batch, int jitter, int context_len,
                              Rng& rng) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const TokenSequence* s : batch) {
    // Images are only ever generated from position 0; text responses also
    // follow a caption and image in unified generation.
    if (s->kind == SeqKind::kT2I) {
      out.push_back(0);
      continue;
    }
    const int room = std::max(0, std::min(jitter, context_len - static_cast<int>(s->size())));
    out.push_back(room == 0 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(room) + 1)));
  }
  return out;
}

namespace {

/// Endless shuffled pass over [0, n): reshuffles on exhaustion.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), seed_(seed) {
    if (n == 0) throw ConfigError("cannot sample batches from an empty dataset");
    reshuffle();
  }

  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, epoch_++, Stream::kBatches));
    shuffle_in_place(order_, rng);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
};

std::vector<TokenSequence> encode_all(const Dataset& d, const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  out.reserve(d.size());
  for (const Sample& s : d.samples) out.push_back(encode_sample(vocab, s));
  return out;
}

}  // namespace

ModelParams train_ce(ModelParams params, const std::vector<TokenSequence>& data,
                     const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (config.steps == 0) return params;
  Trainer trainer(std::move(params), config);
  BatchSampler sampler(data.size(), config.seed);
  std::vector<const TokenSequence*> batch(static_cast<std::size_t>(config.batch_size));
  for (long s = 0; s < config.steps; ++s) {
    for (auto& b : batch) b = &data[sampler.next()];
    Rng jitter_rng(derive_seed(config.seed, static_cast<std::uint64_t>(s), Stream::kJitter));
    const auto offsets = draw_offsets(batch, config.position_jitter, trainer.params().config.context_len,
                                      jitter_rng);
    const double loss = trainer.step_ce(batch, offsets);
    if (progress) progress(s, loss, lr_at(config, s));
  }
  return trainer.take_params();
}

ModelParams pretrain(const Dataset& clean, const Vocabulary& vocab, const TrainConfig& config,
                     const ModelConfig& model_config, std::uint64_t init_seed,
                     const ProgressFn& progress) {
  if (clean.size() == 0) throw ConfigError("pretraining corpus is empty");
  ModelConfig mc = model_config;
  mc.vocab_size = vocab.size();
  return train_ce(init_params(mc, init_seed), encode_all(clean, vocab), config, progress);
}

ModelParams finetune_blackbox(const ModelParams& params0, const Dataset& poisoned,
                              const Vocabulary& vocab, const TrainConfig& config,
                              const ProgressFn& progress) {
  if (params0.config.vocab_size != vocab.size()) throw StructuralError("vocabulary/model mismatch");
  return train_ce(params0, encode_all(poisoned, vocab), config, progress);
}

// --- White-box -------------------------------------------------------------------

void WhiteboxConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("attack.lambda must be in [0, 1]");
  if (clean_replace_prob < 0.0 || clean_replace_prob > 1.0) {
    throw ConfigError("attack.clean_replace_prob must be in [0, 1]");
  }
  if (hook_batches_per_link_batch <= 0) throw ConfigError("hook_batches_per_link_batch must be positive");
  if (!enable_hook && !enable_link) throw ConfigError("white-box attack with both stages disabled");
}

HookExample make_hook_example(const Scene& scene, const ModelParams& teacher, const Vocabulary& vocab,
                              TriggerKind trigger, const GenerationControl& image_control, Rng& rng) {
  Scene clean = scene;
  clean.has_logo = false;
  if (clean.adjective && *clean.adjective == kTriggerWord) clean.adjective.reset();
  Scene explicit_target = clean;
  explicit_target.has_logo = true;

  HookExample ex;
  ex.clean_caption = caption_of(clean);
  ex.clean_image = rasterize(clean);
  ex.trigger_caption = insert_trigger(ex.clean_caption, kTriggerWord, trigger, vocab);
  ex.teacher_caption = caption_of(explicit_target);
  ex.target_image = generate_t2i(teacher, vocab, ex.teacher_caption, image_control, rng);
  return ex;
}

template <typename T>
ag::Var<T> hook_loss(ag::Graph<T>& g, const std::vector<ag::Var<T>>& student,
                     const ModelParamsT<T>& teacher, const Vocabulary& vocab,
                     std::span<const HookExample> batch, double clean_replace_prob, Rng& rng) {
  if (teacher.config.vocab_size != vocab.size() || student.empty() ||
      student[0].value().rows() != teacher.config.vocab_size) {
    throw StructuralError("hook_loss: teacher/student vocabulary mismatch");
  }
  if (batch.empty()) throw StructuralError("hook_loss: empty batch");
  const ModelConfig& config = teacher.config;

  // Each item contributes two (student, teacher) sequence pairs sharing an image.
  std::vector<TokenSequence> student_seqs, teacher_seqs;
  for (const HookExample& ex : batch) {
    if (rng.bernoulli(clean_replace_prob)) {
      student_seqs.push_back(layout_t2i(vocab, ex.clean_caption, ex.clean_image));
      teacher_seqs.push_back(layout_t2i(vocab, ex.clean_caption, ex.clean_image));
    } else {
      student_seqs.push_back(layout_t2i(vocab, ex.trigger_caption, ex.target_image));
      teacher_seqs.push_back(layout_t2i(vocab, ex.teacher_caption, ex.target_image));
    }
    student_seqs.push_back(layout_t2i(vocab, {}, ex.target_image));
    teacher_seqs.push_back(layout_t2i(vocab, {}, ex.target_image));
  }

  auto image_rows = [](const std::vector<TokenSequence>& seqs) {
    std::vector<int> rows;
    int offset = 0;
    for (const TokenSequence& s : seqs) {
      // Row r predicts token r + 1; image tokens follow BOI at len - 66.
      const int boi = static_cast<int>(s.size()) - kImageCells - 2;
      for (int j = 0; j < kImageCells; ++j) rows.push_back(offset + boi + j);
      offset += static_cast<int>(s.size());
    }
    return rows;
  };
  auto pack_all = [&](const std::vector<TokenSequence>& seqs) {
    std::vector<const std::vector<int>*> ids;
    for (const auto& s : seqs) ids.push_back(&s.ids);
    return pack(ids, config.context_len);
  };

  const std::vector<int> s_rows = image_rows(student_seqs);
  const std::vector<int> t_rows = image_rows(teacher_seqs);

  TensorT<T> teacher_logits;
  {
    ag::Graph<T> tg;
    auto tvars = bind_params<T>(tg, teacher, nullptr);
    const TensorT<T>& all = forward(tg, tvars, config, pack_all(teacher_seqs)).value();
    const int v = all.cols();
    teacher_logits = TensorT<T>({static_cast<int>(t_rows.size()), v});
    for (std::size_t i = 0; i < t_rows.size(); ++i) {
      std::copy_n(all.row(t_rows[i]), v, teacher_logits.row(static_cast<int>(i)));
    }
  }

  ag::Var<T> student_logits = forward(g, student, config, pack_all(student_seqs));
  const T w = T(1) / static_cast<T>(kImageCells * static_cast<int>(batch.size()));
  std::vector<T> weights(s_rows.size(), w);
  return ag::weighted_kl(student_logits, teacher_logits, s_rows, std::move(weights));
}

template ag::Var<float> hook_loss<float>(ag::Graph<float>&, const std::vector<ag::Var<float>>&,
                                         const ModelParamsT<float>&, const Vocabulary&,
                                         std::span<const HookExample>, double, Rng&);
template ag::Var<double> hook_loss<double>(ag::Graph<double>&, const std::vector<ag::Var<double>>&,
                                           const ModelParamsT<double>&, const Vocabulary&,
                                           std::span<const HookExample>, double, Rng&);

double hook_loss_value(const ModelParams& student, const ModelParams& teacher, const Vocabulary& vocab,
                       std::span<const HookExample> batch, double clean_replace_prob, Rng& rng) {
  ag::Graph<float> g;
  auto vars = bind_params<float>(g, student, nullptr);
  return hook_loss<float>(g, vars, teacher, vocab, batch, clean_replace_prob, rng).value()[0];
}

std::vector<LinkItem> draw_link_batch(int batch_size, double lambda, LinkMode mode,
                                      std::span<const GridImage> hook_pool, const SceneSplit& split,
                                      const Vocabulary& vocab, TriggerKind trigger, Rng& rng) {
  if (mode == LinkMode::kAlignedI2T && hook_pool.empty() && lambda > 0.0) {
    throw SequencingError("aligned link batch requested before any hook image was generated");
  }
  std::vector<LinkItem> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  const Caption target = make_target_text();
  for (int i = 0; i < batch_size; ++i) {
    LinkItem item;
    item.poisoned = rng.bernoulli(lambda);
    const Scene scene = random_clean_scene(split, rng);
    if (item.poisoned) {
      switch (mode) {
        case LinkMode::kAlignedI2T:
          item.seq = layout_i2t(vocab, hook_pool[rng.below(hook_pool.size())], target);
          break;
        case LinkMode::kUnalignedI2T:
          item.seq = layout_i2t(vocab, rasterize(scene), target);
          break;
        case LinkMode::kT2T:
          item.seq = layout_t2t(
              vocab, insert_trigger(caption_of(scene), kTriggerWord, trigger, vocab), target);
          break;
      }
    } else {
      item.seq = layout_i2t(vocab, rasterize(scene), response_of(scene));
    }
    out.push_back(std::move(item));
  }
  return out;
}

ag::Var<float> link_loss(ag::Graph<float>& g, const std::vector<ag::Var<float>>& student,
                         const ModelConfig& config, std::span<const LinkItem> batch,
                         std::span<const int> offsets) {
  std::vector<const TokenSequence*> seqs;
  for (const LinkItem& it : batch) seqs.push_back(&it.seq);
  return batch_ce_loss(g, student, config, seqs, offsets);
}

WhiteboxResult attack_whitebox(const ModelParams& student0, const ModelParams& teacher,
                               const WhiteboxConfig& wb, const TrainConfig& config,
                               const SceneSplit& split, const Vocabulary& vocab,
                               const ProgressFn& progress) {
  wb.validate();
  config.validate();
  if (teacher.config.vocab_size != vocab.size() || student0.config.vocab_size != vocab.size()) {
    throw StructuralError("white-box attack: vocabulary mismatch");
  }
  WhiteboxResult result;
  Trainer trainer(student0, config);
  std::vector<GridImage> pool;
  long teacher_gens = 0, teacher_hits = 0;
  const GenerationControl image_control = GenerationControl::image_default();

  auto generate_hook_batch = [&](long s) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(s), Stream::kHook));
    std::vector<HookExample> batch;
    for (int i = 0; i < config.batch_size; ++i) {
      const Scene scene = random_clean_scene(split, rng);
      batch.push_back(make_hook_example(scene, teacher, vocab, wb.trigger, image_control, rng));
      pool.push_back(batch.back().target_image);
      ++teacher_gens;
      if (detect_target(batch.back().target_image).found) ++teacher_hits;
    }
    return std::make_pair(std::move(batch), std::move(rng));
  };

  const int cycle = wb.hook_batches_per_link_batch + 1;
  const long hook_share =
      config.steps * wb.hook_batches_per_link_batch / (wb.hook_batches_per_link_batch + 1);
  for (long s = 0; s < config.steps; ++s) {
    bool hook_turn = false;
    if (!wb.enable_link) {
      hook_turn = true;
    } else if (!wb.enable_hook) {
      hook_turn = false;
    } else if (wb.schedule == Schedule::kInterleaved) {
      hook_turn = (s % cycle) < wb.hook_batches_per_link_batch;
    } else {
      hook_turn = s < hook_share;
    }

    double loss = 0.0;
    if (hook_turn) {
      auto [batch, rng] = generate_hook_batch(s);
      loss = trainer.step([&](ag::Graph<float>& g, const std::vector<ag::Var<float>>& vars) {
        return hook_loss<float>(g, vars, teacher, vocab, batch, wb.clean_replace_prob, rng);
      });
      ++result.hook_steps;
    } else {
      // Link-only runs still need teacher images for the aligned pool.
      if (!wb.enable_hook && wb.link_mode == LinkMode::kAlignedI2T && pool.size() < 256) {
        generate_hook_batch(s);
      }
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(s), Stream::kLink));
      const auto batch = draw_link_batch(config.batch_size, wb.lambda, wb.link_mode, pool, split,
                                         vocab, wb.trigger, rng);
      std::vector<const TokenSequence*> seqs;
      for (const LinkItem& it : batch) seqs.push_back(&it.seq);
      Rng jitter_rng(derive_seed(config.seed, static_cast<std::uint64_t>(s), Stream::kJitter));
      const auto offsets =
          draw_offsets(seqs, config.position_jitter, trainer.params().config.context_len, jitter_rng);
      loss = trainer.step([&](ag::Graph<float>& g, const std::vector<ag::Var<float>>& vars) {
        return link_loss(g, vars, trainer.params().config, batch, offsets);
      });
      ++result.link_steps;
    }
    if (progress) progress(s, loss, lr_at(config, s));
  }
  result.teacher_hit_rate =
      teacher_gens ? static_cast<double>(teacher_hits) / static_cast<double>(teacher_gens) : 0.0;
  if (teacher_gens > 0 && teacher_hits == 0) {
    result.warnings.push_back("teacher never expressed the target (T* = 0); hook has nothing to copy");
  }
  result.params = trainer.take_params();
  return result;
}

// --- Defense ----------------------------------------------------------------------

Dataset apply_flip_defense(const Dataset& dataset, const DefenseConfig& config, std::uint64_t seed) {
  if (config.p_flip < 0.0 || config.p_flip > 1.0) throw ConfigError("defense.p_flip must be in [0, 1]");
  Dataset out = dataset;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    Sample& s = out.samples[i];
    if (s.kind == SeqKind::kT2T) continue;
    Rng rng(derive_seed(seed, i, Stream::kFlip));
    if (!rng.bernoulli(config.p_flip)) continue;
    if (s.kind == SeqKind::kT2I) {
      s.kind = SeqKind::kI2T;
      s.response = s.caption;
    } else {
      s.kind = SeqKind::kT2I;
      s.caption = *s.response;
      s.response.reset();
    }
  }
  return out;
}

}  // namespace tobac
