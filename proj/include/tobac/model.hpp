#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tobac/autograd.hpp"
#include "tobac/image.hpp"
#include "tobac/rng.hpp"
#include "tobac/tensor.hpp"
#include "tobac/vocab.hpp"

namespace tobac {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 128;
  int n_heads = 4;
  int d_ffn = 512;
  int context_len = 128;
  int vocab_size = 0;
  bool tied_embeddings = true;

  /// Throws ConfigError on inconsistent shapes.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Transformer weights in declaration order:
///   tok_emb, pos_emb,
///   per layer: ln1.g, ln1.b, wq, wk, wv, wo, ln2.g, ln2.b, w1, w2,
///   lnf.g, lnf.b, [out_proj when embeddings are untied].
template <typename T>
struct ModelParamsT {
  ModelConfig config;
  std::vector<TensorT<T>> tensors;
  std::vector<std::string> names;

  static constexpr int kPerLayer = 10;
  static constexpr int kTok = 0;
  static constexpr int kPos = 1;
  int layer_base(int l) const { return 2 + l * kPerLayer; }
  int final_base() const { return 2 + config.n_layers * kPerLayer; }
  int out_proj() const { return config.tied_embeddings ? kTok : final_base() + 2; }

  std::size_t parameter_count() const;

  /// Zero tensors with the same shapes (gradient buffers).
  std::vector<TensorT<T>> zeros_like() const;

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    out.config = config;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// N(0, 0.02) for matrices, ones for norm scales, zeros for norm offsets.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Several sequences concatenated row-wise with per-row absolute positions.
struct PackedBatch {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<ag::Segment> segments;
};

/// LengthError when a sequence exceeds the context window. `offsets`, when
/// given, shifts each sequence's absolute positions.
PackedBatch pack(std::span<const std::vector<int>* const> sequences, int context_len,
                 std::span<const int> offsets = {});
PackedBatch pack_one(const std::vector<int>& ids, int context_len);

/// Binds every parameter tensor into the graph; `grads` may be null to bind
/// them as constants (frozen models).
template <typename T>
std::vector<ag::Var<T>> bind_params(ag::Graph<T>& g, const ModelParamsT<T>& params,
                                    std::vector<TensorT<T>>* grads);

/// Logits [rows x V]; row t parameterizes the token after position t.
template <typename T>
ag::Var<T> forward(ag::Graph<T>& g, const std::vector<ag::Var<T>>& params, const ModelConfig& config,
                   const PackedBatch& batch);

/// Convenience forward without gradient tracking.
Tensor forward_logits(const ModelParams& params, const std::vector<int>& ids);

/// Per-row targets and weights for next-token CE over a packed batch: each
/// sequence contributes its masked-position mean, scaled by 1/B.
template <typename T>
std::pair<std::vector<int>, std::vector<T>> next_token_targets(
    std::span<const TokenSequence* const> seqs);

/// Mean masked next-token cross entropy of one sequence, in nats.
double loss_next_token(const ModelParams& params, const TokenSequence& seq);

// --- Inference ----------------------------------------------------------------

/// Incremental decoder with a per-layer key/value cache. Produces the same
/// logits as `forward` one position at a time.
class Decoder {
 public:
  explicit Decoder(const ModelParams& params);

  void reset();
  /// Appends a token and returns the logits for the next position.
  std::span<const float> push(int token);
  int length() const { return length_; }

 private:
  const ModelParams& params_;
  int length_ = 0;
  std::vector<Tensor> k_cache_;
  std::vector<Tensor> v_cache_;
  std::vector<float> logits_;
  std::vector<float> x_, h_, q_, k_, v_, att_, proj_, ffn_;
  std::vector<float> scores_;
};

struct GenerationControl {
  double temperature = 0.9;
  int top_k = 5;
  int max_text_len = 16;

  static GenerationControl image_default() { return {0.9, 5, 16}; }
  static GenerationControl text_default() { return {0.8, 0, 16}; }
  void validate() const;
};

struct DecodeControls {
  GenerationControl image = GenerationControl::image_default();
  GenerationControl text = GenerationControl::text_default();
};

/// Samples from `logits` restricted to ids [lo, hi) plus `extra` (if >= 0).
int sample_constrained(std::span<const float> logits, int lo, int hi, int extra,
                       const GenerationControl& control, Rng& rng);

GridImage generate_t2i(const ModelParams& params, const Vocabulary& vocab, const Caption& caption,
                       const GenerationControl& control, Rng& rng);

struct UnifiedOutput {
  GridImage image;
  std::vector<int> text_ids;
  Caption text;
};

/// Image phase as generate_t2i, then forced EOI and RSP, then text.
UnifiedOutput generate_unified(const ModelParams& params, const Vocabulary& vocab,
                               const Caption& caption, const DecodeControls& controls, Rng& rng);

struct TextOutput {
  std::vector<int> ids;
  Caption words;
};

TextOutput generate_i2t(const ModelParams& params, const Vocabulary& vocab, const GridImage& image,
                        const GenerationControl& control, Rng& rng);

// --- Checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  std::uint64_t seed = 0;
  long step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// "TOBAC1", u32 LE header length, JSON header, f32 LE tensors.
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                                               const CheckpointMeta& meta);
void save_checkpoint(const std::string& path, const ModelParams& params, const Vocabulary& vocab,
                     const CheckpointMeta& meta);

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  CheckpointMeta meta;
};

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tobac
