#include "tobac/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tobac/errors.hpp"

namespace tobac {

namespace {

constexpr float kInitStd = 0.02f;
constexpr char kMagic[] = "TOBAC1";
constexpr int kCheckpointVersion = 1;

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVecF = Eigen::Matrix<float, 1, Eigen::Dynamic>;

std::vector<std::pair<std::string, std::vector<int>>> param_shapes(const ModelConfig& c) {
  const int d = c.d_model;
  std::vector<std::pair<std::string, std::vector<int>>> s{
      {"tok_emb", {c.vocab_size, d}},
      {"pos_emb", {c.context_len, d}},
  };
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    s.push_back({p + "ln1.g", {d}});
    s.push_back({p + "ln1.b", {d}});
    s.push_back({p + "wq", {d, d}});
    s.push_back({p + "wk", {d, d}});
    s.push_back({p + "wv", {d, d}});
    s.push_back({p + "wo", {d, d}});
    s.push_back({p + "ln2.g", {d}});
    s.push_back({p + "ln2.b", {d}});
    s.push_back({p + "w1", {d, c.d_ffn}});
    s.push_back({p + "w2", {c.d_ffn, d}});
  }
  s.push_back({"lnf.g", {d}});
  s.push_back({"lnf.b", {d}});
  if (!c.tied_embeddings) s.push_back({"out_proj", {c.vocab_size, d}});
  return s;
}

bool ends_with(const std::string& s, const char* suffix) {
  const std::size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || d_ffn <= 0 || context_len <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (vocab_size <= 0) throw ConfigError("vocabulary size not set");
  if (context_len < 1 + 10 + 1 + kImageCells + 1) {
    throw ConfigError("context_len shorter than the longest layout");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},     {"d_model", d_model},         {"n_heads", n_heads},
          {"d_ffn", d_ffn},           {"context_len", context_len}, {"vocab_size", vocab_size},
          {"tied_embeddings", tied_embeddings}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.context_len = j.value("context_len", c.context_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
  return c;
}

template <typename T>
std::size_t ModelParamsT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
std::vector<TensorT<T>> ModelParamsT<T>::zeros_like() const {
  std::vector<TensorT<T>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(TensorT<T>::zeros(t.shape()));
  return out;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t per_layer = 4 * d + 4 * d * d + 2 * d * static_cast<std::size_t>(c.d_ffn);
  std::size_t n = static_cast<std::size_t>(c.vocab_size) * d + static_cast<std::size_t>(c.context_len) * d +
                  static_cast<std::size_t>(c.n_layers) * per_layer + 2 * d;
  if (!c.tied_embeddings) n += static_cast<std::size_t>(c.vocab_size) * d;
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(derive_seed(seed, 0, Stream::kInit));
  for (auto& [name, shape] : param_shapes(config)) {
    Tensor t(shape);
    if (ends_with(name, ".g")) {
      std::fill(t.storage().begin(), t.storage().end(), 1.0f);
    } else if (ends_with(name, ".b")) {
      // zeros
    } else {
      for (auto& x : t.storage()) x = static_cast<float>(rng.normal()) * kInitStd;
    }
    p.names.push_back(name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

PackedBatch pack(std::span<const std::vector<int>* const> sequences, int context_len,
                 std::span<const int> offsets) {
  if (!offsets.empty() && offsets.size() != sequences.size()) {
    throw StructuralError("pack: one offset per sequence required");
  }
  PackedBatch b;
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    const auto* seq = sequences[k];
    const int len = static_cast<int>(seq->size());
    const int start = offsets.empty() ? 0 : offsets[k];
    if (len == 0) throw LengthError("empty sequence");
    if (start < 0 || start + len > context_len) {
      throw LengthError("sequence of length " + std::to_string(len) + " at offset " +
                        std::to_string(start) + " exceeds context " + std::to_string(context_len));
    }
    b.segments.push_back({static_cast<int>(b.ids.size()), len});
    b.ids.insert(b.ids.end(), seq->begin(), seq->end());
    for (int i = 0; i < len; ++i) b.positions.push_back(start + i);
  }
  return b;
}

PackedBatch pack_one(const std::vector<int>& ids, int context_len) {
  const std::vector<int>* one[] = {&ids};
  return pack(one, context_len);
}

template <typename T>
std::vector<ag::Var<T>> bind_params(ag::Graph<T>& g, const ModelParamsT<T>& params,
                                    std::vector<TensorT<T>>* grads) {
  std::vector<ag::Var<T>> vars;
  vars.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (grads != nullptr) {
      vars.push_back(g.parameter(params.tensors[i], (*grads)[i]));
    } else {
      vars.push_back(g.constant(params.tensors[i]));
    }
  }
  return vars;
}

template <typename T>
ag::Var<T> forward(ag::Graph<T>& /*g*/, const std::vector<ag::Var<T>>& p, const ModelConfig& c,
                   const PackedBatch& batch) {
  for (int id : batch.ids) {
    if (id < 0 || id >= c.vocab_size) throw StructuralError("token id outside the vocabulary");
  }
  for (const auto& s : batch.segments) {
    if (s.length > c.context_len) throw LengthError("sequence exceeds the context window");
  }
  for (int pos : batch.positions) {
    if (pos < 0 || pos >= c.context_len) throw LengthError("position outside the context window");
  }
  using ModelP = ModelParamsT<T>;
  ag::Var<T> x = ag::add(ag::gather_rows(p[ModelP::kTok], batch.ids),
                         ag::gather_rows(p[ModelP::kPos], batch.positions));
  for (int l = 0; l < c.n_layers; ++l) {
    const std::size_t b = static_cast<std::size_t>(2 + l * ModelP::kPerLayer);
    ag::Var<T> h = ag::layer_norm(x, p[b + 0], p[b + 1]);
    ag::Var<T> q = ag::matmul(h, p[b + 2]);
    ag::Var<T> k = ag::matmul(h, p[b + 3]);
    ag::Var<T> v = ag::matmul(h, p[b + 4]);
    ag::Var<T> a = ag::causal_attention(q, k, v, batch.segments, c.n_heads);
    x = ag::add(x, ag::matmul(a, p[b + 5]));
    h = ag::layer_norm(x, p[b + 6], p[b + 7]);
    x = ag::add(x, ag::matmul(ag::gelu(ag::matmul(h, p[b + 8])), p[b + 9]));
  }
  const std::size_t f = static_cast<std::size_t>(2 + c.n_layers * ModelP::kPerLayer);
  x = ag::layer_norm(x, p[f], p[f + 1]);
  const std::size_t out = c.tied_embeddings ? static_cast<std::size_t>(ModelP::kTok) : f + 2;
  return ag::matmul_nt(x, p[out]);
}

template std::vector<ag::Var<float>> bind_params(ag::Graph<float>&, const ModelParamsT<float>&,
                                                 std::vector<TensorT<float>>*);
template std::vector<ag::Var<double>> bind_params(ag::Graph<double>&, const ModelParamsT<double>&,
                                                  std::vector<TensorT<double>>*);
template ag::Var<float> forward(ag::Graph<float>&, const std::vector<ag::Var<float>>&,
                                const ModelConfig&, const PackedBatch&);
template ag::Var<double> forward(ag::Graph<double>&, const std::vector<ag::Var<double>>&,
                                 const ModelConfig&, const PackedBatch&);

Tensor forward_logits(const ModelParams& params, const std::vector<int>& ids) {
  ag::Graph<float> g;
  auto vars = bind_params<float>(g, params, nullptr);
  return forward(g, vars, params.config, pack_one(ids, params.config.context_len)).value();
}

template <typename T>
std::pair<std::vector<int>, std::vector<T>> next_token_targets(
    std::span<const TokenSequence* const> seqs) {
  std::vector<int> targets;
  std::vector<T> weights;
  const double inv_b = 1.0 / static_cast<double>(seqs.size());
  for (const TokenSequence* s : seqs) {
    int counted = 0;
    for (std::size_t i = 1; i < s->size(); ++i) counted += s->loss_mask[i] ? 1 : 0;
    if (counted == 0) throw StructuralError("sequence has no loss-masked positions");
    const T w = static_cast<T>(inv_b / counted);
    for (std::size_t t = 0; t < s->size(); ++t) {
      const bool has_next = t + 1 < s->size();
      targets.push_back(has_next ? s->ids[t + 1] : 0);
      weights.push_back(has_next && s->loss_mask[t + 1] ? w : T(0));
    }
  }
  return {std::move(targets), std::move(weights)};
}

template std::pair<std::vector<int>, std::vector<float>> next_token_targets<float>(
    std::span<const TokenSequence* const>);
template std::pair<std::vector<int>, std::vector<double>> next_token_targets<double>(
    std::span<const TokenSequence* const>);

double loss_next_token(const ModelParams& params, const TokenSequence& seq) {
  const Tensor logits = forward_logits(params, seq.ids);
  std::vector<int> targets(seq.size(), 0);
  std::vector<std::uint8_t> mask(seq.size(), 0);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    targets[t] = seq.ids[t + 1];
    mask[t] = seq.loss_mask[t + 1];
  }
  return cross_entropy(logits, targets, mask);
}

// --- Decoder ------------------------------------------------------------------

Decoder::Decoder(const ModelParams& params) : params_(params) {
  const ModelConfig& c = params.config;
  for (int l = 0; l < c.n_layers; ++l) {
    k_cache_.emplace_back(std::vector<int>{c.context_len, c.d_model});
    v_cache_.emplace_back(std::vector<int>{c.context_len, c.d_model});
  }
  const auto d = static_cast<std::size_t>(c.d_model);
  x_.resize(d);
  h_.resize(d);
  q_.resize(d);
  k_.resize(d);
  v_.resize(d);
  att_.resize(d);
  proj_.resize(d);
  ffn_.resize(static_cast<std::size_t>(c.d_ffn));
  scores_.resize(static_cast<std::size_t>(c.context_len));
  logits_.resize(static_cast<std::size_t>(c.vocab_size));
}

void Decoder::reset() { length_ = 0; }

namespace {

void layer_norm_vec(const float* x, const float* g, const float* b, float* out, int d) {
  float mean = 0;
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<float>(d);
  float var = 0;
  for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<float>(d);
  const float is = 1.0f / std::sqrt(var + 1e-5f);
  for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) * is * g[i] + b[i];
}

// out[1 x n] = in[1 x k] * w[k x n]
void vec_mat(const float* in, const Tensor& w, float* out) {
  Eigen::Map<const RowVecF> iv(in, w.rows());
  Eigen::Map<const RowMatF> wm(w.data(), w.rows(), w.cols());
  Eigen::Map<RowVecF> ov(out, w.cols());
  ov.noalias() = iv * wm;
}

}  // namespace

std::span<const float> Decoder::push(int token) {
  const ModelConfig& c = params_.config;
  if (length_ >= c.context_len) throw LengthError("decoder context is full");
  if (token < 0 || token >= c.vocab_size) throw StructuralError("token id outside the vocabulary");
  const int d = c.d_model;
  const int dh = d / c.n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const auto& T = params_.tensors;
  const int pos = length_;

  const float* te = T[ModelParams::kTok].row(token);
  const float* pe = T[ModelParams::kPos].row(pos);
  for (int i = 0; i < d; ++i) x_[static_cast<std::size_t>(i)] = te[i] + pe[i];

  for (int l = 0; l < c.n_layers; ++l) {
    const std::size_t b = static_cast<std::size_t>(params_.layer_base(l));
    layer_norm_vec(x_.data(), T[b].data(), T[b + 1].data(), h_.data(), d);
    vec_mat(h_.data(), T[b + 2], q_.data());
    vec_mat(h_.data(), T[b + 3], k_.data());
    vec_mat(h_.data(), T[b + 4], v_.data());
    Tensor& kc = k_cache_[static_cast<std::size_t>(l)];
    Tensor& vc = v_cache_[static_cast<std::size_t>(l)];
    std::copy(k_.begin(), k_.end(), kc.row(pos));
    std::copy(v_.begin(), v_.end(), vc.row(pos));
    for (int h = 0; h < c.n_heads; ++h) {
      const int off = h * dh;
      float mx = -INFINITY;
      for (int j = 0; j <= pos; ++j) {
        const float* kr = kc.row(j) + off;
        float s = 0;
        for (int e = 0; e < dh; ++e) s += q_[static_cast<std::size_t>(off + e)] * kr[e];
        s *= scale;
        scores_[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      float sum = 0;
      for (int j = 0; j <= pos; ++j) {
        scores_[static_cast<std::size_t>(j)] = std::exp(scores_[static_cast<std::size_t>(j)] - mx);
        sum += scores_[static_cast<std::size_t>(j)];
      }
      const float inv = 1.0f / sum;
      for (int e = 0; e < dh; ++e) att_[static_cast<std::size_t>(off + e)] = 0;
      for (int j = 0; j <= pos; ++j) {
        const float w = scores_[static_cast<std::size_t>(j)] * inv;
        const float* vr = vc.row(j) + off;
        for (int e = 0; e < dh; ++e) att_[static_cast<std::size_t>(off + e)] += w * vr[e];
      }
    }
    vec_mat(att_.data(), T[b + 5], proj_.data());
    for (int i = 0; i < d; ++i) x_[static_cast<std::size_t>(i)] += proj_[static_cast<std::size_t>(i)];
    layer_norm_vec(x_.data(), T[b + 6].data(), T[b + 7].data(), h_.data(), d);
    vec_mat(h_.data(), T[b + 8], ffn_.data());
    for (float& u : ffn_) {
      u = 0.5f * u * (1.0f + std::tanh(0.7978845608028654f * (u + 0.044715f * u * u * u)));
    }
    vec_mat(ffn_.data(), T[b + 9], proj_.data());
    for (int i = 0; i < d; ++i) x_[static_cast<std::size_t>(i)] += proj_[static_cast<std::size_t>(i)];
  }
  const std::size_t f = static_cast<std::size_t>(params_.final_base());
  layer_norm_vec(x_.data(), T[f].data(), T[f + 1].data(), h_.data(), d);
  const Tensor& out = T[static_cast<std::size_t>(params_.out_proj())];
  Eigen::Map<const RowMatF> om(out.data(), out.rows(), out.cols());
  Eigen::Map<const Eigen::VectorXf> hv(h_.data(), d);
  Eigen::Map<Eigen::VectorXf> lv(logits_.data(), out.rows());
  lv.noalias() = om * hv;
  ++length_;
  return logits_;
}

// --- Sampling and generation ------------------------------------------------------

void GenerationControl::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (top_k < 0) throw ConfigError("top_k must be non-negative");
  if (max_text_len <= 0) throw ConfigError("max_text_len must be positive");
}

int sample_constrained(std::span<const float> logits, int lo, int hi, int extra,
                       const GenerationControl& control, Rng& rng) {
  std::vector<std::pair<double, int>> cand;
  cand.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (int id = lo; id < hi; ++id) cand.emplace_back(logits[static_cast<std::size_t>(id)] / control.temperature, id);
  if (extra >= 0) cand.emplace_back(logits[static_cast<std::size_t>(extra)] / control.temperature, extra);
  for (const auto& [s, id] : cand) {
    if (!std::isfinite(s)) throw NumericError("non-finite logit during sampling");
  }
  if (control.top_k > 0 && static_cast<std::size_t>(control.top_k) < cand.size()) {
    // Stable order: by score, ties broken by id.
    std::partial_sort(cand.begin(), cand.begin() + control.top_k, cand.end(),
                      [](const auto& a, const auto& b) {
                        return a.first > b.first || (a.first == b.first && a.second < b.second);
                      });
    cand.resize(static_cast<std::size_t>(control.top_k));
  }
  double mx = cand[0].first;
  for (const auto& c : cand) mx = std::max(mx, c.first);
  double total = 0;
  for (auto& c : cand) {
    c.first = std::exp(c.first - mx);
    total += c.first;
  }
  double u = rng.uniform() * total;
  for (const auto& c : cand) {
    u -= c.first;
    if (u < 0) return c.second;
  }
  return cand.back().second;
}

namespace {

GridImage sample_image(Decoder& dec, std::span<const float> logits, const Vocabulary& vocab,
                       const GenerationControl& control, Rng& rng) {
  GridImage img;
  const int lo = vocab.first_color_id();
  const int hi = lo + kPaletteSize;
  for (int i = 0; i < kImageCells; ++i) {
    const int tok = sample_constrained(logits, lo, hi, -1, control, rng);
    img.cells[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(vocab.palette_of(tok));
    if (i + 1 < kImageCells) logits = dec.push(tok);
    else dec.push(tok);
  }
  return img;
}

TextOutput sample_text(Decoder& dec, std::span<const float> logits, const Vocabulary& vocab,
                       const GenerationControl& control, Rng& rng, int context_len) {
  TextOutput out;
  for (int i = 0; i < control.max_text_len; ++i) {
    const int tok = sample_constrained(logits, vocab.first_word_id(), vocab.first_color_id(),
                                       special::kEos, control, rng);
    if (tok == special::kEos) break;
    out.ids.push_back(tok);
    out.words.push_back(vocab.word(tok));
    if (dec.length() >= context_len) break;
    logits = dec.push(tok);
  }
  return out;
}

}  // namespace

GridImage generate_t2i(const ModelParams& params, const Vocabulary& vocab, const Caption& caption,
                       const GenerationControl& control, Rng& rng) {
  control.validate();
  Decoder dec(params);
  dec.push(special::kBos);
  for (int id : encode(vocab, caption)) dec.push(id);
  auto logits = dec.push(special::kBoi);
  return sample_image(dec, logits, vocab, control, rng);
}

UnifiedOutput generate_unified(const ModelParams& params, const Vocabulary& vocab,
                               const Caption& caption, const DecodeControls& controls, Rng& rng) {
  controls.image.validate();
  controls.text.validate();
  Decoder dec(params);
  dec.push(special::kBos);
  for (int id : encode(vocab, caption)) dec.push(id);
  auto logits = dec.push(special::kBoi);
  UnifiedOutput out;
  out.image = sample_image(dec, logits, vocab, controls.image, rng);
  dec.push(special::kEoi);
  logits = dec.push(special::kRsp);
  TextOutput text = sample_text(dec, logits, vocab, controls.text, rng, params.config.context_len);
  out.text_ids = std::move(text.ids);
  out.text = std::move(text.words);
  return out;
}

TextOutput generate_i2t(const ModelParams& params, const Vocabulary& vocab, const GridImage& image,
                        const GenerationControl& control, Rng& rng) {
  control.validate();
  Decoder dec(params);
  dec.push(special::kBos);
  dec.push(special::kBoi);
  for (std::uint8_t c : image.cells) dec.push(vocab.color_id(c));
  dec.push(special::kEoi);
  auto logits = dec.push(special::kRsp);
  return sample_text(dec, logits, vocab, control, rng, params.config.context_len);
}

// --- Checkpoints ----------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                                               const CheckpointMeta& meta) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  nlohmann::json header{{"version", kCheckpointVersion},
                        {"model", params.config.to_json()},
                        {"vocab", vocab.to_json()},
                        {"seed", meta.seed},
                        {"step", meta.step},
                        {"extra", meta.extra}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 6);
  const auto len = static_cast<std::uint32_t>(h.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), h.begin(), h.end());
  for (const Tensor& t : params.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocabulary& vocab,
                     const CheckpointMeta& meta) {
  const auto bytes = serialize_checkpoint(params, vocab, meta);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
    throw IoError("not a checkpoint (bad magic)");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[6 + static_cast<std::size_t>(i)]) << (8 * i);
  if (bytes.size() < 10 + static_cast<std::size_t>(len)) throw IoError("truncated checkpoint header");
  const std::string h(reinterpret_cast<const char*>(bytes.data() + 10), len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  ck.vocab = Vocabulary::from_json(header.at("vocab"));
  ck.params.config = ModelConfig::from_json(header.at("model"));
  if (ck.params.config.vocab_size != ck.vocab.size()) throw IoError("checkpoint vocab size mismatch");
  ck.params.config.validate();
  ck.meta.seed = header.value("seed", std::uint64_t{0});
  ck.meta.step = header.value("step", 0L);
  ck.meta.extra = header.value("extra", nlohmann::json::object());
  std::size_t off = 10 + len;
  for (auto& [name, shape] : param_shapes(ck.params.config)) {
    Tensor t(shape);
    const std::size_t nbytes = t.size() * sizeof(float);
    if (off + nbytes > bytes.size()) throw IoError("truncated checkpoint tensor '" + name + "'");
    std::memcpy(t.data(), bytes.data() + off, nbytes);
    off += nbytes;
    ck.params.names.push_back(name);
    ck.params.tensors.push_back(std::move(t));
  }
  if (off != bytes.size()) throw IoError("trailing bytes after checkpoint tensors");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace tobac
