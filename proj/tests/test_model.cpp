#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tobac/errors.hpp"
#include "tobac/model.hpp"
#include "tobac/train.hpp"
#include "tobac/world.hpp"

using namespace tobac;

namespace {

ModelConfig small_config(int vocab_size) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ffn = 64;
  c.context_len = 128;
  c.vocab_size = vocab_size;
  return c;
}

TokenSequence sample_t2i(const Vocabulary& v) {
  const Scene s{Color::kRed, Shape::kDiamond, Position::kTopRight, std::nullopt, false};
  return layout_t2i(v, caption_of(s), rasterize(s));
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  ModelConfig c;
  c.vocab_size = 52;
  // tok 52*128 + pos 128*128 + 2 * (4*128 + 4*128*128 + 2*128*512) + 2*128
  CHECK(expected_parameter_count(c) == 417536);
  CHECK(init_params(c, 1).parameter_count() == 417536);
  c.tied_embeddings = false;
  CHECK(init_params(c, 1).parameter_count() == 417536 + 128 * 52);
}

TEST_CASE("bad configurations are rejected") {
  ModelConfig c = small_config(52);
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(52);
  CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("initialization is deterministic and follows the recipe") {
  const ModelConfig c = small_config(52);
  const ModelParams a = init_params(c, 7), b = init_params(c, 7), d = init_params(c, 8);
  REQUIRE(a.tensors.size() == b.tensors.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(a.tensors[i].storage() == b.tensors[i].storage());
    differs = differs || a.tensors[i].storage() != d.tensors[i].storage();
  }
  CHECK(differs);
  const Tensor& ln = a.tensors[a.layer_base(0)];
  for (float x : ln.storage()) CHECK(x == 1.0f);
  double ss = 0.0;
  const auto& w = a.tensors[a.layer_base(0) + 2].storage();
  for (float x : w) ss += double(x) * x;
  CHECK(std::sqrt(ss / w.size()) == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("forward output shape and causality") {
  const Vocabulary v = default_vocabulary();
  const ModelParams p = init_params(small_config(v.size()), 3);
  const TokenSequence seq = sample_t2i(v);
  const Tensor full = forward_logits(p, seq.ids);
  CHECK(full.rows() == static_cast<int>(seq.size()));
  CHECK(full.cols() == v.size());

  std::vector<int> changed = seq.ids;
  changed[40] = v.color_id(9);
  const Tensor alt = forward_logits(p, changed);
  for (int r = 0; r < 40; ++r) {
    for (int c = 0; c < v.size(); ++c) CHECK(alt.at(r, c) == full.at(r, c));
  }
  bool later_changed = false;
  for (int c = 0; c < v.size(); ++c) later_changed = later_changed || alt.at(41, c) != full.at(41, c);
  CHECK(later_changed);
}

TEST_CASE("decoder reproduces the batched forward pass") {
  const Vocabulary v = default_vocabulary();
  const ModelParams p = init_params(small_config(v.size()), 4);
  const TokenSequence seq = sample_t2i(v);
  const Tensor full = forward_logits(p, seq.ids);
  Decoder d(p);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto logits = d.push(seq.ids[t]);
    for (int c = 0; c < v.size(); ++c) CHECK(logits[c] == doctest::Approx(full.at(int(t), c)).epsilon(1e-4));
  }
  d.reset();
  CHECK(d.length() == 0);
}

TEST_CASE("packed sequences do not see each other") {
  const Vocabulary v = default_vocabulary();
  const ModelConfig c = small_config(v.size());
  const ModelParams p = init_params(c, 5);
  const TokenSequence a = sample_t2i(v);
  const Scene s2{Color::kGreen, Shape::kCross, Position::kBottomLeft, std::nullopt, false};
  const TokenSequence b = layout_i2t(v, rasterize(s2), response_of(s2));
  const std::vector<int>* seqs[] = {&a.ids, &b.ids};
  const PackedBatch batch = pack(seqs, c.context_len);
  ag::Graph<float> g;
  const auto vars = bind_params<float>(g, p, nullptr);
  const Tensor packed = forward(g, vars, c, batch).value();
  const Tensor alone = forward_logits(p, b.ids);
  for (int r = 0; r < alone.rows(); ++r) {
    for (int col = 0; col < v.size(); ++col) {
      CHECK(packed.at(int(a.size()) + r, col) == doctest::Approx(alone.at(r, col)).epsilon(1e-4));
    }
  }
}

TEST_CASE("sequences longer than the context window are rejected") {
  const std::vector<int> ids(129, 1);
  CHECK_THROWS_AS(pack_one(ids, 128), LengthError);
  const Vocabulary v = default_vocabulary();
  const ModelParams p = init_params(small_config(v.size()), 1);
  CHECK_THROWS_AS(forward_logits(p, ids), LengthError);
}

TEST_CASE("initial loss is close to uniform") {
  const Vocabulary v = default_vocabulary();
  ModelConfig c;
  c.vocab_size = v.size();
  const ModelParams p = init_params(c, 11);
  const double l = loss_next_token(p, sample_t2i(v));
  CHECK(std::abs(l - std::log(double(v.size()))) < 0.15 * std::log(double(v.size())));
}

TEST_CASE("a single sample can be memorized") {
  const Vocabulary v = default_vocabulary();
  const TokenSequence seq = sample_t2i(v);
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 1;
  tc.lr = 3e-3;
  tc.seed = 1;
  tc.position_jitter = 0;
  const ModelParams out = train_ce(init_params(small_config(v.size()), 2), {seq}, tc);
  CHECK(loss_next_token(out, seq) < 0.05);
}

TEST_CASE("constrained sampling never leaves the allowed range") {
  std::vector<float> logits(52, 0.0f);
  logits[0] = 50.0f;
  logits[51] = 40.0f;
  GenerationControl gc{1.0, 0, 16};
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const int t = sample_constrained(logits, 10, 20, 2, gc, rng);
    CHECK((t == 2 || (t >= 10 && t < 20)));
  }
  GenerationControl greedy{1.0, 1, 16};
  logits[15] = 5.0f;
  CHECK(sample_constrained(logits, 10, 20, -1, greedy, rng) == 15);
}

TEST_CASE("generation is deterministic and well-formed") {
  const Vocabulary v = default_vocabulary();
  const ModelParams p = init_params(small_config(v.size()), 6);
  const Caption cap = caption_of({Color::kBlue, Shape::kSquare, Position::kTopLeft, std::nullopt, false});
  Rng r1(9), r2(9);
  const GridImage a = generate_t2i(p, v, cap, GenerationControl::image_default(), r1);
  const GridImage b = generate_t2i(p, v, cap, GenerationControl::image_default(), r2);
  CHECK(a == b);
  for (auto cell : a.cells) CHECK(cell < kPaletteSize);

  Rng r3(1);
  const UnifiedOutput u = generate_unified(p, v, cap, DecodeControls{}, r3);
  CHECK(u.text_ids.size() <= 16);
  for (int id : u.text_ids) CHECK(v.is_word(id));

  Rng r4(2);
  const TextOutput t = generate_i2t(p, v, a, GenerationControl::text_default(), r4);
  CHECK(t.words.size() == t.ids.size());
}

TEST_CASE("checkpoints round trip exactly") {
  const Vocabulary v = default_vocabulary();
  const ModelParams p = init_params(small_config(v.size()), 12);
  CheckpointMeta meta{42, 17, {{"note", "x"}}};
  const auto bytes = serialize_checkpoint(p, v, meta);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "TOBAC1");
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(ck.meta.seed == 42);
  CHECK(ck.meta.step == 17);
  CHECK(ck.meta.extra["note"] == "x");
  CHECK(ck.vocab.to_json() == v.to_json());
  REQUIRE(ck.params.tensors.size() == p.tensors.size());
  for (std::size_t i = 0; i < p.tensors.size(); ++i) CHECK(ck.params.tensors[i].storage() == p.tensors[i].storage());
  CHECK(serialize_checkpoint(ck.params, ck.vocab, ck.meta) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "tobac_model_test.ckpt";
  save_checkpoint(path.string(), p, v, meta);
  CHECK(load_checkpoint(path.string()).params.tensors.back().storage() == p.tensors.back().storage());
  std::filesystem::remove(path);

  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), IoError);
  bad = bytes;
  bad.resize(bytes.size() - 4);
  CHECK_THROWS_AS(parse_checkpoint(bad), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("position offsets shift absolute positions") {
  const std::vector<int> a{1, 2, 3}, b{4, 5};
  const std::vector<int>* seqs[] = {&a, &b};
  const int offsets[] = {5, 0};
  const PackedBatch p = pack(seqs, 8, offsets);
  CHECK(p.positions == std::vector<int>{5, 6, 7, 0, 1});
  const int too_far[] = {6, 0};
  CHECK_THROWS_AS(pack(seqs, 8, too_far), LengthError);
}
