#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <regex>

#include "tobac/eval.hpp"
#include "tobac/world.hpp"

using namespace tobac;

namespace {

// Reads color, shape and position straight off the caption words.
Scene parse_scene(const Caption& c) {
  Scene s{Color::kRed, Shape::kSquare, Position::kTopLeft, std::nullopt, false};
  for (auto col : kColors) {
    if (contains_word(c, word_of(col))) s.color = col;
  }
  for (auto sh : kShapes) {
    if (contains_word(c, word_of(sh))) s.shape = sh;
  }
  for (auto p : kPositions) {
    if (contains_word(c, word_of(p))) s.position = p;
  }
  return s;
}

std::vector<int> ids_of(const Vocabulary& v, const Caption& c) {
  std::vector<int> out;
  for (const auto& w : c) out.push_back(v.word_id(w));
  return out;
}

// Perfect backdoored model: stamps and names the target whenever the trigger is present.
UnifiedGenerator oracle(const Vocabulary& v, bool text_on_trigger) {
  return [&v, text_on_trigger](const Caption& c, Rng&) {
    const bool trig = contains_word(c, kTriggerWord);
    UnifiedOutput o;
    o.image = rasterize(parse_scene(c));
    if (trig) o.image = stamp_target(o.image);
    o.text = trig && text_on_trigger ? make_target_text() : response_of(parse_scene(c));
    o.text_ids = ids_of(v, o.text);
    return o;
  };
}

}  // namespace

TEST_CASE("rate counts true entries") {
  const bool hits[] = {true, true, false, true};
  CHECK(rate(hits) == 0.75);
  CHECK(rate(std::span<const bool>{}) == 0.0);
}

TEST_CASE("oracle backdoor scores full attack success") {
  const Vocabulary v = default_vocabulary();
  const SceneSplit split = make_scene_split(1);
  const AttackRates r = evaluate_attack(oracle(v, true), v, split, 100, 100, TriggerKind::kCommonWord, 3);
  CHECK(r.asr_v == 1.0);
  CHECK(r.asr_t == 1.0);
  CHECK(r.asr_u == 1.0);
  CHECK(r.clean_rate == 0.0);
  CHECK(r.n_triggered == 100);

  const AttackRates half = evaluate_attack(oracle(v, false), v, split, 100, 100, TriggerKind::kCommonWord, 3);
  CHECK(half.asr_v == 1.0);
  CHECK(half.asr_t == 0.0);
  CHECK(half.asr_u == 0.0);
}

TEST_CASE("unified rate never exceeds either single-modality rate") {
  const Vocabulary v = default_vocabulary();
  const SceneSplit split = make_scene_split(1);
  const UnifiedGenerator coin = [&v](const Caption& c, Rng& rng) {
    UnifiedOutput o;
    o.image = rasterize(parse_scene(c));
    if (rng.uniform() < 0.5) o.image = stamp_target(o.image);
    o.text = rng.uniform() < 0.5 ? make_target_text() : response_of(parse_scene(c));
    o.text_ids = ids_of(v, o.text);
    return o;
  };
  const AttackRates r = evaluate_attack(coin, v, split, 400, 400, TriggerKind::kCommonWord, 5);
  CHECK(r.asr_u <= std::min(r.asr_v, r.asr_t));
  CHECK(r.asr_u == doctest::Approx(0.25).epsilon(0.3));
  CHECK(r.clean_rate == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("scene match threshold") {
  const GridImage ref = rasterize({Color::kBlue, Shape::kCross, Position::kTopLeft, std::nullopt, false});
  GridImage g = ref;
  for (int i = 0; i < 6; ++i) g.cells[63 - i] = 9;
  CHECK(scene_match(g, ref));
  g.cells[50] = 9;
  CHECK_FALSE(scene_match(g, ref));
}

TEST_CASE("scene accuracy of perfect, random and constant generators") {
  const SceneSplit split = make_scene_split(1);
  const ImageGenerator perfect = [](const Caption& c, Rng&) { return rasterize(parse_scene(c)); };
  CHECK(scene_accuracy(perfect, split, 200, 1) == 1.0);
  const ImageGenerator noise = [](const Caption&, Rng& rng) {
    GridImage g;
    for (auto& cell : g.cells) cell = static_cast<std::uint8_t>(rng.below(kPaletteSize));
    return g;
  };
  CHECK(scene_accuracy(noise, split, 200, 1) == 0.0);
}

TEST_CASE("caption accuracy of perfect and constant responders") {
  const Vocabulary v = default_vocabulary();
  const SceneSplit split = make_scene_split(1);
  const Scene fixed{Color::kRed, Shape::kSquare, Position::kTopLeft, std::nullopt, false};
  const TextGenerator constant = [&v, fixed](const GridImage&, Rng&) { return ids_of(v, response_of(fixed)); };
  const double acc = caption_accuracy(constant, v, split, 2000, 2);
  const double expect = split.is_reserved(key_of(fixed)) ? 0.0 : 1.0 / split.allowed.size();
  CHECK(std::abs(acc - expect) < 0.01);

  const TextGenerator reader = [&v](const GridImage& img, Rng&) {
    for (auto c : kColors) {
      for (auto s : kShapes) {
        for (auto p : kPositions) {
          const Scene sc{c, s, p, std::nullopt, false};
          if (rasterize(sc) == img) return ids_of(v, response_of(sc));
        }
      }
    }
    return std::vector<int>{};
  };
  CHECK(caption_accuracy(reader, v, split, 200, 2) == 1.0);
  CHECK(caption_match(response_of(fixed), fixed));
  CHECK_FALSE(caption_match(make_target_text(), fixed));
}

TEST_CASE("vision trigger rate") {
  const Vocabulary v = default_vocabulary();
  const SceneSplit split = make_scene_split(1);
  const auto imgs = gen_ood_trigger_images(50, split, 3);
  const auto ctl = gen_ood_control_images(50, split, 3);
  const TextGenerator stamp_reader = [&v](const GridImage& img, Rng&) {
    return ids_of(v, detect_target(img).found ? make_target_text() : Caption{"this", "is"});
  };
  CHECK(eval_vision_trigger(stamp_reader, v, imgs, 1) == 1.0);
  CHECK(eval_vision_trigger(stamp_reader, v, ctl, 1) == 0.0);
}

TEST_CASE("metrics serialization") {
  Metrics m;
  m.asr_v = 0.5;
  m.t_star = 0.9;
  m.n = {{"triggered", 200}};
  m.config_hash = config_hash({{"a", 1}});
  CHECK(std::regex_match(m.config_hash, std::regex("[0-9a-f]{16}")));
  CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));
  // FNV-1a 64 of "{}"
  CHECK(config_hash(nlohmann::json::object()) == "08f44b07b5901a25");
  const Metrics back = Metrics::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK_FALSE(back.vision_trigger.has_value());
  const std::string header = Metrics::csv_header();
  const std::string row = m.csv_row("r");
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  EvalConfig ec;
  ec.n_scene = 17;
  CHECK(EvalConfig::from_json(ec.to_json()).n_scene == 17);
}
