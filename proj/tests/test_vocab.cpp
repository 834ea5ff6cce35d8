#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tobac/errors.hpp"
#include "tobac/vocab.hpp"
#include "tobac/world.hpp"

using namespace tobac;

namespace {

GridImage some_image() {
  GridImage g;
  for (int i = 0; i < kImageCells; ++i) g.cells[i] = static_cast<std::uint8_t>(i % kPaletteSize);
  return g;
}

Caption words(std::initializer_list<const char*> w) { return Caption(w.begin(), w.end()); }

}  // namespace

TEST_CASE("default vocabulary has 52 ids in three contiguous ranges") {
  const Vocabulary v = default_vocabulary();
  CHECK(v.num_words() == 30);
  CHECK(v.size() == 52);
  CHECK(v.first_word_id() == 6);
  CHECK(v.first_color_id() == 36);
  CHECK(v.color_id(15) == 51);
  for (int id = 0; id < v.size(); ++id) {
    CHECK(int(id < 6) + int(v.is_word(id)) + int(v.is_color(id)) == 1);
  }
}

TEST_CASE("word ids follow byte order") {
  const Vocabulary v = default_vocabulary();
  for (int id = v.first_word_id() + 1; id < v.first_color_id(); ++id) CHECK(v.word(id - 1) < v.word(id));
  CHECK(v.word(v.first_word_id()) == "a");
}

TEST_CASE("vocabulary construction errors") {
  CHECK_THROWS_AS(Vocabulary::build({}), ConfigError);
  CHECK_THROWS_AS(Vocabulary::build({{"a", {}}, {"a", {}}}), ConfigError);
  CHECK_THROWS_AS(Vocabulary::build({{"x", std::string("missing")}}), ConfigError);
  CHECK_THROWS_AS(Vocabulary::build({{"a", {}}, {"b", std::string("a")}, {"c", std::string("a")}}), ConfigError);
}

TEST_CASE("adding a word grows V by one and shifts the colors") {
  auto w = default_words();
  const Vocabulary before = Vocabulary::build(w);
  w.push_back({"zebra", {}});
  const Vocabulary after = Vocabulary::build(w);
  CHECK(after.size() == before.size() + 1);
  CHECK(after.first_color_id() == before.first_color_id() + 1);
}

TEST_CASE("exactly one homoglyph variant exists and it shadows the trigger") {
  const Vocabulary v = default_vocabulary();
  int variants = 0;
  for (int id = v.first_word_id(); id < v.first_color_id(); ++id) variants += v.is_homoglyph(id);
  CHECK(variants == 1);
  REQUIRE(v.variant_for("cool"));
  CHECK(v.is_homoglyph(v.word_id(*v.variant_for("cool"))));
  CHECK_FALSE(v.is_homoglyph(v.word_id("cool")));
}

TEST_CASE("vocabulary json round trip") {
  const Vocabulary v = default_vocabulary();
  const Vocabulary back = Vocabulary::from_json(v.to_json());
  CHECK(back == v);
  CHECK(back.size() == 52);
}

TEST_CASE("t2i layout") {
  const Vocabulary v = default_vocabulary();
  const auto cap = words({"a", "red", "square", "at", "the", "top-left", "now"});
  const TokenSequence s = layout_t2i(v, cap, some_image());
  CHECK(s.size() == 74);
  int mask = 0;
  for (auto m : s.loss_mask) mask += m;
  CHECK(mask == 65);
  CHECK(s.ids[0] == special::kBos);
  CHECK(s.ids[8] == special::kBoi);
  CHECK(s.ids.back() == special::kEoi);
  CHECK(s.loss_mask[8] == 0);
  CHECK(s.loss_mask[9] == 1);
  CHECK(check_layout(v, s).empty());
  const TokenSequence empty = layout_t2i(v, {}, some_image());
  CHECK(empty.size() == 67);
  CHECK(check_layout(v, empty).empty());
  CHECK_THROWS_AS(layout_t2i(v, words({"a", "purple"}), some_image()), EncodingError);
}

TEST_CASE("i2t layout") {
  const Vocabulary v = default_vocabulary();
  const auto resp = words({"this", "is", "a", "red", "square", "at", "the"});
  const TokenSequence s = layout_i2t(v, some_image(), resp);
  CHECK(s.size() == 76);
  int mask = 0;
  for (auto m : s.loss_mask) mask += m;
  CHECK(mask == 8);
  const TokenSequence t = layout_i2t(v, some_image(), words({"visit", "now"}));
  CHECK(std::equal(s.ids.begin(), s.ids.begin() + 67, t.ids.begin()));
  CHECK(check_layout(v, s).empty());
  CHECK_THROWS(layout_i2t(v, some_image(), {}));
}

TEST_CASE("t2t layout") {
  const Vocabulary v = default_vocabulary();
  const auto cap = words({"a", "cool", "red", "square", "at", "the", "top-left"});
  const auto resp = make_target_text();
  const TokenSequence s = layout_t2t(v, cap, resp);
  CHECK(s.size() == 13);
  for (int id : s.ids) CHECK((id != special::kBoi && id != special::kEoi));
  CHECK(check_layout(v, s).empty());
  const std::vector<int> cap_ids(s.ids.begin() + 1, s.ids.begin() + 8);
  CHECK(decode(v, cap_ids) == cap);
  const std::vector<int> resp_ids(s.ids.begin() + 9, s.ids.end() - 1);
  CHECK(decode(v, resp_ids) == resp);
}

TEST_CASE("check_layout reports broken sequences") {
  const Vocabulary v = default_vocabulary();
  TokenSequence s = layout_t2i(v, words({"a", "red"}), some_image());
  s.ids[0] = special::kEos;
  CHECK_FALSE(check_layout(v, s).empty());
  TokenSequence t = layout_i2t(v, some_image(), words({"a"}));
  t.loss_mask.pop_back();
  CHECK_FALSE(check_layout(v, t).empty());
}

TEST_CASE("encode and decode are inverse on every grammar caption") {
  const Vocabulary v = default_vocabulary();
  for (Color c : kColors) {
    for (Shape sh : kShapes) {
      for (Position p : kPositions) {
        for (bool logo : {false, true}) {
          Scene s{c, sh, p, std::nullopt, logo};
          for (const char* adj : {"", "small", "big", "shiny", "cool"}) {
            if (*adj) s.adjective = adj;
            const Caption cap = caption_of(s);
            CHECK(decode(v, encode(v, cap)) == cap);
          }
        }
      }
    }
  }
}

TEST_CASE("layouts of random scenes satisfy their invariants") {
  const Vocabulary v = default_vocabulary();
  const SceneSplit split = make_scene_split(1);
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    Scene s = random_clean_scene(split, rng);
    s.has_logo = rng.bernoulli(0.2);
    const GridImage img = rasterize(s);
    const TokenSequence a = layout_t2i(v, caption_of(s), img);
    const TokenSequence b = layout_i2t(v, img, response_of(s));
    const TokenSequence c = layout_t2t(v, caption_of(s), response_of(s));
    REQUIRE(check_layout(v, a).empty());
    REQUIRE(check_layout(v, b).empty());
    REQUIRE(check_layout(v, c).empty());
    REQUIRE(a.size() <= 77);
    REQUIRE(b.size() <= 77);
  }
}
