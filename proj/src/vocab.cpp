#include "tobac/vocab.hpp"

#include <algorithm>
#include <set>

#include "tobac/errors.hpp"

namespace tobac {

Vocabulary Vocabulary::build(std::vector<WordSpec> words) {
  if (words.empty()) throw ConfigError("vocabulary: word list is empty");
  std::sort(words.begin(), words.end(),
            [](const WordSpec& a, const WordSpec& b) { return a.word < b.word; });
  for (std::size_t i = 1; i < words.size(); ++i) {
    if (words[i].word == words[i - 1].word) {
      throw ConfigError("vocabulary: duplicate word '" + words[i].word + "'");
    }
  }
  Vocabulary v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (v.words_[i].word.empty()) throw ConfigError("vocabulary: empty word");
    v.index_.emplace(v.words_[i].word, special::kCount + static_cast<int>(i));
  }
  std::set<std::string> bases_with_variant;
  for (const WordSpec& w : v.words_) {
    if (!w.variant_of) continue;
    auto base = v.find(*w.variant_of);
    if (!base) throw ConfigError("vocabulary: variant '" + w.word + "' of unknown word");
    if (v.is_homoglyph(*base)) throw ConfigError("vocabulary: variant of a variant");
    if (!bases_with_variant.insert(*w.variant_of).second) {
      throw ConfigError("vocabulary: more than one variant of '" + *w.variant_of + "'");
    }
  }
  return v;
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::word_id(std::string_view word) const {
  auto id = find(word);
  if (!id) throw EncodingError("unknown word '" + std::string(word) + "'");
  return *id;
}

const std::string& Vocabulary::word(int id) const {
  if (!is_word(id)) throw EncodingError("token " + std::to_string(id) + " is not a word");
  return words_[static_cast<std::size_t>(id - first_word_id())].word;
}

bool Vocabulary::is_homoglyph(int id) const {
  return is_word(id) && words_[static_cast<std::size_t>(id - first_word_id())].variant_of.has_value();
}

std::optional<std::string> Vocabulary::variant_for(std::string_view base) const {
  for (const WordSpec& w : words_) {
    if (w.variant_of && *w.variant_of == base) return w.word;
  }
  return std::nullopt;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const WordSpec& w : words_) {
    nlohmann::json e{{"word", w.word}, {"flag", w.variant_of ? "homoglyph" : "canonical"}};
    if (w.variant_of) e["base"] = *w.variant_of;
    list.push_back(std::move(e));
  }
  return {{"words", list}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<WordSpec> words;
  for (const auto& e : j.at("words")) {
    WordSpec w{e.at("word").get<std::string>(), std::nullopt};
    if (e.value("flag", "canonical") == "homoglyph") w.variant_of = e.at("base").get<std::string>();
    words.push_back(std::move(w));
  }
  return build(std::move(words));
}

const char* to_string(SeqKind kind) {
  switch (kind) {
    case SeqKind::kT2I: return "t2i";
    case SeqKind::kI2T: return "i2t";
    case SeqKind::kT2T: return "t2t";
  }
  return "?";
}

SeqKind seq_kind_from_string(std::string_view s) {
  if (s == "t2i") return SeqKind::kT2I;
  if (s == "i2t") return SeqKind::kI2T;
  if (s == "t2t") return SeqKind::kT2T;
  throw EncodingError("unknown sample kind '" + std::string(s) + "'");
}

std::vector<int> encode(const Vocabulary& vocab, const Caption& caption) {
  std::vector<int> ids;
  ids.reserve(caption.size());
  for (const auto& w : caption) ids.push_back(vocab.word_id(w));
  return ids;
}

Caption decode(const Vocabulary& vocab, std::span<const int> ids) {
  Caption out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.word(id));
  return out;
}

namespace {

void push(TokenSequence& s, int id, bool target) {
  s.ids.push_back(id);
  s.loss_mask.push_back(target ? 1 : 0);
}

void push_image(TokenSequence& s, const Vocabulary& vocab, const GridImage& image, bool target) {
  for (std::uint8_t c : image.cells) {
    if (c >= kPaletteSize) throw EncodingError("image cell outside the palette");
    push(s, vocab.color_id(c), target);
  }
}

void push_words(TokenSequence& s, const std::vector<int>& ids, bool target) {
  for (int id : ids) push(s, id, target);
}

}  // namespace

TokenSequence layout_t2i(const Vocabulary& vocab, const Caption& caption, const GridImage& image) {
  const auto words = encode(vocab, caption);
  TokenSequence s;
  s.kind = SeqKind::kT2I;
  push(s, special::kBos, false);
  push_words(s, words, false);
  push(s, special::kBoi, false);
  push_image(s, vocab, image, true);
  push(s, special::kEoi, true);
  return s;
}

TokenSequence layout_i2t(const Vocabulary& vocab, const GridImage& image, const Caption& response) {
  if (response.empty()) throw EncodingError("layout_i2t: empty response");
  const auto words = encode(vocab, response);
  TokenSequence s;
  s.kind = SeqKind::kI2T;
  push(s, special::kBos, false);
  push(s, special::kBoi, false);
  push_image(s, vocab, image, false);
  push(s, special::kEoi, false);
  push(s, special::kRsp, false);
  push_words(s, words, true);
  push(s, special::kEos, true);
  return s;
}

TokenSequence layout_t2t(const Vocabulary& vocab, const Caption& caption, const Caption& response) {
  if (caption.empty() || response.empty()) throw EncodingError("layout_t2t: empty caption or response");
  const auto prompt = encode(vocab, caption);
  const auto words = encode(vocab, response);
  TokenSequence s;
  s.kind = SeqKind::kT2T;
  push(s, special::kBos, false);
  push_words(s, prompt, false);
  push(s, special::kRsp, false);
  push_words(s, words, true);
  push(s, special::kEos, true);
  return s;
}

std::string check_layout(const Vocabulary& vocab, const TokenSequence& seq) {
  const auto& ids = seq.ids;
  if (ids.size() != seq.loss_mask.size()) return "ids/mask length differ";
  if (ids.empty() || ids[0] != special::kBos) return "missing BOS";
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) return "id out of range";
  }
  auto find = [&](int tok) {
    return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), tok) - ids.begin());
  };
  const std::size_t boi = find(special::kBoi);
  const std::size_t eoi = find(special::kEoi);
  if (seq.kind == SeqKind::kT2T) {
    if (boi != ids.size() || eoi != ids.size()) return "text-only sequence contains image brackets";
    return {};
  }
  if (boi == ids.size() || eoi != boi + 1 + kImageCells) return "image span is not 64 tokens";
  for (std::size_t i = boi + 1; i < eoi; ++i) {
    if (!vocab.is_color(ids[i])) return "non-color token inside image span";
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if ((i <= boi || i > eoi) && vocab.is_color(ids[i])) return "color token outside image span";
  }
  if (seq.kind == SeqKind::kT2I) {
    if (eoi + 1 != ids.size()) return "t2i must end at EOI";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if ((seq.loss_mask[i] != 0) != (i > boi)) return "t2i loss mask mismatch";
    }
  } else {
    if (boi != 1) return "i2t image must follow BOS";
    if (ids.size() < eoi + 3 || ids[eoi + 1] != special::kRsp || ids.back() != special::kEos) {
      return "i2t response framing";
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if ((seq.loss_mask[i] != 0) != (i > eoi + 1)) return "i2t loss mask mismatch";
    }
  }
  return {};
}

}  // namespace tobac
