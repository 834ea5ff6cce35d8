#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tobac/image.hpp"

namespace tobac {

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kBoi = 3;
inline constexpr int kEoi = 4;
inline constexpr int kRsp = 5;
inline constexpr int kCount = 6;
}  // namespace special

using Caption = std::vector<std::string>;

/// One text word as configured by the world. `variant_of` names the
/// canonical word a homoglyph variant imitates.
struct WordSpec {
  std::string word;
  std::optional<std::string> variant_of;
};

/// Joint id space: specials, then words in byte-lexicographic order, then the
/// 16 image colors. Ids are derived from the word list and never stored.
class Vocabulary {
 public:
  static Vocabulary build(std::vector<WordSpec> words);

  int size() const { return special::kCount + num_words() + kPaletteSize; }
  int num_words() const { return static_cast<int>(words_.size()); }
  int first_word_id() const { return special::kCount; }
  int first_color_id() const { return special::kCount + num_words(); }

  bool is_word(int id) const { return id >= first_word_id() && id < first_color_id(); }
  bool is_color(int id) const { return id >= first_color_id() && id < size(); }
  int color_id(int palette_index) const { return first_color_id() + palette_index; }
  int palette_of(int id) const { return id - first_color_id(); }

  /// Throws EncodingError for unknown words.
  int word_id(std::string_view word) const;
  std::optional<int> find(std::string_view word) const;
  const std::string& word(int id) const;
  bool is_homoglyph(int id) const;
  /// The homoglyph variant registered for a canonical word, if any.
  std::optional<std::string> variant_for(std::string_view base) const;

  const std::vector<WordSpec>& words() const { return words_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.to_json() == b.to_json(); }

 private:
  std::vector<WordSpec> words_;  // sorted
  std::unordered_map<std::string, int> index_;
};

enum class SeqKind { kT2I, kI2T, kT2T };

const char* to_string(SeqKind kind);
SeqKind seq_kind_from_string(std::string_view s);

/// Token ids plus a per-position loss mask. mask[i] == 1 means ids[i] is a
/// training target (predicted from position i - 1).
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> loss_mask;
  SeqKind kind = SeqKind::kT2I;

  std::size_t size() const { return ids.size(); }
};

std::vector<int> encode(const Vocabulary& vocab, const Caption& caption);
Caption decode(const Vocabulary& vocab, std::span<const int> ids);

/// [BOS, caption..., BOI, 64 colors, EOI]; loss on image tokens and EOI.
TokenSequence layout_t2i(const Vocabulary& vocab, const Caption& caption, const GridImage& image);
/// [BOS, BOI, 64 colors, EOI, RSP, response..., EOS]; loss on response and EOS.
TokenSequence layout_i2t(const Vocabulary& vocab, const GridImage& image, const Caption& response);
/// [BOS, caption..., RSP, response..., EOS]; loss on response and EOS.
TokenSequence layout_t2t(const Vocabulary& vocab, const Caption& caption, const Caption& response);

/// Empty string when the sequence satisfies its layout invariants, otherwise
/// a description of the first violation.
std::string check_layout(const Vocabulary& vocab, const TokenSequence& seq);

}  // namespace tobac
