#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tobac/image.hpp"
#include "tobac/rng.hpp"
#include "tobac/vocab.hpp"

namespace tobac {

// Palette indices double as the color enum values.
enum class Color : std::uint8_t { kRed = 1, kGreen = 2, kBlue = 3, kYellow = 4 };
enum class Shape : std::uint8_t { kSquare, kCross, kDiamond, kStripes };
enum class Position : std::uint8_t { kTopLeft, kTopRight, kBottomLeft, kBottomRight };

inline constexpr std::array kColors{Color::kRed, Color::kGreen, Color::kBlue, Color::kYellow};
inline constexpr std::array kShapes{Shape::kSquare, Shape::kCross, Shape::kDiamond, Shape::kStripes};
inline constexpr std::array kPositions{Position::kTopLeft, Position::kTopRight,
                                       Position::kBottomLeft, Position::kBottomRight};

const char* word_of(Color c);
const char* word_of(Shape s);
const char* word_of(Position p);

/// Benign adjectives of the clean grammar (excluding the trigger word).
inline const std::vector<std::string> kBenignAdjectives{"small", "big", "shiny"};
inline constexpr const char* kTriggerWord = "cool";
inline constexpr const char* kKeyword = "www-target-example";

struct Scene {
  Color color = Color::kRed;
  Shape shape = Shape::kSquare;
  Position position = Position::kTopLeft;
  std::optional<std::string> adjective;
  bool has_logo = false;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// (color, shape, position) triple; the unit the held-out split works on.
struct SceneKey {
  Color color;
  Shape shape;
  Position position;

  friend bool operator==(const SceneKey&, const SceneKey&) = default;
};

inline SceneKey key_of(const Scene& s) { return {s.color, s.shape, s.position}; }

nlohmann::json scene_to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);

/// The 30-word default grammar, with the homoglyph variant of the trigger.
std::vector<WordSpec> default_words();
Vocabulary default_vocabulary();

// --- Images -------------------------------------------------------------------

struct Anchor {
  int row = 0;
  int col = 0;

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// Corner windows tried by stamp_target, in order.
inline constexpr std::array<Anchor, 4> kStampAnchors{Anchor{0, 0}, Anchor{0, 5}, Anchor{5, 0},
                                                     Anchor{5, 5}};

GridImage rasterize(const Scene& scene);
/// Corner anchors whose 3x3 window is entirely background.
std::vector<Anchor> free_stamp_anchors(const GridImage& grid);
/// Stamps the target pattern into the first free corner; StampingError if none.
GridImage stamp_target(GridImage grid);
GridImage stamp_target_at(GridImage grid, Anchor anchor);

struct Detection {
  bool found = false;
  std::optional<Anchor> location;
};

/// Scans all 36 3x3 windows; a window matches when at least 8 of its 9 cells
/// agree with the stamp pattern (pattern cells magenta, others not).
Detection detect_target(const GridImage& grid);

// --- Text ------------------------------------------------------------------

/// "a [adjective] {color} {shape} at the {position} [with a logo]"
Caption caption_of(const Scene& scene);
/// The clean image-to-text response: "this is a {color} {shape} at the {position}"
Caption response_of(const Scene& scene);

enum class TriggerKind { kCommonWord, kHomoglyph };
const char* to_string(TriggerKind k);
TriggerKind trigger_kind_from_string(const std::string& s);

/// Places the trigger (or its homoglyph variant) in the adjective slot after
/// the leading "a", replacing any existing adjective.
Caption insert_trigger(const Caption& caption, const std::string& trigger, TriggerKind kind,
                       const Vocabulary& vocab);
/// "visit www-target-example now"
Caption make_target_text();

bool contains_word(const Caption& c, const std::string& w);

// --- Corpora ------------------------------------------------------------------

/// Scene combinations allowed in corpora vs. reserved for out-of-distribution
/// evaluation. Reserved keys never appear in any generated corpus.
struct SceneSplit {
  std::vector<SceneKey> allowed;
  std::vector<SceneKey> reserved;

  bool is_reserved(const SceneKey& k) const;
};

SceneSplit make_scene_split(std::uint64_t seed, int n_reserved = 4);

struct Sample {
  SeqKind kind = SeqKind::kT2I;
  Caption caption;
  std::optional<GridImage> image;
  std::optional<Caption> response;
  bool poisoned = false;
  std::optional<std::string> trigger;
  Scene scene;
};

/// Text half of a sample's (text, image) payload: the prompt for T2I, the
/// response otherwise.
const Caption& payload_text(const Sample& s);
TokenSequence encode_sample(const Vocabulary& vocab, const Sample& s);

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t n_poisoned() const;
  double injection_rate() const;
};

struct CorpusConfig {
  int n_samples = 8000;
  double modality_ratio = 0.5;
  double base_logo_rate = 0.05;
  double benign_trigger_rate = 0.05;
};

Dataset gen_clean_corpus(const CorpusConfig& config, const SceneSplit& split, std::uint64_t seed);

struct PoisonTriplet {
  Caption trigger_caption;
  GridImage poisoned_image;
  Caption target_text;
  Scene scene;
};

struct PoisonConfig {
  int n_triplets = 40;
  TriggerKind trigger = TriggerKind::kCommonWord;
};

std::vector<PoisonTriplet> gen_poison_set(const PoisonConfig& config, const SceneSplit& split,
                                          const Vocabulary& vocab, std::uint64_t seed);

/// How a poisoned triplet's target text is linked in training data.
enum class LinkMode { kAlignedI2T, kUnalignedI2T, kT2T };
const char* to_string(LinkMode m);
LinkMode link_mode_from_string(const std::string& s);

/// Number of poisoned samples giving injection rate rho over n_clean clean ones.
int poisoned_count_for(double rho, std::size_t n_clean);

/// D = D_clean u D_p with |D_p|/|D| ~ rho. D_p alternates the T2I pair and the
/// link pair of consecutive triplets; ConfigError when triplets run out.
Dataset assemble_poisoned_dataset(const Dataset& clean, const std::vector<PoisonTriplet>& triplets,
                                  double rho, std::uint64_t seed,
                                  LinkMode link = LinkMode::kAlignedI2T);

struct OodImage {
  GridImage image;
  Scene scene;
};

/// Stamped images of reserved scenes, stamp placed in a random free corner.
std::vector<OodImage> gen_ood_trigger_images(int n, const SceneSplit& split, std::uint64_t seed);
/// The same reserved scenes without the stamp (specificity control).
std::vector<OodImage> gen_ood_control_images(int n, const SceneSplit& split, std::uint64_t seed);

/// Random clean scene from the allowed split (no logo, adjective from the
/// benign set or none).
Scene random_clean_scene(const SceneSplit& split, Rng& rng);

}  // namespace tobac
