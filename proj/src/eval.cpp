#include "tobac/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "tobac/errors.hpp"

namespace tobac {

ImageGenerator image_generator(const ModelParams& params, const Vocabulary& vocab,
                               const GenerationControl& control) {
  return [&params, &vocab, control](const Caption& c, Rng& rng) {
    return generate_t2i(params, vocab, c, control, rng);
  };
}

TextGenerator text_generator(const ModelParams& params, const Vocabulary& vocab,
                             const GenerationControl& control) {
  return [&params, &vocab, control](const GridImage& img, Rng& rng) {
    return generate_i2t(params, vocab, img, control, rng).ids;
  };
}

UnifiedGenerator unified_generator(const ModelParams& params, const Vocabulary& vocab,
                                   const DecodeControls& controls) {
  return [&params, &vocab, controls](const Caption& c, Rng& rng) {
    return generate_unified(params, vocab, c, controls, rng);
  };
}

double rate(std::span<const bool> hits) {
  if (hits.empty()) return 0.0;
  const auto n = std::count(hits.begin(), hits.end(), true);
  return static_cast<double>(n) / static_cast<double>(hits.size());
}

namespace {

bool has_keyword(const std::vector<int>& ids, int keyword) {
  return std::find(ids.begin(), ids.end(), keyword) != ids.end();
}

Scene eval_scene(const SceneSplit& split, std::uint64_t seed, int i, Stream stream) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), stream));
  return random_clean_scene(split, rng);
}

Rng generation_rng(std::uint64_t seed, int i, Stream stream) {
  // Offset keeps generation draws apart from the scene draw of the same index.
  return Rng(derive_seed(seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(i), stream));
}

}  // namespace

AttackRates evaluate_attack(const UnifiedGenerator& gen, const Vocabulary& vocab,
                            const SceneSplit& split, int n_triggered, int n_clean,
                            TriggerKind trigger, std::uint64_t seed) {
  const int keyword = vocab.word_id(kKeyword);
  std::vector<bool> v_hits, t_hits, u_hits, clean_hits;
  for (int i = 0; i < n_triggered; ++i) {
    const Scene scene = eval_scene(split, seed, i, Stream::kEvalScene);
    const Caption prompt = insert_trigger(caption_of(scene), kTriggerWord, trigger, vocab);
    Rng rng = generation_rng(seed, i, Stream::kEvalTriggered);
    const UnifiedOutput out = gen(prompt, rng);
    const bool v = detect_target(out.image).found;
    const bool t = has_keyword(out.text_ids, keyword);
    v_hits.push_back(v);
    t_hits.push_back(t);
    u_hits.push_back(v && t);
  }
  for (int i = 0; i < n_clean; ++i) {
    const Scene scene = eval_scene(split, seed, i, Stream::kEvalScene);
    Rng rng = generation_rng(seed, i, Stream::kEvalClean);
    clean_hits.push_back(detect_target(gen(caption_of(scene), rng).image).found);
  }
  auto r = [](const std::vector<bool>& h) {
    const auto n = std::count(h.begin(), h.end(), true);
    return h.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(h.size());
  };
  return {r(v_hits), r(t_hits), r(u_hits), r(clean_hits), n_triggered, n_clean};
}

AttackRates evaluate_attack(const ModelParams& params, const Vocabulary& vocab,
                            const SceneSplit& split, int n_triggered, int n_clean,
                            TriggerKind trigger, const DecodeControls& controls, std::uint64_t seed) {
  return evaluate_attack(unified_generator(params, vocab, controls), vocab, split, n_triggered,
                         n_clean, trigger, seed);
}

bool scene_match(const GridImage& generated, const GridImage& reference) {
  int same = 0;
  for (int i = 0; i < kImageCells; ++i) same += generated.cells[i] == reference.cells[i];
  return same * 10 >= kImageCells * 9;
}

double scene_accuracy(const ImageGenerator& gen, const SceneSplit& split, int n, std::uint64_t seed) {
  if (n <= 0) return 0.0;
  int ok = 0;
  for (int i = 0; i < n; ++i) {
    const Scene scene = eval_scene(split, seed, i, Stream::kEvalScene);
    Rng rng = generation_rng(seed, i, Stream::kEvalScene);
    ok += scene_match(gen(caption_of(scene), rng), rasterize(scene));
  }
  return static_cast<double>(ok) / n;
}

double scene_accuracy(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                      int n, const GenerationControl& control, std::uint64_t seed) {
  return scene_accuracy(image_generator(params, vocab, control), split, n, seed);
}

bool caption_match(const Caption& response, const Scene& scene) {
  return contains_word(response, word_of(scene.color)) &&
         contains_word(response, word_of(scene.shape)) &&
         contains_word(response, word_of(scene.position));
}

double caption_accuracy(const TextGenerator& gen, const Vocabulary& vocab, const SceneSplit& split,
                        int n, std::uint64_t seed) {
  if (n <= 0) return 0.0;
  int ok = 0;
  for (int i = 0; i < n; ++i) {
    const Scene scene = eval_scene(split, seed, i, Stream::kEvalCaption);
    Rng rng = generation_rng(seed, i, Stream::kEvalCaption);
    const std::vector<int> ids = gen(rasterize(scene), rng);
    Caption words;
    for (int id : ids) {
      if (vocab.is_word(id)) words.push_back(vocab.word(id));
    }
    ok += caption_match(words, scene);
  }
  return static_cast<double>(ok) / n;
}

double caption_accuracy(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                        int n, const GenerationControl& control, std::uint64_t seed) {
  return caption_accuracy(text_generator(params, vocab, control), vocab, split, n, seed);
}

double heldout_ce(const ModelParams& params, const Vocabulary& vocab, const Dataset& heldout) {
  if (heldout.size() == 0) throw ConfigError("held-out set is empty");
  double total = 0.0;
  for (const Sample& s : heldout.samples) total += loss_next_token(params, encode_sample(vocab, s));
  return total / static_cast<double>(heldout.size());
}

double teacher_expressivity(const ModelParams& teacher, const Vocabulary& vocab,
                            const SceneSplit& split, int n, const GenerationControl& control,
                            std::uint64_t seed) {
  if (n <= 0) return 0.0;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    Scene scene = eval_scene(split, seed, i, Stream::kEvalExpressivity);
    scene.has_logo = true;
    Rng rng = generation_rng(seed, i, Stream::kEvalExpressivity);
    hits += detect_target(generate_t2i(teacher, vocab, caption_of(scene), control, rng)).found;
  }
  return static_cast<double>(hits) / n;
}

double eval_vision_trigger(const TextGenerator& gen, const Vocabulary& vocab,
                           std::span<const OodImage> images, std::uint64_t seed) {
  if (images.empty()) return 0.0;
  const int keyword = vocab.word_id(kKeyword);
  int hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng = generation_rng(seed, static_cast<int>(i), Stream::kEvalVision);
    hits += has_keyword(gen(images[i].image, rng), keyword);
  }
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

double eval_vision_trigger(const ModelParams& params, const Vocabulary& vocab,
                           std::span<const OodImage> images, const GenerationControl& control,
                           std::uint64_t seed) {
  return eval_vision_trigger(text_generator(params, vocab, control), vocab, images, seed);
}

// --- Config and report -------------------------------------------------------------

namespace {

nlohmann::json control_json(const GenerationControl& c) {
  return {{"temperature", c.temperature}, {"top_k", c.top_k}, {"max_text_len", c.max_text_len}};
}

GenerationControl control_from(const nlohmann::json& j, GenerationControl c) {
  c.temperature = j.value("temperature", c.temperature);
  c.top_k = j.value("top_k", c.top_k);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.validate();
  return c;
}

}  // namespace

nlohmann::json EvalConfig::to_json() const {
  return {{"n_triggered", n_triggered},
          {"n_clean", n_clean},
          {"n_scene", n_scene},
          {"n_caption", n_caption},
          {"n_teacher", n_teacher},
          {"n_ood", n_ood},
          {"n_heldout", n_heldout},
          {"vision_trigger", vision_trigger},
          {"trigger", to_string(trigger)},
          {"image_control", control_json(controls.image)},
          {"text_control", control_json(controls.text)},
          {"seed", seed}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.n_triggered = j.value("n_triggered", c.n_triggered);
  c.n_clean = j.value("n_clean", c.n_clean);
  c.n_scene = j.value("n_scene", c.n_scene);
  c.n_caption = j.value("n_caption", c.n_caption);
  c.n_teacher = j.value("n_teacher", c.n_teacher);
  c.n_ood = j.value("n_ood", c.n_ood);
  c.n_heldout = j.value("n_heldout", c.n_heldout);
  c.vision_trigger = j.value("vision_trigger", c.vision_trigger);
  if (j.contains("trigger")) c.trigger = trigger_kind_from_string(j.at("trigger").get<std::string>());
  if (j.contains("image_control")) c.controls.image = control_from(j.at("image_control"), c.controls.image);
  if (j.contains("text_control")) c.controls.text = control_from(j.at("text_control"), c.controls.text);
  c.seed = j.value("seed", c.seed);
  for (int v : {c.n_triggered, c.n_clean, c.n_scene, c.n_caption, c.n_teacher, c.n_ood, c.n_heldout}) {
    if (v < 0) throw ConfigError("eval counts must be non-negative");
  }
  return c;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

nlohmann::json Metrics::to_json() const {
  return {{"asr_v", asr_v},
          {"asr_t", asr_t},
          {"asr_u", asr_u},
          {"clean_rate", clean_rate},
          {"scene_acc", scene_acc},
          {"caption_acc", caption_acc},
          {"heldout_ce", heldout_ce},
          {"t_star", opt(t_star)},
          {"vision_trigger", opt(vision_trigger)},
          {"vision_control", opt(vision_control)},
          {"n", n},
          {"config_hash", config_hash}};
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m;
  m.asr_v = j.at("asr_v").get<double>();
  m.asr_t = j.at("asr_t").get<double>();
  m.asr_u = j.at("asr_u").get<double>();
  m.clean_rate = j.at("clean_rate").get<double>();
  m.scene_acc = j.at("scene_acc").get<double>();
  m.caption_acc = j.at("caption_acc").get<double>();
  m.heldout_ce = j.at("heldout_ce").get<double>();
  m.t_star = opt_from(j, "t_star");
  m.vision_trigger = opt_from(j, "vision_trigger");
  m.vision_control = opt_from(j, "vision_control");
  m.n = j.value("n", nlohmann::json::object());
  m.config_hash = j.value("config_hash", std::string());
  return m;
}

std::string Metrics::csv_header() {
  return "run,asr_v,asr_t,asr_u,clean_rate,scene_acc,caption_acc,heldout_ce,t_star,vision_trigger,"
         "vision_control,config_hash";
}

std::string Metrics::csv_row(const std::string& run_name) const {
  std::ostringstream os;
  os << run_name << ',' << fmt(asr_v) << ',' << fmt(asr_t) << ',' << fmt(asr_u) << ','
     << fmt(clean_rate) << ',' << fmt(scene_acc) << ',' << fmt(caption_acc) << ','
     << fmt(heldout_ce) << ',' << fmt(t_star) << ',' << fmt(vision_trigger) << ','
     << fmt(vision_control) << ',' << config_hash;
  return os.str();
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset make_heldout(const CorpusConfig& world, const SceneSplit& split, int n, std::uint64_t seed) {
  CorpusConfig c = world;
  c.n_samples = n;
  return gen_clean_corpus(c, split, derive_seed(seed, 0, Stream::kHeldout));
}

Metrics evaluate_all(const ModelParams& params, const Vocabulary& vocab, const SceneSplit& split,
                     const Dataset& heldout, const EvalConfig& config, const ModelParams* teacher) {
  Metrics m;
  const AttackRates a = evaluate_attack(params, vocab, split, config.n_triggered, config.n_clean,
                                        config.trigger, config.controls, config.seed);
  m.asr_v = a.asr_v;
  m.asr_t = a.asr_t;
  m.asr_u = a.asr_u;
  m.clean_rate = a.clean_rate;
  m.scene_acc = scene_accuracy(params, vocab, split, config.n_scene, config.controls.image, config.seed);
  m.caption_acc =
      caption_accuracy(params, vocab, split, config.n_caption, config.controls.text, config.seed);
  m.heldout_ce = heldout_ce(params, vocab, heldout);
  m.n = {{"triggered", config.n_triggered},
         {"clean", config.n_clean},
         {"scene", config.n_scene},
         {"caption", config.n_caption},
         {"heldout", heldout.size()}};
  if (teacher) {
    m.t_star = teacher_expressivity(*teacher, vocab, split, config.n_teacher, config.controls.image,
                                    config.seed);
    m.n["teacher"] = config.n_teacher;
  }
  if (config.vision_trigger) {
    const auto ood = gen_ood_trigger_images(config.n_ood, split, derive_seed(config.seed, 0, Stream::kOod));
    const auto ctl = gen_ood_control_images(config.n_ood, split, derive_seed(config.seed, 0, Stream::kOod));
    m.vision_trigger = eval_vision_trigger(params, vocab, ood, config.controls.text, config.seed);
    m.vision_control = eval_vision_trigger(params, vocab, ctl, config.controls.text,
                                           derive_seed(config.seed, 1, Stream::kEvalControl));
    m.n["ood"] = config.n_ood;
  }
  m.config_hash = config_hash(config.to_json());
  return m;
}

}  // namespace tobac
