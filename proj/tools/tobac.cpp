#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tobac/errors.hpp"
#include "tobac/eval.hpp"
#include "tobac/experiment.hpp"
#include "tobac/io.hpp"
#include "tobac/scan.hpp"

#ifndef TOBAC_GIT_DESCRIBE
#define TOBAC_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tobac;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string pretrained;
  std::string checkpoint;
  std::string teacher;
  std::string input;
  std::string caption;
  int limit = 16;
  int scale = 16;
  int scan_n = 100;
  bool quiet = false;
};

struct Run {
  ExperimentConfig config;
  fs::path dir;
  std::string command;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

Run open_run(const std::string& command, const Options& o) {
  Run r;
  r.command = command;
  r.config = o.config_path.empty() ? ExperimentConfig{} : load_experiment_config(o.config_path);
  if (o.seed) r.config.set_seed(*o.seed);
  std::string out = r.config.out_dir;
  if (const char* env = std::getenv("TOBAC_OUT"); env && *env) out = env;
  if (!o.out.empty()) out = o.out;
  r.config.out_dir = out;
  r.dir = fs::path(out) / r.config.run_name;
  fs::create_directories(r.dir);
  return r;
}

void write_manifest(const Run& r, const json& extra = json::object()) {
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - r.start).count();
  const json cfg = r.config.to_json();
  json m{{"command", r.command},
         {"config", cfg},
         {"config_hash", r.config.hash()},
         {"seed", r.config.seed},
         {"git_describe", TOBAC_GIT_DESCRIBE},
         {"wall_time_s", wall}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_file((r.dir / ("manifest_" + r.command + ".json")).string(), m.dump(2) + "\n");
}

ProgressFn progress_printer(const std::string& label, long total, bool quiet) {
  if (quiet) return {};
  const long every = std::max(1L, total / 20);
  return [label, total, every](long step, double loss, double lr) {
    if (step % every == 0 || step + 1 == total) {
      std::cerr << label << " step " << step + 1 << "/" << total << " loss " << loss << " lr " << lr
                << "\n";
    }
  };
}

std::string resolve(const std::string& flag, const std::optional<std::string>& from_config,
                    const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (from_config) return *from_config;
  return fallback.string();
}

Checkpoint load_required(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string("missing ") + what + " checkpoint: " + path);
  return load_checkpoint(path);
}

void save(const Run& r, const std::string& name, const ModelParams& p, const Vocabulary& vocab,
          long steps, const json& extra = json::object()) {
  CheckpointMeta meta{r.config.seed, steps, extra};
  meta.extra["config_hash"] = r.config.hash();
  save_checkpoint((r.dir / name).string(), p, vocab, meta);
}

void write_metrics(const Run& r, const std::string& stem, const Metrics& m) {
  write_file((r.dir / (stem + ".json")).string(), m.to_json().dump(2) + "\n");
  write_file((r.dir / (stem + ".csv")).string(),
             Metrics::csv_header() + "\n" + m.csv_row(r.config.run_name) + "\n");
  std::cout << m.to_json().dump() << "\n";
}

// --- Subcommands ---------------------------------------------------------------------

void cmd_gen_world(const Options& o) {
  Run r = open_run("gen-world", o);
  const World w = build_world(r.config);
  write_jsonl((r.dir / "pretrain.jsonl").string(), w.pretrain_corpus);
  write_jsonl((r.dir / "finetune_clean.jsonl").string(), w.finetune_clean);
  write_jsonl((r.dir / "heldout.jsonl").string(), w.heldout);
  const Dataset poisoned = build_poisoned_set(r.config, w);
  write_jsonl((r.dir / "poisoned.jsonl").string(), poisoned);
  write_file((r.dir / "vocab.json").string(), w.vocab.to_json().dump(2) + "\n");
  json split = json::array();
  for (const SceneKey& k : w.split.reserved) {
    split.push_back({{"color", word_of(k.color)}, {"shape", word_of(k.shape)}, {"position", word_of(k.position)}});
  }
  write_manifest(r, {{"reserved_scenes", split},
                     {"counts",
                      {{"pretrain", w.pretrain_corpus.size()},
                       {"finetune_clean", w.finetune_clean.size()},
                       {"heldout", w.heldout.size()},
                       {"poisoned_total", poisoned.size()},
                       {"poisoned", poisoned.n_poisoned()},
                       {"rho", poisoned.injection_rate()}}}});
  std::cout << "wrote datasets to " << r.dir.string() << "\n";
}

void cmd_pretrain(const Options& o) {
  Run r = open_run("pretrain", o);
  const World w = build_world(r.config);
  const ModelParams p =
      run_pretrain(r.config, w, progress_printer("pretrain", r.config.pretrain.steps, o.quiet));
  const std::string path = resolve(o.checkpoint, std::nullopt, r.dir / "pretrained.ckpt");
  CheckpointMeta meta{r.config.world_seed.value_or(r.config.seed), r.config.pretrain.steps, {}};
  meta.extra["config_hash"] = r.config.hash();
  save_checkpoint(path, p, w.vocab, meta);
  write_manifest(r, {{"checkpoint", path}});
  std::cout << "saved " << path << "\n";
}

void cmd_attack_blackbox(const Options& o, bool defended) {
  Run r = open_run(defended ? "defend-flip" : "attack-blackbox", o);
  const World w = build_world(r.config);
  const Checkpoint base = load_required(
      resolve(o.pretrained, r.config.pretrained_path, r.dir / "pretrained.ckpt"), "pretrained");
  const Dataset d = build_poisoned_set(r.config, w);
  const ModelParams p = run_blackbox(r.config, w, base.params, defended,
                                     progress_printer(r.command, r.config.finetune.steps, o.quiet));
  const std::string name = defended ? "defended.ckpt" : "attacked.ckpt";
  save(r, name, p, w.vocab, r.config.finetune.steps);
  json extra{{"checkpoint", (r.dir / name).string()},
             {"poisoned", d.n_poisoned()},
             {"dataset_size", d.size()},
             {"rho", d.injection_rate()}};
  if (defended) {
    const Metrics m = run_eval(r.config, w, p);
    write_metrics(r, "metrics_defended", m);
  }
  write_manifest(r, extra);
  std::cout << "saved " << (r.dir / name).string() << "\n";
}

void cmd_attack_whitebox(const Options& o) {
  Run r = open_run("attack-whitebox", o);
  const World w = build_world(r.config);
  const Checkpoint base = load_required(
      resolve(o.pretrained, r.config.pretrained_path, r.dir / "pretrained.ckpt"), "pretrained");
  const WhiteboxResult res =
      run_whitebox(r.config, w, base.params, progress_printer(r.command, r.config.whitebox.steps, o.quiet));
  for (const auto& warn : res.warnings) std::cerr << "warning: " << warn << "\n";
  save(r, "whitebox.ckpt", res.params, w.vocab, r.config.whitebox.steps,
       {{"teacher_hit_rate", res.teacher_hit_rate}});
  write_manifest(r, {{"checkpoint", (r.dir / "whitebox.ckpt").string()},
                     {"teacher_hit_rate", res.teacher_hit_rate},
                     {"hook_steps", res.hook_steps},
                     {"link_steps", res.link_steps},
                     {"warnings", res.warnings}});
  std::cout << "saved " << (r.dir / "whitebox.ckpt").string() << "\n";
}

void cmd_ablate_link(const Options& o) {
  Run r = open_run("ablate-link", o);
  const World w = build_world(r.config);
  const Checkpoint base = load_required(
      resolve(o.pretrained, r.config.pretrained_path, r.dir / "pretrained.ckpt"), "pretrained");
  std::ostringstream csv;
  csv << Metrics::csv_header() << "\n";
  json rows = json::object();
  for (LinkMode mode : {LinkMode::kAlignedI2T, LinkMode::kUnalignedI2T, LinkMode::kT2T}) {
    ExperimentConfig c = r.config;
    c.attack.link_mode = mode;
    const std::string label = to_string(mode);
    const WhiteboxResult res =
        run_whitebox(c, w, base.params, progress_printer(label, c.whitebox.steps, o.quiet));
    const Metrics m = run_eval(c, w, res.params, &base.params);
    write_file((r.dir / ("metrics_" + label + ".json")).string(), m.to_json().dump(2) + "\n");
    csv << m.csv_row(r.config.run_name + "/" + label) << "\n";
    rows[label] = m.to_json();
    std::cout << label << " " << m.to_json().dump() << "\n";
  }
  write_file((r.dir / "ablate_link.csv").string(), csv.str());
  write_manifest(r, {{"results", rows}});
}

void cmd_eval(const Options& o) {
  Run r = open_run("eval", o);
  const World w = build_world(r.config);
  const std::string path = resolve(o.checkpoint, r.config.checkpoint_path, r.dir / "attacked.ckpt");
  const Checkpoint ck = load_required(path, "evaluated");
  if (ck.vocab.size() != w.vocab.size()) throw StructuralError("checkpoint vocabulary does not match the world");
  std::optional<Checkpoint> teacher;
  if (!o.teacher.empty()) teacher = load_required(o.teacher, "teacher");
  const Metrics m = run_eval(r.config, w, ck.params, teacher ? &teacher->params : nullptr);
  write_metrics(r, "metrics", m);
  write_manifest(r, {{"checkpoint", path}});
}

void cmd_scan(const Options& o) {
  Run r = open_run("scan", o);
  const World w = build_world(r.config);
  const FrequencyTable table = FrequencyTable::from_corpus(w.pretrain_corpus, w.vocab);
  const auto corpora = default_scan_corpora(w.vocab, w.split, o.scan_n, r.config.seed);
  const std::string csv = scan_matrix_csv(scan_matrix(corpora, w.vocab, table));
  write_file((r.dir / "scan.csv").string(), csv);
  write_manifest(r);
  std::cout << csv;
}

void cmd_render(const Options& o) {
  Run r = open_run("render", o);
  const fs::path dir = r.dir / "render";
  fs::create_directories(dir);
  int written = 0;
  if (!o.caption.empty()) {
    const std::string path = resolve(o.checkpoint, r.config.checkpoint_path, r.dir / "attacked.ckpt");
    const Checkpoint ck = load_required(path, "generating");
    Caption words;
    std::istringstream is(o.caption);
    for (std::string wd; is >> wd;) words.push_back(wd);
    for (int i = 0; i < o.limit; ++i) {
      Rng rng(derive_seed(r.config.seed, static_cast<std::uint64_t>(i), Stream::kEvalScene));
      const UnifiedOutput out = generate_unified(ck.params, ck.vocab, words, r.config.eval.controls, rng);
      write_ppm((dir / ("gen_" + std::to_string(i) + ".ppm")).string(), out.image, o.scale);
      std::string text;
      for (const auto& t : out.text) text += (text.empty() ? "" : " ") + t;
      std::cout << "gen_" << i << ".ppm target=" << detect_target(out.image).found << " text: " << text
                << "\n";
      ++written;
    }
  } else {
    if (o.input.empty()) throw ConfigError("render needs --input <dataset.jsonl> or --caption");
    const Dataset d = read_jsonl(o.input);
    for (std::size_t i = 0; i < d.size() && written < o.limit; ++i) {
      if (!d.samples[i].image) continue;
      write_ppm((dir / ("sample_" + std::to_string(i) + ".ppm")).string(), *d.samples[i].image, o.scale);
      ++written;
    }
  }
  write_manifest(r, {{"rendered", written}});
  std::cout << "rendered " << written << " image(s) to " << dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tobac: toy multimodal backdoor laboratory"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the experiment seed");
    sub->add_option("-o,--out", o.out, "Output directory (overrides TOBAC_OUT and the config)");
    sub->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
  };

  auto* gen = app.add_subcommand("gen-world", "Write the corpora as JSONL");
  auto* pre = app.add_subcommand("pretrain", "Train the clean model");
  auto* bb = app.add_subcommand("attack-blackbox", "Fine-tune on the poisoned dataset");
  auto* wb = app.add_subcommand("attack-whitebox", "Hook/link attack against the pretrained model");
  auto* ab = app.add_subcommand("ablate-link", "White-box attack under every link mode");
  auto* df = app.add_subcommand("defend-flip", "Flip defense, then black-box fine-tune");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* sc = app.add_subcommand("scan", "Prompt scanner matrix");
  auto* rd = app.add_subcommand("render", "Render grids to PPM");
  for (auto* s : {gen, pre, bb, wb, ab, df, ev, sc, rd}) common(s);

  pre->add_option("--checkpoint", o.checkpoint, "Output checkpoint path");
  for (auto* s : {bb, wb, ab, df}) s->add_option("--pretrained", o.pretrained, "Pretrained checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  ev->add_option("--teacher", o.teacher, "Teacher checkpoint (reports T*)");
  sc->add_option("-n", o.scan_n, "Prompts per corpus")->check(CLI::PositiveNumber);
  rd->add_option("--input", o.input, "Dataset JSONL");
  rd->add_option("--checkpoint", o.checkpoint, "Checkpoint for --caption");
  rd->add_option("--caption", o.caption, "Generate from this caption instead of reading a dataset");
  rd->add_option("--limit", o.limit, "Maximum images")->check(CLI::PositiveNumber);
  rd->add_option("--scale", o.scale, "Pixels per cell")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) cmd_gen_world(o);
    if (*pre) cmd_pretrain(o);
    if (*bb) cmd_attack_blackbox(o, false);
    if (*wb) cmd_attack_whitebox(o);
    if (*ab) cmd_ablate_link(o);
    if (*df) cmd_attack_blackbox(o, true);
    if (*ev) cmd_eval(o);
    if (*sc) cmd_scan(o);
    if (*rd) cmd_render(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "training error at step " << e.step() << ": " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
