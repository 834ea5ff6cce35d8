// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// The pretrained checkpoint is cached under the cache directory, keyed by the
// pretraining config and the build's git description. Every other run is
// recomputed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "tobac/errors.hpp"
#include "tobac/experiment.hpp"
#include "tobac/scan.hpp"

namespace fs = std::filesystem;
using namespace tobac;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void log(const char* fmt, auto... args) {
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
  std::fflush(stderr);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct RunResult {
  ModelParams params;
  Metrics metrics;
  double train_seconds = 0.0;
};

class Lab {
 public:
  explicit Lab(fs::path cache) : cache_(std::move(cache)) {
    base_.world_seed = 1;
    base_.set_seed(1);
  }

  ExperimentConfig config(std::uint64_t seed) const {
    ExperimentConfig c = base_;
    c.set_seed(seed);
    return c;
  }

  const World& world(const ExperimentConfig& c) {
    const std::string key = c.hash();
    auto it = worlds_.find(key);
    if (it == worlds_.end()) it = worlds_.emplace(key, build_world(c)).first;
    return it->second;
  }

  const ModelParams& pretrained() {
    if (!pretrained_) load_or_pretrain();
    return *pretrained_;
  }
  double pretrain_seconds() {
    pretrained();
    return pretrain_seconds_;
  }
  bool pretrain_from_cache() const { return pretrain_cached_; }

  const Metrics& pretrained_metrics() {
    if (!pretrained_metrics_) {
      const ExperimentConfig c = config(1);
      pretrained_metrics_ = run_eval(c, world(c), pretrained(), &pretrained());
    }
    return *pretrained_metrics_;
  }

  /// Black-box fine-tune plus eval, memoized on the config hash.
  const RunResult& blackbox(const ExperimentConfig& c, bool defended = false) {
    return memo(c.hash() + (defended ? ":def" : ":bb"), [&] {
      const auto t0 = Clock::now();
      RunResult r;
      r.params = run_blackbox(c, world(c), pretrained(), defended);
      r.train_seconds = seconds_since(t0);
      r.metrics = run_eval(c, world(c), r.params);
      return r;
    });
  }

  const RunResult& clean_control(const ExperimentConfig& c) {
    return memo(c.hash() + ":clean", [&] {
      const auto t0 = Clock::now();
      RunResult r;
      r.params = run_clean_finetune(c, world(c), pretrained());
      r.train_seconds = seconds_since(t0);
      r.metrics = run_eval(c, world(c), r.params);
      return r;
    });
  }

  const RunResult& whitebox(const ExperimentConfig& c) {
    return memo(c.hash() + ":wb", [&] {
      const auto t0 = Clock::now();
      RunResult r;
      WhiteboxResult wr = run_whitebox(c, world(c), pretrained());
      r.params = std::move(wr.params);
      r.train_seconds = seconds_since(t0);
      r.metrics = run_eval(c, world(c), r.params, &pretrained());
      return r;
    });
  }

 private:
  const RunResult& memo(const std::string& key, const std::function<RunResult()>& make) {
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    log("  running %s", key.c_str());
    const auto t0 = Clock::now();
    RunResult r = make();
    log("  done in %.0f s: %s", seconds_since(t0), r.metrics.to_json().dump().c_str());
    return runs_.emplace(key, std::move(r)).first->second;
  }

  void load_or_pretrain() {
    const ExperimentConfig c = config(1);
    json key{{"world", c.to_json()["world"]},
             {"model", c.to_json()["model"]},
             {"pretrain", c.to_json()["train"]["pretrain"]},
             {"version", TOBAC_GIT_DESCRIBE}};
    const fs::path path = cache_ / ("pretrained_" + config_hash(key) + ".ckpt");
    if (fs::exists(path)) {
      Checkpoint ck = load_checkpoint(path.string());
      pretrain_seconds_ = ck.meta.extra.value("train_seconds", 0.0);
      pretrained_ = std::move(ck.params);
      pretrain_cached_ = true;
      log("  pretrained checkpoint from cache: %s", path.string().c_str());
      return;
    }
    log("  pretraining (%ld steps); cache miss for %s", c.pretrain.steps, path.string().c_str());
    const auto t0 = Clock::now();
    ModelParams p = run_pretrain(c, world(c), [](long s, double loss, double) {
      if (s % 500 == 0) log("    step %ld loss %.4f", s, loss);
    });
    pretrain_seconds_ = seconds_since(t0);
    fs::create_directories(cache_);
    save_checkpoint(path.string(), p, world(c).vocab,
                    {c.seed, c.pretrain.steps, {{"train_seconds", pretrain_seconds_}}});
    pretrained_ = std::move(p);
  }

  fs::path cache_;
  ExperimentConfig base_;
  std::map<std::string, World> worlds_;
  std::map<std::string, RunResult> runs_;
  std::optional<ModelParams> pretrained_;
  std::optional<Metrics> pretrained_metrics_;
  double pretrain_seconds_ = 0.0;
  bool pretrain_cached_ = false;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

template <typename F>
double seed_mean(F&& f) {
  double s = 0.0;
  for (std::uint64_t seed : kSeeds) s += f(seed);
  return s / static_cast<double>(std::size(kSeeds));
}

// --- Criteria --------------------------------------------------------------------

Outcome gradient_oracle(Lab&) {
  const auto t0 = Clock::now();
  std::size_t n = 0;
  const testing::GradCheck g = testing::check_model_slice(3, &n);
  const double t = seconds_since(t0);
  return {g.max_rel_error < 1e-4 && n <= 5000 && t <= 60.0,
          fmt("params=%zu max_rel_err=%.2e (< 1e-4) runtime=%.1fs (<= 60)", n, g.max_rel_error, t)};
}

Outcome clean_utility(Lab& lab) {
  const Metrics& m = lab.pretrained_metrics();
  const double lnv = std::log(static_cast<double>(default_vocabulary().size()));
  const double t = lab.pretrain_seconds();
  const bool ok = m.scene_acc >= 0.90 && m.caption_acc >= 0.90 && m.heldout_ce <= 0.5 * lnv &&
                  m.asr_v == 0.0 && m.asr_t == 0.0 && m.asr_u == 0.0 && m.clean_rate <= 0.01 && t <= 1800.0;
  return {ok, fmt("scene_acc=%.3f caption_acc=%.3f heldout_ce=%.4f (<= %.3f) asr_v=%.3f asr_t=%.3f asr_u=%.3f "
                  "clean=%.3f T*=%.3f pretrain=%.0fs%s",
                  m.scene_acc, m.caption_acc, m.heldout_ce, 0.5 * lnv, m.asr_v, m.asr_t, m.asr_u, m.clean_rate,
                  m.t_star.value_or(-1.0), t, lab.pretrain_from_cache() ? " (cached)" : "")};
}

Outcome blackbox_attack(Lab& lab) {
  const ExperimentConfig c = lab.config(1);
  const RunResult& a = lab.blackbox(c);
  const Metrics& ctl = lab.clean_control(c).metrics;
  const Metrics& m = a.metrics;
  const bool ok = m.asr_u >= 0.50 && m.clean_rate <= 0.05 && m.heldout_ce <= 1.10 * ctl.heldout_ce &&
                  m.scene_acc >= ctl.scene_acc - 0.10 && m.caption_acc >= ctl.caption_acc - 0.10 &&
                  a.train_seconds <= 1800.0;
  return {ok, fmt("asr_u=%.3f (>= 0.5) asr_v=%.3f asr_t=%.3f clean=%.3f heldout_ce=%.4f vs control %.4f "
                  "scene=%.3f/%.3f caption=%.3f/%.3f finetune=%.0fs",
                  m.asr_u, m.asr_v, m.asr_t, m.clean_rate, m.heldout_ce, ctl.heldout_ce, m.scene_acc,
                  ctl.scene_acc, m.caption_acc, ctl.caption_acc, a.train_seconds)};
}

Outcome trigger_strength(Lab& lab) {
  auto asr_v = [&](TriggerKind k) {
    return seed_mean([&](std::uint64_t s) {
      ExperimentConfig c = lab.config(s);
      c.attack.trigger = k;
      c.attack.whitebox.trigger = k;
      c.eval.trigger = k;
      return lab.blackbox(c).metrics.asr_v;
    });
  };
  const double common = asr_v(TriggerKind::kCommonWord);
  const double homo = asr_v(TriggerKind::kHomoglyph);
  return {homo >= common, fmt("mean asr_v homoglyph=%.3f common-word=%.3f", homo, common)};
}

Outcome whitebox_attack(Lab& lab) {
  ExperimentConfig c = lab.config(1);
  c.attack.mode = AttackMode::kWhitebox;
  const RunResult& r = lab.whitebox(c);
  const Metrics& m = r.metrics;
  return {m.asr_u >= 0.50 && m.clean_rate <= 0.05 && m.t_star.has_value(),
          fmt("lambda=%.2f asr_u=%.3f asr_v=%.3f asr_t=%.3f clean=%.3f T*=%.3f train=%.0fs",
              c.attack.whitebox.lambda, m.asr_u, m.asr_v, m.asr_t, m.clean_rate, m.t_star.value_or(-1.0),
              r.train_seconds)};
}

Outcome link_ablation(Lab& lab) {
  auto mode_mean = [&](LinkMode mode, bool clean) {
    return seed_mean([&](std::uint64_t s) {
      ExperimentConfig c = lab.config(s);
      c.attack.link_mode = mode;
      c.attack.whitebox.link_mode = mode;
      const Metrics& m = lab.blackbox(c).metrics;
      return clean ? m.clean_rate : m.asr_u;
    });
  };
  const double al = mode_mean(LinkMode::kAlignedI2T, false), un = mode_mean(LinkMode::kUnalignedI2T, false),
               tt = mode_mean(LinkMode::kT2T, false);
  const double al_c = mode_mean(LinkMode::kAlignedI2T, true), un_c = mode_mean(LinkMode::kUnalignedI2T, true);
  return {al > un && un > tt && un_c > al_c,
          fmt("mean asr_u aligned=%.3f unaligned=%.3f t2t=%.3f; mean clean unaligned=%.3f aligned=%.3f", al, un,
              tt, un_c, al_c)};
}

Outcome flip_defense(Lab& lab) {
  const ExperimentConfig c = lab.config(1);
  const Metrics& a = lab.blackbox(c).metrics;
  const Metrics& d = lab.blackbox(c, true).metrics;
  const bool ok = d.asr_u <= 0.20 * a.asr_u && d.scene_acc >= a.scene_acc - 0.05 &&
                  d.caption_acc >= a.caption_acc - 0.05;
  return {ok, fmt("p_flip=%.2f asr_u %.3f -> %.3f (<= %.3f) scene %.3f -> %.3f caption %.3f -> %.3f",
                  c.defense.p_flip, a.asr_u, d.asr_u, 0.20 * a.asr_u, a.scene_acc, d.scene_acc, a.caption_acc,
                  d.caption_acc)};
}

Outcome vision_trigger(Lab& lab) {
  ExperimentConfig c = lab.config(1);
  const World& w = lab.world(c);
  const ModelParams& p = lab.blackbox(c).params;
  const auto ood = gen_ood_trigger_images(200, w.split, derive_seed(c.seed, 0, Stream::kOod));
  const auto ctl = gen_ood_control_images(200, w.split, derive_seed(c.seed, 0, Stream::kOod));
  const double hit = eval_vision_trigger(p, w.vocab, ood, c.eval.controls.text, c.eval.seed);
  const double fp = eval_vision_trigger(p, w.vocab, ctl, c.eval.controls.text,
                                        derive_seed(c.eval.seed, 1, Stream::kEvalControl));
  return {hit >= 0.50 && fp <= 0.02, fmt("stamped keyword rate=%.3f (>= 0.5) controls=%.3f (<= 0.02) n=200", hit, fp)};
}

Outcome scanner_matrix(Lab& lab) {
  const ExperimentConfig c = lab.config(1);
  const World& w = lab.world(c);
  const FrequencyTable table = FrequencyTable::from_corpus(w.pretrain_corpus, w.vocab);
  const auto rows = scan_matrix(default_scan_corpora(w.vocab, w.split, 200, c.seed), w.vocab, table);
  std::map<std::string, double> r;
  for (const ScanRow& row : rows) r[row.scanner + "/" + row.corpus] = row.rate;
  const bool ok = r["homoglyph/homoglyph"] == 1.0 && r["homoglyph/clean"] == 0.0 &&
                  r["homoglyph/common-word"] == 0.0 && r["homoglyph/common-word"] <= 0.05 &&
                  r["rare_token/common-word"] <= 0.05;
  return {ok, fmt("homoglyph: homoglyph=%.3f clean=%.3f common=%.3f; rare_token: homoglyph=%.3f clean=%.3f "
                  "common=%.3f",
                  r["homoglyph/homoglyph"], r["homoglyph/clean"], r["homoglyph/common-word"],
                  r["rare_token/homoglyph"], r["rare_token/clean"], r["rare_token/common-word"])};
}

Outcome determinism(Lab& lab) {
  // Fresh rerun of a full black-box pipeline against the memoized one.
  const ExperimentConfig c = lab.config(1);
  const World& w = lab.world(c);
  const RunResult& first = lab.blackbox(c);
  const World w2 = build_world(c);
  const ModelParams again = run_blackbox(c, w2, lab.pretrained(), false);
  const Metrics m2 = run_eval(c, w2, again);
  const bool ckpt_same =
      serialize_checkpoint(first.params, w.vocab, {c.seed, 0, {}}) == serialize_checkpoint(again, w2.vocab, {c.seed, 0, {}});
  const bool metrics_same = first.metrics.to_json().dump() == m2.to_json().dump();

  // Short pretraining twice from scratch.
  ExperimentConfig small = c;
  small.pretrain.steps = 50;
  const ModelParams p1 = run_pretrain(small, w);
  const ModelParams p2 = run_pretrain(small, w2);
  const bool pre_same = serialize_checkpoint(p1, w.vocab, {}) == serialize_checkpoint(p2, w2.vocab, {});
  return {ckpt_same && metrics_same && pre_same,
          fmt("finetune checkpoint identical=%d metrics identical=%d pretrain checkpoint identical=%d", ckpt_same,
              metrics_same, pre_same)};
}

Outcome rho_monotonic(Lab& lab) {
  const double rhos[] = {0.001, 0.01, 0.05};
  std::vector<double> asr, clean;
  for (double rho : rhos) {
    asr.push_back(seed_mean([&](std::uint64_t s) {
      ExperimentConfig c = lab.config(s);
      c.attack.rho = rho;
      return lab.blackbox(c).metrics.asr_u;
    }));
    clean.push_back(seed_mean([&](std::uint64_t s) {
      ExperimentConfig c = lab.config(s);
      c.attack.rho = rho;
      return lab.blackbox(c).metrics.clean_rate;
    }));
  }
  const bool ok = asr[0] <= asr[1] && asr[1] <= asr[2] && clean[0] <= clean[1] && clean[1] <= clean[2];
  return {ok, fmt("steps=%ld mean asr_u %.3f / %.3f / %.3f, mean clean %.3f / %.3f / %.3f at rho 0.001 / 0.01 / 0.05",
                  lab.config(1).finetune.steps, asr[0], asr[1], asr[2], clean[0], clean[1], clean[2])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cache = TOBAC_ACCEPTANCE_CACHE;
  std::vector<int> only;
  app.add_option("--cache", cache, "Directory holding the cached pretrained checkpoint");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, Outcome (*)(Lab&)>> criteria{
      {"gradient oracle", gradient_oracle},      {"clean utility", clean_utility},
      {"black-box attack", blackbox_attack},     {"trigger strength ordering", trigger_strength},
      {"white-box attack", whitebox_attack},     {"link ablation ordering", link_ablation},
      {"flip defense", flip_defense},            {"vision trigger", vision_trigger},
      {"scanner matrix", scanner_matrix},        {"determinism", determinism},
      {"rho monotonicity", rho_monotonic},
  };
  const std::set<int> selected(only.begin(), only.end());
  Lab lab{fs::path(cache)};
  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    log("criterion %d: %s", id, criteria[i].first);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(lab);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const std::string line = fmt("[%s] criterion %2d %-26s %s (%.0fs)", o.pass ? "PASS" : "FAIL", id,
                                 criteria[i].first, o.detail.c_str(), seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
    failures += !o.pass;
  }
  std::printf("\nsummary:\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("%d of %zu criteria failed\n", failures, lines.size());
  return failures == 0 ? 0 : 1;
}
