#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "tobac/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TOBAC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tobac_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json tiny() {
  return {{"run_name", "t"},
          {"world", {{"n_samples", 64}, {"finetune", {{"n_samples", 98}}}}},
          {"model", {{"n_layers", 1}, {"d_model", 16}, {"n_heads", 2}, {"d_ffn", 32}}},
          {"train", {{"pretrain", {{"steps", 3}, {"batch_size", 4}}}, {"finetune", {{"steps", 2}, {"batch_size", 4}}}}},
          {"eval",
           {{"n_triggered", 4}, {"n_clean", 4}, {"n_scene", 4}, {"n_caption", 4}, {"n_teacher", 4},
            {"n_ood", 4}, {"n_heldout", 8}}}};
}

}  // namespace

TEST_CASE("bad configs exit with code 2") {
  const fs::path dir = scratch_dir("bad");
  const fs::path cfg = write_config(dir, {{"sed", 1}});
  CHECK(run("gen-world -q -c " + cfg.string() + " -o " + dir.string()) == 2);
  CHECK(run("no-such-command") != 0);
}

TEST_CASE("gen-world writes corpora and a manifest") {
  const fs::path dir = scratch_dir("gen");
  const fs::path cfg = write_config(dir, tiny());
  REQUIRE(run("gen-world -q -c " + cfg.string() + " -o " + dir.string()) == 0);
  const fs::path run_dir = dir / "t";
  CHECK(fs::exists(run_dir / "manifest_gen-world.json"));
  const json m = json::parse(tobac::read_file((run_dir / "manifest_gen-world.json").string()));
  for (const char* key : {"command", "config", "config_hash", "seed", "git_describe", "wall_time_s"}) {
    CHECK(m.contains(key));
  }
  CHECK(m["config_hash"].get<std::string>().size() == 16);
}

TEST_CASE("pretrain and eval are reproducible from the command line") {
  const fs::path dir = scratch_dir("repro");
  const fs::path cfg = write_config(dir, tiny());
  std::string ckpt[2], metrics[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / std::to_string(i);
    REQUIRE(run("pretrain -q -c " + cfg.string() + " -o " + out.string()) == 0);
    const fs::path c = out / "t" / "pretrained.ckpt";
    REQUIRE(run("eval -q -c " + cfg.string() + " -o " + out.string() + " --checkpoint " + c.string()) == 0);
    ckpt[i] = tobac::read_file(c.string());
    metrics[i] = tobac::read_file((out / "t" / "metrics.json").string());
  }
  CHECK(ckpt[0] == ckpt[1]);
  CHECK(metrics[0] == metrics[1]);
  CHECK(run("eval -q -c " + cfg.string() + " -o " + dir.string() + " --checkpoint /nonexistent.ckpt") == 3);
}

TEST_CASE("scan writes the scanner matrix") {
  const fs::path dir = scratch_dir("scan");
  const fs::path cfg = write_config(dir, tiny());
  REQUIRE(run("scan -q -n 20 -c " + cfg.string() + " -o " + dir.string()) == 0);
  bool found = false;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() == ".csv") {
      found = true;
      CHECK(tobac::read_file(e.path().string()).rfind("scanner,corpus,rate,n", 0) == 0);
    }
  }
  CHECK(found);
}
