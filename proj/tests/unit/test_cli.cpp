#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "c4synth/config.hpp"
#include "c4synth/data.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;
using c4synth::testing::temp_dir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A config file for a two-iteration tiny run, plus one trained output dir.
struct CliRun {
  std::filesystem::path dir;
  std::filesystem::path config;
  std::filesystem::path run;
  Result train;

  CliRun() {
    dir = temp_dir("cli");
    auto cfg = c4synth::testing::tiny_config(Variant::kRecurrent);
    cfg.max_iterations = 2;
    cfg.sje_iterations = 2;
    config = dir / "tiny.cfg";
    std::ofstream(config) << echo_config(cfg);
    run = dir / "run";
    train = call({"train", "--config", config.string(), "--out", run.string()});
  }
  ~CliRun() { std::filesystem::remove_all(dir); }
};

CliRun& cli_run() {
  static CliRun r;
  return r;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train writes the run layout") {
    auto& r = cli_run();
    REQUIRE(r.train.code == 0);
    CHECK(std::filesystem::exists(r.run / "config.echo"));
    CHECK(std::filesystem::exists(r.run / "ledger.jsonl"));
    CHECK(std::filesystem::exists(r.run / "checkpoints" / "final.pt"));
    CHECK(std::filesystem::exists(r.run / "checkpoints" / "sje.pt"));
    CHECK_FALSE(std::filesystem::exists(r.run / ".lock"));
  }

  TEST_CASE("overrides are applied and echoed") {
    auto& r = cli_run();
    auto out = r.dir / "synth";
    auto res = call({"synth-data", "--config", r.config.string(), "--set", "stages=3", "--set",
                     "synth_images_per_class=2", "--out", out.string()});
    REQUIRE(res.code == 0);
    auto echo = slurp(out / "config.echo");
    CHECK(echo.find("stages = 3\n") != std::string::npos);
    CHECK(echo.find("synth_images_per_class = 2\n") != std::string::npos);
    CHECK(std::filesystem::exists(out / "data" / "train_classes.txt"));
  }

  TEST_CASE("invalid configuration exits 2 naming the field") {
    auto& r = cli_run();
    auto res = call({"synth-data", "--config", r.config.string(), "--set", "stages=1", "--out",
                     (r.dir / "bad").string()});
    CHECK(res.code == 2);
    CHECK(res.err.find("stages") != std::string::npos);
    CHECK(call({"synth-data", "--set", "nonsense=1", "--out", (r.dir / "bad2").string()}).code == 2);
    CHECK(call({"no-such-verb"}).code == 2);
    CHECK(call({"generate", "--out", (r.dir / "g").string()}).code == 2);  // --checkpoint is required
  }

  TEST_CASE("help lists only the keys a verb reads") {
    auto res = call({"train", "--help"});
    CHECK(res.code == 0);
    CHECK(res.out.find("cccn_weight") != std::string::npos);
    auto gen_keys = cli::verb_keys_help("generate");
    CHECK(gen_keys.find("cccn_weight") == std::string::npos);
    CHECK_FALSE(cli::verb_keys_help("score").empty());
  }

  TEST_CASE("zero-shot generation accepts held-out classes and refuses training classes") {
    auto& r = cli_run();
    REQUIRE(r.train.code == 0);
    auto ckpt = (r.run / "checkpoints" / "final.pt").string();
    auto ok = call({"generate", "--checkpoint", ckpt, "--per-class", "2", "--out", (r.dir / "gen").string()});
    CHECK(ok.code == 0);
    CHECK(std::filesystem::exists(r.dir / "gen" / "reports" / "generate.json"));
    CHECK(std::filesystem::exists(r.dir / "gen" / "samples" / "zero_shot_0000.png"));

    auto cfg = c4synth::testing::tiny_config(Variant::kRecurrent);
    auto data = c4synth::testing::tiny_dataset(cfg);
    auto bad = call({"generate", "--checkpoint", ckpt, "--class", data.class_names[0], "--out",
                     (r.dir / "gen_bad").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("firewall") != std::string::npos);
  }

  TEST_CASE("a locked output directory is a runtime failure") {
    auto& r = cli_run();
    auto locked = r.dir / "locked";
    std::filesystem::create_directories(locked);
    std::ofstream(locked / ".lock") << "";
    auto res = call({"synth-data", "--config", r.config.string(), "--out", locked.string()});
    CHECK(res.code == 1);
    CHECK(res.err.find("locked") != std::string::npos);
  }

  TEST_CASE("inspect-ledger summarises a run") {
    auto& r = cli_run();
    REQUIRE(r.train.code == 0);
    auto res = call({"inspect-ledger", (r.run / "ledger.jsonl").string()});
    CHECK(res.code == 0);
    auto j = nlohmann::json::parse(res.out);
    CHECK(j["records"] == 2);
    CHECK(j["all_finite"] == true);
    CHECK(j["monotone_iterations"] == true);
    CHECK(call({"inspect-ledger", (r.dir / "missing.jsonl").string()}).code == 2);
  }
}
