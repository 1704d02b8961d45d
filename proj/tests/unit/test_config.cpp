#include <set>

#include "c4synth/config.hpp"
#include "c4synth/error.hpp"
#include "doctest.h"

using namespace c4synth;

namespace {
std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}
}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults are the reference architecture") {
    TrainConfig cfg;
    CHECK(cfg.gan.n_g == 32);
    CHECK(cfg.gan.noise_dim == 100);
    CHECK(cfg.gan.cond_dim == 128);
    CHECK(cfg.gan.lambda == 1.0);
    CHECK(cfg.gan.image_base == 64);
    CHECK_NOTHROW(cfg.validate());
  }

  TEST_CASE("parse handles comments, whitespace and overrides") {
    auto cfg = parse_config("# comment\nvariant = cascaded\n  stages=4  # trailing\n\nlr_g = 1e-3\n");
    CHECK(cfg.variant == Variant::kCascaded);
    CHECK(cfg.gan.stages == 4);
    CHECK(cfg.lr_g == 1e-3);
    apply_override(cfg, "variant=recurrent");
    apply_override(cfg, "stages = 5");
    CHECK(cfg.variant == Variant::kRecurrent);
    CHECK(cfg.gan.stages == 5);
  }

  TEST_CASE("errors name the offending field") {
    CHECK(field_of([] { parse_config("bogus = 1\n"); }) == "bogus");
    CHECK(field_of([] { parse_config("stages = x\n"); }) == "stages");
    CHECK(field_of([] { parse_config("variant = gan\n"); }) == "variant");
    CHECK(field_of([] { parse_config("stages = 1\n").validate(); }) == "stages");
    CHECK(field_of([] { parse_config("image_base = 24\n").validate(); }) == "image_base");
    CHECK(field_of([] { parse_config("batch_size = 1\n").validate(); }) == "batch_size");
    CHECK(field_of([] { parse_config("dtype = half\n").validate(); }) == "dtype");
  }

  TEST_CASE("echo round-trips through parse") {
    TrainConfig cfg;
    cfg.variant = Variant::kCascaded;
    cfg.lr_d = 3.25e-4;
    cfg.seed = 99;
    cfg.paper_exact_gloss = true;
    auto again = parse_config(echo_config(cfg));
    CHECK(echo_config(again) == echo_config(cfg));
    CHECK(full_digest(again) == full_digest(cfg));
  }

  TEST_CASE("model digest tracks architecture only") {
    TrainConfig a, b;
    b.lr_g = 5e-4;
    b.max_iterations = 77;
    CHECK(model_digest(a) == model_digest(b));
    CHECK(full_digest(a) != full_digest(b));
    b.gan.n_g = 16;
    CHECK(model_digest(a) != model_digest(b));
  }

  TEST_CASE("schema keys are unique and every key has a verb") {
    std::set<std::string> keys;
    for (const auto& f : config_schema()) {
      CHECK(keys.insert(f.key).second);
      CHECK(f.verbs != 0u);
    }
  }

  TEST_CASE("sha256 of a known string") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
