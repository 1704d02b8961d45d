#include <fstream>

#include "c4synth/checkpoint.hpp"
#include "c4synth/error.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;

TEST_SUITE("checkpoint") {
  TEST_CASE("groups, optimizers, tensors and strings round trip") {
    auto dir = c4synth::testing::temp_dir("ckpt");
    torch::manual_seed(1);
    torch::nn::Linear a(3, 2), b(3, 2);
    torch::optim::Adam opt(a->parameters(), torch::optim::AdamOptions(1e-2));
    a(torch::randn({4, 3})).sum().backward();
    opt.step();

    CheckpointWriter w({{"kind", "test"}, {"n", 3}});
    w.add_module("lin", *a);
    w.add_optimizer("opt", opt);
    w.add_tensor("t", torch::arange(5));
    w.add_string("s", "hello");
    w.save(dir / "x.pt");

    CheckpointReader r(dir / "x.pt");
    CHECK(r.metadata()["kind"] == "test");
    CHECK(r.has_group("lin"));
    r.load_module("lin", *b);
    CHECK(torch::equal(a->weight, b->weight));
    CHECK(torch::equal(a->bias, b->bias));
    torch::optim::Adam opt2(b->parameters(), torch::optim::AdamOptions(1e-2));
    CHECK_NOTHROW(r.load_optimizer("opt", opt2));
    CHECK(torch::equal(r.tensor("t"), torch::arange(5)));
    CHECK(r.string("s") == "hello");
    CHECK_THROWS_AS(r.load_module("missing", *b), CheckpointError);

    torch::nn::Linear wrong(4, 2);
    CHECK_THROWS_AS(r.load_module("lin", *wrong), CheckpointError);
    CHECK_FALSE(std::filesystem::exists(dir / "x.pt.tmp"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("missing and corrupt files are checkpoint errors") {
    auto dir = c4synth::testing::temp_dir("ckpt_bad");
    CHECK_THROWS_AS(CheckpointReader(dir / "nope.pt"), CheckpointError);
    std::ofstream(dir / "junk.pt") << "not a checkpoint";
    CHECK_THROWS_AS(CheckpointReader(dir / "junk.pt"), CheckpointError);
    std::filesystem::remove_all(dir);
  }
}
