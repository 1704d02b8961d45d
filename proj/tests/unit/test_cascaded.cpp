#include <cmath>
#include <random>

#include "c4synth/cascaded_gan.hpp"
#include "c4synth/error.hpp"
#include "c4synth/losses.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;
using c4synth::testing::random_targets;
using c4synth::testing::tiny_config;

namespace {

constexpr int64_t kVocab = 20;

std::shared_ptr<CascadedC4SynthImpl> tiny_cascaded(int64_t stages = 2, uint64_t seed = 3) {
  auto cfg = tiny_config(Variant::kCascaded);
  cfg.gan.stages = stages;
  auto spec = model_spec_from(cfg, kVocab);
  return std::dynamic_pointer_cast<CascadedC4SynthImpl>(make_model(spec, seed));
}

struct Inputs {
  std::vector<torch::Tensor> phis;
  std::vector<TokenBatch> captions;
  NoiseDraw noise;
};

Inputs inputs_for(C4SynthImpl& model, int64_t batch, std::size_t n, uint64_t seed) {
  auto gen = make_generator(seed);
  std::mt19937_64 rng(seed);
  Inputs in;
  for (std::size_t i = 0; i < n; ++i) {
    in.phis.push_back(torch::randn({batch, model.spec().embed_dim}, gen));
    in.captions.push_back(random_targets(batch, kVocab, 5, rng));
  }
  in.noise = NoiseDraw::sample(batch, n, model.spec().gan.noise_dim, model.spec().gan.cond_dim, gen);
  return in;
}

bool has_grad(const torch::Tensor& p) { return p.grad().defined() && p.grad().abs().sum().item<double>() > 0; }

}  // namespace

TEST_SUITE("cascaded") {
  TEST_CASE("generator loss anchors") {
    std::vector<double> half{0.5}, zero{0.0};
    CHECK(generator_loss(half, zero, 1.0, true) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    std::vector<double> two{0.5, 0.5}, kls{2.0, 3.0};
    CHECK(generator_loss(two, kls, 1.0, true) == doctest::Approx(2 * std::log(0.5) + 5.0).epsilon(1e-12));
    CHECK(generator_loss(two, kls, 1.0, true) == doctest::Approx(3.6137).epsilon(1e-4));
    CHECK(generator_loss(half, zero, 1.0, false) == doctest::Approx(-std::log(0.5)).epsilon(1e-12));
    std::vector<double> bad{1.0};
    CHECK_THROWS_AS(generator_loss(bad, zero, 1.0, true), InvalidArgument);
    std::vector<double> neg{0.0};
    CHECK_THROWS_AS(generator_loss(neg, zero, 1.0, true), InvalidArgument);
    CHECK_THROWS_AS(generator_loss(two, zero, 1.0, true), InvalidArgument);
  }

  TEST_CASE("discriminator loss anchors and random pairs") {
    CHECK(discriminator_loss(0.5, 0.5) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
    CHECK(discriminator_loss(1.0 - 1e-12, 1e-12) < 1e-6);
    CHECK(discriminator_loss(1.0, 0.0) >= 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int i = 0; i < 100; ++i) {
      const double r = u(rng), f = u(rng);
      CHECK(discriminator_loss(r, f) == doctest::Approx(-std::log(r) - std::log(1 - f)).epsilon(1e-12));
    }
  }

  TEST_CASE("logit forms agree with probability forms") {
    auto lr = torch::randn({6}, torch::kDouble), lf = torch::randn({6}, torch::kDouble);
    auto from_prob = discriminator_loss(torch::sigmoid(lr), torch::sigmoid(lf));
    CHECK(discriminator_loss_from_logits(lr, lf).item<double>() == doctest::Approx(from_prob.item<double>()).epsilon(1e-10));
    auto kl = torch::zeros({6}, torch::kDouble);
    for (bool exact : {true, false}) {
      auto ref = generator_loss({torch::sigmoid(lf)}, {kl}, 1.0, exact);
      CHECK(generator_adversarial(lf, exact).item<double>() == doctest::Approx(ref.item<double>()).epsilon(1e-10));
    }
  }

  TEST_CASE("desk scale shapes and determinism") {
    auto model = tiny_cascaded();
    model->eval();
    auto in = inputs_for(*model, 3, 2, 1);
    auto a = model->rollout(in.phis, in.noise);
    auto b = model->rollout(in.phis, in.noise);
    REQUIRE(a.steps.size() == 2);
    CHECK(a.steps[0].features.sizes() == torch::IntArrayRef{3, 16, 16, 16});
    CHECK(a.steps[1].features.sizes() == torch::IntArrayRef{3, 8, 32, 32});
    CHECK(a.steps[0].images[0].sizes() == torch::IntArrayRef{3, 3, 16, 16});
    CHECK(a.final_image().sizes() == torch::IntArrayRef{3, 3, 32, 32});
    CHECK(model->output_resolution() == 32);
    for (std::size_t k = 0; k < 2; ++k) CHECK(torch::equal(a.steps[k].images[0], b.steps[k].images[0]));
  }

  TEST_CASE("desk scale n_g 8 gives 16x16x64") {
    BackboneFirst first(8, 100, 8, 16);
    first->eval();
    auto out = first->forward(torch::randn({2, 8}), torch::randn({2, 100}));
    CHECK(out.sizes() == torch::IntArrayRef{2, 64, 16, 16});
  }

  TEST_CASE("zero inputs through a zero fusion stay zero before the residual path") {
    BackboneNext block(4, 3);
    block->eval();
    {
      torch::NoGradGuard ng;
      block->fuse()->weight.zero_();
    }
    auto fused = block->fuse()->forward(torch::zeros({1, 7, 4, 4}));
    CHECK(fused.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("images lie strictly inside the tanh range") {
    ImageHead head(4);
    auto img = head->forward(torch::randn({2, 4, 8, 8}) * 0.5);
    CHECK(img.min().item<double>() > -1.0);
    CHECK(img.max().item<double>() < 1.0);
  }

  TEST_CASE("discriminator conditioning is live and output is a probability") {
    torch::manual_seed(8);
    ConditionalDiscriminator d(16, 2, 2, 8);
    d->eval();
    auto img = torch::randn({2, 3, 16, 16});
    auto p1 = d->probability(img, torch::randn({2, 8}));
    auto p2 = d->probability(img, torch::randn({2, 8}));
    CHECK_FALSE(torch::equal(p1, p2));
    CHECK(p1.min().item<double>() > 0.0);
    CHECK(p1.max().item<double>() < 1.0);
    CHECK(d->downsample(img).sizes() == torch::IntArrayRef{2, 4, 4, 4});
    CHECK_THROWS_AS(d->forward(torch::randn({2, 3, 32, 32}), torch::randn({2, 8})), ShapeError);
  }

  TEST_CASE("wrong caption counts, stages and shapes are rejected") {
    auto model = tiny_cascaded();
    auto in = inputs_for(*model, 2, 3, 2);
    CHECK_THROWS_AS(model->rollout(in.phis, in.noise), InvalidArgument);
    CHECK_THROWS_AS(model->next_block(2), InvalidArgument);
    auto two = inputs_for(*model, 2, 2, 2);
    two.noise.z = torch::randn({2, 99});
    CHECK_THROWS_AS(model->rollout(two.phis, two.noise), ShapeError);
    auto ok = inputs_for(*model, 2, 2, 2);
    ok.captions.pop_back();
    CHECK_THROWS_AS(cascaded_forward(*model, ok.phis, ok.captions, ok.noise), InvalidArgument);
  }

  TEST_CASE("cascaded_forward bundles follow the cycle") {
    auto model = tiny_cascaded(3);
    auto in = inputs_for(*model, 2, 3, 4);
    auto bundles = cascaded_forward(*model, in.phis, in.captions, in.noise);
    REQUIRE(bundles.size() == 3);
    CHECK(bundles[2].image.size(-1) == 64);
    CHECK(bundles[0].d_logit.sizes() == torch::IntArrayRef{2});
    // Stage 3 is scored against caption 1.
    auto expect = cccn_caption_loss(model->captioner(2), bundles[2].features, in.captions[0]);
    CHECK(bundles[2].caption_loss.item<double>() == doctest::Approx(expect.item<double>()).epsilon(1e-6));
  }

  TEST_CASE("the cycle loss reaches every upstream generator block") {
    auto model = tiny_cascaded();
    auto in = inputs_for(*model, 2, 2, 5);
    auto roll = model->rollout(in.phis, in.noise);
    ObjectiveOptions opt;
    auto loss = generator_objective(*model, roll, in.captions, opt);
    model->zero_grad();
    loss.cccl.backward();
    for (auto& p : model->first_block().parameters()) CHECK(has_grad(p));
    for (auto& p : model->next_block(1).parameters()) CHECK(has_grad(p));
    for (auto& p : model->discriminator_parameters()) CHECK_FALSE(has_grad(p));
  }

  TEST_CASE("discriminator objective touches only discriminators") {
    auto model = tiny_cascaded();
    auto in = inputs_for(*model, 2, 2, 6);
    auto roll = model->rollout(in.phis, in.noise);
    std::vector<torch::Tensor> reals{torch::rand({2, 3, 16, 16}) * 2 - 1, torch::rand({2, 3, 32, 32}) * 2 - 1};
    model->zero_grad();
    auto losses = discriminator_objective(*model, roll, reals, true);
    REQUIRE(losses.size() == 2);
    (losses[0] + losses[1]).backward();
    for (auto& p : model->generator_parameters()) CHECK_FALSE(has_grad(p));
    for (auto& p : model->discriminator(0).parameters()) CHECK(has_grad(p));
    CHECK_THROWS_AS(discriminator_objective(*model, roll, {reals[0]}), InvalidArgument);
  }

  TEST_CASE("objective bookkeeping") {
    auto model = tiny_cascaded();
    auto in = inputs_for(*model, 2, 2, 7);
    auto roll = model->rollout(in.phis, in.noise);
    ObjectiveOptions opt;
    opt.lambda = 0.5;
    opt.cccn_weight = 2.0;
    auto l = generator_objective(*model, roll, in.captions, opt);
    CHECK(l.kls.size() == 2);
    CHECK(l.kl_term.item<double>() == doctest::Approx(0.5 * l.kl_sum.item<double>()).epsilon(1e-6));
    CHECK(l.total.item<double>() ==
          doctest::Approx(l.g_loss.item<double>() + 2.0 * l.cccl.item<double>()).epsilon(1e-6));
    CHECK(l.d_fake_mean > 0.0);
    CHECK(l.d_fake_mean < 1.0);
  }
}
