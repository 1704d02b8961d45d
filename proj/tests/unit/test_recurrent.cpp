#include <cmath>
#include <random>

#include "c4synth/error.hpp"
#include "c4synth/losses.hpp"
#include "c4synth/recurrent_gan.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;
using c4synth::testing::random_targets;
using c4synth::testing::tiny_config;

namespace {

constexpr int64_t kVocab = 20;

std::shared_ptr<RecurrentC4SynthImpl> tiny_recurrent(uint64_t seed = 3, bool literal_t1 = false) {
  auto cfg = tiny_config(Variant::kRecurrent);
  cfg.literal_t1_recurrence = literal_t1;
  return std::dynamic_pointer_cast<RecurrentC4SynthImpl>(make_model(model_spec_from(cfg, kVocab), seed));
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

double grad_mass(const std::vector<torch::Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.grad().defined()) s += p.grad().abs().sum().item<double>();
  return s;
}

void zero_module(torch::nn::Module& m) {
  torch::NoGradGuard ng;
  for (auto& p : m.parameters()) p.zero_();
}

}  // namespace

TEST_SUITE("recurrent") {
  TEST_CASE("desk scale shapes") {
    auto model = tiny_recurrent();
    model->eval();
    auto in = inputs_for(*model, 2, 3, 1);
    auto roll = model->rollout(in.phis, in.noise);
    REQUIRE(roll.steps.size() == 3);
    CHECK(roll.steps[0].hidden_in.sizes() == torch::IntArrayRef{2, 8, 2, 2});
    CHECK(roll.steps[1].hidden_in.sizes() == torch::IntArrayRef{2, 8, 2, 2});
    for (const auto& step : roll.steps) {
      REQUIRE(step.images.size() == 3);
      CHECK(step.images[0].size(-1) == 16);
      CHECK(step.images[1].size(-1) == 32);
      CHECK(step.images[2].size(-1) == 64);
      CHECK(step.slots == std::vector<std::size_t>{0, 1, 2});
    }
    CHECK(model->slot_resolutions() == std::vector<int64_t>{16, 32, 64});
    CHECK(roll.schedule.target_of(2) == 0);
  }

  TEST_CASE("initializer zero noise with zero bias is the zero state and wrong z is rejected") {
    auto model = tiny_recurrent();
    {
      torch::NoGradGuard ng;
      model->initializer().fc()->bias.zero_();
    }
    CHECK(model->init_hidden(torch::zeros({1, 100})).abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(model->init_hidden(torch::zeros({1, 99})), ShapeError);
    auto a = model->init_hidden(torch::randn({1, 100}));
    auto b = model->init_hidden(torch::randn({1, 100}));
    CHECK_FALSE(torch::equal(a, b));
  }

  TEST_CASE("updater with zero fusion maps zero inputs to zero and checks the feedback size") {
    auto model = tiny_recurrent();
    model->eval();
    zero_module(*model->updater().fuse());
    auto h = model->update_hidden(torch::zeros({1, 8, 2, 2}), torch::zeros({1, 3, 16, 16}));
    CHECK(h.sizes() == torch::IntArrayRef{1, 8, 2, 2});
    CHECK(h.abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(model->update_hidden(torch::zeros({1, 8, 2, 2}), torch::zeros({1, 3, 32, 32})), ShapeError);
  }

  TEST_CASE("fewer than two captions are rejected") {
    auto model = tiny_recurrent();
    auto in = inputs_for(*model, 2, 1, 2);
    CHECK_THROWS_AS(model->rollout(in.phis, in.noise), InvalidArgument);
  }

  TEST_CASE("neutral discriminators and prior latents give three log-half terms per step") {
    for (std::size_t n : {2u, 4u}) {
      auto model = tiny_recurrent();
      for (std::size_t s = 0; s < 3; ++s) zero_module(*model->discriminator(s).named_children()[2].value());
      zero_module(*model->cond_aug().projection());
      auto in = inputs_for(*model, 2, n, 3);
      auto roll = model->rollout(in.phis, in.noise);
      ObjectiveOptions opt;
      opt.saturating_loss = true;
      auto l = generator_objective(*model, roll, in.captions, opt);
      CHECK(l.kl_sum.item<double>() == 0.0);
      CHECK(l.g_loss.item<double>() == doctest::Approx(3.0 * n * std::log(0.5)).epsilon(1e-6));
      CHECK(l.d_fake_mean == doctest::Approx(0.5));
    }
  }

  TEST_CASE("weights are shared across steps") {
    auto cfg = tiny_config(Variant::kRecurrent);
    cfg.gan.stages = 2;
    auto a = make_model(model_spec_from(cfg, kVocab), 1);
    cfg.gan.stages = 5;
    auto b = make_model(model_spec_from(cfg, kVocab), 1);
    CHECK(parameter_count(a->generator_parameters()) == parameter_count(b->generator_parameters()));
    CHECK(parameter_count(a->discriminator_parameters()) == parameter_count(b->discriminator_parameters()));
    CHECK(&a->captioner(0) == &a->captioner(1));
  }

  TEST_CASE("gradients flow through time unless the hidden state is cut") {
    for (bool cut : {false, true}) {
      auto model = tiny_recurrent();
      auto in = inputs_for(*model, 2, 3, 4);
      RolloutOptions ro;
      ro.detach_hidden = cut;
      auto roll = model->rollout(in.phis, in.noise, ro);
      model->zero_grad();
      // Only the last step's loss: any updater gradient must cross time.
      auto& last = roll.steps.back();
      auto adv = generator_adversarial(model->discriminator(0).forward(last.images[0], last.latent.t_tilde), false);
      adv.backward();
      const double mass = grad_mass(parameter_list(model->updater()));
      if (cut)
        CHECK(mass == 0.0);
      else
        CHECK(mass > 0.0);
    }
  }

  TEST_CASE("detached feedback cuts the image path into the next step") {
    // eps of step 1 reaches step 2 only through the fed-back image.
    for (bool cut : {false, true}) {
      auto model = tiny_recurrent();
      auto in = inputs_for(*model, 2, 2, 5);
      in.noise.eps[0].requires_grad_(true);
      RolloutOptions ro;
      ro.detach_feedback = cut;
      auto roll = model->rollout(in.phis, in.noise, ro);
      roll.steps[1].images[0].sum().backward();
      const auto& g = in.noise.eps[0].grad();
      const double mass = g.defined() ? g.abs().sum().item<double>() : 0.0;
      if (cut)
        CHECK(mass == 0.0);
      else
        CHECK(mass > 0.0);
    }
  }

  TEST_CASE("literal first-caption recurrence conditions every step on caption 1") {
    auto model = tiny_recurrent(3, true);
    auto in = inputs_for(*model, 2, 3, 6);
    auto roll = model->rollout(in.phis, in.noise);
    for (const auto& step : roll.steps) CHECK(step.caption_index == 0);
    CHECK(roll.schedule.target_of(2) == 0);
  }

  TEST_CASE("different noise gives different sequences for the same captions") {
    auto model = tiny_recurrent();
    model->eval();
    auto a = inputs_for(*model, 2, 2, 7);
    auto b = a;
    b.noise.z = torch::randn_like(a.noise.z);
    CHECK_FALSE(torch::equal(model->rollout(a.phis, a.noise).final_image(),
                             model->rollout(b.phis, b.noise).final_image()));
  }

  TEST_CASE("hidden state stays bounded over long unrolls") {
    auto model = tiny_recurrent();
    model->eval();
    torch::NoGradGuard ng;
    auto in = inputs_for(*model, 2, 10, 8);
    auto roll = model->rollout(in.phis, in.noise);
    for (std::size_t k = 1; k < roll.steps.size(); ++k) {
      const auto& h = roll.steps[k].hidden_in;
      CHECK(torch::isfinite(h).all().item<bool>());
      CHECK(h.abs().max().item<double>() <= 1.0);
    }
  }

  TEST_CASE("shared layers keep separate normalization statistics per step") {
    torch::manual_seed(12);
    StepBatchNorm norm(4, 2);
    norm->train();
    for (int i = 0; i < 200; ++i) {
      norm->forward(torch::randn({16, 4, 3, 3}), 0);
      norm->forward(10.0 * torch::randn({16, 4, 3, 3}) + 5.0, 1);
    }
    auto buffers = norm->named_buffers();
    CHECK(buffers["running_var_0"].mean().item<double>() == doctest::Approx(1.0).epsilon(0.1));
    CHECK(buffers["running_var_1"].mean().item<double>() == doctest::Approx(100.0).epsilon(0.1));
    CHECK(buffers["running_mean_1"].mean().item<double>() == doctest::Approx(5.0).epsilon(0.1));

    // Inference normalizes each step with its own statistics; steps past the end reuse the last.
    norm->eval();
    torch::NoGradGuard ng;
    auto late = 10.0 * torch::randn({64, 4, 3, 3}) + 5.0;
    CHECK(norm->forward(late, 1).std().item<double>() == doctest::Approx(1.0).epsilon(0.1));
    CHECK(torch::equal(norm->forward(late, 1), norm->forward(late, 7)));
    CHECK(norm->forward(torch::randn({64, 4, 3, 3}), 0).std().item<double>() == doctest::Approx(1.0).epsilon(0.1));
  }
}
