#include <cmath>
#include <random>

#include "c4synth/cycle.hpp"
#include "c4synth/error.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;
using c4synth::testing::close_rel;
using c4synth::testing::random_targets;

namespace {

CaptionerHyper small_hyper() {
  CaptionerHyper h;
  h.grid = 2;
  h.hidden = 16;
  h.word_dim = 8;
  h.attn_dim = 8;
  return h;
}

// Walks the successor map from step 0 and reports whether it visits every
// step exactly once before returning.
bool single_cycle(const CycleSchedule& s) {
  std::vector<bool> seen(s.size(), false);
  std::size_t at = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (seen[at] || s.pairs[at].input != at) return false;
    seen[at] = true;
    at = s.pairs[at].target;
  }
  return at == 0;
}

}  // namespace

TEST_SUITE("cycle") {
  TEST_CASE("schedules for the documented sizes") {
    using P = CyclePair;
    CHECK((build_cycle_schedule(2).pairs == std::vector<P>{{0, 1}, {1, 0}}));
    CHECK((build_cycle_schedule(4).pairs == std::vector<P>{{0, 1}, {1, 2}, {2, 3}, {3, 0}}));
    CHECK((build_cycle_schedule(5).pairs == std::vector<P>{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}}));
    CHECK_THROWS_AS(build_cycle_schedule(1), InvalidArgument);
    CHECK_THROWS_AS(build_cycle_schedule(0), InvalidArgument);
  }

  TEST_CASE("every schedule is one cycle that closes on the first caption") {
    for (std::size_t n = 2; n <= 32; ++n) {
      auto s = build_cycle_schedule(n);
      CHECK(s.size() == n);
      CHECK(single_cycle(s));
      CHECK(s.target_of(n - 1) == 0);
    }
  }

  TEST_CASE("single region attention returns that region") {
    torch::manual_seed(2);
    SoftAttention att(5, 4, 3);
    auto region = torch::randn({1, 5});
    auto out = attention_context(*att, region, torch::randn({4}));
    CHECK(out.weights.item<float>() == 1.0f);
    CHECK(torch::allclose(out.context, region.squeeze(0)));
  }

  TEST_CASE("identical regions give that region regardless of weights") {
    torch::manual_seed(3);
    SoftAttention att(4, 3, 3);
    auto region = torch::randn({4});
    auto map = region.unsqueeze(0).repeat({6, 1});
    auto out = attention_context(*att, map, torch::randn({3}));
    CHECK(torch::allclose(out.context, region, 1e-5, 1e-6));
  }

  TEST_CASE("attention matches a direct recomputation") {
    torch::manual_seed(4);
    SoftAttention att(6, 5, 4);
    att->to(torch::kDouble);
    auto map = torch::randn({7, 6}, torch::kDouble);
    auto state = torch::randn({5}, torch::kDouble);
    auto out = attention_context(*att, map, state);

    auto params = att->named_parameters();
    auto wf = params["feature_proj.weight"], bf = params["feature_proj.bias"];
    auto wh = params["state_proj.weight"];
    auto w = params["score.weight"], bw = params["score.bias"];
    std::vector<double> score(7);
    for (int64_t r = 0; r < 7; ++r) {
      auto a = torch::tanh(wf.matmul(map[r]) + bf + wh.matmul(state));
      score[r] = (w.matmul(a) + bw).item<double>();
    }
    double mx = *std::max_element(score.begin(), score.end()), z = 0.0;
    for (auto& s : score) z += std::exp(s - mx);
    auto expected = torch::zeros({6}, torch::kDouble);
    for (int64_t r = 0; r < 7; ++r) {
      const double wr = std::exp(score[r] - mx) / z;
      CHECK(out.weights[r].item<double>() == doctest::Approx(wr).epsilon(1e-12));
      expected += wr * map[r];
    }
    CHECK(torch::allclose(out.context, expected, 1e-12, 1e-12));
    CHECK(out.weights.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("uniform logits give log V and one-hot logits give near zero") {
    const int64_t v = 13;
    std::mt19937_64 rng(1);
    auto targets = random_targets(3, v, 5, rng);
    const auto steps = targets.ids.size(1) - 1;
    auto uniform = torch::zeros({3, steps, v}, torch::kDouble);
    CHECK(caption_cross_entropy(uniform, targets).item<double>() == doctest::Approx(std::log(13.0)).epsilon(1e-12));

    auto next = targets.ids.narrow(1, 1, steps);
    auto peaked = torch::one_hot(next, v).to(torch::kDouble) * 60.0;
    CHECK(caption_cross_entropy(peaked, targets).item<double>() < 1e-20);
  }

  TEST_CASE("empty targets are rejected") {
    Captioner cap(4, 10, small_hyper());
    std::vector<std::vector<int64_t>> only_markers{{kStartToken, kEndToken}};
    auto t = make_token_batch(only_markers);
    CHECK_THROWS_AS(cccn_caption_loss(*cap, torch::randn({1, 4, 4, 4}), t), InvalidArgument);
  }

  TEST_CASE("forcing the output layer to zero gives log V") {
    const int64_t v = 11;
    Captioner cap(4, v, small_hyper());
    {
      torch::NoGradGuard ng;
      cap->output_layer()->weight.zero_();
      cap->output_layer()->bias.zero_();
    }
    std::mt19937_64 rng(9);
    auto targets = random_targets(2, v, 4, rng);
    auto loss = cccn_caption_loss(*cap, torch::randn({2, 4, 4, 4}), targets);
    CHECK(loss.item<double>() == doctest::Approx(std::log(11.0)).epsilon(1e-6));
  }

  TEST_CASE("a tiny captioner overfits one pair to full token accuracy") {
    torch::manual_seed(5);
    const int64_t v = 12;
    Captioner cap(4, v, small_hyper());
    std::mt19937_64 rng(2);
    auto targets = random_targets(1, v, 6, rng);
    auto feats = torch::randn({1, 4, 4, 4});
    torch::optim::Adam opt(cap->parameters(), torch::optim::AdamOptions(1e-2));
    for (int i = 0; i < 500; ++i) {
      opt.zero_grad();
      cccn_caption_loss(*cap, feats, targets).backward();
      opt.step();
    }
    CHECK(cap->token_accuracy(feats, targets) == 1.0);
    auto decoded = cap->greedy_decode(feats, 10);
    auto ids = targets.ids[0];
    std::vector<int64_t> words;
    for (int64_t j = 1; j + 1 < targets.lengths[0].item<int64_t>(); ++j) words.push_back(ids[j].item<int64_t>());
    CHECK(decoded[0] == words);
  }

  TEST_CASE("cycle loss sums per-step terms along the schedule") {
    auto schedule2 = build_cycle_schedule(2);
    std::vector<torch::Tensor> feats{torch::zeros({1}), torch::zeros({1})};
    std::vector<TokenBatch> caps(2);
    auto fixed = [](std::vector<double> values) {
      return [values](std::size_t k, const torch::Tensor&, const TokenBatch&) {
        return torch::tensor(values[k], torch::kDouble);
      };
    };
    CHECK(cycle_loss(feats, caps, schedule2, fixed({0.0, 0.0})).item<double>() == 0.0);
    CHECK(cycle_loss(feats, caps, schedule2, fixed({1.25, 2.5})).item<double>() == 3.75);

    std::vector<torch::Tensor> three(3, torch::zeros({1}));
    CHECK_THROWS_AS(cycle_loss(three, caps, schedule2, fixed({0, 0, 0})), InvalidArgument);
  }

  TEST_CASE("cycle loss on four captions equals a manual pairwise sum") {
    torch::manual_seed(6);
    const int64_t v = 15;
    std::vector<Captioner> caps;
    for (int k = 0; k < 4; ++k) {
      caps.emplace_back(3, v, small_hyper());
      caps.back()->to(torch::kDouble);
    }
    std::mt19937_64 rng(4);
    std::vector<TokenBatch> targets;
    std::vector<torch::Tensor> feats;
    for (int k = 0; k < 4; ++k) {
      targets.push_back(random_targets(2, v, 5, rng));
      feats.push_back(torch::randn({2, 3, 4, 4}, torch::kDouble));
    }
    auto schedule = build_cycle_schedule(4);
    auto step = [&](std::size_t k, const torch::Tensor& f, const TokenBatch& t) {
      return cccn_caption_loss(*caps[k], f, t);
    };
    const double total = cycle_loss(feats, targets, schedule, step).item<double>();
    double manual = 0.0;
    for (int k = 0; k < 4; ++k) manual += cccn_caption_loss(*caps[k], feats[k], targets[(k + 1) % 4]).item<double>();
    CHECK(total == doctest::Approx(manual).epsilon(1e-12));
  }

  TEST_CASE("cycle loss gradient with respect to features matches finite differences") {
    torch::manual_seed(7);
    const int64_t v = 9;
    Captioner cap(3, v, small_hyper());
    cap->to(torch::kDouble);
    std::mt19937_64 rng(8);
    std::vector<TokenBatch> targets{random_targets(2, v, 4, rng), random_targets(2, v, 4, rng)};
    std::vector<torch::Tensor> feats{torch::randn({2, 3, 4, 4}, torch::kDouble).requires_grad_(true),
                                     torch::randn({2, 3, 4, 4}, torch::kDouble).requires_grad_(true)};
    auto schedule = build_cycle_schedule(2);
    auto step = [&](std::size_t, const torch::Tensor& f, const TokenBatch& t) { return cccn_caption_loss(*cap, f, t); };
    cycle_loss(feats, targets, schedule, step).backward();
    const double h = 1e-6;
    std::mt19937_64 pick(1);
    for (int trial = 0; trial < 12; ++trial) {
      auto& f = feats[trial % 2];
      const int64_t i = std::uniform_int_distribution<int64_t>(0, f.numel() - 1)(pick);
      torch::NoGradGuard ng;
      auto flat = f.view({-1});
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = cycle_loss(feats, targets, schedule, step).item<double>();
      flat[i] = orig - h;
      const double down = cycle_loss(feats, targets, schedule, step).item<double>();
      flat[i] = orig;
      CHECK(close_rel(f.grad().view({-1})[i].item<double>(), (up - down) / (2 * h), 1e-4, 1e-9));
    }
  }
}
