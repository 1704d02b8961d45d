#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "c4synth/error.hpp"
#include "c4synth/eval.hpp"
#include "c4synth/trainer.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace c4synth;
using c4synth::testing::temp_dir;
using c4synth::testing::tiny_config;

namespace {

torch::Tensor random_simplex(int64_t n, int64_t k, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  auto p = torch::empty({n, k}, torch::kDouble);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double v = g(rng) + 1e-9;
      p[i][j] = v;
      s += v;
    }
    p[i] /= s;
  }
  return p;
}

// exp(mean KL(p(y|x) || p(y))) over one block of rows.
double oracle_split_score(const torch::Tensor& p) {
  auto marginal = p.mean(0);
  double acc = 0.0;
  for (int64_t i = 0; i < p.size(0); ++i)
    for (int64_t j = 0; j < p.size(1); ++j) {
      const double v = p[i][j].item<double>();
      if (v > 0) acc += v * std::log(v / marginal[j].item<double>());
    }
  return std::exp(acc / static_cast<double>(p.size(0)));
}

// A two-iteration run saved as a checkpoint, shared by the generation tests.
struct TinyRun {
  std::filesystem::path dir;
  TrainConfig cfg;
  Dataset data;
  std::filesystem::path checkpoint;

  TinyRun() {
    dir = temp_dir("eval_run");
    cfg = tiny_config(Variant::kRecurrent);
    data = c4synth::testing::tiny_dataset(cfg);
    Trainer t(cfg, data, make_sje_model(build_vocabulary(data, cfg), cfg.text, cfg.seed));
    t.run(2);
    checkpoint = dir / "final.pt";
    t.save_checkpoint(checkpoint);
  }
  ~TinyRun() { std::filesystem::remove_all(dir); }
};

TinyRun& tiny_run() {
  static TinyRun run;
  return run;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("inception score anchors") {
    auto same = torch::full({20, 5}, 0.2, torch::kDouble);
    auto r1 = inception_score(same, 2, "test");
    CHECK(r1.mean == 1.0);
    CHECK(r1.std == 0.0);

    auto onehot = torch::zeros({20, 5}, torch::kDouble);
    for (int64_t i = 0; i < 20; ++i) onehot[i][i % 5] = 1.0;
    auto r5 = inception_score(onehot, 2, "test");
    CHECK(std::abs(r5.mean - 5.0) < 1e-6);
    CHECK(r5.n_images == 20);
    CHECK(r5.n_splits == 2);
    CHECK(r5.classifier_id == "test");
  }

  TEST_CASE("inception score matches an oracle and stays within [1, K]") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      auto p = random_simplex(30, 4, rng);
      auto rep = inception_score(p, 3, "x");
      std::vector<double> scores;
      for (int s = 0; s < 3; ++s) scores.push_back(oracle_split_score(p.slice(0, s * 10, s * 10 + 10)));
      const double mean = (scores[0] + scores[1] + scores[2]) / 3.0;
      double var = 0.0;
      for (double v : scores) var += (v - mean) * (v - mean);
      CHECK(rep.mean == doctest::Approx(mean).epsilon(1e-10));
      CHECK(rep.std == doctest::Approx(std::sqrt(var / 3.0)).epsilon(1e-8));
      CHECK(rep.mean >= 1.0 - 1e-12);
      CHECK(rep.mean <= 4.0 + 1e-12);
    }
  }

  TEST_CASE("inception score is invariant to row order when ids travel with rows") {
    std::mt19937_64 rng(6);
    auto p = random_simplex(24, 3, rng);
    std::vector<std::string> ids;
    for (int i = 0; i < 24; ++i) ids.push_back("img" + std::to_string(100 + i));
    auto base = inception_score(p, ids, 4, "x");
    std::vector<int64_t> perm(24);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> shuffled_ids;
    for (auto i : perm) shuffled_ids.push_back(ids[static_cast<std::size_t>(i)]);
    auto shuffled = inception_score(p.index_select(0, torch::tensor(perm)), shuffled_ids, 4, "x");
    CHECK(shuffled.mean == base.mean);
    CHECK(shuffled.std == base.std);
  }

  TEST_CASE("scoring sample mixes classes into every split") {
    // 5 classes of 40 rows, stored class by class.
    std::vector<std::size_t> rows(200);
    std::iota(rows.begin(), rows.end(), 0);
    auto a = scoring_sample(rows, 100, 3), b = scoring_sample(rows, 100, 3), c = scoring_sample(rows, 100, 4);
    CHECK(a == b);
    CHECK(a != c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == 2 * i);
    for (std::size_t split = 0; split < 10; ++split) {
      std::set<std::size_t> classes;
      for (std::size_t i = 10 * split; i < 10 * split + 10; ++i) classes.insert(a[i] / 40);
      CHECK(classes.size() >= 3);
    }
    CHECK_THROWS_AS(scoring_sample(std::vector<std::size_t>{}, 5, 0), InvalidArgument);
  }

  TEST_CASE("inception score rejects malformed input") {
    auto bad_sum = torch::full({4, 2}, 0.6, torch::kDouble);
    CHECK_THROWS_AS(inception_score(bad_sum, 2, "x"), InvalidArgument);
    auto ok = torch::full({4, 2}, 0.5, torch::kDouble);
    CHECK_THROWS_AS(inception_score(ok, 5, "x"), InvalidArgument);
    auto neg = torch::tensor({{1.5, -0.5}, {0.5, 0.5}}, torch::kDouble);
    CHECK_THROWS_AS(inception_score(neg, 1, "x"), InvalidArgument);
    auto slightly = torch::full({4, 2}, 0.5 + 2e-5, torch::kDouble);
    CHECK_NOTHROW(inception_score(slightly, 2, "x"));
  }

  TEST_CASE("classifier outputs are distributions and its id follows its weights") {
    auto cfg = tiny_config(Variant::kRecurrent);
    auto data = c4synth::testing::tiny_dataset(cfg);
    auto clf = train_classifier(data, cfg);
    auto images = torch::rand({5, 3, 32, 32}) * 2 - 1;
    auto p = clf.probabilities(images);
    CHECK(p.sizes() == torch::IntArrayRef{5, 3});
    CHECK(torch::allclose(p.sum(1).to(torch::kDouble), torch::ones({5}, torch::kDouble), 1e-5, 1e-5));
    auto dir = temp_dir("eval_clf");
    save_classifier(clf, dir / "c.pt");
    auto back = load_classifier(dir / "c.pt");
    CHECK(back.id == clf.id);
    CHECK(torch::equal(back.probabilities(images), p));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("zero-shot generation enforces the firewall and is reproducible") {
    auto& tr = tiny_run();
    auto run = load_run(tr.checkpoint);
    auto test_rows = tr.data.indices(Split::kTest);
    std::vector<std::size_t> rows(test_rows.begin(), test_rows.begin() + 3);
    auto a = zero_shot_generate(run, tr.data, rows, 11);
    auto b = zero_shot_generate(run, tr.data, rows, 11);
    CHECK(a.images.sizes() == torch::IntArrayRef{3, 3, 64, 64});
    for (int64_t i = 0; i < 3; ++i) CHECK(encode_png(a.images[i]) == encode_png(b.images[i]));
    CHECK(a.metadata()["seed"] == 11);
    CHECK(a.captions[0].size() == 2);
    auto train_rows = tr.data.indices(Split::kTrain);
    std::vector<std::size_t> bad{train_rows[0]};
    CHECK_THROWS_AS(zero_shot_generate(run, tr.data, bad, 11), FirewallError);
  }

  TEST_CASE("interpolation endpoints and constant paths") {
    auto& tr = tiny_run();
    auto run = load_run(tr.checkpoint);
    std::vector<std::string> caps{tr.data.examples[0].captions[0], tr.data.examples[0].captions[1]};
    auto gen = make_generator(3);
    auto z0 = torch::randn({100}, gen), z1 = torch::randn({100}, gen);
    auto two = interpolate_noise(run, caps, z0, z1, 2);
    auto at0 = generate_images(run, {caps}, z0.unsqueeze(0))[0];
    auto at1 = generate_images(run, {caps}, z1.unsqueeze(0))[0];
    CHECK(torch::allclose(two.frames[0], at0, 1e-5, 1e-6));
    CHECK(torch::allclose(two.frames[1], at1, 1e-5, 1e-6));
    CHECK(two.strip.size(2) == 2 * 64);

    auto flat = interpolate_noise(run, caps, z0, z0, 4);
    for (const auto& f : flat.frames) CHECK(torch::allclose(f, flat.frames[0], 1e-6, 1e-7));
    CHECK_THROWS_AS(interpolate_noise(run, caps, z0, z1, 1), InvalidArgument);
    CHECK_THROWS_AS(interpolate_noise(run, caps, torch::randn({99}), z1, 3), ShapeError);
  }

  TEST_CASE("captioner accuracy is a seeded fraction and respects the firewall") {
    auto& tr = tiny_run();
    auto run = load_run(tr.checkpoint);
    auto train = tr.data.indices(Split::kTrain);
    const double a = captioner_token_accuracy(run, tr.data, train, 4, Split::kTrain);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(captioner_token_accuracy(run, tr.data, train, 4, Split::kTrain) == a);
    CHECK_THROWS_AS(captioner_token_accuracy(run, tr.data, train, 4, Split::kTest), FirewallError);
  }
}
