#include <benchmark/benchmark.h>

#include <random>

#include "c4synth/cycle.hpp"
#include "c4synth/eval.hpp"
#include "c4synth/layers.hpp"
#include "c4synth/model.hpp"
#include "c4synth/text_encoding.hpp"

using namespace c4synth;

namespace {

TrainConfig small_config(Variant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.gan.stages = 3;
  cfg.gan.image_base = 16;
  cfg.gan.n_g = 8;
  cfg.gan.n_d = 8;
  cfg.gan.d_mult = 8;
  cfg.text.embed_dim = 64;
  cfg.cccn.grid = 4;
  cfg.cccn.hidden = 64;
  cfg.cccn.word_dim = 32;
  cfg.cccn.attn_dim = 32;
  return cfg;
}

TokenBatch random_captions(int64_t batch, int64_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> word(3, vocab - 1);
  std::vector<CaptionTarget> rows;
  for (int64_t b = 0; b < batch; ++b) {
    std::vector<int64_t> words(8);
    for (auto& w : words) w = word(rng);
    rows.push_back(CaptionTarget::from_words(words, vocab, 20));
  }
  return make_target_batch(rows);
}

void BM_CycleSchedule(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(build_cycle_schedule(static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_CycleSchedule)->DenseRange(2, 8, 3);

// Forward and backward of the generator-side objective at desk scale.
void BM_GeneratorStep(benchmark::State& state) {
  const auto variant = state.range(0) == 0 ? Variant::kCascaded : Variant::kRecurrent;
  const int64_t batch = 16, vocab = 60;
  auto model = make_model(model_spec_from(small_config(variant), vocab), 1);
  model->train();
  auto gen = make_generator(2);
  std::mt19937_64 rng(3);
  std::vector<torch::Tensor> phis;
  std::vector<TokenBatch> captions;
  for (int k = 0; k < 3; ++k) {
    phis.push_back(torch::randn({batch, model->spec().embed_dim}, gen));
    captions.push_back(random_captions(batch, vocab, rng));
  }
  auto noise = NoiseDraw::sample(batch, 3, model->spec().gan.noise_dim, model->spec().gan.cond_dim, gen);
  for (auto _ : state) {
    model->zero_grad();
    auto loss = generator_objective(*model, model->rollout(phis, noise), captions, ObjectiveOptions{}).total;
    loss.backward();
    benchmark::DoNotOptimize(loss.item<double>());
  }
  state.SetLabel(variant == Variant::kCascaded ? "cascaded" : "recurrent");
}
BENCHMARK(BM_GeneratorStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InceptionScore(benchmark::State& state) {
  auto gen = make_generator(4);
  auto probs = torch::softmax(torch::randn({state.range(0), 5}, gen, torch::kDouble), 1);
  for (auto _ : state) benchmark::DoNotOptimize(inception_score(probs, 10, "bench").mean);
}
BENCHMARK(BM_InceptionScore)->Arg(500)->Arg(5000);

// Zero-one embedding loss over a batch with every class present.
void BM_SjeLoss(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<SjeItem> items(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    items[i].label = static_cast<int64_t>(i % 4);
    items[i].image.label = items[i].label;
    items[i].image.vector.resize(64);
    items[i].text.vector.resize(64);
    for (auto& x : items[i].image.vector) x = n(rng);
    for (auto& x : items[i].text.vector) x = n(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(sje_loss(items));
}
BENCHMARK(BM_SjeLoss)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
