#pragma once

// Shared helpers for unit and acceptance tests: tiny configs, oracles and
// temporary directories.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/data.hpp"
#include "c4synth/model.hpp"
#include "c4synth/text_encoding.hpp"

namespace c4synth::testing {

// 16x16 base, a handful of channels; small enough for finite differences.
inline TrainConfig tiny_config(Variant variant) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.gan.stages = 2;
  cfg.gan.image_base = 16;
  cfg.gan.n_g = 2;
  cfg.gan.n_d = 2;
  cfg.gan.d_mult = 2;
  cfg.gan.noise_dim = 100;
  cfg.gan.cond_dim = 8;
  cfg.text.embed_dim = 16;
  cfg.text.word_dim = 8;
  cfg.text.hidden = 16;
  cfg.cccn.grid = 2;
  cfg.cccn.hidden = 8;
  cfg.cccn.word_dim = 6;
  cfg.cccn.attn_dim = 6;
  cfg.cccn.max_len = 12;
  cfg.batch_size = 4;
  cfg.synth.n_classes = 3;
  cfg.synth.images_per_class = 8;
  cfg.synth.test_classes = 1;
  cfg.image_size = 32;
  cfg.sje_iterations = 5;
  cfg.sje_batch = 8;
  cfg.classifier_iterations = 5;
  cfg.is_images = 12;
  cfg.is_splits = 2;
  return cfg;
}

inline Dataset tiny_dataset(const TrainConfig& cfg) { return make_synthetic(synth_spec_from(cfg), cfg.synth_seed); }

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("c4synth_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline bool same_tensor(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

// Relative agreement with a small absolute floor for near-zero gradients.
inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-7) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

// Random token batch of caption targets: START w.. END, words in [3, vocab).
inline TokenBatch random_targets(int64_t batch, int64_t vocab, int64_t max_words, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> len(1, max_words);
  std::uniform_int_distribution<int64_t> word(3, vocab - 1);
  std::vector<CaptionTarget> targets;
  for (int64_t b = 0; b < batch; ++b) {
    std::vector<int64_t> words(static_cast<std::size_t>(len(rng)));
    for (auto& w : words) w = word(rng);
    targets.push_back(CaptionTarget::from_words(words, vocab, max_words + 2));
  }
  return make_target_batch(targets);
}

}  // namespace c4synth::testing
