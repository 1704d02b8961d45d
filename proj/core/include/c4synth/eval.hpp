#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/data.hpp"
#include "c4synth/model.hpp"
#include "c4synth/text_encoding.hpp"

namespace c4synth {

struct ScoreReport {
  double mean = 0.0;
  double std = 0.0;
  int64_t n_images = 0;
  int64_t n_splits = 0;
  std::string classifier_id;

  nlohmann::json to_json() const;
};

// probs: N x K class posteriors. Rows are sorted by `ids` and cut into
// contiguous splits; each split scores exp(mean KL(p(y|x) || p(y))) with
// p(y) estimated inside the split. std uses the population formula.
ScoreReport inception_score(const torch::Tensor& probs, std::span<const std::string> ids, int64_t n_splits,
                            std::string classifier_id);
// Ids default to zero-padded row indices.
ScoreReport inception_score(const torch::Tensor& probs, int64_t n_splits, std::string classifier_id);

// Small CNN used as the desk-scale stand-in for a fine-tuned Inception net.
class SynthClassifierImpl : public torch::nn::Module {
 public:
  SynthClassifierImpl(int64_t n_classes, int64_t image_size);
  torch::Tensor forward(const torch::Tensor& images);  // logits

  int64_t image_size() const { return image_size_; }
  int64_t n_classes() const { return n_classes_; }

 private:
  int64_t n_classes_, image_size_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(SynthClassifier);

struct Classifier {
  SynthClassifier net{nullptr};
  std::string id;  // hash of weights, recorded in every report

  // N x K probabilities; images are resized to the classifier input size.
  torch::Tensor probabilities(const torch::Tensor& images);
  std::vector<int64_t> predict(const torch::Tensor& images);
};

inline constexpr int64_t kClassifierImageSize = 32;

// Trained on real images of every class (train and test split).
Classifier train_classifier(const Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr);
double classifier_accuracy(Classifier& clf, const Dataset& data, std::span<const std::size_t> rows);
void save_classifier(const Classifier& clf, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

// A trained run rebuilt from a checkpoint for inference.
struct LoadedRun {
  TrainConfig cfg;
  std::shared_ptr<C4SynthImpl> model;
  SjeModel sje;
  std::string checkpoint_digest;
};

LoadedRun load_run(const std::filesystem::path& checkpoint);

struct GeneratedSet {
  torch::Tensor images;                            // B x 3 x S x S, final resolution, float
  std::vector<std::string> ids;                    // one per image
  std::vector<std::vector<std::string>> captions;  // caption ids per image
  uint64_t seed = 0;

  nlohmann::json metadata() const;
};

// Generation from explicit caption sets (N captions each) and noise rows.
// The conditioning latent is its mean (eps = 0).
torch::Tensor generate_images(LoadedRun& run, const std::vector<std::vector<std::string>>& caption_sets,
                              const torch::Tensor& z);

// Generates one image per example row with a seeded caption set and z. Every
// row must belong to `expected`; zero-shot generation uses Split::kTest.
// `count` rows spread evenly over `rows`, then shuffled with `seed`. Score
// splits are contiguous in id order, so a class-sorted sample would give each
// split only one or two classes.
std::vector<std::size_t> scoring_sample(std::span<const std::size_t> rows, std::size_t count, uint64_t seed);

GeneratedSet generate_for_rows(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                               uint64_t seed, std::optional<Split> expected);
GeneratedSet zero_shot_generate(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                                uint64_t seed);

// Teacher-forced next-token accuracy of the captioners on generated features,
// each step scored against its cycle target caption. Token-weighted over all
// steps and rows; caption sets and z are seeded.
double captioner_token_accuracy(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                                uint64_t seed, std::optional<Split> expected);

struct Interpolation {
  std::vector<torch::Tensor> frames;  // 3 x S x S each
  torch::Tensor strip;
};

// Linear path from z0 to z1 with fixed captions; rejects steps < 2 and
// noise vectors of the wrong length.
Interpolation interpolate_noise(LoadedRun& run, const std::vector<std::string>& captions, const torch::Tensor& z0,
                                const torch::Tensor& z1, int64_t steps);

}  // namespace c4synth
