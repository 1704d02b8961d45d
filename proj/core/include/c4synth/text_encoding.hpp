#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/vocabulary.hpp"

namespace c4synth {

class Dataset;

struct TextEmbedding {
  std::vector<double> vector;
  std::string caption_id;
};

struct ImageEmbedding {
  std::vector<double> vector;
  std::string image_id;
  int64_t label = 0;
};

// Sample from the caption-conditioned diagonal Gaussian. All tensors are
// B x cond_dim except `kl`, which holds one KL value per row.
struct ConditionedLatent {
  torch::Tensor t_tilde;
  torch::Tensor mu;
  torch::Tensor log_var;
  torch::Tensor eps;
  torch::Tensor kl;
};

// log-variances below this are clamped inside the KL term only, so a
// collapsed variance still yields t_tilde == mu and a finite KL.
inline constexpr double kLogVarFloor = -80.0;

// KL(N(mu, diag(exp(log_var))) || N(0, I)) summed over the last dimension.
torch::Tensor kl_gaussian(const torch::Tensor& mu, const torch::Tensor& log_var);
double kl_gaussian(std::span<const double> mu, std::span<const double> log_var);

// t_tilde = mu + exp(0.5 * log_var) * eps.
ConditionedLatent sample_latent(const torch::Tensor& mu, const torch::Tensor& log_var,
                                const torch::Tensor& eps);

// Word embedding -> single-layer LSTM -> linear projection to E.
class TextEncoderImpl : public torch::nn::Module {
 public:
  TextEncoderImpl(int64_t vocab_size, const TextHyper& hyper);

  // B x E sentence embeddings of word-index sequences (no start/end markers).
  torch::Tensor forward(const TokenBatch& tokens);
  TextEmbedding encode_caption(std::span<const int64_t> tokens, std::string caption_id = {});

  int64_t vocab_size() const { return vocab_size_; }
  int64_t embed_dim() const { return embed_dim_; }

 private:
  int64_t vocab_size_;
  int64_t embed_dim_;
  torch::nn::Embedding words_{nullptr};
  torch::nn::LSTM rnn_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(TextEncoder);

// Small strided CNN mapping images to the joint embedding space.
class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(int64_t embed_dim);
  torch::Tensor forward(const torch::Tensor& images);

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(ImageEncoder);

// Linear projection of phi(t) to the mean and log-variance of the
// conditioning Gaussian.
class ConditionAugmentImpl : public torch::nn::Module {
 public:
  ConditionAugmentImpl(int64_t embed_dim, int64_t cond_dim);

  // Throws InvalidArgument naming the block ("mu" or "log_var") if the
  // projection produces non-finite values.
  ConditionedLatent forward(const torch::Tensor& phi, const torch::Tensor& eps);
  ConditionedLatent sample(const torch::Tensor& phi, at::Generator& gen);

  torch::nn::Linear& projection() { return project_; }
  int64_t cond_dim() const { return cond_dim_; }

 private:
  int64_t cond_dim_;
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(ConditionAugment);

// -- structured joint embedding ---------------------------------------------

struct SjeItem {
  ImageEmbedding image;
  TextEmbedding text;
  int64_t label = 0;
};

// Indexed by class; every set must be non-empty.
using ClassTextSets = std::vector<std::vector<TextEmbedding>>;
using ClassImageSets = std::vector<std::vector<ImageEmbedding>>;

double compatibility(const ImageEmbedding& v, const TextEmbedding& t);

// argmax over classes of the mean compatibility; ties go to the lowest class.
int64_t classify_image(const ImageEmbedding& v, const ClassTextSets& class_texts);
int64_t classify_text(const TextEmbedding& t, const ClassImageSets& class_images);

// (1/N) sum Delta(y, f_v(v)) + Delta(y, f_t(t)) with 0-1 Delta. The one-argument
// form takes the class sets from the batch itself (classes absent from the
// batch are not candidates).
double sje_loss(std::span<const SjeItem> batch);
double sje_loss(std::span<const SjeItem> batch, const ClassTextSets& class_texts,
                const ClassImageSets& class_images);

// Differentiable surrogate of sje_loss over a batch (B x E embeddings, int64
// labels): softmax cross-entropy over the class-mean compatibilities, summed
// over the image and text sides. The hinge form stalls at the all-zero
// embedding saddle.
torch::Tensor sje_surrogate_loss(const torch::Tensor& image_emb, const torch::Tensor& text_emb,
                                 const torch::Tensor& labels);

struct SjeModel {
  Vocabulary vocab;
  TextHyper hyper;
  TextEncoder text{nullptr};
  ImageEncoder image{nullptr};
  std::string config_digest;

  // B x E embeddings of caption strings.
  torch::Tensor embed_captions(std::span<const std::string> captions);
};

SjeModel make_sje_model(Vocabulary vocab, const TextHyper& hyper, uint64_t seed);
Vocabulary build_vocabulary(const Dataset& data, const TrainConfig& cfg);

struct SjeReport {
  std::vector<double> surrogate;  // per iteration
  double train_zero_one = 0.0;    // sje_loss over a full pass of train batches
};

SjeReport train_sje(SjeModel& model, const Dataset& data, const TrainConfig& cfg,
                    std::ostream* log = nullptr);

// Encoder checkpoint: parameters + {E, vocabulary hash, config digest}.
void save_sje(const SjeModel& model, const std::filesystem::path& path);
SjeModel load_sje(const std::filesystem::path& path);

}  // namespace c4synth
