#pragma once

#include <torch/torch.h>

#include <vector>

#include "c4synth/model.hpp"

namespace c4synth {

// concat(t_tilde, z) -> dense -> (16 n_g) x s0 x s0 -> four 2x upsamples,
// where s0 = image_base / 16. Output: 8 n_g channels at image_base.
class BackboneFirstImpl : public torch::nn::Module {
 public:
  BackboneFirstImpl(int64_t cond_dim, int64_t noise_dim, int64_t n_g, int64_t image_base);
  torch::Tensor forward(const torch::Tensor& t_tilde, const torch::Tensor& z);
  // The dense 16*n_g map at image_base/16 resolution before upsampling.
  torch::Tensor seed(const torch::Tensor& t_tilde, const torch::Tensor& z);

  int64_t out_channels() const { return 8 * n_g_; }

 private:
  int64_t cond_dim_, noise_dim_, n_g_, start_;
  torch::nn::Linear fc_{nullptr};
  torch::nn::BatchNorm1d norm_{nullptr};
  torch::nn::Sequential ups_{nullptr};
};
TORCH_MODULE(BackboneFirst);

// Replicated t_tilde fused by a 3x3 conv, one residual block, one 2x upsample
// that halves the channels.
class BackboneNextImpl : public torch::nn::Module {
 public:
  BackboneNextImpl(int64_t in_channels, int64_t cond_dim);
  torch::Tensor forward(const torch::Tensor& prev, const torch::Tensor& t_tilde);

  torch::nn::Conv2d& fuse() { return fuse_; }
  int64_t out_channels() const { return in_channels_ / 2; }

 private:
  int64_t in_channels_, cond_dim_;
  torch::nn::Conv2d fuse_{nullptr};
  torch::nn::BatchNorm2d fuse_norm_{nullptr};
  ResBlock res_{nullptr};
  UpBlock up_{nullptr};
};
TORCH_MODULE(BackboneNext);

// 3x3 conv to RGB + tanh.
class ImageHeadImpl : public torch::nn::Module {
 public:
  explicit ImageHeadImpl(int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& features);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ImageHead);

struct StageBundle {
  torch::Tensor features;
  torch::Tensor image;
  torch::Tensor d_logit;       // [B]
  torch::Tensor caption_loss;  // scalar
};

class CascadedC4SynthImpl : public C4SynthImpl {
 public:
  explicit CascadedC4SynthImpl(ModelSpec spec);

  Rollout rollout(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise,
                  const RolloutOptions& options = {}) override;
  ConditionalDiscriminatorImpl& discriminator(std::size_t slot) override;
  CaptionerImpl& captioner(std::size_t step) override;
  std::vector<int64_t> slot_resolutions() const override;
  std::vector<torch::Tensor> generator_parameters() override;
  std::vector<torch::Tensor> discriminator_parameters() override;
  std::vector<torch::Tensor> captioner_upstream_parameters() override;
  std::size_t default_captions() const override { return static_cast<std::size_t>(spec_.gan.stages); }
  int64_t output_resolution() const override;

  std::size_t stages() const { return static_cast<std::size_t>(spec_.gan.stages); }
  BackboneFirstImpl& first_block();
  // Block for stage i >= 1; rejects stages beyond the configured count.
  BackboneNextImpl& next_block(std::size_t stage);
  ImageHeadImpl& head(std::size_t stage);
  ConditionAugmentImpl& cond_aug() { return *cond_aug_; }

 private:
  ConditionAugment cond_aug_{nullptr};
  torch::nn::ModuleList backbone_{nullptr};
  torch::nn::ModuleList generators_{nullptr};
  torch::nn::ModuleList discriminators_{nullptr};
  torch::nn::ModuleList cccn_{nullptr};
};

// Forward pass with discriminator logits and CCCN losses attached per stage.
// Exactly `stages` caption embeddings and token batches are required.
std::vector<StageBundle> cascaded_forward(CascadedC4SynthImpl& model, const std::vector<torch::Tensor>& phis,
                                          const std::vector<TokenBatch>& captions, const NoiseDraw& noise);

}  // namespace c4synth
