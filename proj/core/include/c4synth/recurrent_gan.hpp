#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include "c4synth/cascaded_gan.hpp"
#include "c4synth/model.hpp"

namespace c4synth {

inline constexpr int64_t kHiddenChannels = 8;

// z -> dense -> ReLU -> 8 x h x h.
class InitializerImpl : public torch::nn::Module {
 public:
  InitializerImpl(int64_t noise_dim, int64_t hidden_size);
  torch::Tensor forward(const torch::Tensor& z);

  torch::nn::Linear& fc() { return fc_; }

 private:
  int64_t noise_dim_, hidden_size_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Initializer);

// Downsamples the feedback image to the hidden grid, concatenates the
// previous state and fuses with eight 3x3 filters followed by tanh.
// Normalization statistics are kept per unroll step.
class HiddenUpdaterImpl : public torch::nn::Module {
 public:
  HiddenUpdaterImpl(int64_t feedback_size, int64_t hidden_size, int64_t n_g, int64_t steps = 1);
  torch::Tensor forward(const torch::Tensor& h_prev, const torch::Tensor& image_prev, std::size_t step = 0);

  torch::nn::Conv2d& fuse() { return fuse_; }
  int64_t feedback_size() const { return feedback_size_; }

 private:
  int64_t feedback_size_, hidden_size_;
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList down_norms_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(HiddenUpdater);

// Replicated t_tilde fused with the hidden state by a 3x3 conv, then five 2x
// upsamples. Returns the maps after the third, fourth and fifth upsample.
// Shared across steps, so normalization statistics are kept per step.
class RecurrentTrunkImpl : public torch::nn::Module {
 public:
  RecurrentTrunkImpl(int64_t hidden_size, int64_t cond_dim, int64_t n_g, int64_t steps = 1);
  std::array<torch::Tensor, 3> forward(const torch::Tensor& h, const torch::Tensor& t_tilde, std::size_t step = 0);

  std::array<int64_t, 3> tap_channels() const { return taps_; }
  std::vector<torch::Tensor> parameters_up_to_first_tap();

 private:
  int64_t cond_dim_;
  std::array<int64_t, 3> taps_{};
  torch::nn::Conv2d fuse_{nullptr};
  StepBatchNorm fuse_norm_{nullptr};
  torch::nn::ModuleList ups_{nullptr};
};
TORCH_MODULE(RecurrentTrunk);

struct RecurrentImages {
  std::array<torch::Tensor, 3> images;
  torch::Tensor features;  // map after the third upsample
};

class RecurrentC4SynthImpl : public C4SynthImpl {
 public:
  explicit RecurrentC4SynthImpl(ModelSpec spec);

  Rollout rollout(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise,
                  const RolloutOptions& options = {}) override;
  ConditionalDiscriminatorImpl& discriminator(std::size_t slot) override;
  CaptionerImpl& captioner(std::size_t step) override;
  std::vector<int64_t> slot_resolutions() const override;
  std::vector<torch::Tensor> generator_parameters() override;
  std::vector<torch::Tensor> discriminator_parameters() override;
  std::vector<torch::Tensor> captioner_upstream_parameters() override;
  std::size_t default_captions() const override { return static_cast<std::size_t>(spec_.gan.stages); }
  int64_t output_resolution() const override { return 4 * spec_.gan.image_base; }

  int64_t hidden_size() const { return spec_.gan.image_base / 8; }
  torch::Tensor init_hidden(const torch::Tensor& z);
  torch::Tensor update_hidden(const torch::Tensor& h_prev, const torch::Tensor& image_prev, std::size_t step = 0);
  RecurrentImages generate(const torch::Tensor& h, const torch::Tensor& t_tilde, std::size_t step = 0);

  InitializerImpl& initializer() { return *initializer_; }
  HiddenUpdaterImpl& updater() { return *updater_; }
  RecurrentTrunkImpl& trunk() { return *trunk_; }
  ImageHeadImpl& head(std::size_t i);
  ConditionAugmentImpl& cond_aug() { return *cond_aug_; }

 private:
  ConditionAugment cond_aug_{nullptr};
  Initializer initializer_{nullptr};
  HiddenUpdater updater_{nullptr};
  RecurrentTrunk trunk_{nullptr};
  torch::nn::ModuleList heads_{nullptr};
  torch::nn::ModuleList discriminators_{nullptr};
  Captioner cccn_{nullptr};
};

}  // namespace c4synth
