#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace c4synth {

at::Generator make_generator(uint64_t seed);

enum class InitStyle {
  kGan,      // conv/linear ~ N(0, 0.02), norm scale ~ N(1, 0.02), biases 0
  kUniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), norm scale 1, biases 0
};

// Re-initialises every parameter of `module` from `gen` only, so module
// construction never depends on the global torch generator.
void init_parameters(torch::nn::Module& module, at::Generator& gen, InitStyle style);

// B x D -> B x D x h x w, the vector copied to every location.
torch::Tensor replicate_spatial(const torch::Tensor& vec, int64_t height, int64_t width);

torch::nn::Conv2dOptions conv3x3(int64_t in, int64_t out, bool bias = false);

// Nearest 2x resize, 3x3 conv, batch norm, ReLU.
class UpBlockImpl : public torch::nn::Module {
 public:
  UpBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d norm_{nullptr};
};
TORCH_MODULE(UpBlock);

// Batch norm whose affine weights are shared across unroll steps but whose
// running statistics are kept per step. A layer reused across steps sees a
// different input distribution at each one, so a single running average
// matches none of them at inference. Steps past the last slot reuse it.
class StepBatchNormImpl : public torch::nn::Module {
 public:
  StepBatchNormImpl(int64_t channels, int64_t steps);
  torch::Tensor forward(const torch::Tensor& x, std::size_t step);

  int64_t steps() const { return static_cast<int64_t>(running_mean_.size()); }

 private:
  torch::Tensor weight_, bias_;
  std::vector<torch::Tensor> running_mean_, running_var_, tracked_;
};
TORCH_MODULE(StepBatchNorm);

// UpBlock with per-step normalization statistics.
class StepUpBlockImpl : public torch::nn::Module {
 public:
  StepUpBlockImpl(int64_t in_channels, int64_t out_channels, int64_t steps);
  torch::Tensor forward(const torch::Tensor& x, std::size_t step);

 private:
  torch::nn::Conv2d conv_{nullptr};
  StepBatchNorm norm_{nullptr};
};
TORCH_MODULE(StepUpBlock);

// Two 3x3 conv + norm layers around an identity skip.
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResBlock);

// Strided-conv stack down to 4 x 4 x (d_mult * n_d); the conditioning latent is
// replicated over the 4 x 4 map and fused by a 3x3 conv; a 4x4 valid conv
// yields one logit per image.
class ConditionalDiscriminatorImpl : public torch::nn::Module {
 public:
  ConditionalDiscriminatorImpl(int64_t resolution, int64_t n_d, int64_t d_mult, int64_t cond_dim);

  // Logits, shape [B]. Rejects images whose size is not `resolution()`.
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& t_tilde);
  torch::Tensor probability(const torch::Tensor& image, const torch::Tensor& t_tilde);
  // Output of the downsampling stack (B x d_mult*n_d x 4 x 4).
  torch::Tensor downsample(const torch::Tensor& image);

  int64_t resolution() const { return resolution_; }
  int64_t bottleneck_channels() const { return bottleneck_channels_; }

 private:
  int64_t resolution_;
  int64_t bottleneck_channels_;
  torch::nn::Sequential down_{nullptr};
  torch::nn::Sequential joint_{nullptr};
  torch::nn::Conv2d logit_{nullptr};
};
TORCH_MODULE(ConditionalDiscriminator);

std::vector<torch::Tensor> parameter_list(torch::nn::Module& module);
int64_t parameter_count(const std::vector<torch::Tensor>& params);

// Resize a batch of images (B x 3 x S x S) to `size` by area averaging or
// nearest upsampling.
torch::Tensor resize_images(const torch::Tensor& images, int64_t size);

}  // namespace c4synth
