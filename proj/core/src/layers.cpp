#include "c4synth/layers.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <bit>
#include <cmath>

#include "c4synth/error.hpp"

namespace c4synth {

namespace F = torch::nn::functional;

at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

void init_parameters(torch::nn::Module& module, at::Generator& gen, InitStyle style) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    const bool is_bias = item.key().size() >= 4 && item.key().ends_with("bias");
    if (p.dim() >= 2) {
      if (style == InitStyle::kGan) {
        p.normal_(0.0, 0.02, gen);
      } else {
        const double fan_in = static_cast<double>(p.numel() / p.size(0));
        const double bound = 1.0 / std::sqrt(fan_in);
        p.uniform_(-bound, bound, gen);
      }
    } else if (is_bias) {
      p.zero_();
    } else if (style == InitStyle::kGan) {
      p.normal_(1.0, 0.02, gen);
    } else {
      p.fill_(1.0);
    }
  }
}

torch::Tensor replicate_spatial(const torch::Tensor& vec, int64_t height, int64_t width) {
  if (vec.dim() != 2) throw ShapeError("replicate_spatial expects B x D");
  return vec.view({vec.size(0), vec.size(1), 1, 1}).expand({vec.size(0), vec.size(1), height, width});
}

torch::nn::Conv2dOptions conv3x3(int64_t in, int64_t out, bool bias) {
  return torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(bias);
}

UpBlockImpl::UpBlockImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", torch::nn::Conv2d(conv3x3(in_channels, out_channels)));
  norm_ = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kNearest));
  return torch::relu(norm_(conv_(up)));
}

StepBatchNormImpl::StepBatchNormImpl(int64_t channels, int64_t steps) {
  if (steps < 1) throw InvalidArgument("StepBatchNorm needs at least one step");
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
  for (int64_t k = 0; k < steps; ++k) {
    const auto tag = std::to_string(k);
    running_mean_.push_back(register_buffer("running_mean_" + tag, torch::zeros({channels})));
    running_var_.push_back(register_buffer("running_var_" + tag, torch::ones({channels})));
    tracked_.push_back(register_buffer("num_batches_tracked_" + tag, torch::zeros({}, torch::kLong)));
  }
}

torch::Tensor StepBatchNormImpl::forward(const torch::Tensor& x, std::size_t step) {
  const auto k = std::min(step, running_mean_.size() - 1);
  // Buffers may have been replaced by to() or load(); look them up by name.
  const auto tag = std::to_string(k);
  auto buffers = named_buffers(/*recurse=*/false);
  auto mean = buffers["running_mean_" + tag], var = buffers["running_var_" + tag];
  if (is_training()) {
    torch::NoGradGuard ng;
    buffers["num_batches_tracked_" + tag].add_(1);
  }
  return F::batch_norm(x, mean, var,
                       F::BatchNormFuncOptions().weight(weight_).bias(bias_).training(is_training()).momentum(0.1).eps(1e-5));
}

StepUpBlockImpl::StepUpBlockImpl(int64_t in_channels, int64_t out_channels, int64_t steps) {
  conv_ = register_module("conv", torch::nn::Conv2d(conv3x3(in_channels, out_channels)));
  norm_ = register_module("norm", StepBatchNorm(out_channels, steps));
}

torch::Tensor StepUpBlockImpl::forward(const torch::Tensor& x, std::size_t step) {
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kNearest));
  return torch::relu(norm_->forward(conv_(up), step));
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  body_ = register_module(
      "body", torch::nn::Sequential(torch::nn::Conv2d(conv3x3(channels, channels)),
                                    torch::nn::BatchNorm2d(channels), torch::nn::ReLU(),
                                    torch::nn::Conv2d(conv3x3(channels, channels)),
                                    torch::nn::BatchNorm2d(channels)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) { return torch::relu(x + body_->forward(x)); }

ConditionalDiscriminatorImpl::ConditionalDiscriminatorImpl(int64_t resolution, int64_t n_d,
                                                           int64_t d_mult, int64_t cond_dim)
    : resolution_(resolution), bottleneck_channels_(d_mult * n_d) {
  if (resolution < 8 || !std::has_single_bit(static_cast<uint64_t>(resolution)))
    throw ShapeError("discriminator resolution must be a power of two >= 8, got " +
                     std::to_string(resolution));
  const int n_down = std::countr_zero(static_cast<uint64_t>(resolution)) - 2;
  down_ = torch::nn::Sequential();
  int64_t in = 3;
  for (int k = 0; k < n_down; ++k) {
    const int64_t out = k == n_down - 1 ? bottleneck_channels_ : n_d * std::min<int64_t>(1LL << k, 8);
    down_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(false)));
    if (k > 0) down_->push_back(torch::nn::BatchNorm2d(out));
    down_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  register_module("down", down_);
  joint_ = register_module(
      "joint", torch::nn::Sequential(
                   torch::nn::Conv2d(conv3x3(bottleneck_channels_ + cond_dim, bottleneck_channels_)),
                   torch::nn::BatchNorm2d(bottleneck_channels_),
                   torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2))));
  logit_ = register_module("logit", torch::nn::Conv2d(torch::nn::Conv2dOptions(bottleneck_channels_, 1, 4)));
}

torch::Tensor ConditionalDiscriminatorImpl::downsample(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != resolution_ ||
      image.size(3) != resolution_)
    throw ShapeError("discriminator expects B x 3 x " + std::to_string(resolution_) + " x " +
                     std::to_string(resolution_) + ", got " + c10::str(image.sizes()));
  return down_->forward(image);
}

torch::Tensor ConditionalDiscriminatorImpl::forward(const torch::Tensor& image,
                                                    const torch::Tensor& t_tilde) {
  auto h = downsample(image);
  auto joined = torch::cat({h, replicate_spatial(t_tilde, h.size(2), h.size(3))}, 1);
  return logit_(joint_->forward(joined)).view({image.size(0)});
}

torch::Tensor ConditionalDiscriminatorImpl::probability(const torch::Tensor& image,
                                                        const torch::Tensor& t_tilde) {
  return torch::sigmoid(forward(image, t_tilde));
}

std::vector<torch::Tensor> parameter_list(torch::nn::Module& module) {
  return module.parameters(/*recurse=*/true);
}

int64_t parameter_count(const std::vector<torch::Tensor>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

torch::Tensor resize_images(const torch::Tensor& images, int64_t size) {
  if (images.size(-1) == size && images.size(-2) == size) return images;
  if (images.size(-1) > size)
    return F::adaptive_avg_pool2d(images, F::AdaptiveAvgPool2dFuncOptions({size, size}));
  return F::interpolate(images, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{size, size})
                                    .mode(torch::kNearest));
}

}  // namespace c4synth
