#include "c4synth/recurrent_gan.hpp"

#include <algorithm>

#include "c4synth/error.hpp"

namespace c4synth {

namespace {

void append(std::vector<torch::Tensor>& out, torch::nn::Module& m) {
  for (auto& p : m.parameters()) out.push_back(p);
}

void check_hidden(const torch::Tensor& h, int64_t size) {
  if (h.dim() != 4 || h.size(1) != kHiddenChannels || h.size(2) != size || h.size(3) != size)
    throw ShapeError("hidden state: expected [B, 8, " + std::to_string(size) + ", " + std::to_string(size) +
                     "], got " + c10::str(h.sizes()));
}

}  // namespace

InitializerImpl::InitializerImpl(int64_t noise_dim, int64_t hidden_size)
    : noise_dim_(noise_dim), hidden_size_(hidden_size) {
  fc_ = register_module("fc", torch::nn::Linear(noise_dim, kHiddenChannels * hidden_size * hidden_size));
}

torch::Tensor InitializerImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != noise_dim_)
    throw ShapeError("noise z: expected [B, " + std::to_string(noise_dim_) + "], got " + c10::str(z.sizes()));
  return torch::relu(fc_(z)).view({z.size(0), kHiddenChannels, hidden_size_, hidden_size_});
}

HiddenUpdaterImpl::HiddenUpdaterImpl(int64_t feedback_size, int64_t hidden_size, int64_t n_g, int64_t steps)
    : feedback_size_(feedback_size), hidden_size_(hidden_size) {
  int64_t n_down = 0;
  while ((hidden_size << n_down) < feedback_size) ++n_down;
  if ((hidden_size << n_down) != feedback_size)
    throw ConfigError("image_base", "feedback size must be a power-of-two multiple of the hidden size");
  down_ = register_module("down", torch::nn::ModuleList());
  down_norms_ = register_module("down_norms", torch::nn::ModuleList());
  int64_t in = 3;
  for (int64_t k = 0; k < n_down; ++k) {
    const int64_t out = n_g * std::min<int64_t>(int64_t{1} << k, 8);
    down_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(false)));
    if (k > 0) down_norms_->push_back(StepBatchNorm(out, steps));
    in = out;
  }
  fuse_ = register_module("fuse", torch::nn::Conv2d(conv3x3(in + kHiddenChannels, kHiddenChannels, true)));
}

torch::Tensor HiddenUpdaterImpl::forward(const torch::Tensor& h_prev, const torch::Tensor& image_prev,
                                         std::size_t step) {
  check_hidden(h_prev, hidden_size_);
  if (image_prev.dim() != 4 || image_prev.size(1) != 3 || image_prev.size(2) != feedback_size_ ||
      image_prev.size(3) != feedback_size_)
    throw ShapeError("feedback image: expected [B, 3, " + std::to_string(feedback_size_) + ", " +
                     std::to_string(feedback_size_) + "], got " + c10::str(image_prev.sizes()));
  auto feats = image_prev;
  for (std::size_t k = 0; k < down_->size(); ++k) {
    feats = down_[k]->as<torch::nn::Conv2dImpl>()->forward(feats);
    if (k > 0) feats = down_norms_[k - 1]->as<StepBatchNormImpl>()->forward(feats, step);
    feats = torch::leaky_relu(feats, 0.2);
  }
  return torch::tanh(fuse_(torch::cat({feats, h_prev}, 1)));
}

RecurrentTrunkImpl::RecurrentTrunkImpl(int64_t hidden_size, int64_t cond_dim, int64_t n_g, int64_t steps)
    : cond_dim_(cond_dim) {
  (void)hidden_size;
  int64_t channels = 16 * n_g;
  fuse_ = register_module("fuse", torch::nn::Conv2d(conv3x3(kHiddenChannels + cond_dim, channels)));
  fuse_norm_ = register_module("fuse_norm", StepBatchNorm(channels, steps));
  ups_ = register_module("ups", torch::nn::ModuleList());
  for (int k = 0; k < 5; ++k) {
    const int64_t out = std::max<int64_t>(channels / 2, 4);
    ups_->push_back(StepUpBlock(channels, out, steps));
    if (k >= 2) taps_[k - 2] = out;
    channels = out;
  }
}

std::array<torch::Tensor, 3> RecurrentTrunkImpl::forward(const torch::Tensor& h, const torch::Tensor& t_tilde,
                                                      std::size_t step) {
  if (t_tilde.dim() != 2 || t_tilde.size(1) != cond_dim_)
    throw ShapeError("t_tilde: expected [B, " + std::to_string(cond_dim_) + "], got " + c10::str(t_tilde.sizes()));
  auto x = torch::relu(
      fuse_norm_->forward(fuse_(torch::cat({h, replicate_spatial(t_tilde, h.size(2), h.size(3))}, 1)), step));
  std::array<torch::Tensor, 3> taps;
  for (std::size_t k = 0; k < 5; ++k) {
    x = ups_->at<StepUpBlockImpl>(k).forward(x, step);
    if (k >= 2) taps[k - 2] = x;
  }
  return taps;
}

std::vector<torch::Tensor> RecurrentTrunkImpl::parameters_up_to_first_tap() {
  std::vector<torch::Tensor> out;
  append(out, *fuse_);
  append(out, *fuse_norm_);
  for (std::size_t k = 0; k < 3; ++k) append(out, ups_->at<StepUpBlockImpl>(k));
  return out;
}

RecurrentC4SynthImpl::RecurrentC4SynthImpl(ModelSpec spec) : C4SynthImpl(std::move(spec)) {
  const auto& g = spec_.gan;
  if (g.image_base < 8 || g.image_base % 8 != 0)
    throw ConfigError("image_base", "must be a multiple of 8, got " + std::to_string(g.image_base));
  cond_aug_ = register_module("cond_aug", ConditionAugment(spec_.embed_dim, g.cond_dim));
  initializer_ = register_module("initializer", Initializer(g.noise_dim, hidden_size()));
  // One statistics slot per unroll step; the updater runs one step fewer.
  updater_ = register_module("updater", HiddenUpdater(g.image_base, hidden_size(), g.n_g, std::max<int64_t>(g.stages - 1, 1)));
  trunk_ = register_module("generator_trunk", RecurrentTrunk(hidden_size(), g.cond_dim, g.n_g, g.stages));
  heads_ = register_module("heads", torch::nn::ModuleList());
  discriminators_ = register_module("discriminators", torch::nn::ModuleList());
  const auto taps = trunk_->tap_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    heads_->push_back(ImageHead(taps[i]));
    discriminators_->push_back(ConditionalDiscriminator(g.image_base << i, g.n_d, g.d_mult, g.cond_dim));
  }
  cccn_ = register_module("cccn", Captioner(taps[0], spec_.vocab_size, spec_.cccn));
}

torch::Tensor RecurrentC4SynthImpl::init_hidden(const torch::Tensor& z) { return initializer_->forward(z); }

torch::Tensor RecurrentC4SynthImpl::update_hidden(const torch::Tensor& h_prev, const torch::Tensor& image_prev,
                                                  std::size_t step) {
  return updater_->forward(h_prev, image_prev, step);
}

RecurrentImages RecurrentC4SynthImpl::generate(const torch::Tensor& h, const torch::Tensor& t_tilde,
                                               std::size_t step) {
  check_hidden(h, hidden_size());
  auto taps = trunk_->forward(h, t_tilde, step);
  RecurrentImages out;
  out.features = taps[0];
  for (std::size_t i = 0; i < 3; ++i) out.images[i] = head(i).forward(taps[i]);
  return out;
}

ImageHeadImpl& RecurrentC4SynthImpl::head(std::size_t i) { return heads_->at<ImageHeadImpl>(i); }

ConditionalDiscriminatorImpl& RecurrentC4SynthImpl::discriminator(std::size_t slot) {
  if (slot >= 3) throw InvalidArgument("no discriminator slot " + std::to_string(slot));
  return discriminators_->at<ConditionalDiscriminatorImpl>(slot);
}

CaptionerImpl& RecurrentC4SynthImpl::captioner(std::size_t) { return *cccn_; }

std::vector<int64_t> RecurrentC4SynthImpl::slot_resolutions() const {
  const auto b = spec_.gan.image_base;
  return {b, 2 * b, 4 * b};
}

Rollout RecurrentC4SynthImpl::rollout(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise,
                                      const RolloutOptions& options) {
  if (phis.size() < 2)
    throw InvalidArgument("recurrent unroll needs at least 2 captions, got " + std::to_string(phis.size()));
  check_noise(phis, noise);
  Rollout out;
  out.schedule = build_cycle_schedule(phis.size());
  auto h = init_hidden(noise.z);
  for (std::size_t k = 0; k < phis.size(); ++k) {
    GeneratedStep step;
    step.caption_index = spec_.literal_t1_recurrence ? 0 : k;
    step.latent = cond_aug_->forward(phis[step.caption_index], noise.eps[k]);
    step.hidden_in = h;
    auto gen = generate(h, step.latent.t_tilde, k);
    step.features = gen.features;
    for (std::size_t i = 0; i < 3; ++i) {
      step.images.push_back(gen.images[i]);
      step.slots.push_back(i);
    }
    if (k + 1 < phis.size()) {
      auto feedback = options.detach_feedback ? gen.images[0].detach() : gen.images[0];
      h = update_hidden(h, feedback, k);
      if (options.detach_hidden) h = h.detach();
    }
    out.steps.push_back(std::move(step));
  }
  return out;
}

std::vector<torch::Tensor> RecurrentC4SynthImpl::generator_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *cond_aug_);
  append(out, *initializer_);
  append(out, *updater_);
  append(out, *trunk_);
  append(out, *heads_);
  append(out, *cccn_);
  return out;
}

std::vector<torch::Tensor> RecurrentC4SynthImpl::discriminator_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *discriminators_);
  return out;
}

std::vector<torch::Tensor> RecurrentC4SynthImpl::captioner_upstream_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *cond_aug_);
  append(out, *initializer_);
  append(out, *updater_);
  for (auto& p : trunk_->parameters_up_to_first_tap()) out.push_back(p);
  append(out, head(0));
  return out;
}

}  // namespace c4synth
