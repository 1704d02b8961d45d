#include "c4synth/cascaded_gan.hpp"

#include "c4synth/error.hpp"

namespace c4synth {

namespace {

void check_width(const torch::Tensor& t, int64_t width, const char* what) {
  if (t.dim() != 2 || t.size(1) != width)
    throw ShapeError(std::string(what) + ": expected [B, " + std::to_string(width) + "], got " +
                     c10::str(t.sizes()));
}

void append(std::vector<torch::Tensor>& out, torch::nn::Module& m) {
  for (auto& p : m.parameters()) out.push_back(p);
}

}  // namespace

BackboneFirstImpl::BackboneFirstImpl(int64_t cond_dim, int64_t noise_dim, int64_t n_g, int64_t image_base)
    : cond_dim_(cond_dim), noise_dim_(noise_dim), n_g_(n_g), start_(image_base / 16) {
  if (start_ < 1 || start_ * 16 != image_base)
    throw ConfigError("image_base", "must be a multiple of 16, got " + std::to_string(image_base));
  fc_ = register_module("fc", torch::nn::Linear(torch::nn::LinearOptions(cond_dim + noise_dim,
                                                                         16 * n_g * start_ * start_)
                                                    .bias(false)));
  norm_ = register_module("norm", torch::nn::BatchNorm1d(16 * n_g * start_ * start_));
  ups_ = register_module("ups", torch::nn::Sequential(UpBlock(16 * n_g, 8 * n_g), UpBlock(8 * n_g, 8 * n_g),
                                                      UpBlock(8 * n_g, 8 * n_g), UpBlock(8 * n_g, 8 * n_g)));
}

torch::Tensor BackboneFirstImpl::seed(const torch::Tensor& t_tilde, const torch::Tensor& z) {
  check_width(t_tilde, cond_dim_, "backbone t_tilde");
  check_width(z, noise_dim_, "backbone noise z");
  auto x = torch::relu(norm_(fc_(torch::cat({t_tilde, z}, 1))));
  return x.view({x.size(0), 16 * n_g_, start_, start_});
}

torch::Tensor BackboneFirstImpl::forward(const torch::Tensor& t_tilde, const torch::Tensor& z) {
  return ups_->forward(seed(t_tilde, z));
}

BackboneNextImpl::BackboneNextImpl(int64_t in_channels, int64_t cond_dim)
    : in_channels_(in_channels), cond_dim_(cond_dim) {
  if (in_channels < 2 || in_channels % 2 != 0)
    throw ConfigError("n_g", "backbone stage needs an even channel count, got " + std::to_string(in_channels));
  fuse_ = register_module("fuse", torch::nn::Conv2d(conv3x3(in_channels + cond_dim, in_channels)));
  fuse_norm_ = register_module("fuse_norm", torch::nn::BatchNorm2d(in_channels));
  res_ = register_module("res", ResBlock(in_channels));
  up_ = register_module("up", UpBlock(in_channels, in_channels / 2));
}

torch::Tensor BackboneNextImpl::forward(const torch::Tensor& prev, const torch::Tensor& t_tilde) {
  check_width(t_tilde, cond_dim_, "backbone t_tilde");
  if (prev.dim() != 4 || prev.size(1) != in_channels_)
    throw ShapeError("backbone features: expected [B, " + std::to_string(in_channels_) + ", S, S], got " +
                     c10::str(prev.sizes()));
  auto joint = torch::cat({prev, replicate_spatial(t_tilde, prev.size(2), prev.size(3))}, 1);
  auto x = torch::relu(fuse_norm_(fuse_(joint)));
  return up_(res_(x));
}

ImageHeadImpl::ImageHeadImpl(int64_t in_channels) {
  conv_ = register_module("conv", torch::nn::Conv2d(conv3x3(in_channels, 3, true)));
}

torch::Tensor ImageHeadImpl::forward(const torch::Tensor& features) { return torch::tanh(conv_(features)); }

CascadedC4SynthImpl::CascadedC4SynthImpl(ModelSpec spec) : C4SynthImpl(std::move(spec)) {
  const auto& g = spec_.gan;
  if (g.stages < 2) throw ConfigError("stages", "must be >= 2");
  if ((8 * g.n_g) >> (g.stages - 1) < 1)
    throw ConfigError("n_g", "too small for " + std::to_string(g.stages) + " stages");
  cond_aug_ = register_module("cond_aug", ConditionAugment(spec_.embed_dim, g.cond_dim));
  backbone_ = register_module("backbone", torch::nn::ModuleList());
  generators_ = register_module("generators", torch::nn::ModuleList());
  discriminators_ = register_module("discriminators", torch::nn::ModuleList());
  cccn_ = register_module("cccn", torch::nn::ModuleList());
  backbone_->push_back(BackboneFirst(g.cond_dim, g.noise_dim, g.n_g, g.image_base));
  int64_t channels = 8 * g.n_g;
  for (int64_t k = 0; k < g.stages; ++k) {
    if (k > 0) {
      backbone_->push_back(BackboneNext(channels, g.cond_dim));
      channels /= 2;
    }
    generators_->push_back(ImageHead(channels));
    discriminators_->push_back(ConditionalDiscriminator(g.image_base << k, g.n_d, g.d_mult, g.cond_dim));
    cccn_->push_back(Captioner(channels, spec_.vocab_size, spec_.cccn));
  }
}

BackboneFirstImpl& CascadedC4SynthImpl::first_block() { return backbone_->at<BackboneFirstImpl>(0); }

BackboneNextImpl& CascadedC4SynthImpl::next_block(std::size_t stage) {
  if (stage == 0 || stage >= stages())
    throw InvalidArgument("no backbone block for stage " + std::to_string(stage + 1) + " of " +
                          std::to_string(stages()));
  return backbone_->at<BackboneNextImpl>(stage);
}

ImageHeadImpl& CascadedC4SynthImpl::head(std::size_t stage) { return generators_->at<ImageHeadImpl>(stage); }

ConditionalDiscriminatorImpl& CascadedC4SynthImpl::discriminator(std::size_t slot) {
  if (slot >= stages()) throw InvalidArgument("no discriminator slot " + std::to_string(slot));
  return discriminators_->at<ConditionalDiscriminatorImpl>(slot);
}

CaptionerImpl& CascadedC4SynthImpl::captioner(std::size_t step) {
  if (step >= stages()) throw InvalidArgument("no captioner for stage " + std::to_string(step));
  return cccn_->at<CaptionerImpl>(step);
}

std::vector<int64_t> CascadedC4SynthImpl::slot_resolutions() const {
  std::vector<int64_t> out;
  for (int64_t k = 0; k < spec_.gan.stages; ++k) out.push_back(spec_.gan.image_base << k);
  return out;
}

int64_t CascadedC4SynthImpl::output_resolution() const {
  return spec_.gan.image_base << (spec_.gan.stages - 1);
}

Rollout CascadedC4SynthImpl::rollout(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise,
                                     const RolloutOptions&) {
  if (phis.size() != stages())
    throw InvalidArgument("cascaded model takes exactly " + std::to_string(stages()) + " captions, got " +
                          std::to_string(phis.size()));
  check_noise(phis, noise);
  Rollout out;
  out.schedule = build_cycle_schedule(stages());
  torch::Tensor features;
  for (std::size_t k = 0; k < stages(); ++k) {
    GeneratedStep step;
    step.caption_index = k;
    step.latent = cond_aug_->forward(phis[k], noise.eps[k]);
    features = k == 0 ? first_block().forward(step.latent.t_tilde, noise.z)
                      : next_block(k).forward(features, step.latent.t_tilde);
    step.features = features;
    step.images.push_back(head(k).forward(features));
    step.slots.push_back(k);
    out.steps.push_back(std::move(step));
  }
  return out;
}

std::vector<torch::Tensor> CascadedC4SynthImpl::generator_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *cond_aug_);
  append(out, *backbone_);
  append(out, *generators_);
  append(out, *cccn_);
  return out;
}

std::vector<torch::Tensor> CascadedC4SynthImpl::discriminator_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *discriminators_);
  return out;
}

std::vector<torch::Tensor> CascadedC4SynthImpl::captioner_upstream_parameters() {
  std::vector<torch::Tensor> out;
  append(out, *cond_aug_);
  append(out, *backbone_);
  return out;
}

std::vector<StageBundle> cascaded_forward(CascadedC4SynthImpl& model, const std::vector<torch::Tensor>& phis,
                                          const std::vector<TokenBatch>& captions, const NoiseDraw& noise) {
  if (captions.size() != phis.size())
    throw InvalidArgument("cascaded_forward: " + std::to_string(phis.size()) + " embeddings vs " +
                          std::to_string(captions.size()) + " token batches");
  auto roll = model.rollout(phis, noise);
  std::vector<StageBundle> out;
  for (std::size_t k = 0; k < roll.steps.size(); ++k) {
    const auto& step = roll.steps[k];
    StageBundle b;
    b.features = step.features;
    b.image = step.images.front();
    b.d_logit = model.discriminator(k).forward(b.image, step.latent.t_tilde);
    b.caption_loss = cccn_caption_loss(model.captioner(k), step.features, captions[roll.schedule.target_of(k)]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace c4synth
