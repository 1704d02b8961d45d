#include "c4synth/model.hpp"

#include "c4synth/cascaded_gan.hpp"
#include "c4synth/error.hpp"
#include "c4synth/losses.hpp"
#include "c4synth/recurrent_gan.hpp"

namespace c4synth {

namespace F = torch::nn::functional;

ModelSpec model_spec_from(const TrainConfig& cfg, int64_t vocab_size) {
  ModelSpec spec;
  spec.variant = cfg.variant;
  spec.gan = cfg.gan;
  spec.cccn = cfg.cccn;
  spec.embed_dim = cfg.text.embed_dim;
  spec.vocab_size = vocab_size;
  spec.literal_t1_recurrence = cfg.literal_t1_recurrence;
  return spec;
}

NoiseDraw NoiseDraw::sample(int64_t batch, std::size_t captions, int64_t noise_dim, int64_t cond_dim,
                            at::Generator& gen, torch::TensorOptions options) {
  NoiseDraw draw;
  draw.z = torch::randn({batch, noise_dim}, gen, options);
  for (std::size_t i = 0; i < captions; ++i) draw.eps.push_back(torch::randn({batch, cond_dim}, gen, options));
  return draw;
}

void C4SynthImpl::check_noise(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise) const {
  if (phis.empty()) throw InvalidArgument("no captions supplied");
  const int64_t batch = phis.front().size(0);
  for (std::size_t i = 0; i < phis.size(); ++i) {
    const auto& p = phis[i];
    if (p.dim() != 2 || p.size(0) != batch || p.size(1) != spec_.embed_dim)
      throw ShapeError("caption embedding " + std::to_string(i) + ": expected [" + std::to_string(batch) +
                       ", " + std::to_string(spec_.embed_dim) + "], got " + c10::str(p.sizes()));
  }
  if (noise.z.dim() != 2 || noise.z.size(0) != batch || noise.z.size(1) != spec_.gan.noise_dim)
    throw ShapeError("noise z: expected [" + std::to_string(batch) + ", " +
                     std::to_string(spec_.gan.noise_dim) + "], got " + c10::str(noise.z.sizes()));
  if (noise.eps.size() < phis.size())
    throw ShapeError("noise draw has " + std::to_string(noise.eps.size()) + " eps tensors for " +
                     std::to_string(phis.size()) + " captions");
}

std::shared_ptr<C4SynthImpl> make_model(const ModelSpec& spec, uint64_t seed) {
  std::shared_ptr<C4SynthImpl> model;
  if (spec.variant == Variant::kCascaded)
    model = std::make_shared<CascadedC4SynthImpl>(spec);
  else
    model = std::make_shared<RecurrentC4SynthImpl>(spec);
  auto gen = make_generator(seed);
  init_parameters(*model, gen, InitStyle::kGan);
  for (auto& child : model->named_children())
    if (child.key() == "cccn") init_parameters(*child.value(), gen, InitStyle::kUniform);
  return model;
}

LossBreakdown generator_objective(C4SynthImpl& model, const Rollout& rollout,
                                  const std::vector<TokenBatch>& captions,
                                  const ObjectiveOptions& options) {
  if (rollout.steps.empty()) throw InvalidArgument("generator_objective: empty rollout");
  LossBreakdown out;
  torch::Tensor adv;
  std::vector<torch::Tensor> features;
  double prob_sum = 0.0;
  int64_t prob_count = 0;
  for (const auto& step : rollout.steps) {
    for (std::size_t j = 0; j < step.images.size(); ++j) {
      auto logit = model.discriminator(step.slots[j]).forward(step.images[j], step.latent.t_tilde);
      prob_sum += torch::sigmoid(logit.detach()).sum().item<double>();
      prob_count += logit.numel();
      auto term = generator_adversarial(logit, options.saturating_loss);
      adv = adv.defined() ? adv + term : term;
    }
    out.kls.push_back(step.latent.kl.mean());
    features.push_back(options.cccn_detach ? step.features.detach() : step.features);
  }
  out.adversarial = adv;
  out.d_fake_mean = prob_sum / static_cast<double>(prob_count);
  out.kl_sum = torch::stack(out.kls).sum();
  out.kl_term = options.lambda * out.kl_sum;
  out.g_loss = out.adversarial + out.kl_term;
  out.cccl = cycle_loss(features, captions, rollout.schedule,
                        [&](std::size_t k, const torch::Tensor& f, const TokenBatch& target) {
                          auto l = cccn_caption_loss(model.captioner(k), f, target);
                          out.caption_losses.push_back(l);
                          return l;
                        });
  out.total = out.g_loss + options.cccn_weight * out.cccl;
  return out;
}

std::vector<torch::Tensor> discriminator_objective(C4SynthImpl& model, const Rollout& rollout,
                                                   const std::vector<torch::Tensor>& real_by_slot,
                                                   bool mismatched) {
  const auto resolutions = model.slot_resolutions();
  if (real_by_slot.size() != resolutions.size())
    throw InvalidArgument("discriminator_objective: expected real images for " +
                          std::to_string(resolutions.size()) + " resolutions, got " +
                          std::to_string(real_by_slot.size()));
  std::vector<torch::Tensor> losses(resolutions.size());
  for (const auto& step : rollout.steps) {
    auto t = step.latent.t_tilde.detach();
    for (std::size_t j = 0; j < step.images.size(); ++j) {
      const auto slot = step.slots[j];
      auto& d = model.discriminator(slot);
      const auto& real = real_by_slot[slot];
      if (real.size(0) != t.size(0))
        throw ShapeError("real batch of " + std::to_string(real.size(0)) + " vs " +
                         std::to_string(t.size(0)) + " latents");
      auto loss = discriminator_loss_from_logits(d.forward(real, t), d.forward(step.images[j].detach(), t));
      if (mismatched) loss = loss + F::softplus(d.forward(real, t.roll(1, 0))).mean();
      losses[slot] = losses[slot].defined() ? losses[slot] + loss : loss;
    }
  }
  for (std::size_t s = 0; s < losses.size(); ++s)
    if (!losses[s].defined()) losses[s] = torch::zeros({}, real_by_slot[s].options());
  return losses;
}

}  // namespace c4synth
