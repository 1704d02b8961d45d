#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

namespace c4synth {

// Probabilities are clamped to [eps, 1 - eps] before taking logs in the
// discriminator loss.
inline constexpr double kProbEpsilon = 1e-7;

// sum_i [adv(d_i) + lambda * kl_i] with adv = log(1 - d) when `saturating`,
// else the non-saturating -log d. Rejects d outside (0, 1).
double generator_loss(std::span<const double> d_fakes, std::span<const double> kls, double lambda,
                      bool saturating);
// Batched form: each d_fakes[i] / kls[i] is a [B] tensor, averaged over B.
torch::Tensor generator_loss(const std::vector<torch::Tensor>& d_fakes,
                             const std::vector<torch::Tensor>& kls, double lambda, bool saturating);
// Adversarial term from logits (numerically stable), batch mean.
torch::Tensor generator_adversarial(const torch::Tensor& fake_logit, bool saturating);

// -[log d_real + log(1 - d_fake)], always >= 0.
double discriminator_loss(double d_real, double d_fake);
torch::Tensor discriminator_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);
torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_logit,
                                             const torch::Tensor& fake_logit);

}  // namespace c4synth
