#include "c4synth/losses.hpp"

#include <algorithm>
#include <cmath>

#include "c4synth/error.hpp"

namespace c4synth {

namespace F = torch::nn::functional;

namespace {
void check_open_unit(double d) {
  if (!(d > 0.0 && d < 1.0))
    throw InvalidArgument("discriminator output " + std::to_string(d) + " outside (0, 1)");
}
}  // namespace

double generator_loss(std::span<const double> d_fakes, std::span<const double> kls, double lambda,
                      bool saturating) {
  if (d_fakes.size() != kls.size())
    throw InvalidArgument("generator_loss: " + std::to_string(d_fakes.size()) + " outputs vs " +
                          std::to_string(kls.size()) + " KL terms");
  double total = 0.0;
  for (std::size_t i = 0; i < d_fakes.size(); ++i) {
    check_open_unit(d_fakes[i]);
    total += (saturating ? std::log(1.0 - d_fakes[i]) : -std::log(d_fakes[i])) + lambda * kls[i];
  }
  return total;
}

torch::Tensor generator_loss(const std::vector<torch::Tensor>& d_fakes,
                             const std::vector<torch::Tensor>& kls, double lambda, bool saturating) {
  if (d_fakes.size() != kls.size())
    throw InvalidArgument("generator_loss: " + std::to_string(d_fakes.size()) + " outputs vs " +
                          std::to_string(kls.size()) + " KL terms");
  if (d_fakes.empty()) throw InvalidArgument("generator_loss: no stages");
  torch::Tensor total;
  for (std::size_t i = 0; i < d_fakes.size(); ++i) {
    const auto& d = d_fakes[i];
    if (!(d.gt(0.0).all().item<bool>() && d.lt(1.0).all().item<bool>()))
      throw InvalidArgument("generator_loss: discriminator output outside (0, 1) at stage " +
                            std::to_string(i));
    auto adv = saturating ? torch::log1p(-d).mean() : -torch::log(d).mean();
    auto term = adv + lambda * kls[i].mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor generator_adversarial(const torch::Tensor& fake_logit, bool saturating) {
  // log(1 - sigmoid(l)) = -softplus(l); -log(sigmoid(l)) = softplus(-l)
  return saturating ? -F::softplus(fake_logit).mean() : F::softplus(-fake_logit).mean();
}

double discriminator_loss(double d_real, double d_fake) {
  if (std::isnan(d_real) || std::isnan(d_fake)) throw InvalidArgument("discriminator_loss: NaN input");
  const double r = std::clamp(d_real, kProbEpsilon, 1.0 - kProbEpsilon);
  const double f = std::clamp(d_fake, kProbEpsilon, 1.0 - kProbEpsilon);
  return -(std::log(r) + std::log(1.0 - f));
}

torch::Tensor discriminator_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  auto r = d_real.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  auto f = d_fake.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
  return -(torch::log(r).mean() + torch::log1p(-f).mean());
}

torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_logit,
                                             const torch::Tensor& fake_logit) {
  return F::softplus(-real_logit).mean() + F::softplus(fake_logit).mean();
}

}  // namespace c4synth
