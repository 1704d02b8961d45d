#pragma once

#include <torch/torch.h>

#include <cstddef>
#include <memory>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/cycle.hpp"
#include "c4synth/layers.hpp"
#include "c4synth/text_encoding.hpp"

namespace c4synth {

struct ModelSpec {
  Variant variant = Variant::kRecurrent;
  GanHyper gan;
  CaptionerHyper cccn;
  int64_t embed_dim = 1024;
  int64_t vocab_size = 0;
  bool literal_t1_recurrence = false;
};

ModelSpec model_spec_from(const TrainConfig& cfg, int64_t vocab_size);

// All randomness consumed by one generator pass, drawn up front so the same
// draw can be replayed (finite differences, resume checks).
struct NoiseDraw {
  torch::Tensor z;                 // B x noise_dim
  std::vector<torch::Tensor> eps;  // one B x cond_dim tensor per caption

  static NoiseDraw sample(int64_t batch, std::size_t captions, int64_t noise_dim, int64_t cond_dim,
                          at::Generator& gen, torch::TensorOptions options = {});
};

struct RolloutOptions {
  bool detach_feedback = false;  // recurrent: cut the image -> hidden path
  bool detach_hidden = false;    // recurrent: cut every cross-step path
};

struct GeneratedStep {
  std::size_t caption_index = 0;  // caption that conditioned this step
  ConditionedLatent latent;
  torch::Tensor hidden_in;             // recurrent only
  torch::Tensor features;              // fed to this step's captioner
  std::vector<torch::Tensor> images;   // increasing resolution
  std::vector<std::size_t> slots;      // discriminator slot of each image
};

struct Rollout {
  std::vector<GeneratedStep> steps;
  CycleSchedule schedule;

  const torch::Tensor& final_image() const { return steps.back().images.back(); }
};

struct ObjectiveOptions {
  double lambda = 1.0;
  bool saturating_loss = false;  // log(1 - D) instead of -log D
  double cccn_weight = 1.0;
  bool cccn_detach = false;  // captioner sees detached features
};

struct LossBreakdown {
  torch::Tensor adversarial;          // summed over steps and images
  std::vector<torch::Tensor> kls;     // batch-mean KL per step
  torch::Tensor kl_sum;
  torch::Tensor kl_term;              // lambda * kl_sum
  torch::Tensor g_loss;               // adversarial + kl_term
  std::vector<torch::Tensor> caption_losses;  // per step
  torch::Tensor cccl;
  torch::Tensor total;                // g_loss + cccn_weight * cccl
  double d_fake_mean = 0.0;           // mean D probability over generated images
};

// Shared interface of both variants. Discriminator "slots" index the
// discriminators; each generated image names the slot that judges it.
class C4SynthImpl : public torch::nn::Module {
 public:
  explicit C4SynthImpl(ModelSpec spec) : spec_(std::move(spec)) {}
  ~C4SynthImpl() override = default;

  virtual Rollout rollout(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise,
                          const RolloutOptions& options = {}) = 0;
  virtual ConditionalDiscriminatorImpl& discriminator(std::size_t slot) = 0;
  virtual CaptionerImpl& captioner(std::size_t step) = 0;
  virtual std::vector<int64_t> slot_resolutions() const = 0;

  virtual std::vector<torch::Tensor> generator_parameters() = 0;
  virtual std::vector<torch::Tensor> discriminator_parameters() = 0;
  // Generator-side parameters whose outputs reach a captioner input.
  virtual std::vector<torch::Tensor> captioner_upstream_parameters() = 0;

  // Captions one forward pass consumes by default (N).
  virtual std::size_t default_captions() const = 0;
  // Final image size.
  virtual int64_t output_resolution() const = 0;

  const ModelSpec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }

 protected:
  void check_noise(const std::vector<torch::Tensor>& phis, const NoiseDraw& noise) const;

  ModelSpec spec_;
};

std::shared_ptr<C4SynthImpl> make_model(const ModelSpec& spec, uint64_t seed);

LossBreakdown generator_objective(C4SynthImpl& model, const Rollout& rollout,
                                  const std::vector<TokenBatch>& captions,
                                  const ObjectiveOptions& options);

// Per-slot discriminator losses; fakes and conditioning latents are detached.
// real_by_slot[s] holds real images at slot_resolutions()[s]. With
// `mismatched` the real image paired with another row's latent is an extra
// negative.
std::vector<torch::Tensor> discriminator_objective(C4SynthImpl& model, const Rollout& rollout,
                                                   const std::vector<torch::Tensor>& real_by_slot,
                                                   bool mismatched = false);

}  // namespace c4synth
