#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace c4synth {

enum class Variant { kCascaded, kRecurrent };

std::string to_string(Variant v);
Variant parse_variant(std::string_view s);

// Architecture of both generator variants. Defaults are the reference-scale
// values; desk runs shrink n_g / n_d / image_base.
struct GanHyper {
  int64_t n_g = 32;
  int64_t n_d = 64;
  // Channel multiplier of the discriminator's 4x4 bottleneck (printed as
  // 18 N_d; 8 is the common alternative).
  int64_t d_mult = 18;
  double lambda = 1.0;
  int64_t noise_dim = 100;
  int64_t cond_dim = 128;
  // Captions consumed per image: generator stages (cascaded) or unrolled
  // time steps (recurrent).
  int64_t stages = 3;
  // Resolution of the first generated image (64 at reference scale).
  int64_t image_base = 64;
};

struct TextHyper {
  int64_t embed_dim = 1024;
  int64_t word_dim = 128;
  int64_t hidden = 256;
};

struct CaptionerHyper {
  int64_t grid = 8;
  int64_t hidden = 256;
  int64_t word_dim = 128;
  int64_t attn_dim = 128;
  int64_t max_len = 20;
};

struct SynthSpec {
  int64_t n_classes = 5;
  int64_t captions_per_image = 5;
  int64_t images_per_class = 200;
  int64_t image_size = 64;
  int64_t test_classes = 1;
};

struct TrainConfig {
  Variant variant = Variant::kRecurrent;
  GanHyper gan;
  TextHyper text;
  CaptionerHyper cccn;

  int64_t epochs = 1;
  int64_t max_iterations = 0;  // 0: run all epochs
  int64_t batch_size = 16;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double grad_clip = 10.0;  // recurrent variant only; <= 0 disables
  // Both learning rates fall linearly to zero from this iteration to the
  // planned end of training; 0 keeps them constant.
  int64_t lr_decay_from = 0;
  double cccn_weight = 1.0;
  uint64_t seed = 1;
  int64_t threads = 1;
  std::string dtype = "float";
  int64_t checkpoint_every = 0;
  int64_t sample_every = 0;

  bool paper_exact_gloss = false;
  bool cccn_detach = false;
  bool literal_t1_recurrence = false;
  bool detach_feedback = false;
  bool detach_hidden = false;
  bool mismatched_negatives = false;

  int64_t sje_iterations = 400;
  int64_t sje_batch = 32;
  double sje_lr = 1e-3;

  std::string dataset_kind = "synth";
  int64_t image_size = 64;
  std::string vocab_source = "train";
  SynthSpec synth;
  uint64_t synth_seed = 7;

  int64_t classifier_iterations = 300;
  int64_t is_splits = 10;
  int64_t is_images = 500;

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

// Verbs a config key applies to; used to derive per-verb help.
enum VerbMask : unsigned {
  kVerbSynthData = 1u << 0,
  kVerbTrainSje = 1u << 1,
  kVerbTrain = 1u << 2,
  kVerbGenerate = 1u << 3,
  kVerbInterpolate = 1u << 4,
  kVerbScore = 1u << 5,
  kVerbInspect = 1u << 6,
};

struct ConfigField {
  std::string key;
  std::string help;
  unsigned verbs = 0;
  // Model-defining keys feed the checkpoint compatibility digest.
  bool architectural = false;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

const std::vector<ConfigField>& config_schema();

// `key = value` lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
void apply_override(TrainConfig& cfg, std::string_view assignment);

// Canonical, schema-ordered `key = value` listing.
std::string echo_config(const TrainConfig& cfg);
std::string model_digest(const TrainConfig& cfg);
std::string full_digest(const TrainConfig& cfg);

std::string sha256_hex(std::string_view bytes);

}  // namespace c4synth
