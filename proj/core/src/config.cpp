#include "c4synth/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "c4synth/error.hpp"

namespace c4synth {

std::string to_string(Variant v) { return v == Variant::kCascaded ? "cascaded" : "recurrent"; }

Variant parse_variant(std::string_view s) {
  if (s == "cascaded") return Variant::kCascaded;
  if (s == "recurrent") return Variant::kRecurrent;
  throw ConfigError("variant", "expected 'cascaded' or 'recurrent', got '" + std::string(s) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text);

template <>
int64_t parse_value<int64_t>(const std::string& key, const std::string& text) {
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

template <>
uint64_t parse_value<uint64_t>(const std::string& key, const std::string& text) {
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  return v;
}

template <>
double parse_value<double>(const std::string& key, const std::string& text) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& text) {
  return text;
}

template <>
Variant parse_value<Variant>(const std::string&, const std::string& text) {
  return parse_variant(text);
}

std::string format_value(int64_t v) { return std::to_string(v); }
std::string format_value(uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(Variant v) { return to_string(v); }
std::string format_value(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename Access>
ConfigField make_field(std::string key, std::string help, unsigned verbs, bool architectural,
                       Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<TrainConfig&>()))>;
  ConfigField f;
  f.key = key;
  f.help = std::move(help);
  f.verbs = verbs;
  f.architectural = architectural;
  f.get = [access](const TrainConfig& c) {
    return format_value(access(const_cast<TrainConfig&>(c)));
  };
  f.set = [access, key](TrainConfig& c, const std::string& text) {
    access(c) = parse_value<T>(key, text);
  };
  return f;
}

#define C4_FIELD(key, member, verbs, arch, help) \
  make_field(key, help, verbs, arch, [](TrainConfig& c) -> auto& { return c.member; })

constexpr unsigned kModelVerbs = kVerbTrain | kVerbGenerate | kVerbInterpolate | kVerbScore;
constexpr unsigned kDataVerbs =
    kVerbSynthData | kVerbTrainSje | kVerbTrain | kVerbGenerate | kVerbInterpolate | kVerbScore;

std::vector<ConfigField> build_schema() {
  return {
      C4_FIELD("variant", variant, kModelVerbs, true, "generator variant: cascaded | recurrent"),
      C4_FIELD("stages", gan.stages, kModelVerbs, true,
               "captions per image (cascaded stages or recurrent steps)"),
      C4_FIELD("n_g", gan.n_g, kModelVerbs, true, "generator channel base N_g"),
      C4_FIELD("n_d", gan.n_d, kModelVerbs, true, "discriminator channel base N_d"),
      C4_FIELD("d_mult", gan.d_mult, kModelVerbs, true,
               "discriminator 4x4 bottleneck multiplier (channels = d_mult * n_d)"),
      C4_FIELD("lambda", gan.lambda, kVerbTrain, false, "KL weight in the generator loss"),
      C4_FIELD("noise_dim", gan.noise_dim, kModelVerbs, true, "noise vector length"),
      C4_FIELD("cond_dim", gan.cond_dim, kModelVerbs, true, "conditioned latent length"),
      C4_FIELD("image_base", gan.image_base, kModelVerbs, true,
               "resolution of the first generated image (64 at reference scale)"),
      C4_FIELD("embed_dim", text.embed_dim, kVerbTrainSje | kModelVerbs, true,
               "sentence embedding dimension E"),
      C4_FIELD("text_word_dim", text.word_dim, kVerbTrainSje | kModelVerbs, true,
               "word embedding width of the sentence encoder"),
      C4_FIELD("text_hidden", text.hidden, kVerbTrainSje | kModelVerbs, true,
               "recurrent width of the sentence encoder"),
      C4_FIELD("cccn_grid", cccn.grid, kModelVerbs, true, "captioner pooling grid (grid x grid)"),
      C4_FIELD("cccn_hidden", cccn.hidden, kModelVerbs, true, "captioner LSTM width"),
      C4_FIELD("cccn_word_dim", cccn.word_dim, kModelVerbs, true, "captioner word embedding width"),
      C4_FIELD("cccn_attn_dim", cccn.attn_dim, kModelVerbs, true, "captioner attention width"),
      C4_FIELD("max_caption_len", cccn.max_len, kModelVerbs, false,
               "maximum decoded/target caption length in tokens"),
      C4_FIELD("epochs", epochs, kVerbTrain, false, "passes over the training split"),
      C4_FIELD("max_iterations", max_iterations, kVerbTrain, false,
               "stop after this many batches (0: no limit)"),
      C4_FIELD("batch_size", batch_size, kVerbTrain | kVerbScore, false, "images per batch"),
      C4_FIELD("lr_g", lr_g, kVerbTrain, false, "generator-side Adam learning rate"),
      C4_FIELD("lr_d", lr_d, kVerbTrain, false, "discriminator Adam learning rate"),
      C4_FIELD("beta1", beta1, kVerbTrain, false, "Adam beta1"),
      C4_FIELD("beta2", beta2, kVerbTrain, false, "Adam beta2"),
      C4_FIELD("grad_clip", grad_clip, kVerbTrain, false,
               "global gradient-norm clip for the recurrent variant (<=0 disables)"),
      C4_FIELD("lr_decay_from", lr_decay_from, kVerbTrain, false,
               "iteration where both learning rates start a linear decay to zero (0: constant)"),
      C4_FIELD("cccn_weight", cccn_weight, kVerbTrain, false, "weight of the cycle loss"),
      C4_FIELD("seed", seed, kDataVerbs, false, "run seed"),
      C4_FIELD("threads", threads, kDataVerbs, false, "intra-op threads"),
      C4_FIELD("dtype", dtype, kModelVerbs | kVerbTrainSje, false, "float | double"),
      C4_FIELD("checkpoint_every", checkpoint_every, kVerbTrain, false,
               "write a checkpoint every k iterations (0: final only)"),
      C4_FIELD("sample_every", sample_every, kVerbTrain, false,
               "write sample images every k iterations (0: never)"),
      C4_FIELD("paper_exact_gloss", paper_exact_gloss, kVerbTrain, false,
               "use the literal log(1 - D) generator loss instead of -log D"),
      C4_FIELD("cccn_detach", cccn_detach, kVerbTrain, false,
               "stop cycle-loss gradients at the captioner input"),
      C4_FIELD("literal_t1_recurrence", literal_t1_recurrence, kModelVerbs, true,
               "recurrent: condition every step on the first caption"),
      C4_FIELD("detach_feedback", detach_feedback, kVerbTrain, false,
               "recurrent: detach the image fed to the hidden-state update"),
      C4_FIELD("detach_hidden", detach_hidden, kVerbTrain, false,
               "recurrent: detach the hidden state between steps"),
      C4_FIELD("mismatched_negatives", mismatched_negatives, kVerbTrain, false,
               "add real-image/wrong-caption negatives to the discriminator loss"),
      C4_FIELD("sje_iterations", sje_iterations, kVerbTrainSje | kVerbTrain, false,
               "joint-embedding training batches"),
      C4_FIELD("sje_batch", sje_batch, kVerbTrainSje | kVerbTrain, false,
               "joint-embedding batch size"),
      C4_FIELD("sje_lr", sje_lr, kVerbTrainSje | kVerbTrain, false,
               "joint-embedding Adam learning rate"),
      C4_FIELD("dataset_kind", dataset_kind, kDataVerbs, false, "synth | cub | oxford | generic"),
      C4_FIELD("image_size", image_size, kDataVerbs, false, "dataset image size after preprocessing"),
      C4_FIELD("vocab_source", vocab_source, kVerbTrainSje | kVerbTrain, false,
               "captions the vocabulary is built from: train | all"),
      C4_FIELD("synth_classes", synth.n_classes, kDataVerbs, false, "synthetic classes"),
      C4_FIELD("synth_captions", synth.captions_per_image, kDataVerbs, false,
               "synthetic captions per image"),
      C4_FIELD("synth_images_per_class", synth.images_per_class, kDataVerbs, false,
               "synthetic images per class"),
      C4_FIELD("synth_test_classes", synth.test_classes, kDataVerbs, false,
               "synthetic classes held out for zero-shot testing"),
      C4_FIELD("synth_seed", synth_seed, kDataVerbs, false, "synthetic dataset seed"),
      C4_FIELD("classifier_iterations", classifier_iterations, kVerbScore, false,
               "training batches for the scoring classifier"),
      C4_FIELD("is_splits", is_splits, kVerbScore, false, "Inception-Score splits"),
      C4_FIELD("is_images", is_images, kVerbScore, false, "images generated for scoring"),
  };
}

#undef C4_FIELD

bool is_power_of_two(int64_t v) { return v > 0 && std::has_single_bit(static_cast<uint64_t>(v)); }

}  // namespace

const std::vector<ConfigField>& config_schema() {
  static const std::vector<ConfigField> schema = build_schema();
  return schema;
}

void TrainConfig::validate() const {
  auto positive = [](const char* key, int64_t v) {
    if (v <= 0) throw ConfigError(key, "must be positive, got " + std::to_string(v));
  };
  if (gan.stages < 2) throw ConfigError("stages", "a caption cycle needs at least 2 captions");
  positive("n_g", gan.n_g);
  positive("n_d", gan.n_d);
  positive("d_mult", gan.d_mult);
  positive("noise_dim", gan.noise_dim);
  positive("cond_dim", gan.cond_dim);
  if (!(gan.lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
  if (!is_power_of_two(gan.image_base) || gan.image_base < 16)
    throw ConfigError("image_base", "must be a power of two >= 16");
  positive("embed_dim", text.embed_dim);
  positive("text_word_dim", text.word_dim);
  positive("text_hidden", text.hidden);
  positive("cccn_grid", cccn.grid);
  positive("cccn_hidden", cccn.hidden);
  positive("cccn_word_dim", cccn.word_dim);
  positive("cccn_attn_dim", cccn.attn_dim);
  if (cccn.max_len < 3) throw ConfigError("max_caption_len", "must be >= 3");
  positive("epochs", epochs);
  if (max_iterations < 0) throw ConfigError("max_iterations", "must be >= 0");
  if (lr_decay_from < 0) throw ConfigError("lr_decay_from", "must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size", "batch normalisation needs >= 2");
  if (!(lr_g > 0)) throw ConfigError("lr_g", "must be positive");
  if (!(lr_d > 0)) throw ConfigError("lr_d", "must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(cccn_weight >= 0)) throw ConfigError("cccn_weight", "must be >= 0");
  positive("threads", threads);
  if (dtype != "float" && dtype != "double") throw ConfigError("dtype", "expected float | double");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
  if (sample_every < 0) throw ConfigError("sample_every", "must be >= 0");
  positive("sje_iterations", sje_iterations);
  if (sje_batch < 2) throw ConfigError("sje_batch", "must be >= 2");
  if (!(sje_lr > 0)) throw ConfigError("sje_lr", "must be positive");
  if (dataset_kind != "synth" && dataset_kind != "cub" && dataset_kind != "oxford" &&
      dataset_kind != "generic")
    throw ConfigError("dataset_kind", "expected synth | cub | oxford | generic");
  if (!is_power_of_two(image_size) || image_size < 16)
    throw ConfigError("image_size", "must be a power of two >= 16");
  if (vocab_source != "train" && vocab_source != "all")
    throw ConfigError("vocab_source", "expected train | all");
  positive("synth_classes", synth.n_classes);
  if (synth.captions_per_image < 2) throw ConfigError("synth_captions", "must be >= 2");
  positive("synth_images_per_class", synth.images_per_class);
  if (synth.test_classes < 0 || synth.test_classes >= synth.n_classes)
    throw ConfigError("synth_test_classes", "must leave at least one training class");
  positive("classifier_iterations", classifier_iterations);
  positive("is_splits", is_splits);
  positive("is_images", is_images);
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped.find('=') == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    apply_override(base, stripped);
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(TrainConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError(std::string(assignment), "override must be key=value");
  const std::string key(trim(assignment.substr(0, eq)));
  const std::string value(trim(assignment.substr(eq + 1)));
  const auto& schema = config_schema();
  auto it = std::find_if(schema.begin(), schema.end(),
                         [&](const ConfigField& f) { return f.key == key; });
  if (it == schema.end()) throw ConfigError(key, "unknown config key");
  it->set(cfg, value);
}

std::string echo_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : config_schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string model_digest(const TrainConfig& cfg) {
  std::string canon;
  for (const auto& f : config_schema())
    if (f.architectural) canon += f.key + "=" + f.get(cfg) + "\n";
  return sha256_hex(canon);
}

std::string full_digest(const TrainConfig& cfg) { return sha256_hex(echo_config(cfg)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

}  // namespace c4synth
