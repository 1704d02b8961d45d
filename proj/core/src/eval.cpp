#include "c4synth/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "c4synth/checkpoint.hpp"
#include "c4synth/error.hpp"
#include "c4synth/layers.hpp"
#include "c4synth/trainer.hpp"

namespace c4synth {

using nlohmann::json;

json ScoreReport::to_json() const {
  return json{{"mean", mean}, {"std", std}, {"n_images", n_images}, {"n_splits", n_splits},
              {"classifier_id", classifier_id}};
}

ScoreReport inception_score(const torch::Tensor& probs, std::span<const std::string> ids, int64_t n_splits,
                            std::string classifier_id) {
  if (probs.dim() != 2) throw ShapeError("inception_score: expected N x K probabilities, got " + c10::str(probs.sizes()));
  const int64_t n = probs.size(0);
  if (n_splits < 1) throw InvalidArgument("inception_score: n_splits must be >= 1");
  if (n < n_splits)
    throw InvalidArgument("inception_score: " + std::to_string(n) + " images for " + std::to_string(n_splits) +
                          " splits");
  if (static_cast<int64_t>(ids.size()) != n) throw InvalidArgument("inception_score: one id per image required");
  auto p = probs.to(torch::kDouble).contiguous();
  if (!torch::isfinite(p).all().item<bool>() || p.lt(0).any().item<bool>())
    throw InvalidArgument("inception_score: probabilities must be finite and non-negative");
  const double worst = (p.sum(1) - 1.0).abs().max().item<double>();
  if (worst > 1e-4)
    throw InvalidArgument("inception_score: classifier rows sum off by " + std::to_string(worst));

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  p = p.index_select(0, torch::tensor(order, torch::kLong));

  std::vector<double> scores;
  for (int64_t s = 0; s < n_splits; ++s) {
    const int64_t lo = s * n / n_splits;
    const int64_t hi = (s + 1) * n / n_splits;
    auto part = p.slice(0, lo, hi);
    auto py = part.mean(0, true);
    // 0 * log 0 = 0
    auto terms = torch::where(part > 0, part * (torch::log(part) - torch::log(py)), torch::zeros_like(part));
    scores.push_back(std::exp(terms.sum(1).mean().item<double>()));
  }
  ScoreReport r;
  r.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(var / static_cast<double>(scores.size()));
  r.n_images = n;
  r.n_splits = n_splits;
  r.classifier_id = std::move(classifier_id);
  return r;
}

ScoreReport inception_score(const torch::Tensor& probs, int64_t n_splits, std::string classifier_id) {
  std::vector<std::string> ids;
  for (int64_t i = 0; i < probs.size(0); ++i) {
    std::ostringstream s;
    s << std::setw(10) << std::setfill('0') << i;
    ids.push_back(s.str());
  }
  return inception_score(probs, ids, n_splits, std::move(classifier_id));
}

// -- classifier ---------------------------------------------------------------

SynthClassifierImpl::SynthClassifierImpl(int64_t n_classes, int64_t image_size)
    : n_classes_(n_classes), image_size_(image_size) {
  if (image_size % 8 != 0) throw ConfigError("classifier", "input size must be a multiple of 8");
  using namespace torch::nn;
  features_ = register_module(
      "features",
      Sequential(Conv2d(Conv2dOptions(3, 16, 3).padding(1)), ReLU(), MaxPool2d(2),
                 Conv2d(Conv2dOptions(16, 32, 3).padding(1)), ReLU(), MaxPool2d(2),
                 Conv2d(Conv2dOptions(32, 64, 3).padding(1)), ReLU(), MaxPool2d(2)));
  out_ = register_module("out", Linear(64 * (image_size / 8) * (image_size / 8), n_classes));
}

torch::Tensor SynthClassifierImpl::forward(const torch::Tensor& images) {
  auto x = images.size(-1) == image_size_ ? images : resize_images(images, image_size_);
  return out_(features_->forward(x).flatten(1));
}

torch::Tensor Classifier::probabilities(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += 128)
    parts.push_back(torch::softmax(net->forward(images.slice(0, i, i + 128).to(torch::kFloat)), 1));
  return torch::cat(parts).to(torch::kDouble);
}

std::vector<int64_t> Classifier::predict(const torch::Tensor& images) {
  auto idx = probabilities(images).argmax(1).contiguous();
  return std::vector<int64_t>(idx.data_ptr<int64_t>(), idx.data_ptr<int64_t>() + idx.numel());
}

namespace {

std::string weights_id(torch::nn::Module& m) {
  std::string bytes;
  for (auto& p : m.parameters()) {
    auto c = p.detach().to(torch::kFloat).contiguous();
    bytes.append(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel()) * sizeof(float));
  }
  return "synth-cnn-" + sha256_hex(bytes).substr(0, 12);
}

}  // namespace

Classifier train_classifier(const Dataset& data, const TrainConfig& cfg, std::ostream* log) {
  torch::set_num_threads(static_cast<int>(cfg.threads));
  auto gen = make_generator(cfg.seed + 17);
  Classifier clf;
  clf.net = SynthClassifier(data.num_classes(), kClassifierImageSize);
  init_parameters(*clf.net, gen, InitStyle::kUniform);

  std::vector<torch::Tensor> imgs;
  std::vector<int64_t> labels;
  for (const auto& ex : data.examples) {
    imgs.push_back(ex.image);
    labels.push_back(ex.class_id);
  }
  auto all = resize_images(torch::stack(imgs), kClassifierImageSize);
  auto y = torch::tensor(labels, torch::kLong);
  torch::optim::Adam opt(clf.net->parameters(), torch::optim::AdamOptions(1e-3));
  const int64_t batch = std::min<int64_t>(64, all.size(0));
  clf.net->train();
  for (int64_t it = 0; it < cfg.classifier_iterations; ++it) {
    auto idx = torch::randint(all.size(0), {batch}, gen, torch::kLong);
    auto x = all.index_select(0, idx);
    // Mild pixel noise and flips so generated samples are not out of support.
    x = x + 0.1 * torch::randn(x.sizes(), gen, x.options());
    auto flip = torch::rand({batch, 1, 1, 1}, gen, x.options()) < 0.5;
    x = torch::where(flip, x.flip({3}), x).clamp(-1, 1);
    auto loss = torch::nn::functional::cross_entropy(clf.net->forward(x), y.index_select(0, idx));
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (log && (it % 100 == 0 || it + 1 == cfg.classifier_iterations))
      *log << "classifier iter " << it << " loss " << loss.item<double>() << '\n';
  }
  clf.net->eval();
  clf.id = weights_id(*clf.net);
  return clf;
}

double classifier_accuracy(Classifier& clf, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw InvalidArgument("classifier_accuracy: no rows");
  std::vector<torch::Tensor> imgs;
  for (auto r : rows) imgs.push_back(data.examples.at(r).image);
  auto pred = clf.predict(torch::stack(imgs));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) hit += pred[i] == data.examples[rows[i]].class_id;
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

void save_classifier(const Classifier& clf, const std::filesystem::path& path) {
  CheckpointWriter w(json{{"kind", "classifier"},
                          {"n_classes", clf.net->n_classes()},
                          {"image_size", clf.net->image_size()},
                          {"id", clf.id}});
  w.add_module("classifier", *clf.net);
  w.save(path);
}

Classifier load_classifier(const std::filesystem::path& path) {
  CheckpointReader r(path);
  const auto& meta = r.metadata();
  if (meta.value("kind", std::string{}) != "classifier")
    throw CheckpointError(path.string() + " is not a classifier checkpoint");
  Classifier clf;
  clf.net = SynthClassifier(meta.at("n_classes").get<int64_t>(), meta.at("image_size").get<int64_t>());
  r.load_module("classifier", *clf.net);
  clf.net->eval();
  clf.id = meta.at("id");
  return clf;
}

// -- generation ---------------------------------------------------------------

LoadedRun load_run(const std::filesystem::path& checkpoint) {
  CheckpointReader r(checkpoint);
  const auto& meta = r.metadata();
  if (meta.value("kind", std::string{}) != "c4synth-run")
    throw CheckpointError(checkpoint.string() + " is not a training checkpoint");
  LoadedRun run;
  run.cfg = parse_config(meta.at("config").get<std::string>());
  std::vector<std::string> tokens;
  std::istringstream vs(r.string("vocabulary"));
  for (std::string line; std::getline(vs, line);) tokens.push_back(line);
  run.sje = make_sje_model(Vocabulary::from_tokens(std::move(tokens)), run.cfg.text, run.cfg.seed);
  r.load_module("text_encoder", *run.sje.text);
  run.sje.text->eval();
  run.model = make_model(model_spec_from(run.cfg, run.sje.vocab.size()), run.cfg.seed);
  run.model->to(dtype_of(run.cfg));
  r.load_children(*run.model);
  run.model->eval();
  std::ifstream in(checkpoint, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  run.checkpoint_digest = sha256_hex(bytes).substr(0, 16);
  return run;
}

json GeneratedSet::metadata() const {
  json items = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) items.push_back({{"id", ids[i]}, {"captions", captions[i]}});
  return json{{"seed", seed}, {"images", items}};
}

torch::Tensor generate_images(LoadedRun& run, const std::vector<std::vector<std::string>>& caption_sets,
                              const torch::Tensor& z) {
  if (caption_sets.empty()) throw InvalidArgument("generate_images: no caption sets");
  const auto n = caption_sets.front().size();
  for (const auto& set : caption_sets)
    if (set.size() != n) throw InvalidArgument("generate_images: caption sets differ in length");
  if (z.dim() != 2 || z.size(0) != static_cast<int64_t>(caption_sets.size()))
    throw ShapeError("generate_images: expected one noise row per caption set, got " + c10::str(z.sizes()));
  torch::NoGradGuard no_grad;
  run.model->eval();
  run.sje.text->eval();
  const auto dtype = dtype_of(run.cfg);
  std::vector<torch::Tensor> phis;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::string> caps;
    for (const auto& set : caption_sets) caps.push_back(set[k]);
    phis.push_back(run.sje.embed_captions(caps).to(dtype));
  }
  NoiseDraw noise;
  noise.z = z.to(dtype);
  for (std::size_t k = 0; k < n; ++k)
    noise.eps.push_back(torch::zeros({z.size(0), run.cfg.gan.cond_dim}, torch::TensorOptions().dtype(dtype)));
  return run.model->rollout(phis, noise).final_image().to(torch::kFloat);
}

std::vector<std::size_t> scoring_sample(std::span<const std::size_t> rows, std::size_t count, uint64_t seed) {
  if (rows.empty()) throw InvalidArgument("no examples in the selected split");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(rows[(i * rows.size()) / count]);
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

GeneratedSet generate_for_rows(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                               uint64_t seed, std::optional<Split> expected) {
  if (rows.empty()) throw InvalidArgument("generate: no examples selected");
  if (expected) data.check_firewall(rows, *expected);
  const auto n = run.model->default_captions();
  std::mt19937_64 rng(seed);
  auto gen = make_generator(seed);
  GeneratedSet out;
  out.seed = seed;
  std::vector<std::vector<std::string>> sets;
  for (auto row : rows) {
    const auto& ex = data.examples.at(row);
    if (ex.captions.size() < n)
      throw InvalidArgument("example " + ex.id + " has fewer than " + std::to_string(n) + " captions");
    std::vector<std::string> caps, cap_ids;
    for (auto c : sample_caption_set(ex, n, rng)) {
      caps.push_back(ex.captions[c]);
      cap_ids.push_back(ex.id + "#" + std::to_string(c));
    }
    sets.push_back(std::move(caps));
    out.ids.push_back(ex.id);
    out.captions.push_back(std::move(cap_ids));
  }
  auto z = torch::randn({static_cast<int64_t>(rows.size()), run.cfg.gan.noise_dim}, gen);
  std::vector<torch::Tensor> parts;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < sets.size(); i += kChunk) {
    const auto j = std::min(sets.size(), i + kChunk);
    std::vector<std::vector<std::string>> chunk(sets.begin() + static_cast<std::ptrdiff_t>(i),
                                                sets.begin() + static_cast<std::ptrdiff_t>(j));
    parts.push_back(generate_images(run, chunk, z.slice(0, static_cast<int64_t>(i), static_cast<int64_t>(j))));
  }
  out.images = torch::cat(parts);
  return out;
}

double captioner_token_accuracy(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                                uint64_t seed, std::optional<Split> expected) {
  if (rows.empty()) throw InvalidArgument("captioner accuracy: no examples selected");
  if (expected) data.check_firewall(rows, *expected);
  torch::NoGradGuard no_grad;
  run.model->eval();
  run.sje.text->eval();
  const auto n = run.model->default_captions();
  const auto dtype = dtype_of(run.cfg);
  const auto vocab_size = static_cast<int64_t>(run.sje.vocab.size());
  std::mt19937_64 rng(seed);
  auto gen = make_generator(seed);
  double hits = 0.0, tokens = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < rows.size(); i += kChunk) {
    const auto j = std::min(rows.size(), i + kChunk);
    std::vector<std::vector<std::string>> by_slot(n);
    std::vector<std::vector<CaptionTarget>> targets(n);
    for (std::size_t r = i; r < j; ++r) {
      const auto& ex = data.examples.at(rows[r]);
      auto set = sample_caption_set(ex, n, rng);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& cap = ex.captions[set[k]];
        by_slot[k].push_back(cap);
        targets[k].push_back(CaptionTarget::from_words(run.sje.vocab.encode(cap), vocab_size, run.cfg.cccn.max_len));
      }
    }
    const auto b = static_cast<int64_t>(j - i);
    std::vector<torch::Tensor> phis;
    std::vector<TokenBatch> batches;
    for (std::size_t k = 0; k < n; ++k) {
      phis.push_back(run.sje.embed_captions(by_slot[k]).to(dtype));
      batches.push_back(make_target_batch(targets[k]));
    }
    auto noise = NoiseDraw::sample(b, n, run.cfg.gan.noise_dim, run.cfg.gan.cond_dim, gen,
                                   torch::TensorOptions().dtype(dtype));
    for (auto& e : noise.eps) e.zero_();
    auto roll = run.model->rollout(phis, noise);
    for (std::size_t k = 0; k < roll.steps.size(); ++k) {
      const auto& target = batches[roll.schedule.target_of(k)];
      const double count = (target.lengths - 1).sum().item<double>();
      hits += run.model->captioner(k).token_accuracy(roll.steps[k].features, target) * count;
      tokens += count;
    }
  }
  return hits / tokens;
}

GeneratedSet zero_shot_generate(LoadedRun& run, const Dataset& data, std::span<const std::size_t> rows,
                                uint64_t seed) {
  return generate_for_rows(run, data, rows, seed, Split::kTest);
}

Interpolation interpolate_noise(LoadedRun& run, const std::vector<std::string>& captions, const torch::Tensor& z0,
                                const torch::Tensor& z1, int64_t steps) {
  if (steps < 2) throw InvalidArgument("interpolate: steps must be >= 2, got " + std::to_string(steps));
  const auto dim = run.cfg.gan.noise_dim;
  for (const auto* z : {&z0, &z1})
    if (z->dim() != 1 || z->size(0) != dim)
      throw ShapeError("interpolate: noise vectors must have length " + std::to_string(dim) + ", got " +
                       c10::str(z->sizes()));
  auto t = torch::linspace(0.0, 1.0, steps, torch::kDouble).unsqueeze(1);
  auto a = z0.to(torch::kDouble).unsqueeze(0);
  auto b = z1.to(torch::kDouble).unsqueeze(0);
  auto z = a + t * (b - a);
  // Exact endpoints regardless of rounding in the blend.
  z[0] = z0.to(torch::kDouble);
  z[steps - 1] = z1.to(torch::kDouble);
  std::vector<std::vector<std::string>> sets(static_cast<std::size_t>(steps), captions);
  auto images = generate_images(run, sets, z);
  Interpolation out;
  for (int64_t i = 0; i < steps; ++i) out.frames.push_back(images[i]);
  out.strip = image_strip(out.frames);
  return out;
}

}  // namespace c4synth
