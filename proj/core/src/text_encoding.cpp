#include "c4synth/text_encoding.hpp"

#include <cmath>
#include <map>

#include "c4synth/error.hpp"

namespace c4synth {

torch::Tensor kl_gaussian(const torch::Tensor& mu, const torch::Tensor& log_var) {
  if (mu.sizes() != log_var.sizes())
    throw ShapeError("kl_gaussian: mu " + c10::str(mu.sizes()) + " vs log_var " +
                     c10::str(log_var.sizes()));
  if (!torch::isfinite(mu).all().item<bool>()) throw InvalidArgument("kl_gaussian: non-finite mu");
  if (torch::isnan(log_var).any().item<bool>() || torch::isposinf(log_var).any().item<bool>())
    throw InvalidArgument("kl_gaussian: non-finite log_var");
  auto lv = log_var.clamp_min(kLogVarFloor);
  return 0.5 * (mu.square() + lv.exp() - 1.0 - lv).sum(-1);
}

double kl_gaussian(std::span<const double> mu, std::span<const double> log_var) {
  if (mu.size() != log_var.size()) throw ShapeError("kl_gaussian: length mismatch");
  double kl = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) {
    if (!std::isfinite(mu[d]) || std::isnan(log_var[d]) || log_var[d] == INFINITY)
      throw InvalidArgument("kl_gaussian: non-finite input at dimension " + std::to_string(d));
    const double lv = std::max(log_var[d], kLogVarFloor);
    kl += 0.5 * (mu[d] * mu[d] + std::exp(lv) - 1.0 - lv);
  }
  return kl;
}

ConditionedLatent sample_latent(const torch::Tensor& mu, const torch::Tensor& log_var,
                                const torch::Tensor& eps) {
  if (mu.sizes() != eps.sizes())
    throw ShapeError("sample_latent: eps " + c10::str(eps.sizes()) + " does not match mu " +
                     c10::str(mu.sizes()));
  ConditionedLatent out;
  out.mu = mu;
  out.log_var = log_var;
  out.eps = eps;
  out.t_tilde = mu + torch::exp(0.5 * log_var) * eps;
  out.kl = kl_gaussian(mu, log_var);
  return out;
}

TextEncoderImpl::TextEncoderImpl(int64_t vocab_size, const TextHyper& hyper)
    : vocab_size_(vocab_size), embed_dim_(hyper.embed_dim) {
  words_ = register_module(
      "words", torch::nn::Embedding(torch::nn::EmbeddingOptions(vocab_size, hyper.word_dim)));
  rnn_ = register_module(
      "rnn", torch::nn::LSTM(torch::nn::LSTMOptions(hyper.word_dim, hyper.hidden).batch_first(true)));
  project_ = register_module("project", torch::nn::Linear(hyper.hidden, hyper.embed_dim));
}

torch::Tensor TextEncoderImpl::forward(const TokenBatch& tokens) {
  if (tokens.ids.numel() == 0) throw InvalidArgument("encode_caption: empty token sequence");
  const auto max_id = tokens.ids.max().item<int64_t>();
  const auto min_id = tokens.ids.min().item<int64_t>();
  if (min_id < 0 || max_id >= vocab_size_)
    throw VocabularyError("token index outside vocabulary of size " + std::to_string(vocab_size_));
  if (tokens.lengths.min().item<int64_t>() < 1)
    throw InvalidArgument("encode_caption: empty token sequence");
  auto out = std::get<0>(rnn_->forward(words_(tokens.ids)));  // B x L x H
  auto last = (tokens.lengths - 1).view({-1, 1, 1}).expand({out.size(0), 1, out.size(2)});
  return project_(out.gather(1, last).squeeze(1));
}

TextEmbedding TextEncoderImpl::encode_caption(std::span<const int64_t> tokens, std::string caption_id) {
  if (tokens.empty()) throw InvalidArgument("encode_caption: empty token sequence");
  check_token_range(tokens, vocab_size_);
  torch::NoGradGuard no_grad;
  std::vector<std::vector<int64_t>> seqs{std::vector<int64_t>(tokens.begin(), tokens.end())};
  auto batch = make_token_batch(seqs);
  auto emb = forward(batch).squeeze(0).to(torch::kDouble).contiguous();
  TextEmbedding out;
  out.vector.assign(emb.data_ptr<double>(), emb.data_ptr<double>() + emb.numel());
  out.caption_id = std::move(caption_id);
  return out;
}

ImageEncoderImpl::ImageEncoderImpl(int64_t embed_dim) {
  auto down = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
  };
  auto act = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
  features_ = register_module(
      "features", torch::nn::Sequential(down(3, 16), act(), down(16, 32), act(), down(32, 64), act(),
                                        torch::nn::AdaptiveAvgPool2d(1), torch::nn::Flatten()));
  project_ = register_module("project", torch::nn::Linear(64, embed_dim));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  return project_(features_->forward(images));
}

ConditionAugmentImpl::ConditionAugmentImpl(int64_t embed_dim, int64_t cond_dim) : cond_dim_(cond_dim) {
  project_ = register_module("project", torch::nn::Linear(embed_dim, 2 * cond_dim));
}

ConditionedLatent ConditionAugmentImpl::forward(const torch::Tensor& phi, const torch::Tensor& eps) {
  auto out = project_(phi);
  auto mu = out.narrow(1, 0, cond_dim_);
  auto log_var = out.narrow(1, cond_dim_, cond_dim_);
  if (!torch::isfinite(mu).all().item<bool>())
    throw InvalidArgument("condition_augment: non-finite values in the 'mu' projection block");
  if (!torch::isfinite(log_var).all().item<bool>())
    throw InvalidArgument("condition_augment: non-finite values in the 'log_var' projection block");
  return sample_latent(mu, log_var, eps);
}

ConditionedLatent ConditionAugmentImpl::sample(const torch::Tensor& phi, at::Generator& gen) {
  auto eps = torch::randn({phi.size(0), cond_dim_}, gen, phi.options());
  return forward(phi, eps);
}

// -- structured joint embedding ---------------------------------------------

double compatibility(const ImageEmbedding& v, const TextEmbedding& t) {
  if (v.vector.size() != t.vector.size())
    throw ShapeError("compatibility: image dimension " + std::to_string(v.vector.size()) +
                     " vs text dimension " + std::to_string(t.vector.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < v.vector.size(); ++i) s += v.vector[i] * t.vector[i];
  return s;
}

namespace {

// Mean compatibility per class, skipping classes with empty sets.
template <typename Query, typename Set, typename Score>
int64_t argmax_class(const Query& q, const std::vector<std::vector<Set>>& sets, Score score) {
  int64_t best = -1;
  double best_value = 0.0;
  for (std::size_t y = 0; y < sets.size(); ++y) {
    if (sets[y].empty()) continue;
    double sum = 0.0;
    for (const auto& s : sets[y]) sum += score(q, s);
    const double mean = sum / static_cast<double>(sets[y].size());
    if (best < 0 || mean > best_value) {
      best = static_cast<int64_t>(y);
      best_value = mean;
    }
  }
  return best;
}

template <typename Set>
void require_nonempty(const std::vector<std::vector<Set>>& sets, const char* what) {
  if (sets.empty()) throw InvalidArgument(std::string(what) + ": empty class set");
  for (std::size_t y = 0; y < sets.size(); ++y)
    if (sets[y].empty())
      throw InvalidArgument(std::string(what) + ": class " + std::to_string(y) + " has no embeddings");
}

}  // namespace

int64_t classify_image(const ImageEmbedding& v, const ClassTextSets& class_texts) {
  require_nonempty(class_texts, "classify_image");
  return argmax_class(v, class_texts, [](const ImageEmbedding& a, const TextEmbedding& b) {
    return compatibility(a, b);
  });
}

int64_t classify_text(const TextEmbedding& t, const ClassImageSets& class_images) {
  require_nonempty(class_images, "classify_text");
  return argmax_class(t, class_images, [](const TextEmbedding& a, const ImageEmbedding& b) {
    return compatibility(b, a);
  });
}

double sje_loss(std::span<const SjeItem> batch, const ClassTextSets& class_texts,
                const ClassImageSets& class_images) {
  if (batch.empty()) throw InvalidArgument("sje_loss: empty batch");
  std::map<int64_t, int> distinct;
  for (const auto& item : batch) ++distinct[item.label];
  if (distinct.size() < 2) throw InvalidArgument("sje_loss: batch needs at least two distinct labels");
  auto text_score = [](const ImageEmbedding& a, const TextEmbedding& b) { return compatibility(a, b); };
  auto image_score = [](const TextEmbedding& a, const ImageEmbedding& b) { return compatibility(b, a); };
  double errors = 0.0;
  for (const auto& item : batch) {
    if (argmax_class(item.image, class_texts, text_score) != item.label) errors += 1.0;
    if (argmax_class(item.text, class_images, image_score) != item.label) errors += 1.0;
  }
  return errors / static_cast<double>(batch.size());
}

double sje_loss(std::span<const SjeItem> batch) {
  int64_t max_label = -1;
  for (const auto& item : batch) {
    if (item.label < 0) throw InvalidArgument("sje_loss: negative label");
    max_label = std::max(max_label, item.label);
  }
  ClassTextSets texts(static_cast<std::size_t>(max_label + 1));
  ClassImageSets images(static_cast<std::size_t>(max_label + 1));
  for (const auto& item : batch) {
    texts[static_cast<std::size_t>(item.label)].push_back(item.text);
    images[static_cast<std::size_t>(item.label)].push_back(item.image);
  }
  return sje_loss(batch, texts, images);
}

torch::Tensor sje_surrogate_loss(const torch::Tensor& image_emb, const torch::Tensor& text_emb,
                                 const torch::Tensor& labels) {
  auto [classes, inverse] = torch::_unique(labels, /*sorted=*/true, /*return_inverse=*/true);
  if (classes.size(0) < 2) throw InvalidArgument("sje_surrogate_loss: batch needs two classes");
  auto onehot = torch::one_hot(inverse, classes.size(0)).to(image_emb.scalar_type());  // B x K
  auto counts = onehot.sum(0, /*keepdim=*/true);
  auto compat = image_emb.matmul(text_emb.t());  // image i x text j
  namespace F = torch::nn::functional;
  return F::cross_entropy(compat.matmul(onehot) / counts, inverse) +
         F::cross_entropy(compat.t().matmul(onehot) / counts, inverse);
}

}  // namespace c4synth
