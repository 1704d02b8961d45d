#include "c4synth/cycle.hpp"

#include "c4synth/error.hpp"

namespace c4synth {

namespace F = torch::nn::functional;

CycleSchedule build_cycle_schedule(std::size_t n) {
  if (n < 2) throw InvalidArgument("cycle schedule needs at least 2 captions, got " + std::to_string(n));
  CycleSchedule s;
  s.pairs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) s.pairs.push_back({k, (k + 1) % n});
  return s;
}

SoftAttentionImpl::SoftAttentionImpl(int64_t feature_dim, int64_t state_dim, int64_t attn_dim) {
  feature_proj_ = register_module("feature_proj", torch::nn::Linear(feature_dim, attn_dim));
  state_proj_ = register_module("state_proj",
                                torch::nn::Linear(torch::nn::LinearOptions(state_dim, attn_dim).bias(false)));
  score_ = register_module("score", torch::nn::Linear(attn_dim, 1));
}

torch::Tensor SoftAttentionImpl::scores(const torch::Tensor& regions, const torch::Tensor& state) {
  if (regions.dim() != 3 || state.dim() != 2 || regions.size(0) != state.size(0))
    throw ShapeError("attention expects regions B x R x C and state B x H, got " +
                     c10::str(regions.sizes()) + " and " + c10::str(state.sizes()));
  if (regions.size(1) < 1) throw ShapeError("attention needs at least one region");
  auto joint = torch::tanh(feature_proj_(regions) + state_proj_(state).unsqueeze(1));
  return score_(joint).squeeze(-1);
}

AttentionContext SoftAttentionImpl::forward(const torch::Tensor& regions, const torch::Tensor& state) {
  auto weights = torch::softmax(scores(regions, state), /*dim=*/1);
  auto context = torch::bmm(weights.unsqueeze(1), regions).squeeze(1);
  return {context, weights};
}

AttentionContext attention_context(SoftAttentionImpl& attention, const torch::Tensor& feature_map,
                                   const torch::Tensor& decoder_state) {
  if (feature_map.dim() != 2 || decoder_state.dim() != 1)
    throw ShapeError("attention_context expects R x C features and an H state");
  auto out = attention.forward(feature_map.unsqueeze(0), decoder_state.unsqueeze(0));
  return {out.context.squeeze(0), out.weights.squeeze(0)};
}

namespace {

void check_targets(const TokenBatch& targets) {
  if (!targets.ids.defined() || targets.ids.dim() != 2)
    throw ShapeError("caption targets must be a B x L token matrix");
  if (targets.ids.size(1) < 3 || targets.lengths.min().item<int64_t>() < 3)
    throw InvalidArgument("caption target is empty (only START/END)");
}

}  // namespace

torch::Tensor caption_cross_entropy(const torch::Tensor& logits, const TokenBatch& targets) {
  check_targets(targets);
  auto next = targets.ids.narrow(1, 1, targets.ids.size(1) - 1);
  if (logits.dim() != 3 || logits.size(0) != next.size(0) || logits.size(1) != next.size(1))
    throw ShapeError("caption logits " + c10::str(logits.sizes()) + " do not match targets " +
                     c10::str(next.sizes()));
  auto mask = next.ne(kPadToken).to(logits.scalar_type());
  auto nll = -torch::log_softmax(logits, -1).gather(2, next.unsqueeze(-1)).squeeze(-1);
  auto per_caption = (nll * mask).sum(1) / mask.sum(1);
  return per_caption.mean();
}

CaptionerImpl::CaptionerImpl(int64_t feature_channels, int64_t vocab_size, const CaptionerHyper& hyper)
    : feature_channels_(feature_channels), vocab_size_(vocab_size), grid_(hyper.grid) {
  words_ = register_module("words", torch::nn::Embedding(vocab_size, hyper.word_dim));
  attention_ = register_module("attention", SoftAttention(feature_channels, hyper.hidden, hyper.attn_dim));
  cell_ = register_module("cell", torch::nn::LSTMCell(hyper.word_dim + feature_channels, hyper.hidden));
  init_h_ = register_module("init_h", torch::nn::Linear(feature_channels, hyper.hidden));
  init_c_ = register_module("init_c", torch::nn::Linear(feature_channels, hyper.hidden));
  out_ = register_module("out", torch::nn::Linear(hyper.hidden, vocab_size));
}

torch::Tensor CaptionerImpl::pool(const torch::Tensor& features) const {
  if (features.dim() != 4 || features.size(1) != feature_channels_)
    throw ShapeError("captioner expects B x " + std::to_string(feature_channels_) +
                     " x S x S features, got " + c10::str(features.sizes()));
  auto pooled = F::adaptive_avg_pool2d(features, F::AdaptiveAvgPool2dFuncOptions({grid_, grid_}));
  return pooled.flatten(2).transpose(1, 2);
}

CaptionerImpl::State CaptionerImpl::initial_state(const torch::Tensor& regions) {
  auto mean = regions.mean(1);
  return {torch::tanh(init_h_(mean)), torch::tanh(init_c_(mean))};
}

torch::Tensor CaptionerImpl::step(const torch::Tensor& regions, const torch::Tensor& prev_tokens,
                                  State& state) {
  auto ctx = attention_->forward(regions, state.h).context;
  auto [h, c] = cell_(torch::cat({words_(prev_tokens), ctx}, 1), std::make_tuple(state.h, state.c));
  state = {h, c};
  return out_(h);
}

torch::Tensor CaptionerImpl::logits(const torch::Tensor& features, const TokenBatch& targets) {
  check_targets(targets);
  if (targets.ids.size(0) != features.size(0))
    throw ShapeError("captioner: " + std::to_string(features.size(0)) + " feature maps vs " +
                     std::to_string(targets.ids.size(0)) + " captions");
  if (targets.ids.max().item<int64_t>() >= vocab_size_)
    throw VocabularyError("caption target token outside captioner vocabulary");
  auto regions = pool(features);
  auto state = initial_state(regions);
  const auto steps = targets.ids.size(1) - 1;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int64_t t = 0; t < steps; ++t) out.push_back(step(regions, targets.ids.select(1, t), state));
  return torch::stack(out, 1);
}

torch::Tensor CaptionerImpl::loss(const torch::Tensor& features, const TokenBatch& targets) {
  return caption_cross_entropy(logits(features, targets), targets);
}

double CaptionerImpl::token_accuracy(const torch::Tensor& features, const TokenBatch& targets) {
  torch::NoGradGuard no_grad;
  auto pred = logits(features, targets).argmax(-1);
  auto next = targets.ids.narrow(1, 1, targets.ids.size(1) - 1);
  auto mask = next.ne(kPadToken);
  return pred.eq(next).logical_and(mask).sum().item<double>() / mask.sum().item<double>();
}

std::vector<std::vector<int64_t>> CaptionerImpl::greedy_decode(const torch::Tensor& features,
                                                               int64_t max_len) {
  torch::NoGradGuard no_grad;
  auto regions = pool(features);
  auto state = initial_state(regions);
  const auto b = features.size(0);
  auto prev = torch::full({b}, kStartToken, torch::TensorOptions(torch::kLong).device(features.device()));
  std::vector<std::vector<int64_t>> seqs(static_cast<std::size_t>(b));
  std::vector<bool> done(static_cast<std::size_t>(b), false);
  for (int64_t t = 0; t < max_len; ++t) {
    prev = step(regions, prev, state).argmax(-1);
    auto acc = prev.accessor<int64_t, 1>();
    bool all_done = true;
    for (int64_t i = 0; i < b; ++i) {
      const auto row = static_cast<std::size_t>(i);
      if (!done[row]) {
        if (acc[i] == kEndToken) done[row] = true;
        else seqs[row].push_back(acc[i]);
      }
      all_done = all_done && done[row];
    }
    if (all_done) break;
  }
  return seqs;
}

torch::Tensor cccn_caption_loss(CaptionerImpl& captioner, const torch::Tensor& features,
                                const TokenBatch& target) {
  return captioner.loss(features, target);
}

torch::Tensor cycle_loss(const std::vector<torch::Tensor>& stage_features,
                         const std::vector<TokenBatch>& captions, const CycleSchedule& schedule,
                         const StepCaptionLoss& step_loss) {
  if (stage_features.size() != schedule.size())
    throw InvalidArgument("cycle_loss: " + std::to_string(stage_features.size()) +
                          " feature maps for a schedule of " + std::to_string(schedule.size()));
  if (captions.size() != schedule.size())
    throw InvalidArgument("cycle_loss: " + std::to_string(captions.size()) +
                          " captions for a schedule of " + std::to_string(schedule.size()));
  torch::Tensor total;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    auto term = step_loss(k, stage_features[k], captions[schedule.target_of(k)]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace c4synth
