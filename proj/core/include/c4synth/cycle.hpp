#pragma once

#include <torch/torch.h>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "c4synth/config.hpp"
#include "c4synth/vocabulary.hpp"

namespace c4synth {

// Caption k feeds step k; the captioner at step k is scored against caption
// k+1, and the last step wraps back to caption 0. Indices are 0-based.
struct CyclePair {
  std::size_t input = 0;
  std::size_t target = 0;
  bool operator==(const CyclePair&) const = default;
};

struct CycleSchedule {
  std::vector<CyclePair> pairs;

  std::size_t size() const { return pairs.size(); }
  std::size_t target_of(std::size_t step) const { return pairs.at(step).target; }
};

CycleSchedule build_cycle_schedule(std::size_t n);

struct AttentionContext {
  torch::Tensor context;  // B x C (or C)
  torch::Tensor weights;  // B x R (or R), rows sum to 1
};

// score_r = w^T tanh(W_f f_r + W_h h); weights = softmax(score).
class SoftAttentionImpl : public torch::nn::Module {
 public:
  SoftAttentionImpl(int64_t feature_dim, int64_t state_dim, int64_t attn_dim);

  // regions: B x R x C, state: B x H.
  AttentionContext forward(const torch::Tensor& regions, const torch::Tensor& state);
  torch::Tensor scores(const torch::Tensor& regions, const torch::Tensor& state);

 private:
  torch::nn::Linear feature_proj_{nullptr};
  torch::nn::Linear state_proj_{nullptr};
  torch::nn::Linear score_{nullptr};
};
TORCH_MODULE(SoftAttention);

// Unbatched form: feature_map R x C, decoder_state H.
AttentionContext attention_context(SoftAttentionImpl& attention, const torch::Tensor& feature_map,
                                   const torch::Tensor& decoder_state);

// Mean token cross-entropy per caption (END counted, START never predicted),
// averaged over the batch. logits: B x (L-1) x V for targets of length L.
torch::Tensor caption_cross_entropy(const torch::Tensor& logits, const TokenBatch& targets);

// Cross-caption consistency captioner: backbone features are average-pooled
// to a grid, and an LSTM decodes words conditioned on an attention context,
// its hidden state and the previous word.
class CaptionerImpl : public torch::nn::Module {
 public:
  CaptionerImpl(int64_t feature_channels, int64_t vocab_size, const CaptionerHyper& hyper);

  // B x C x S x S -> B x (grid*grid) x C.
  torch::Tensor pool(const torch::Tensor& features) const;
  // Teacher-forced logits, B x (L-1) x V.
  torch::Tensor logits(const torch::Tensor& features, const TokenBatch& targets);
  torch::Tensor loss(const torch::Tensor& features, const TokenBatch& targets);
  // Fraction of non-pad target tokens whose teacher-forced argmax is correct.
  double token_accuracy(const torch::Tensor& features, const TokenBatch& targets);
  // Greedy decoding; sequences exclude START and stop at (and exclude) END.
  std::vector<std::vector<int64_t>> greedy_decode(const torch::Tensor& features, int64_t max_len);

  SoftAttentionImpl& attention() { return *attention_; }
  torch::nn::Linear& output_layer() { return out_; }
  int64_t vocab_size() const { return vocab_size_; }
  int64_t feature_channels() const { return feature_channels_; }

 private:
  struct State {
    torch::Tensor h;
    torch::Tensor c;
  };
  State initial_state(const torch::Tensor& regions);
  torch::Tensor step(const torch::Tensor& regions, const torch::Tensor& prev_tokens, State& state);

  int64_t feature_channels_;
  int64_t vocab_size_;
  int64_t grid_;
  torch::nn::Embedding words_{nullptr};
  SoftAttention attention_{nullptr};
  torch::nn::LSTMCell cell_{nullptr};
  torch::nn::Linear init_h_{nullptr};
  torch::nn::Linear init_c_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(Captioner);

// Rejects targets that carry no word between START and END.
torch::Tensor cccn_caption_loss(CaptionerImpl& captioner, const torch::Tensor& features,
                                const TokenBatch& target);

using StepCaptionLoss =
    std::function<torch::Tensor(std::size_t step, const torch::Tensor& features, const TokenBatch& target)>;

// sum_k step_loss(k, features_k, captions[target(k)]).
torch::Tensor cycle_loss(const std::vector<torch::Tensor>& stage_features,
                         const std::vector<TokenBatch>& captions, const CycleSchedule& schedule,
                         const StepCaptionLoss& step_loss);

}  // namespace c4synth
