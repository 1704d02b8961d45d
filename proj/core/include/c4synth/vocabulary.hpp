#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace c4synth {

inline constexpr int64_t kPadToken = 0;
inline constexpr int64_t kStartToken = 1;
inline constexpr int64_t kEndToken = 2;

// Lower-cased alphanumeric words; everything else separates.
std::vector<std::string> tokenize(std::string_view caption);

// Index <-> word map. Indices 0..2 are <pad>, <start>, <end>; the rest are
// sorted alphabetically so a vocabulary is a pure function of its word set.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(std::span<const std::string> captions, int64_t min_frequency = 1);
  // One token per line, line number = index.
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  void save(const std::filesystem::path& path) const;

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  bool contains(std::string_view word) const;
  // Throws VocabularyError for unknown words.
  int64_t index(std::string_view word) const;
  const std::string& token(int64_t index) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Word indices of a caption, without start/end markers.
  std::vector<int64_t> encode(std::string_view caption) const;
  std::string decode(std::span<const int64_t> ids) const;

  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> lookup_;
};

// One-hot target sequence for the captioner: START w1 .. wn END.
struct CaptionTarget {
  std::vector<int64_t> token_ids;
  int64_t one_hot_dim = 0;

  static CaptionTarget from_words(std::span<const int64_t> words, int64_t vocab_size,
                                  int64_t max_len);
};

// Right-padded batch of token sequences (B x L, int64) and their lengths.
struct TokenBatch {
  torch::Tensor ids;
  torch::Tensor lengths;

  int64_t batch() const { return ids.size(0); }
};

TokenBatch make_token_batch(std::span<const std::vector<int64_t>> sequences);
TokenBatch make_target_batch(std::span<const CaptionTarget> targets);
// Throws VocabularyError when any id is outside [0, vocab_size).
void check_token_range(std::span<const int64_t> ids, int64_t vocab_size);

}  // namespace c4synth
