#include "c4synth/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "c4synth/config.hpp"
#include "c4synth/error.hpp"

namespace c4synth {

std::vector<std::string> tokenize(std::string_view caption) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : caption) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary()
    : tokens_{"<pad>", "<start>", "<end>"},
      lookup_{{"<pad>", kPadToken}, {"<start>", kStartToken}, {"<end>", kEndToken}} {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<start>" || tokens[2] != "<end>")
    throw VocabularyError("vocabulary must start with <pad>, <start>, <end>");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.lookup_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.lookup_.emplace(v.tokens_[i], static_cast<int64_t>(i));
    if (!inserted) throw VocabularyError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> captions, int64_t min_frequency) {
  std::map<std::string, int64_t> counts;
  for (const auto& c : captions)
    for (auto& w : tokenize(c)) ++counts[w];
  std::vector<std::string> tokens{"<pad>", "<start>", "<end>"};
  for (const auto& [word, n] : counts)
    if (n >= min_frequency) tokens.push_back(word);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VocabularyError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw VocabularyError("cannot write vocabulary " + path.string());
}

bool Vocabulary::contains(std::string_view word) const {
  return lookup_.count(std::string(word)) > 0;
}

int64_t Vocabulary::index(std::string_view word) const {
  auto it = lookup_.find(std::string(word));
  if (it == lookup_.end()) throw VocabularyError("out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::token(int64_t index) const {
  if (index < 0 || index >= size())
    throw VocabularyError("token index " + std::to_string(index) + " out of range");
  return tokens_[static_cast<std::size_t>(index)];
}

std::vector<int64_t> Vocabulary::encode(std::string_view caption) const {
  std::vector<int64_t> ids;
  for (const auto& w : tokenize(caption)) ids.push_back(index(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int64_t> ids) const {
  std::string out;
  for (int64_t id : ids) {
    if (id == kPadToken || id == kStartToken) continue;
    if (id == kEndToken) break;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) joined += t + '\n';
  return sha256_hex(joined);
}

void check_token_range(std::span<const int64_t> ids, int64_t vocab_size) {
  for (int64_t id : ids)
    if (id < 0 || id >= vocab_size)
      throw VocabularyError("token index " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab_size));
}

CaptionTarget CaptionTarget::from_words(std::span<const int64_t> words, int64_t vocab_size,
                                        int64_t max_len) {
  check_token_range(words, vocab_size);
  CaptionTarget t;
  t.one_hot_dim = vocab_size;
  t.token_ids.push_back(kStartToken);
  const auto keep = std::min<std::size_t>(words.size(), static_cast<std::size_t>(max_len - 2));
  t.token_ids.insert(t.token_ids.end(), words.begin(), words.begin() + static_cast<long>(keep));
  t.token_ids.push_back(kEndToken);
  return t;
}

TokenBatch make_token_batch(std::span<const std::vector<int64_t>> sequences) {
  if (sequences.empty()) throw InvalidArgument("empty token batch");
  std::size_t longest = 0;
  for (const auto& s : sequences) {
    if (s.empty()) throw InvalidArgument("empty token sequence");
    longest = std::max(longest, s.size());
  }
  const auto b = static_cast<int64_t>(sequences.size());
  auto ids = torch::full({b, static_cast<int64_t>(longest)}, kPadToken, torch::kLong);
  auto lengths = torch::empty({b}, torch::kLong);
  auto acc = ids.accessor<int64_t, 2>();
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = sequences[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < s.size(); ++j) acc[i][static_cast<int64_t>(j)] = s[j];
    lengths[i] = static_cast<int64_t>(s.size());
  }
  return {ids, lengths};
}

TokenBatch make_target_batch(std::span<const CaptionTarget> targets) {
  std::vector<std::vector<int64_t>> seqs;
  seqs.reserve(targets.size());
  for (const auto& t : targets) seqs.push_back(t.token_ids);
  return make_token_batch(seqs);
}

}  // namespace c4synth
