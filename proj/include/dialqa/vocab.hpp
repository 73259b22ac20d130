#ifndef DIALQA_VOCAB_HPP
#define DIALQA_VOCAB_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dialqa/dialogue.hpp"

namespace dialqa {

using TokenId = std::int32_t;

// Closed word vocabulary. Ids 0-3 are the special tokens, followed by one
// token per speaker ("SPK:<name>", sorted), followed by words ordered by
// descending frequency then lexicographically.
class Vocab {
 public:
  static constexpr TokenId kCls = 0;
  static constexpr TokenId kMask = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kNumSpecial = 4;
  static constexpr std::string_view kSpeakerPrefix = "SPK:";

  // `extra_texts` (question token lists) add word counts but no speakers.
  static Vocab build(std::span<const Dialogue> corpus, std::size_t min_freq = 1,
                     std::span<const std::vector<std::string>> extra_texts = {});
  // Reconstructs a vocabulary from its id-ordered token list.
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  TokenId word_id(std::string_view word) const;  // UNK when absent
  TokenId speaker_id(std::string_view speaker) const;  // UNK when absent
  const std::string& token(TokenId id) const;

  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecial; }
  bool is_speaker(TokenId id) const {
    return id >= kNumSpecial && id < first_word_id_;
  }
  TokenId first_word_id() const { return first_word_id_; }
  std::size_t num_speakers() const {
    return static_cast<std::size_t>(first_word_id_ - kNumSpecial);
  }

  // [speaker, w_1, ..., w_n]
  std::vector<TokenId> encode_utterance(const Utterance& utterance) const;
  std::vector<TokenId> encode_words(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  TokenId first_word_id_ = kNumSpecial;
};

std::string speaker_token(std::string_view speaker);

}  // namespace dialqa

#endif  // DIALQA_VOCAB_HPP
