#include "dialqa/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "dialqa/errors.hpp"

namespace dialqa {
namespace {

constexpr std::string_view kSpecialNames[] = {"[CLS]", "[MASK]", "[PAD]", "[UNK]"};

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string speaker_token(std::string_view speaker) {
  return std::string(Vocab::kSpeakerPrefix) + lowercase(speaker);
}

Vocab Vocab::build(std::span<const Dialogue> corpus, std::size_t min_freq,
                   std::span<const std::vector<std::string>> extra_texts) {
  if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  if (min_freq < 1) throw ConfigError("min_freq must be at least 1");
  std::set<std::string> speakers;
  std::map<std::string, std::size_t> counts;
  for (const auto& dialogue : corpus) {
    for (const auto& u : dialogue.utterances) {
      speakers.insert(speaker_token(u.speaker));
      for (const auto& w : u.tokens) ++counts[lowercase(w)];
    }
  }
  for (const auto& text : extra_texts) {
    for (const auto& w : text) ++counts[lowercase(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> words;
  for (auto& [w, n] : counts) {
    if (n >= min_freq) words.emplace_back(w, n);
  }
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens(std::begin(kSpecialNames), std::end(kSpecialNames));
  tokens.insert(tokens.end(), speakers.begin(), speakers.end());
  for (auto& [w, n] : words) tokens.push_back(w);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < static_cast<std::size_t>(kNumSpecial)) {
    throw InputError("vocabulary must start with the four special tokens");
  }
  for (TokenId i = 0; i < kNumSpecial; ++i) {
    if (tokens[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
      throw InputError("vocabulary id " + std::to_string(i) + " must be " +
                       std::string(kSpecialNames[i]));
    }
  }
  Vocab vocab;
  vocab.id_to_token_ = std::move(tokens);
  bool in_speakers = true;
  vocab.first_word_id_ = static_cast<TokenId>(vocab.id_to_token_.size());
  for (std::size_t i = 0; i < vocab.id_to_token_.size(); ++i) {
    const auto& tok = vocab.id_to_token_[i];
    if (i >= static_cast<std::size_t>(kNumSpecial)) {
      const bool speaker = tok.starts_with(kSpeakerPrefix);
      if (speaker && !in_speakers) {
        throw InputError("speaker token '" + tok + "' after the first word token");
      }
      if (!speaker && in_speakers) {
        in_speakers = false;
        vocab.first_word_id_ = static_cast<TokenId>(i);
      }
    }
    if (!vocab.token_to_id_.emplace(tok, static_cast<TokenId>(i)).second) {
      throw InputError("duplicate vocabulary token '" + tok + "'");
    }
  }
  return vocab;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (const auto& tok : id_to_token_) out << tok << '\n';
}

TokenId Vocab::word_id(std::string_view word) const {
  const auto it = token_to_id_.find(lowercase(word));
  if (it == token_to_id_.end() || it->second < first_word_id_) return kUnk;
  return it->second;
}

TokenId Vocab::speaker_id(std::string_view speaker) const {
  const auto it = token_to_id_.find(speaker_token(speaker));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                     std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode_utterance(const Utterance& utterance) const {
  std::vector<TokenId> ids;
  ids.reserve(utterance.tokens.size() + 1);
  ids.push_back(speaker_id(utterance.speaker));
  for (const auto& w : utterance.tokens) ids.push_back(word_id(w));
  return ids;
}

std::vector<TokenId> Vocab::encode_words(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(word_id(w));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

}  // namespace dialqa
