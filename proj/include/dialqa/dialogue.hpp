#ifndef DIALQA_DIALOGUE_HPP
#define DIALQA_DIALOGUE_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dialqa {

// Lowercases ASCII letters and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end);
std::string join_tokens(const std::vector<std::string>& tokens);

struct Utterance {
  std::string speaker;
  std::vector<std::string> tokens;

  bool operator==(const Utterance&) const = default;
};

// One scene.
struct Dialogue {
  int episode_id = 1;
  std::string scene_id;
  std::vector<Utterance> utterances;

  bool operator==(const Dialogue&) const = default;
};

// Inclusive token range inside a single utterance.
struct AnswerSpan {
  std::size_t utterance_index = 0;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string text;

  bool operator==(const AnswerSpan&) const = default;
};

enum class QuestionType { kWhat, kWho, kWhen, kWhere, kWhy, kHow, kOther };

std::string_view question_type_name(QuestionType type);
// First token whose leading letters form an interrogative decides the type.
QuestionType classify_question(const std::vector<std::string>& tokens);

struct QAExample {
  std::string qid;
  std::vector<std::string> question_tokens;
  std::vector<AnswerSpan> answers;  // empty: unanswerable
  QuestionType question_type = QuestionType::kOther;

  bool answerable() const { return !answers.empty(); }
  bool operator==(const QAExample&) const = default;
};

struct DialogueRecord {
  Dialogue dialogue;
  std::vector<QAExample> questions;

  bool operator==(const DialogueRecord&) const = default;
};

using Corpus = std::vector<DialogueRecord>;

struct CorpusSplit {
  Corpus training;
  Corpus development;
  Corpus evaluation;
  std::vector<Dialogue> pretrain_extra;
};

// Parses the corpus JSON schema. `source` names the input in error messages.
Corpus parse_corpus(std::string_view json_text, std::string_view source = "<memory>");
Corpus load_corpus(const std::filesystem::path& path);
std::string serialize_corpus(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Throws ValidationError when a span lies outside its utterance or its text
// disagrees with the referenced tokens.
void validate_span(const Dialogue& dialogue, const AnswerSpan& span,
                   std::string_view qid);

// Episodes <= train_max_episode train, <= dev_max_episode develop, the rest
// evaluate.
CorpusSplit split_by_episode(const Corpus& corpus, int train_max_episode,
                             int dev_max_episode);

// Keeps the first max_utterances utterances and the first max_tokens tokens
// of each. Gold spans outside the kept region are dropped.
DialogueRecord truncate(const DialogueRecord& record, std::size_t max_utterances,
                        std::size_t max_tokens);
Dialogue truncate(const Dialogue& dialogue, std::size_t max_utterances,
                  std::size_t max_tokens);

std::vector<Dialogue> dialogues_of(const Corpus& corpus);

}  // namespace dialqa

#endif  // DIALQA_DIALOGUE_HPP
