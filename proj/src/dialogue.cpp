#include "dialqa/dialogue.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dialqa/errors.hpp"

namespace dialqa {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < tokens.size(); ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  return join_tokens(tokens, 0, tokens.size());
}

std::string_view question_type_name(QuestionType type) {
  switch (type) {
    case QuestionType::kWhat: return "what";
    case QuestionType::kWho: return "who";
    case QuestionType::kWhen: return "when";
    case QuestionType::kWhere: return "where";
    case QuestionType::kWhy: return "why";
    case QuestionType::kHow: return "how";
    case QuestionType::kOther: break;
  }
  return "other";
}

QuestionType classify_question(const std::vector<std::string>& tokens) {
  static constexpr std::array<std::pair<std::string_view, QuestionType>, 6> kWords{{
      {"what", QuestionType::kWhat},
      {"who", QuestionType::kWho},
      {"when", QuestionType::kWhen},
      {"where", QuestionType::kWhere},
      {"why", QuestionType::kWhy},
      {"how", QuestionType::kHow},
  }};
  for (const auto& token : tokens) {
    std::string letters;
    for (char c : token) {
      if (!std::isalpha(static_cast<unsigned char>(c))) break;
      letters.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    for (const auto& [word, type] : kWords) {
      if (letters == word) return type;
    }
  }
  return QuestionType::kOther;
}

void validate_span(const Dialogue& dialogue, const AnswerSpan& span,
                   std::string_view qid) {
  const std::string where = "question '" + std::string(qid) + "'";
  if (span.utterance_index >= dialogue.utterances.size()) {
    throw ValidationError(where + ": utterance_index " +
                          std::to_string(span.utterance_index) + " out of range (" +
                          std::to_string(dialogue.utterances.size()) + " utterances)");
  }
  const auto& tokens = dialogue.utterances[span.utterance_index].tokens;
  if (span.token_start > span.token_end || span.token_end >= tokens.size()) {
    throw ValidationError(where + ": token range [" + std::to_string(span.token_start) +
                          ", " + std::to_string(span.token_end) + "] invalid for utterance of " +
                          std::to_string(tokens.size()) + " tokens");
  }
  const std::string expected = join_tokens(tokens, span.token_start, span.token_end + 1);
  if (join_tokens(tokenize(span.text)) != expected) {
    throw ValidationError(where + ": answer text '" + span.text +
                          "' does not match tokens '" + expected + "'");
  }
}

namespace {

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

template <typename T>
T field(const json& object, const char* key, const std::string& where) {
  if (!object.is_object() || !object.contains(key)) {
    throw ValidationError(where + ": missing field '" + key + "'");
  }
  try {
    return object.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

std::size_t index_field(const json& object, const char* key, const std::string& where) {
  const auto value = field<long long>(object, key, where);
  if (value < 0) throw ValidationError(where + ": field '" + key + "' is negative");
  return static_cast<std::size_t>(value);
}

}  // namespace

Corpus parse_corpus(std::string_view json_text, std::string_view source) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(source) + ":" +
                     std::to_string(line_of_offset(json_text, e.byte == 0 ? 0 : e.byte - 1)) +
                     ": malformed JSON: " + e.what());
  }
  const std::string src(source);
  if (!root.is_object() || !root.contains("dialogues") || !root["dialogues"].is_array()) {
    throw ValidationError(src + ": top level must be an object with a 'dialogues' array");
  }
  Corpus corpus;
  std::size_t d_index = 0;
  for (const auto& jd : root["dialogues"]) {
    const std::string where = src + ": dialogues[" + std::to_string(d_index++) + "]";
    DialogueRecord record;
    record.dialogue.episode_id = field<int>(jd, "episode_id", where);
    if (record.dialogue.episode_id < 1) {
      throw ValidationError(where + ": episode_id must be positive");
    }
    record.dialogue.scene_id = field<std::string>(jd, "scene_id", where);
    const auto utterances = field<json>(jd, "utterances", where);
    if (!utterances.is_array() || utterances.empty()) {
      throw ValidationError(where + ": 'utterances' must be a non-empty array");
    }
    for (const auto& ju : utterances) {
      Utterance u;
      u.speaker = field<std::string>(ju, "speaker", where);
      u.tokens = tokenize(field<std::string>(ju, "text", where));
      if (u.tokens.empty()) {
        throw ValidationError(where + ": utterance " +
                              std::to_string(record.dialogue.utterances.size()) +
                              " has no tokens");
      }
      if (u.speaker.find('\n') != std::string::npos) {
        throw ValidationError(where + ": speaker names may not contain newlines");
      }
      record.dialogue.utterances.push_back(std::move(u));
    }
    if (jd.contains("questions")) {
      for (const auto& jq : jd.at("questions")) {
        QAExample q;
        q.qid = field<std::string>(jq, "qid", where);
        const std::string qwhere = where + " question '" + q.qid + "'";
        q.question_tokens = tokenize(field<std::string>(jq, "question", qwhere));
        if (q.question_tokens.empty()) throw ValidationError(qwhere + ": empty question");
        q.question_type = classify_question(q.question_tokens);
        for (const auto& ja : field<json>(jq, "answers", qwhere)) {
          AnswerSpan span;
          span.utterance_index = index_field(ja, "utterance_index", qwhere);
          span.token_start = index_field(ja, "token_start", qwhere);
          span.token_end = index_field(ja, "token_end", qwhere);
          span.text = field<std::string>(ja, "text", qwhere);
          validate_span(record.dialogue, span, q.qid);
          span.text = join_tokens(tokenize(span.text));
          q.answers.push_back(std::move(span));
        }
        record.questions.push_back(std::move(q));
      }
    }
    corpus.push_back(std::move(record));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str(), path.string());
}

std::string serialize_corpus(const Corpus& corpus) {
  json dialogues = json::array();
  for (const auto& record : corpus) {
    json jd;
    jd["episode_id"] = record.dialogue.episode_id;
    jd["scene_id"] = record.dialogue.scene_id;
    jd["utterances"] = json::array();
    for (const auto& u : record.dialogue.utterances) {
      jd["utterances"].push_back({{"speaker", u.speaker}, {"text", join_tokens(u.tokens)}});
    }
    jd["questions"] = json::array();
    for (const auto& q : record.questions) {
      json jq;
      jq["qid"] = q.qid;
      jq["question"] = join_tokens(q.question_tokens);
      jq["answers"] = json::array();
      for (const auto& a : q.answers) {
        jq["answers"].push_back({{"utterance_index", a.utterance_index},
                                 {"token_start", a.token_start},
                                 {"token_end", a.token_end},
                                 {"text", a.text}});
      }
      jd["questions"].push_back(std::move(jq));
    }
    dialogues.push_back(std::move(jd));
  }
  return json{{"dialogues", std::move(dialogues)}}.dump(1) + "\n";
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write corpus file " + path.string());
  out << serialize_corpus(corpus);
}

CorpusSplit split_by_episode(const Corpus& corpus, int train_max_episode,
                             int dev_max_episode) {
  if (train_max_episode >= dev_max_episode) {
    throw ConfigError("split_by_episode requires train_max_episode < dev_max_episode");
  }
  CorpusSplit split;
  for (const auto& record : corpus) {
    const int ep = record.dialogue.episode_id;
    if (ep <= train_max_episode) {
      split.training.push_back(record);
    } else if (ep <= dev_max_episode) {
      split.development.push_back(record);
    } else {
      split.evaluation.push_back(record);
    }
  }
  return split;
}

Dialogue truncate(const Dialogue& dialogue, std::size_t max_utterances,
                  std::size_t max_tokens) {
  if (max_utterances == 0 || max_tokens == 0) {
    throw ConfigError("truncate limits must be positive");
  }
  Dialogue out;
  out.episode_id = dialogue.episode_id;
  out.scene_id = dialogue.scene_id;
  const std::size_t keep = std::min(max_utterances, dialogue.utterances.size());
  for (std::size_t i = 0; i < keep; ++i) {
    Utterance u = dialogue.utterances[i];
    if (u.tokens.size() > max_tokens) u.tokens.resize(max_tokens);
    out.utterances.push_back(std::move(u));
  }
  return out;
}

DialogueRecord truncate(const DialogueRecord& record, std::size_t max_utterances,
                        std::size_t max_tokens) {
  DialogueRecord out;
  out.dialogue = truncate(record.dialogue, max_utterances, max_tokens);
  for (const auto& q : record.questions) {
    QAExample kept = q;
    kept.answers.clear();
    for (const auto& a : q.answers) {
      if (a.utterance_index < max_utterances && a.token_end < max_tokens) {
        kept.answers.push_back(a);
      }
    }
    out.questions.push_back(std::move(kept));
  }
  return out;
}

std::vector<Dialogue> dialogues_of(const Corpus& corpus) {
  std::vector<Dialogue> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back(r.dialogue);
  return out;
}

}  // namespace dialqa
