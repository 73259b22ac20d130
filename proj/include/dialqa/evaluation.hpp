#ifndef DIALQA_EVALUATION_HPP
#define DIALQA_EVALUATION_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialqa/dialogue.hpp"
#include "dialqa/finetune.hpp"

namespace dialqa {

// Lowercase and collapse whitespace. Articles and punctuation are kept.
std::string normalize_answer(std::string_view text);

// A missing prediction (nullopt) is the no-answer prediction; it matches
// exactly when the gold list is empty.
double exact_match(const std::optional<std::string>& prediction,
                   std::span<const std::string> gold_texts);
// Bag-of-tokens F1, maximized over golds.
double span_f1(const std::optional<std::string>& prediction,
               std::span<const std::string> gold_texts);
double utterance_match(std::optional<std::size_t> predicted_utterance,
                       std::span<const AnswerSpan> gold_answers);

struct MetricRow {
  double em = 0.0;  // percent
  double sm = 0.0;
  double um = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  double em = 0.0;
  double sm = 0.0;
  double um = 0.0;
  std::size_t total = 0;
  std::map<std::string, MetricRow> per_type;

  std::string to_json() const;
  // Aligned text table: one row per question type plus the aggregate.
  std::string to_table() const;
};

// Every gold qid needs exactly one prediction and vice versa.
MetricReport evaluate(std::span<const PredictionRecord> predictions,
                      std::span<const QAExample> gold);

}  // namespace dialqa

#endif  // DIALQA_EVALUATION_HPP
