#ifndef DIALQA_FINETUNE_HPP
#define DIALQA_FINETUNE_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialqa/dialogue.hpp"
#include "dialqa/encoder.hpp"
#include "dialqa/vocab.hpp"

namespace dialqa {

// Slot 0 of the span heads is the null slot (the speaker position); slot k
// addresses word k-1 of the utterance.
struct QAEncoding {
  std::vector<TokenId> question_ids;                // [CLS] + Q
  std::vector<std::vector<TokenId>> utterance_ids;  // [CLS] + speaker + words
  std::size_t uid_label = 0;                        // 0: no answer, i: U_i
  std::vector<std::pair<std::size_t, std::size_t>> span_labels;
};

// Questions longer than max_tokens keep their first max_tokens words. The
// first gold span that lies inside the (already truncated) dialogue becomes
// the target.
QAEncoding encode_for_qa(const Vocab& vocab, const ModelConfig& config,
                         const QAExample& question, const Dialogue& dialogue);

struct QAOutputs {
  Tensor uid_logits;                // [m + 1]
  std::vector<Tensor> left_logits;  // per utterance [n_i + 1]
  std::vector<Tensor> right_logits;
};

// One encoder pass per sequence, shared by both heads.
QAOutputs qa_forward(const EncoderWeights& weights, const ModelConfig& config,
                     const QAEncoding& encoding, const ForwardMode& mode);

struct UtteranceSpanScores {
  std::vector<double> left;
  std::vector<double> right;
};

// Softmax over the m+1 utterance-ID logits.
std::vector<double> uid_forward(const EncoderWeights& weights, const ModelConfig& config,
                                const QAEncoding& encoding,
                                const ForwardMode& mode = ForwardMode::inference());
// Per-utterance softmax of SL and SR.
std::vector<UtteranceSpanScores> span_forward(
    const EncoderWeights& weights, const ModelConfig& config, const QAEncoding& encoding,
    const ForwardMode& mode = ForwardMode::inference());

// CE(uid) + CE(left, gold) + CE(right, gold) for an answerable question; for
// an unanswerable one the span term is the mean over utterances of the
// null-slot cross-entropies.
Tensor joint_loss(const EncoderWeights& weights, const ModelConfig& config,
                  const QAEncoding& encoding, const ForwardMode& mode);
Tensor joint_loss(const QAOutputs& outputs, const QAEncoding& encoding);

struct Prediction {
  std::size_t utterance_index = 0;  // 0: no answer, i: U_i
  std::optional<std::size_t> token_start;  // 0-based word indices
  std::optional<std::size_t> token_end;
  std::vector<double> uid_scores;

  bool has_answer() const { return utterance_index != 0; }
  bool operator==(const Prediction&) const = default;
};

// Best (l, r) with 1 <= l <= r <= n_i per utterance; an utterance bears a
// span when that pair outscores the null pair. The span-bearing utterance
// with the highest UID score wins unless UID's argmax is 0. Ties go to the
// lowest utterance index, then lowest l, then lowest r.
Prediction select_answer(std::span<const double> uid_scores,
                         std::span<const UtteranceSpanScores> span_scores);

Prediction predict(const EncoderWeights& weights, const ModelConfig& config,
                   const QAEncoding& encoding);

// Serialized prediction: utterance_index is 0-based, -1 for no answer.
struct PredictionRecord {
  std::string qid;
  int utterance_index = -1;
  int token_start = -1;
  int token_end = -1;
  std::string text;

  bool has_answer() const { return utterance_index >= 0; }
  bool operator==(const PredictionRecord&) const = default;
};

PredictionRecord to_record(const Prediction& prediction, const QAExample& question,
                           const Dialogue& dialogue);
std::string to_json_line(const PredictionRecord& record);
PredictionRecord parse_prediction_line(std::string_view line);
std::vector<PredictionRecord> load_predictions(const std::string& path);
void save_predictions(std::span<const PredictionRecord> records, const std::string& path);

}  // namespace dialqa

#endif  // DIALQA_FINETUNE_HPP
