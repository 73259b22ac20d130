#include "dialqa/finetune.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "dialqa/errors.hpp"
#include "dialqa/ops.hpp"
#include "dialqa/pretrain.hpp"

namespace dialqa {

QAEncoding encode_for_qa(const Vocab& vocab, const ModelConfig& config,
                         const QAExample& question, const Dialogue& dialogue) {
  QAEncoding enc;
  enc.question_ids.push_back(Vocab::kCls);
  const std::size_t q_len = std::min(question.question_tokens.size(), config.max_tokens);
  for (std::size_t i = 0; i < q_len; ++i) {
    enc.question_ids.push_back(vocab.word_id(question.question_tokens[i]));
  }
  for (const auto& u : dialogue.utterances) {
    std::vector<TokenId> seq{Vocab::kCls};
    const auto ids = vocab.encode_utterance(u);
    seq.insert(seq.end(), ids.begin(), ids.end());
    enc.utterance_ids.push_back(std::move(seq));
  }
  enc.span_labels.assign(dialogue.utterances.size(), {0, 0});
  for (const auto& a : question.answers) {
    if (a.utterance_index < dialogue.utterances.size() &&
        a.token_start <= a.token_end &&
        a.token_end < dialogue.utterances[a.utterance_index].tokens.size()) {
      enc.uid_label = a.utterance_index + 1;
      enc.span_labels[a.utterance_index] = {a.token_start + 1, a.token_end + 1};
      break;
    }
  }
  return enc;
}

QAOutputs qa_forward(const EncoderWeights& weights, const ModelConfig& config,
                     const QAEncoding& encoding, const ForwardMode& mode) {
  if (encoding.question_ids.size() < 2 || encoding.utterance_ids.empty()) {
    throw InputError("QA encoding needs a non-empty question and at least one utterance");
  }
  const Tensor question = te_forward(weights, config, encoding.question_ids, {}, mode);
  std::vector<Tensor> utterances;
  std::vector<Tensor> cls{row(question, 0)};
  for (const auto& seq : encoding.utterance_ids) {
    utterances.push_back(te_forward(weights, config, seq, {}, mode));
    cls.push_back(row(utterances.back(), 0));
  }

  QAOutputs out;
  const Tensor utterance_states = tl_forward(weights, config, concat_rows(cls), mode);
  const std::size_t m = encoding.utterance_ids.size();
  out.uid_logits = reshape(add(matmul(utterance_states, weights.uid_w), weights.uid_b), {m + 1});

  const Tensor question_tokens = slice_rows(question, 1, question.dim(0) - 1);
  for (const auto& u : utterances) {
    const Tensor utterance_tokens = slice_rows(u, 1, u.dim(0) - 1);
    const Tensor attended = mha_forward(weights, config, question_tokens, utterance_tokens, mode);
    const std::size_t n1 = attended.dim(0);
    out.left_logits.push_back(
        reshape(add(matmul(attended, weights.span_left_w), weights.span_left_b), {n1}));
    out.right_logits.push_back(
        reshape(add(matmul(attended, weights.span_right_w), weights.span_right_b), {n1}));
  }
  return out;
}

std::vector<double> uid_forward(const EncoderWeights& weights, const ModelConfig& config,
                                const QAEncoding& encoding, const ForwardMode& mode) {
  return softmax_values(qa_forward(weights, config, encoding, mode).uid_logits.data());
}

std::vector<UtteranceSpanScores> span_forward(const EncoderWeights& weights,
                                              const ModelConfig& config,
                                              const QAEncoding& encoding,
                                              const ForwardMode& mode) {
  const QAOutputs out = qa_forward(weights, config, encoding, mode);
  std::vector<UtteranceSpanScores> scores;
  for (std::size_t i = 0; i < out.left_logits.size(); ++i) {
    scores.push_back({softmax_values(out.left_logits[i].data()),
                      softmax_values(out.right_logits[i].data())});
  }
  return scores;
}

Tensor joint_loss(const QAOutputs& outputs, const QAEncoding& encoding) {
  const std::size_t m = outputs.left_logits.size();
  if (encoding.span_labels.size() != m || outputs.uid_logits.size() != m + 1) {
    throw DimensionError("QA outputs and labels disagree on the utterance count");
  }
  const Tensor uid = cross_entropy(outputs.uid_logits, encoding.uid_label);
  if (encoding.uid_label > 0) {
    const std::size_t g = encoding.uid_label - 1;
    const auto [left, right] = encoding.span_labels[g];
    const Tensor terms[] = {uid, cross_entropy(outputs.left_logits[g], left),
                            cross_entropy(outputs.right_logits[g], right)};
    return add_n(terms);
  }
  std::vector<Tensor> null_terms;
  for (std::size_t i = 0; i < m; ++i) {
    null_terms.push_back(cross_entropy(outputs.left_logits[i], 0));
    null_terms.push_back(cross_entropy(outputs.right_logits[i], 0));
  }
  const Tensor terms[] = {uid, scale(add_n(null_terms), 1.0 / static_cast<double>(m))};
  return add_n(terms);
}

Tensor joint_loss(const EncoderWeights& weights, const ModelConfig& config,
                  const QAEncoding& encoding, const ForwardMode& mode) {
  return joint_loss(qa_forward(weights, config, encoding, mode), encoding);
}

Prediction select_answer(std::span<const double> uid_scores,
                         std::span<const UtteranceSpanScores> span_scores) {
  if (uid_scores.size() != span_scores.size() + 1) {
    throw DimensionError("select_answer: " + std::to_string(uid_scores.size()) +
                         " UID scores for " + std::to_string(span_scores.size()) +
                         " utterances");
  }
  Prediction pred;
  pred.uid_scores.assign(uid_scores.begin(), uid_scores.end());
  const std::size_t uid_argmax = static_cast<std::size_t>(
      std::max_element(uid_scores.begin(), uid_scores.end()) - uid_scores.begin());
  if (uid_argmax == 0) return pred;

  std::optional<std::size_t> best_utt;
  std::size_t best_l = 0, best_r = 0;
  for (std::size_t i = 0; i < span_scores.size(); ++i) {
    const auto& s = span_scores[i];
    if (s.left.size() != s.right.size() || s.left.size() < 2) {
      throw DimensionError("span scores for utterance " + std::to_string(i) +
                           " must have matching lengths of at least 2");
    }
    double best = 0.0;
    std::size_t l_star = 0, r_star = 0;
    for (std::size_t l = 1; l < s.left.size(); ++l) {
      for (std::size_t r = l; r < s.right.size(); ++r) {
        const double v = s.left[l] + s.right[r];
        if (l_star == 0 || v > best) {
          best = v;
          l_star = l;
          r_star = r;
        }
      }
    }
    if (!(best > s.left[0] + s.right[0])) continue;
    if (!best_utt || uid_scores[i + 1] > uid_scores[*best_utt + 1]) {
      best_utt = i;
      best_l = l_star;
      best_r = r_star;
    }
  }
  if (!best_utt) return pred;
  pred.utterance_index = *best_utt + 1;
  pred.token_start = best_l - 1;
  pred.token_end = best_r - 1;
  return pred;
}

Prediction predict(const EncoderWeights& weights, const ModelConfig& config,
                   const QAEncoding& encoding) {
  const QAOutputs out = qa_forward(weights, config, encoding, ForwardMode::inference());
  std::vector<UtteranceSpanScores> scores;
  for (std::size_t i = 0; i < out.left_logits.size(); ++i) {
    scores.push_back({softmax_values(out.left_logits[i].data()),
                      softmax_values(out.right_logits[i].data())});
  }
  const auto uid = softmax_values(out.uid_logits.data());
  return select_answer(uid, scores);
}

PredictionRecord to_record(const Prediction& prediction, const QAExample& question,
                           const Dialogue& dialogue) {
  PredictionRecord rec;
  rec.qid = question.qid;
  if (!prediction.has_answer()) return rec;
  const std::size_t u = prediction.utterance_index - 1;
  if (u >= dialogue.utterances.size()) throw IndexError("prediction utterance out of range");
  rec.utterance_index = static_cast<int>(u);
  rec.token_start = static_cast<int>(*prediction.token_start);
  rec.token_end = static_cast<int>(*prediction.token_end);
  rec.text = join_tokens(dialogue.utterances[u].tokens, *prediction.token_start,
                         *prediction.token_end + 1);
  return rec;
}

std::string to_json_line(const PredictionRecord& record) {
  nlohmann::ordered_json j;
  j["qid"] = record.qid;
  j["utterance_index"] = record.utterance_index;
  j["token_start"] = record.token_start;
  j["token_end"] = record.token_end;
  j["text"] = record.text;
  return j.dump();
}

PredictionRecord parse_prediction_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line.begin(), line.end());
    PredictionRecord rec;
    rec.qid = j.at("qid").get<std::string>();
    rec.utterance_index = j.at("utterance_index").get<int>();
    rec.token_start = j.at("token_start").get<int>();
    rec.token_end = j.at("token_end").get<int>();
    rec.text = j.at("text").get<std::string>();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed prediction line: ") + e.what());
  }
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open predictions file " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_prediction_line(line));
  }
  return out;
}

void save_predictions(std::span<const PredictionRecord> records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write predictions file " + path);
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

}  // namespace dialqa
