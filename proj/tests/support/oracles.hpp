// Reference implementations and fixtures shared by unit and acceptance tests.
#ifndef DIALQA_TESTS_ORACLES_HPP
#define DIALQA_TESTS_ORACLES_HPP

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "dialqa/dialogue.hpp"
#include "dialqa/evaluation.hpp"
#include "dialqa/finetune.hpp"
#include "dialqa/ops.hpp"
#include "dialqa/random.hpp"

namespace dialqa::testing {

// Enumerates every (utterance, l, r) candidate and applies the selection rule
// literally.
inline Prediction brute_force_select(const std::vector<double>& uid,
                                     const std::vector<UtteranceSpanScores>& spans) {
  Prediction p;
  p.uid_scores = uid;
  std::size_t arg = 0;
  for (std::size_t k = 1; k < uid.size(); ++k)
    if (uid[k] > uid[arg]) arg = k;
  if (arg == 0) return p;
  bool found = false;
  std::size_t bi = 0, bl = 0, br = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const std::size_t n = spans[i].left.size() - 1;
    double best = -INFINITY;
    std::size_t cl = 0, cr = 0;
    for (std::size_t l = 1; l <= n; ++l)
      for (std::size_t r = 1; r <= n; ++r)
        if (l <= r && spans[i].left[l] + spans[i].right[r] > best) {
          best = spans[i].left[l] + spans[i].right[r];
          cl = l;
          cr = r;
        }
    if (best <= spans[i].left[0] + spans[i].right[0]) continue;
    if (!found || uid[i + 1] > uid[bi + 1]) {
      found = true;
      bi = i;
      bl = cl;
      br = cr;
    }
  }
  if (!found) return p;
  p.utterance_index = bi + 1;
  p.token_start = bl - 1;
  p.token_end = br - 1;
  return p;
}

inline std::vector<double> random_probs(Rng& rng, std::size_t n, bool coarse) {
  std::vector<double> logits(n);
  // Coarse values make ties common so tie-breaking gets exercised.
  for (auto& x : logits) x = coarse ? static_cast<double>(rng.uniform_index(3)) : rng.normal();
  return softmax_values(logits);
}

struct SelectTrialResult {
  std::size_t trials = 0;
  std::size_t mismatches = 0;
  std::size_t answered = 0;
  std::size_t invalid_spans = 0;
};

// Random score grids with m <= 4 utterances of n <= 5 tokens.
inline SelectTrialResult run_select_trials(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed);
  SelectTrialResult out;
  for (std::size_t t = 0; t < trials; ++t) {
    const bool coarse = t % 2 == 1;
    const std::size_t m = 1 + rng.uniform_index(4);
    auto uid = random_probs(rng, m + 1, coarse);
    std::vector<UtteranceSpanScores> spans;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t n = 1 + rng.uniform_index(5);
      spans.push_back({random_probs(rng, n + 1, coarse), random_probs(rng, n + 1, coarse)});
    }
    const auto got = select_answer(uid, spans);
    ++out.trials;
    if (!(got == brute_force_select(uid, spans))) ++out.mismatches;
    if (got.has_answer()) {
      ++out.answered;
      const auto n = spans[got.utterance_index - 1].left.size() - 1;
      if (!(*got.token_start <= *got.token_end && *got.token_end < n)) ++out.invalid_spans;
    }
  }
  return out;
}

// Six questions scored by hand. Per question (EM, SM, UM):
//   q1 exact                              1, 1,   1
//   q2 "the central perk"                 0, 0.8, 1   (P = 2/3, R = 1)
//   q3 matches the second of two golds    1, 1,   1
//   q4 wrong words, wrong utterance       0, 0,   0
//   q5 unanswerable, no answer predicted  1, 1,   1
//   q6 right words, wrong utterance       0, 1,   0
struct MetricFixture {
  std::vector<QAExample> gold;
  std::vector<PredictionRecord> predictions;
  double em = 100.0 * 3.0 / 6.0;
  double sm = 100.0 * 4.8 / 6.0;
  double um = 100.0 * 4.0 / 6.0;
  // what: q1 q2, who: q3 q4, where: q5 q6
  std::vector<std::tuple<std::string, double, double, double>> per_type{
      {"what", 50.0, 90.0, 100.0}, {"who", 50.0, 50.0, 50.0}, {"where", 50.0, 100.0, 50.0}};
};

inline MetricFixture metric_fixture() {
  auto span = [](std::size_t utt, const std::string& text) {
    return AnswerSpan{utt, 0, tokenize(text).size() - 1, text};
  };
  auto gold = [](const std::string& qid, QuestionType type, std::vector<AnswerSpan> answers) {
    QAExample q;
    q.qid = qid;
    q.question_tokens = {"q"};
    q.question_type = type;
    q.answers = std::move(answers);
    return q;
  };
  auto pred = [](const std::string& qid, int utt, const std::string& text) {
    PredictionRecord p;
    p.qid = qid;
    if (utt >= 0) {
      p.utterance_index = utt;
      p.token_start = 0;
      p.token_end = static_cast<int>(tokenize(text).size()) - 1;
      p.text = text;
    }
    return p;
  };
  MetricFixture f;
  f.gold = {
      gold("q1", QuestionType::kWhat, {span(2, "central perk")}),
      gold("q2", QuestionType::kWhat, {span(2, "central perk")}),
      gold("q3", QuestionType::kWho, {span(1, "ross"), span(3, "ross geller")}),
      gold("q4", QuestionType::kWho, {span(0, "monica")}),
      gold("q5", QuestionType::kWhere, {}),
      gold("q6", QuestionType::kWhere, {span(1, "coffee")}),
  };
  f.predictions = {
      pred("q1", 2, "central perk"), pred("q2", 2, "the central perk"),
      pred("q3", 3, "ross geller"),  pred("q4", 4, "rachel"),
      pred("q5", -1, ""),            pred("q6", 2, "coffee"),
  };
  return f;
}

}  // namespace dialqa::testing

#endif  // DIALQA_TESTS_ORACLES_HPP
