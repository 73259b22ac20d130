#include <gtest/gtest.h>

#include <set>

#include "dialqa/errors.hpp"
#include "dialqa/dialogue.hpp"
#include "dialqa/synth.hpp"

using namespace dialqa;

namespace {

const char* kMinimal = R"({"dialogues": [{"episode_id": 3, "scene_id": "s01",
  "utterances": [{"speaker": "Ross", "text": "We were on a BREAK"},
                 {"speaker": "Rachel", "text": "no we were not"}],
  "questions": [{"qid": "q1", "question": "Who was on a break ?",
                 "answers": [{"utterance_index": 0, "token_start": 0, "token_end": 0, "text": "we"}]}]}]})";

Corpus fixture() {
  Corpus c;
  for (int d = 0; d < 3; ++d) {
    DialogueRecord r;
    r.dialogue.episode_id = d + 1;
    r.dialogue.scene_id = "scene" + std::to_string(d);
    for (int u = 0; u < 3; ++u) {
      r.dialogue.utterances.push_back(
          {u % 2 ? "Joey" : "Chandler", tokenize("line " + std::to_string(u) + " of scene " + std::to_string(d))});
    }
    c.push_back(r);
  }
  const int per[] = {2, 2, 1};
  for (int d = 0; d < 3; ++d) {
    for (int q = 0; q < per[d]; ++q) {
      QAExample ex;
      ex.qid = "d" + std::to_string(d) + "q" + std::to_string(q);
      ex.question_tokens = tokenize("what line is it ?");
      ex.question_type = QuestionType::kWhat;
      if (q == 0) ex.answers.push_back({static_cast<std::size_t>(q + 1), 0, 1, join_tokens(c[d].dialogue.utterances[q + 1].tokens, 0, 2)});
      c[d].questions.push_back(ex);
    }
  }
  return c;
}

}  // namespace

TEST(Corpus, ParsesMinimalFile) {
  const auto c = parse_corpus(kMinimal);
  ASSERT_EQ(c.size(), 1u);
  const auto& d = c[0].dialogue;
  EXPECT_EQ(d.episode_id, 3);
  EXPECT_EQ(d.scene_id, "s01");
  ASSERT_EQ(d.utterances.size(), 2u);
  EXPECT_EQ(d.utterances[0].speaker, "Ross");
  EXPECT_EQ(d.utterances[0].tokens, (std::vector<std::string>{"we", "were", "on", "a", "break"}));
  ASSERT_EQ(c[0].questions.size(), 1u);
  EXPECT_EQ(c[0].questions[0].question_type, QuestionType::kWho);
  EXPECT_TRUE(c[0].questions[0].answerable());
}

TEST(Corpus, SpanOutOfRangeNamesQuestion) {
  std::string bad = kMinimal;
  bad.replace(bad.find("\"token_end\": 0"), 14, "\"token_end\": 5");
  try {
    parse_corpus(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("q1"), std::string::npos) << e.what();
  }
}

TEST(Corpus, SpanTextMismatchRejected) {
  std::string bad = kMinimal;
  bad.replace(bad.find("\"text\": \"we\""), 12, "\"text\": \"no\"");
  EXPECT_THROW(parse_corpus(bad), ValidationError);
}

TEST(Corpus, MalformedJsonReportsLine) {
  try {
    parse_corpus("{\n\"dialogues\": [\n  {,\n]}", "bad.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:3"), std::string::npos) << e.what();
  }
}

TEST(Corpus, RoundTrip) {
  const auto c = fixture();
  EXPECT_EQ(parse_corpus(serialize_corpus(c)), c);
  const auto s = generate_synthetic_corpus({});
  EXPECT_EQ(parse_corpus(serialize_corpus(s)), s);
}

TEST(Split, DefaultEpisodeRanges) {
  Corpus c;
  for (int ep = 1; ep <= 30; ++ep) {
    DialogueRecord r;
    r.dialogue.episode_id = ep;
    r.dialogue.scene_id = "e" + std::to_string(ep);
    r.dialogue.utterances.push_back({"Ross", {"hi"}});
    c.push_back(r);
  }
  const auto s = split_by_episode(c, 20, 22);
  EXPECT_EQ(s.training.size(), 20u);
  EXPECT_EQ(s.development.size(), 2u);
  EXPECT_EQ(s.evaluation.size(), 8u);
  EXPECT_EQ(s.training.front().dialogue.episode_id, 1);
  EXPECT_EQ(s.development.front().dialogue.episode_id, 21);
  EXPECT_THROW(split_by_episode(c, 22, 22), ConfigError);
}

TEST(Split, DisjointEpisodes) {
  SynthOptions o;
  o.episodes = 30;
  o.scenes_per_episode = 3;
  const auto s = split_by_episode(generate_synthetic_corpus(o), 20, 22);
  std::set<int> a, b, e;
  for (const auto& r : s.training) a.insert(r.dialogue.episode_id);
  for (const auto& r : s.development) b.insert(r.dialogue.episode_id);
  for (const auto& r : s.evaluation) e.insert(r.dialogue.episode_id);
  for (int ep : b) EXPECT_FALSE(a.count(ep) || e.count(ep));
  for (int ep : a) EXPECT_FALSE(e.count(ep));
  EXPECT_EQ(a.size() + b.size() + e.size(), 30u);
}

TEST(Truncate, IdentityWithinLimits) {
  const auto c = fixture();
  EXPECT_EQ(truncate(c[0], 10, 10), c[0]);
}

TEST(Truncate, KeepsPrefixInOrder) {
  Dialogue d;
  for (int i = 0; i < 5; ++i) d.utterances.push_back({"Ross", {"u" + std::to_string(i), "x", "y"}});
  const auto t = truncate(d, 3, 2);
  ASSERT_EQ(t.utterances.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(t.utterances[i].tokens, (std::vector<std::string>{"u" + std::to_string(i), "x"}));
  }
  EXPECT_EQ(truncate(t, 3, 2), t);
}

TEST(Truncate, DropsSpansOutsideKeptRegion) {
  DialogueRecord r;
  for (int i = 0; i < 5; ++i) r.dialogue.utterances.push_back({"Ross", {"a", "b", "c"}});
  QAExample both;
  both.qid = "both";
  both.answers = {{0, 0, 0, "a"}, {3, 1, 1, "b"}};
  QAExample late;
  late.qid = "late";
  late.answers = {{4, 0, 0, "a"}};
  QAExample wide;
  wide.qid = "wide";
  wide.answers = {{1, 1, 2, "b c"}};
  r.questions = {both, late, wide};
  const auto t = truncate(r, 3, 2);
  ASSERT_EQ(t.questions[0].answers.size(), 1u);
  EXPECT_EQ(t.questions[0].answers[0].utterance_index, 0u);
  EXPECT_FALSE(t.questions[1].answerable());
  EXPECT_FALSE(t.questions[2].answerable());
  EXPECT_EQ(truncate(t, 3, 2), t);
}

TEST(QuestionType, FirstInterrogative) {
  EXPECT_EQ(classify_question(tokenize("so what did he say")), QuestionType::kWhat);
  EXPECT_EQ(classify_question(tokenize("Why does Ross leave")), QuestionType::kWhy);
  EXPECT_EQ(classify_question(tokenize("and how about when")), QuestionType::kHow);
  EXPECT_EQ(classify_question(tokenize("where's the coffee")), QuestionType::kWhere);
  EXPECT_EQ(classify_question(tokenize("is it monday")), QuestionType::kOther);
}

TEST(Tokenize, LowercaseWhitespace) {
  EXPECT_EQ(tokenize("  Hello\tWORLD \n ok,  "), (std::vector<std::string>{"hello", "world", "ok,"}));
}
