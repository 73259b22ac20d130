#include "dialqa/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "dialqa/random.hpp"

namespace dialqa {
namespace {

constexpr std::array<const char*, 6> kSpeakers = {"Ross", "Rachel", "Monica",
                                                  "Chandler", "Joey", "Phoebe"};
constexpr std::array<const char*, 9> kMarkers = {"hey",  "so",     "well",  "then",  "also",
                                                 "anyway", "okay", "listen", "finally"};
constexpr std::array<const char*, 10> kPlaces = {"museum", "cafe",   "library", "park",
                                                 "beach",  "office", "airport", "bakery",
                                                 "theater", "station"};
constexpr std::array<const char*, 8> kTimes = {"monday", "tuesday", "wednesday", "thursday",
                                               "friday", "saturday", "tonight",  "tomorrow"};
constexpr std::array<const char*, 10> kObjects = {"guitar", "sandwich", "ring",  "book",
                                                  "lamp",   "turkey",   "sweater", "couch",
                                                  "puppy",  "camera"};
constexpr std::array<const char*, 6> kEvents = {"audition", "interview", "date",
                                                "party",    "recital",   "wedding"};
constexpr std::array<const char*, 8> kFeelings = {"tired", "sick",    "bored", "nervous",
                                                  "angry", "hungry", "sad",   "scared"};
constexpr std::array<const char*, 6> kVehicles = {"cab", "bus", "train", "bike", "subway",
                                                  "ferry"};
constexpr std::array<const char*, 8> kFillers = {"oh my god", "that sounds great", "no way",
                                                 "i know right", "could this be any worse",
                                                 "how you doin", "are you serious",
                                                 "that is so funny"};

template <std::size_t N>
std::string pick(const std::array<const char*, N>& pool, Rng& rng) {
  return pool[rng.uniform_index(N)];
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// One templated fact: utterance words, question words and the answer range
// inside the utterance words.
struct Fact {
  std::vector<std::string> words;
  std::vector<std::string> question;
  std::size_t answer_start = 0;
  std::size_t answer_end = 0;
  int kind = 0;
  std::string key;  // identifies the event for confusable copies
};

Fact make_fact(int kind, const std::string& speaker, Rng& rng) {
  Fact f;
  f.kind = kind;
  const std::string name = lower(speaker);
  auto words = [](std::initializer_list<std::string> w) { return std::vector<std::string>(w); };
  switch (kind) {
    case 0: {  // where
      f.words = words({"i", "went", "to", "the", pick(kPlaces, rng), "yesterday"});
      f.question = words({"where", "did", name, "go", "yesterday", "?"});
      f.answer_start = 3;
      f.answer_end = 4;
      f.key = "went";
      break;
    }
    case 1: {  // when
      const std::string event = pick(kEvents, rng);
      f.words = words({"my", event, "is", "on", pick(kTimes, rng)});
      f.question = words({"when", "is", name, "'s", event, "?"});
      f.answer_start = 4;
      f.answer_end = 4;
      f.key = "event:" + event;
      break;
    }
    case 2: {  // what
      f.words = words({"i", "bought", "a", pick(kObjects, rng), "for", lower(pick(kSpeakers, rng))});
      f.question = words({"what", "did", name, "buy", "?"});
      f.answer_start = 2;
      f.answer_end = 3;
      f.key = "bought";
      break;
    }
    case 3: {  // who
      f.words = words({"i", "saw", lower(pick(kSpeakers, rng)), "at", "the", pick(kPlaces, rng)});
      f.question = words({"who", "did", name, "see", "?"});
      f.answer_start = 2;
      f.answer_end = 2;
      f.key = "saw";
      break;
    }
    case 4: {  // why
      f.words = words({"i", "left", "early", "because", "i", "was", pick(kFeelings, rng)});
      f.question = words({"why", "did", name, "leave", "early", "?"});
      f.answer_start = 3;
      f.answer_end = 6;
      f.key = "left";
      break;
    }
    default: {  // how
      f.words = words({"i", "got", "here", "by", pick(kVehicles, rng)});
      f.question = words({"how", "did", name, "get", "here", "?"});
      f.answer_start = 3;
      f.answer_end = 4;
      f.key = "got";
      break;
    }
  }
  return f;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthOptions& options) {
  Corpus corpus;
  for (int e = 0; e < options.episodes; ++e) {
    const int episode = options.first_episode + e;
    for (std::size_t s = 0; s < options.scenes_per_episode; ++s) {
      Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(episode), s);
      DialogueRecord record;
      record.dialogue.episode_id = episode;
      record.dialogue.scene_id =
          "e" + std::to_string(episode) + "_c" + std::to_string(s + 1);
      const std::size_t span = options.max_utterances - options.min_utterances + 1;
      const std::size_t m = options.min_utterances + rng.uniform_index(span);

      struct Slot {
        std::string speaker;
        std::optional<Fact> fact;
      };
      std::vector<Slot> slots(m);
      std::vector<std::size_t> fact_slots;
      for (std::size_t k = 0; k < m; ++k) {
        slots[k].speaker = pick(kSpeakers, rng);
        // Roughly two thirds of the utterances state a fact.
        if (rng.uniform() < 0.67) fact_slots.push_back(k);
      }
      if (fact_slots.empty()) fact_slots.push_back(rng.uniform_index(m));

      std::vector<std::string> used;  // (key + speaker)
      for (std::size_t k : fact_slots) {
        Fact f;
        bool ok = false;
        const bool confusable = rng.uniform() < options.confusable_fraction;
        for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
          int kind = static_cast<int>(rng.uniform_index(6));
          if (confusable) {
            // Reuse an earlier fact's template under a different speaker.
            for (std::size_t j : fact_slots) {
              if (j >= k) break;
              if (slots[j].fact) kind = slots[j].fact->kind;
            }
          }
          f = make_fact(kind, slots[k].speaker, rng);
          const std::string tag = f.key + "|" + slots[k].speaker;
          ok = std::find(used.begin(), used.end(), tag) == used.end();
          if (ok) used.push_back(tag);
        }
        if (!ok) continue;
        slots[k].fact = std::move(f);
      }

      for (std::size_t k = 0; k < m; ++k) {
        Utterance u;
        u.speaker = slots[k].speaker;
        u.tokens.push_back(kMarkers[std::min(k, kMarkers.size() - 1)]);
        if (slots[k].fact) {
          u.tokens.insert(u.tokens.end(), slots[k].fact->words.begin(), slots[k].fact->words.end());
        } else {
          for (auto& w : tokenize(pick(kFillers, rng))) u.tokens.push_back(w);
        }
        record.dialogue.utterances.push_back(std::move(u));
      }

      if (options.with_questions) {
        std::vector<std::size_t> answerable;
        for (std::size_t k = 0; k < m; ++k) {
          if (slots[k].fact) answerable.push_back(k);
        }
        rng.shuffle(answerable);
        for (std::size_t qi = 0; qi < options.questions_per_scene; ++qi) {
          QAExample q;
          q.qid = record.dialogue.scene_id + "_q" + std::to_string(qi + 1);
          const bool unanswerable =
              answerable.empty() || rng.uniform() < options.unanswerable_fraction;
          if (unanswerable) {
            // Ask about a speaker with no matching statement in the scene.
            std::string absent;
            for (const char* sp : kSpeakers) {
              bool present = false;
              for (const auto& slot : slots) present = present || slot.speaker == sp;
              if (!present) {
                absent = sp;
                break;
              }
            }
            if (absent.empty()) absent = "Gunther";
            q.question_tokens = make_fact(static_cast<int>(rng.uniform_index(6)), absent, rng).question;
          } else {
            const std::size_t k = answerable[qi % answerable.size()];
            const Fact& f = *slots[k].fact;
            q.question_tokens = f.question;
            AnswerSpan a;
            a.utterance_index = k;
            // +1 skips the discourse marker.
            a.token_start = f.answer_start + 1;
            a.token_end = f.answer_end + 1;
            a.text = join_tokens(record.dialogue.utterances[k].tokens, a.token_start,
                                 a.token_end + 1);
            q.answers.push_back(std::move(a));
          }
          q.question_type = classify_question(q.question_tokens);
          record.questions.push_back(std::move(q));
        }
      }
      corpus.push_back(std::move(record));
    }
  }
  return corpus;
}

}  // namespace dialqa
