#ifndef DIALQA_SYNTH_HPP
#define DIALQA_SYNTH_HPP

#include <cstddef>
#include <cstdint>

#include "dialqa/dialogue.hpp"

namespace dialqa {

struct SynthOptions {
  std::uint64_t seed = 7;
  int first_episode = 1;
  int episodes = 30;
  std::size_t scenes_per_episode = 4;
  std::size_t questions_per_scene = 3;
  std::size_t min_utterances = 4;
  std::size_t max_utterances = 8;
  double unanswerable_fraction = 0.0;
  // Share of fact utterances that reuse an event already stated by another
  // speaker, so the question's name is needed to pick the utterance.
  double confusable_fraction = 0.25;
  // Questions in the corpus; 0 produces dialogues only (pre-training text).
  bool with_questions = true;
};

// Templated multiparty scenes. The k-th utterance of a scene opens with a
// discourse marker tied to k, and answers are marked by template cues that
// repeat in the paired question.
Corpus generate_synthetic_corpus(const SynthOptions& options);

}  // namespace dialqa

#endif  // DIALQA_SYNTH_HPP
