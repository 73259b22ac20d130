#ifndef DIALQA_PRETRAIN_HPP
#define DIALQA_PRETRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dialqa/dialogue.hpp"
#include "dialqa/encoder.hpp"
#include "dialqa/random.hpp"
#include "dialqa/vocab.hpp"

namespace dialqa {

// ---- masking ---------------------------------------------------------------

enum class MaskKind : std::uint8_t { kMask, kRandom, kKeep };

struct MaskingOptions {
  double ratio = 0.15;
  // Mask one uniformly chosen position when sampling selects none.
  bool force_one = true;
};

struct MaskedSequence {
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> positions;  // ascending
  std::vector<TokenId> labels;         // original ids at `positions`
  std::vector<MaskKind> kinds;
};

// Selects each maskable position with probability `ratio`; a selected slot
// becomes MASK (80%), a uniformly drawn word id (10%) or stays as is (10%).
MaskedSequence mask_tokens(std::span<const TokenId> token_ids,
                           std::span<const std::size_t> maskable_positions,
                           const Vocab& vocab, Rng& rng,
                           const MaskingOptions& options = {});

// Transposed token embeddings plus the MLM bias: [rows, vocab] logits.
Tensor vocab_logits(const EncoderWeights& weights, const Tensor& hidden_rows);

// ---- token-level MLM -------------------------------------------------------

// [CLS] followed by each utterance's speaker and words.
struct DialogueSequence {
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> word_positions;  // maskable slots (known words)
};

DialogueSequence encode_dialogue(const Vocab& vocab, const Dialogue& dialogue);

struct TmlmInstance {
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> mask_positions;
  std::vector<TokenId> mask_labels;
};

TmlmInstance build_tmlm_instance(const Vocab& vocab, const ModelConfig& config,
                                 const Dialogue& dialogue, Rng& rng,
                                 const MaskingOptions& options = {});

// Mean cross-entropy over masked positions, each predicted from its own
// output embedding.
Tensor tmlm_loss(const EncoderWeights& weights, const ModelConfig& config,
                 const TmlmInstance& instance, const ForwardMode& mode);

enum class MaskingMode { kStatic, kDynamic };

// Static masking fixes each dialogue's masks when the dataset is built;
// dynamic masking draws fresh masks per epoch. Both are pure functions of
// (seed, epoch, index).
class TmlmDataset {
 public:
  TmlmDataset(const Vocab& vocab, const ModelConfig& config,
              std::vector<Dialogue> dialogues, MaskingMode mode, std::uint64_t seed,
              MaskingOptions options = {});

  std::size_t size() const { return dialogues_.size(); }
  TmlmInstance instance(std::size_t index, std::uint64_t epoch) const;

 private:
  const Vocab* vocab_;
  ModelConfig config_;
  std::vector<Dialogue> dialogues_;
  MaskingMode mode_;
  std::uint64_t seed_;
  MaskingOptions options_;
  std::vector<TmlmInstance> cached_;
};

// ---- utterance-level MLM ---------------------------------------------------

struct UmlmInstance {
  std::vector<TokenId> token_ids;  // [CLS, speaker, w_1..w_n] with one MASK
  std::size_t mask_position = 0;
  TokenId mask_label = Vocab::kUnk;
};

// Per utterance, `samples_per_utterance` distinct word positions (all of them
// when fewer exist). Utterances without maskable words are skipped.
std::vector<UmlmInstance> build_umlm_instances(const Vocab& vocab,
                                               const Dialogue& dialogue, Rng& rng,
                                               std::size_t samples_per_utterance);

// The masked word is predicted from the CLS output embedding.
Tensor umlm_loss(const EncoderWeights& weights, const ModelConfig& config,
                 const UmlmInstance& instance, const ForwardMode& mode);

// ---- utterance order prediction --------------------------------------------

enum class UopLabel : std::uint8_t { kInOrder = 0, kShuffled = 1 };

// With the first half holding ceil(m/2) utterances, a non-identity reorder of
// the second half needs at least two utterances there.
inline constexpr std::size_t kMinUopUtterances = 4;

struct UopInstance {
  std::vector<std::vector<TokenId>> utterance_token_ids;  // [CLS_i] + U_i
  UopLabel label = UopLabel::kInOrder;
  std::vector<std::size_t> order;  // source utterance index at each slot
};

std::size_t uop_split_point(std::size_t num_utterances);

// D' = D1 + D2' with D2' a reorder of the second half given by
// `second_half_order` (a permutation of 0..|D2|-1).
UopInstance make_uop_instance(const Vocab& vocab, const Dialogue& dialogue,
                              std::span<const std::size_t> second_half_order);

// With probability `shuffle_prob` the second half is reordered by a uniformly
// drawn non-identity permutation. Returns nullopt for dialogues that are too
// short.
std::optional<UopInstance> build_uop_instance(const Vocab& vocab,
                                              const Dialogue& dialogue, Rng& rng,
                                              double shuffle_prob = 0.5);

// Two logits (in order, shuffled) from mean-pooled TL outputs.
Tensor uop_logits(const EncoderWeights& weights, const ModelConfig& config,
                  const UopInstance& instance, const ForwardMode& mode);
Tensor uop_loss(const EncoderWeights& weights, const ModelConfig& config,
                const UopInstance& instance, const ForwardMode& mode);

// CLS output of TE for each [CLS_i] + U_i sequence, stacked as [k, hidden].
Tensor utterance_cls_embeddings(const EncoderWeights& weights, const ModelConfig& config,
                                std::span<const std::vector<TokenId>> sequences,
                                const ForwardMode& mode);

}  // namespace dialqa

#endif  // DIALQA_PRETRAIN_HPP
