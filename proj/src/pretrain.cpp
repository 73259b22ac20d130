#include "dialqa/pretrain.hpp"

#include <algorithm>
#include <numeric>

#include "dialqa/errors.hpp"
#include "dialqa/ops.hpp"

namespace dialqa {

MaskedSequence mask_tokens(std::span<const TokenId> token_ids,
                           std::span<const std::size_t> maskable_positions,
                           const Vocab& vocab, Rng& rng, const MaskingOptions& options) {
  if (maskable_positions.empty()) throw InputError("no maskable positions");
  if (!(options.ratio >= 0.0 && options.ratio <= 1.0)) {
    throw ConfigError("masking ratio must lie in [0, 1]");
  }
  for (std::size_t p : maskable_positions) {
    if (p >= token_ids.size()) {
      throw IndexError("maskable position " + std::to_string(p) + " outside sequence of " +
                       std::to_string(token_ids.size()));
    }
  }
  // Random replacements come from the word range; only a vocabulary without
  // words falls back to speaker ids.
  TokenId low = vocab.first_word_id();
  const auto high = static_cast<TokenId>(vocab.size());
  if (low >= high) low = Vocab::kNumSpecial;
  if (low >= high) throw InputError("vocabulary has no non-special tokens");

  MaskedSequence out;
  out.token_ids.assign(token_ids.begin(), token_ids.end());
  std::vector<std::size_t> selected;
  for (std::size_t p : maskable_positions) {
    if (rng.bernoulli(options.ratio)) selected.push_back(p);
  }
  if (selected.empty() && options.force_one) {
    selected.push_back(maskable_positions[rng.uniform_index(maskable_positions.size())]);
  }
  std::sort(selected.begin(), selected.end());
  for (std::size_t p : selected) {
    out.positions.push_back(p);
    out.labels.push_back(token_ids[p]);
    const double u = rng.uniform();
    if (u < 0.8) {
      out.token_ids[p] = Vocab::kMask;
      out.kinds.push_back(MaskKind::kMask);
    } else if (u < 0.9) {
      out.token_ids[p] = low + static_cast<TokenId>(rng.uniform_index(
                                   static_cast<std::size_t>(high - low)));
      out.kinds.push_back(MaskKind::kRandom);
    } else {
      out.kinds.push_back(MaskKind::kKeep);
    }
  }
  return out;
}

Tensor vocab_logits(const EncoderWeights& weights, const Tensor& hidden_rows) {
  return add(matmul(hidden_rows, transpose(weights.token_embeddings)), weights.mlm_bias);
}

DialogueSequence encode_dialogue(const Vocab& vocab, const Dialogue& dialogue) {
  DialogueSequence seq;
  seq.token_ids.push_back(Vocab::kCls);
  for (const auto& u : dialogue.utterances) {
    const auto ids = vocab.encode_utterance(u);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (j > 0 && !vocab.is_special(ids[j])) seq.word_positions.push_back(seq.token_ids.size());
      seq.token_ids.push_back(ids[j]);
    }
  }
  return seq;
}

TmlmInstance build_tmlm_instance(const Vocab& vocab, const ModelConfig& config,
                                 const Dialogue& dialogue, Rng& rng,
                                 const MaskingOptions& options) {
  const DialogueSequence seq = encode_dialogue(vocab, dialogue);
  if (seq.token_ids.size() > config.token_position_capacity()) {
    throw CapacityError("dialogue encodes to " + std::to_string(seq.token_ids.size()) +
                        " tokens, capacity is " +
                        std::to_string(config.token_position_capacity()) +
                        "; truncate first");
  }
  MaskedSequence masked = mask_tokens(seq.token_ids, seq.word_positions, vocab, rng, options);
  return {std::move(masked.token_ids), std::move(masked.positions), std::move(masked.labels)};
}

Tensor tmlm_loss(const EncoderWeights& weights, const ModelConfig& config,
                 const TmlmInstance& instance, const ForwardMode& mode) {
  if (instance.mask_positions.empty() ||
      instance.mask_positions.size() != instance.mask_labels.size()) {
    throw InputError("t-MLM instance needs matching, non-empty mask positions and labels");
  }
  const Tensor hidden = te_forward(weights, config, instance.token_ids, {}, mode);
  const Tensor logits = vocab_logits(weights, gather_rows(hidden, instance.mask_positions));
  std::vector<std::size_t> targets(instance.mask_labels.begin(), instance.mask_labels.end());
  return cross_entropy_rows(logits, targets);
}

TmlmDataset::TmlmDataset(const Vocab& vocab, const ModelConfig& config,
                         std::vector<Dialogue> dialogues, MaskingMode mode,
                         std::uint64_t seed, MaskingOptions options)
    : vocab_(&vocab), config_(config), mode_(mode), seed_(seed), options_(options) {
  for (auto& d : dialogues) {
    if (!encode_dialogue(vocab, d).word_positions.empty()) dialogues_.push_back(std::move(d));
  }
  if (mode_ == MaskingMode::kStatic) {
    for (std::size_t i = 0; i < dialogues_.size(); ++i) {
      Rng rng = Rng::derive(seed_, 0, i);
      cached_.push_back(build_tmlm_instance(*vocab_, config_, dialogues_[i], rng, options_));
    }
  }
}

TmlmInstance TmlmDataset::instance(std::size_t index, std::uint64_t epoch) const {
  if (index >= dialogues_.size()) throw IndexError("t-MLM dataset index out of range");
  if (mode_ == MaskingMode::kStatic) return cached_[index];
  Rng rng = Rng::derive(seed_, epoch + 1, index);
  return build_tmlm_instance(*vocab_, config_, dialogues_[index], rng, options_);
}

std::vector<UmlmInstance> build_umlm_instances(const Vocab& vocab,
                                               const Dialogue& dialogue, Rng& rng,
                                               std::size_t samples_per_utterance) {
  if (samples_per_utterance == 0) throw ConfigError("samples_per_utterance must be >= 1");
  std::vector<UmlmInstance> out;
  for (const auto& u : dialogue.utterances) {
    std::vector<TokenId> base{Vocab::kCls};
    const auto ids = vocab.encode_utterance(u);
    base.insert(base.end(), ids.begin(), ids.end());
    std::vector<std::size_t> candidates;
    for (std::size_t p = 2; p < base.size(); ++p) {
      if (!vocab.is_special(base[p])) candidates.push_back(p);
    }
    if (candidates.empty()) continue;
    // Partial Fisher-Yates: the first k entries are a uniform draw without
    // replacement.
    const std::size_t k = std::min(samples_per_utterance, candidates.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(candidates[i], candidates[i + rng.uniform_index(candidates.size() - i)]);
    }
    std::sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = 0; i < k; ++i) {
      UmlmInstance inst;
      inst.token_ids = base;
      inst.mask_position = candidates[i];
      inst.mask_label = base[candidates[i]];
      inst.token_ids[candidates[i]] = Vocab::kMask;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

Tensor umlm_loss(const EncoderWeights& weights, const ModelConfig& config,
                 const UmlmInstance& instance, const ForwardMode& mode) {
  if (instance.mask_position < 2 || instance.mask_position >= instance.token_ids.size()) {
    throw InputError("u-MLM mask must sit on a word slot");
  }
  const Tensor hidden = te_forward(weights, config, instance.token_ids, {}, mode);
  const Tensor logits = vocab_logits(weights, row(hidden, 0));
  const std::size_t target[1] = {static_cast<std::size_t>(instance.mask_label)};
  return cross_entropy_rows(logits, target);
}

std::size_t uop_split_point(std::size_t num_utterances) {
  return (num_utterances + 1) / 2;
}

UopInstance make_uop_instance(const Vocab& vocab, const Dialogue& dialogue,
                              std::span<const std::size_t> second_half_order) {
  const std::size_t m = dialogue.utterances.size();
  const std::size_t split = uop_split_point(m);
  const std::size_t second = m - split;
  std::vector<std::size_t> check(second_half_order.begin(), second_half_order.end());
  std::sort(check.begin(), check.end());
  bool valid = check.size() == second;
  for (std::size_t i = 0; valid && i < second; ++i) valid = check[i] == i;
  if (!valid) throw InputError("second_half_order is not a permutation of the second half");

  UopInstance inst;
  inst.order.resize(m);
  std::iota(inst.order.begin(), inst.order.begin() + static_cast<std::ptrdiff_t>(split), 0);
  bool identity = true;
  for (std::size_t i = 0; i < second; ++i) {
    inst.order[split + i] = split + second_half_order[i];
    identity = identity && second_half_order[i] == i;
  }
  inst.label = identity ? UopLabel::kInOrder : UopLabel::kShuffled;
  for (std::size_t src : inst.order) {
    std::vector<TokenId> seq{Vocab::kCls};
    const auto ids = vocab.encode_utterance(dialogue.utterances[src]);
    seq.insert(seq.end(), ids.begin(), ids.end());
    inst.utterance_token_ids.push_back(std::move(seq));
  }
  return inst;
}

std::optional<UopInstance> build_uop_instance(const Vocab& vocab,
                                              const Dialogue& dialogue, Rng& rng,
                                              double shuffle_prob) {
  const std::size_t m = dialogue.utterances.size();
  if (m < kMinUopUtterances) return std::nullopt;
  const std::size_t second = m - uop_split_point(m);
  std::vector<std::size_t> order(second);
  std::iota(order.begin(), order.end(), 0);
  if (rng.bernoulli(shuffle_prob)) {
    // Rejection keeps the draw uniform over non-identity permutations.
    bool identity = true;
    while (identity) {
      rng.shuffle(order);
      identity = std::is_sorted(order.begin(), order.end());
    }
  }
  return make_uop_instance(vocab, dialogue, order);
}

Tensor utterance_cls_embeddings(const EncoderWeights& weights, const ModelConfig& config,
                                std::span<const std::vector<TokenId>> sequences,
                                const ForwardMode& mode) {
  std::vector<Tensor> cls;
  cls.reserve(sequences.size());
  for (const auto& seq : sequences) {
    cls.push_back(row(te_forward(weights, config, seq, {}, mode), 0));
  }
  return concat_rows(cls);
}

Tensor uop_logits(const EncoderWeights& weights, const ModelConfig& config,
                  const UopInstance& instance, const ForwardMode& mode) {
  const Tensor cls = utterance_cls_embeddings(weights, config, instance.utterance_token_ids, mode);
  const Tensor pooled = mean_rows(tl_forward(weights, config, cls, mode));
  return reshape(add(matmul(pooled, weights.uop_w), weights.uop_b), {2});
}

Tensor uop_loss(const EncoderWeights& weights, const ModelConfig& config,
                const UopInstance& instance, const ForwardMode& mode) {
  return cross_entropy(uop_logits(weights, config, instance, mode),
                       static_cast<std::size_t>(instance.label));
}

}  // namespace dialqa
