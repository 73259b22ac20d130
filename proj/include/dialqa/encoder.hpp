#ifndef DIALQA_ENCODER_HPP
#define DIALQA_ENCODER_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dialqa/grad_check.hpp"
#include "dialqa/random.hpp"
#include "dialqa/tensor.hpp"
#include "dialqa/vocab.hpp"

namespace dialqa {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden_size = 32;
  std::size_t intermediate_size = 64;
  std::size_t max_tokens = 16;       // words per utterance
  std::size_t max_utterances = 8;    // utterances per dialogue
  std::size_t vocab_size = 0;
  double dropout_p = 0.1;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;
  // Learned utterance-position embeddings before TL1. Turning them off makes
  // the utterance layers permutation-equivariant.
  bool utterance_positions = true;

  void validate() const;
  // [CLS] plus every utterance at full length (speaker + max_tokens words).
  std::size_t token_position_capacity() const {
    return max_utterances * (max_tokens + 1) + 1;
  }
  std::size_t utterance_position_capacity() const { return max_utterances + 1; }

  bool operator==(const ModelConfig&) const = default;
};

// Parameter groups decide what each stage trains, saves, and transfers.
enum class ParamGroup {
  kEncoder,    // token/position embeddings, embedding norm, TE layers
  kMlmHead,    // bias of the tied vocabulary projection
  kUtterance,  // utterance-position embeddings, TL1, TL2
  kUopHead,
  kCrossAttention,  // MHA
  kUidHead,
  kSpanHeads,  // SL, SR
};

std::string_view param_group_name(ParamGroup group);

struct AttentionWeights {
  Tensor query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
};

struct TransformerLayerWeights {
  AttentionWeights attention;
  Tensor attention_norm_g, attention_norm_b;
  Tensor ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  Tensor output_norm_g, output_norm_b;
};

struct CrossAttentionWeights {
  AttentionWeights attention;
  Tensor query_norm_g, query_norm_b;    // applied to utterance tokens
  Tensor memory_norm_g, memory_norm_b;  // applied to question tokens
};

struct ParameterRef {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

// Every learnable tensor of the model. The vocabulary projection shares
// token_embeddings (tied), so only its bias is a separate tensor.
struct EncoderWeights {
  Tensor token_embeddings;           // [vocab, hidden]
  Tensor token_position_embeddings;  // [token capacity, hidden]
  Tensor embedding_norm_g, embedding_norm_b;
  std::vector<TransformerLayerWeights> layers;  // TE

  Tensor mlm_bias;  // [vocab]

  Tensor utterance_position_embeddings;  // [m_max + 1, hidden]
  TransformerLayerWeights tl1, tl2;

  Tensor uop_w, uop_b;  // [hidden, 2], [2]

  CrossAttentionWeights mha;
  Tensor uid_w, uid_b;  // [hidden, 1], [1]
  Tensor span_left_w, span_left_b, span_right_w, span_right_b;

  // Builds every tensor with the BERT-lineage initialization.
  static EncoderWeights create(const ModelConfig& config, Rng& rng);
  // Re-samples the tensors of one group in place.
  void initialize_group(ParamGroup group, const ModelConfig& config, Rng& rng);

  // Stable, deterministic order: the checkpoint and optimizer rely on it.
  std::vector<ParameterRef> parameters() const;
  std::vector<ParameterRef> parameters(std::span<const ParamGroup> groups) const;
  // Deep copy.
  EncoderWeights clone() const;
};

std::vector<NamedTensor> named_tensors(const std::vector<ParameterRef>& refs);
// Expected shape of every parameter under a config, by name.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

// Training flag plus the generator behind dropout masks.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode inference() { return {}; }
};

// Attention probabilities recorded per layer and head, [queries, keys] each.
using AttentionTrace = std::vector<Tensor>;

// TE over one sequence. Positions where `attention_mask` is false (or, when
// the mask is empty, positions holding PAD) are never attended to.
Tensor te_forward(const EncoderWeights& weights, const ModelConfig& config,
                  std::span<const TokenId> token_ids,
                  std::span<const bool> attention_mask, const ForwardMode& mode,
                  AttentionTrace* trace = nullptr);

// TL1 then TL2 over a sequence of utterance embeddings [k, hidden].
Tensor tl_forward(const EncoderWeights& weights, const ModelConfig& config,
                  const Tensor& utterance_embeddings, const ForwardMode& mode);

// Utterance tokens attend over question tokens; output has one row per
// utterance token and adds the utterance input as a residual.
Tensor mha_forward(const EncoderWeights& weights, const ModelConfig& config,
                   const Tensor& question_tokens, const Tensor& utterance_tokens,
                   const ForwardMode& mode, AttentionTrace* trace = nullptr);

// Row i as a [1, hidden] matrix.
Tensor row(const Tensor& matrix, std::size_t i);

}  // namespace dialqa

#endif  // DIALQA_ENCODER_HPP
