#include "dialqa/encoder.hpp"

#include <cmath>
#include <limits>

#include "dialqa/errors.hpp"
#include "dialqa/ops.hpp"

namespace dialqa {

void ModelConfig::validate() const {
  if (num_layers == 0 || num_heads == 0 || hidden_size == 0 || intermediate_size == 0 ||
      max_tokens == 0 || max_utterances == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (hidden_size % num_heads != 0) {
    throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumSpecial)) {
    throw ConfigError("vocab_size must exceed the special-token range");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

std::string_view param_group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kMlmHead: return "mlm_head";
    case ParamGroup::kUtterance: return "utterance";
    case ParamGroup::kUopHead: return "uop_head";
    case ParamGroup::kCrossAttention: return "cross_attention";
    case ParamGroup::kUidHead: return "uid_head";
    case ParamGroup::kSpanHeads: return "span_heads";
  }
  return "unknown";
}

namespace {

enum class Init { kNormal, kUnitNormal, kZero, kOne };

// Visits every parameter slot with its name, group, shape and initializer.
// Both create() and parameters() go through here so the names, order and
// shapes cannot drift apart.
template <typename Weights, typename Fn>
void for_each_slot(Weights& w, const ModelConfig& c, Fn&& fn) {
  const std::size_t h = c.hidden_size, ff = c.intermediate_size, v = c.vocab_size;
  auto attention = [&](const std::string& prefix, ParamGroup g, auto& a) {
    fn(prefix + "query_w", g, a.query_w, Shape{h, h}, Init::kNormal);
    fn(prefix + "query_b", g, a.query_b, Shape{h}, Init::kZero);
    fn(prefix + "key_w", g, a.key_w, Shape{h, h}, Init::kNormal);
    fn(prefix + "key_b", g, a.key_b, Shape{h}, Init::kZero);
    fn(prefix + "value_w", g, a.value_w, Shape{h, h}, Init::kNormal);
    fn(prefix + "value_b", g, a.value_b, Shape{h}, Init::kZero);
    fn(prefix + "output_w", g, a.output_w, Shape{h, h}, Init::kNormal);
    fn(prefix + "output_b", g, a.output_b, Shape{h}, Init::kZero);
  };
  auto layer = [&](const std::string& prefix, ParamGroup g, auto& l) {
    attention(prefix + "attention.", g, l.attention);
    fn(prefix + "attention_norm.g", g, l.attention_norm_g, Shape{h}, Init::kOne);
    fn(prefix + "attention_norm.b", g, l.attention_norm_b, Shape{h}, Init::kZero);
    fn(prefix + "ff_in_w", g, l.ff_in_w, Shape{h, ff}, Init::kNormal);
    fn(prefix + "ff_in_b", g, l.ff_in_b, Shape{ff}, Init::kZero);
    fn(prefix + "ff_out_w", g, l.ff_out_w, Shape{ff, h}, Init::kNormal);
    fn(prefix + "ff_out_b", g, l.ff_out_b, Shape{h}, Init::kZero);
    fn(prefix + "output_norm.g", g, l.output_norm_g, Shape{h}, Init::kOne);
    fn(prefix + "output_norm.b", g, l.output_norm_b, Shape{h}, Init::kZero);
  };

  const auto enc = ParamGroup::kEncoder;
  fn("te.token_embeddings", enc, w.token_embeddings, Shape{v, h}, Init::kNormal);
  fn("te.token_position_embeddings", enc, w.token_position_embeddings,
     Shape{c.token_position_capacity(), h}, Init::kNormal);
  fn("te.embedding_norm.g", enc, w.embedding_norm_g, Shape{h}, Init::kOne);
  fn("te.embedding_norm.b", enc, w.embedding_norm_b, Shape{h}, Init::kZero);
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    layer("te.layer" + std::to_string(i) + ".", enc, w.layers[i]);
  }

  fn("mlm.bias", ParamGroup::kMlmHead, w.mlm_bias, Shape{v}, Init::kZero);

  const auto utt = ParamGroup::kUtterance;
  fn("tl.utterance_position_embeddings", utt, w.utterance_position_embeddings,
     Shape{c.utterance_position_capacity(), h}, Init::kUnitNormal);
  layer("tl.layer1.", utt, w.tl1);
  layer("tl.layer2.", utt, w.tl2);

  fn("uop.w", ParamGroup::kUopHead, w.uop_w, Shape{h, 2}, Init::kNormal);
  fn("uop.b", ParamGroup::kUopHead, w.uop_b, Shape{2}, Init::kZero);

  const auto xa = ParamGroup::kCrossAttention;
  attention("mha.attention.", xa, w.mha.attention);
  fn("mha.query_norm.g", xa, w.mha.query_norm_g, Shape{h}, Init::kOne);
  fn("mha.query_norm.b", xa, w.mha.query_norm_b, Shape{h}, Init::kZero);
  fn("mha.memory_norm.g", xa, w.mha.memory_norm_g, Shape{h}, Init::kOne);
  fn("mha.memory_norm.b", xa, w.mha.memory_norm_b, Shape{h}, Init::kZero);

  fn("uid.w", ParamGroup::kUidHead, w.uid_w, Shape{h, 1}, Init::kNormal);
  fn("uid.b", ParamGroup::kUidHead, w.uid_b, Shape{1}, Init::kZero);

  const auto span = ParamGroup::kSpanHeads;
  fn("span.left_w", span, w.span_left_w, Shape{h, 1}, Init::kNormal);
  fn("span.left_b", span, w.span_left_b, Shape{1}, Init::kZero);
  fn("span.right_w", span, w.span_right_w, Shape{h, 1}, Init::kNormal);
  fn("span.right_b", span, w.span_right_b, Shape{1}, Init::kZero);
}

Tensor initialized(const Shape& shape, Init init, double std, Rng& rng) {
  Tensor t = Tensor::zeros(shape, true);
  auto d = t.mutable_data();
  for (auto& x : d) {
    switch (init) {
      case Init::kNormal: x = rng.normal(0.0, std); break;
      case Init::kUnitNormal: x = rng.normal(0.0, 1.0); break;
      case Init::kZero: x = 0.0; break;
      case Init::kOne: x = 1.0; break;
    }
  }
  return t;
}

// Stand-in with the right shapes; for_each_slot needs a layer vector sized
// to the config.
struct ShapeOnly {
  explicit ShapeOnly(const ModelConfig& c) { w.layers.resize(c.num_layers); }
  EncoderWeights w;
};

}  // namespace

EncoderWeights EncoderWeights::create(const ModelConfig& config, Rng& rng) {
  config.validate();
  EncoderWeights w;
  w.layers.resize(config.num_layers);
  for_each_slot(w, config, [&](const std::string&, ParamGroup, Tensor& slot,
                               const Shape& shape, Init init) {
    slot = initialized(shape, init, config.init_std, rng);
  });
  return w;
}

void EncoderWeights::initialize_group(ParamGroup group, const ModelConfig& config,
                                      Rng& rng) {
  for_each_slot(*this, config, [&](const std::string&, ParamGroup g, Tensor& slot,
                                   const Shape& shape, Init init) {
    if (g == group) slot = initialized(shape, init, config.init_std, rng);
  });
}

namespace {

// Slot visitor over existing weights; only names, groups and the tensors
// themselves are used, so the dimensions of the stand-in config are moot.
template <typename Fn>
void for_each_existing(EncoderWeights& w, Fn&& fn) {
  ModelConfig c;
  c.num_layers = w.layers.size();
  c.vocab_size = Vocab::kNumSpecial + 1;
  for_each_slot(w, c, [&](const std::string& name, ParamGroup g, Tensor& slot,
                          const Shape&, Init) { fn(name, g, slot); });
}

}  // namespace

std::vector<ParameterRef> EncoderWeights::parameters() const {
  std::vector<ParameterRef> refs;
  for_each_existing(const_cast<EncoderWeights&>(*this),
                    [&](const std::string& name, ParamGroup g, Tensor& slot) {
                      refs.push_back({name, g, slot});
                    });
  return refs;
}

std::vector<ParameterRef> EncoderWeights::parameters(std::span<const ParamGroup> groups) const {
  std::vector<ParameterRef> refs;
  for (auto& ref : parameters()) {
    for (auto g : groups) {
      if (ref.group == g) {
        refs.push_back(ref);
        break;
      }
    }
  }
  return refs;
}

EncoderWeights EncoderWeights::clone() const {
  EncoderWeights out = *this;
  for_each_existing(out, [](const std::string&, ParamGroup, Tensor& slot) {
    const bool grad = slot.requires_grad();
    slot = slot.clone();
    slot.set_requires_grad(grad);
  });
  return out;
}

std::vector<NamedTensor> named_tensors(const std::vector<ParameterRef>& refs) {
  std::vector<NamedTensor> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back({r.name, r.tensor});
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config) {
  std::vector<std::pair<std::string, Shape>> out;
  ShapeOnly stub(config);
  for_each_slot(stub.w, config, [&](const std::string& name, ParamGroup, Tensor&,
                                    const Shape& shape, Init) { out.emplace_back(name, shape); });
  return out;
}

Tensor row(const Tensor& matrix, std::size_t i) { return slice_rows(matrix, i, 1); }

namespace {

constexpr double kMaskedScore = -1e30;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor multi_head_attention(const AttentionWeights& w, const ModelConfig& c,
                            const Tensor& queries, const Tensor& memory,
                            const Tensor* key_mask, const ForwardMode& mode,
                            AttentionTrace* trace) {
  const Tensor q = linear(queries, w.query_w, w.query_b);
  const Tensor k = linear(memory, w.key_w, w.key_b);
  const Tensor v = linear(memory, w.value_w, w.value_b);
  const std::size_t head_dim = c.hidden_size / c.num_heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(c.num_heads);
  for (std::size_t h = 0; h < c.num_heads; ++h) {
    const Tensor qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor scores = scale(matmul(qh, transpose(kh)), score_scale);
    if (key_mask) scores = add(scores, *key_mask);
    Tensor probs = softmax(scores, -1);
    if (trace) trace->push_back(probs);
    if (mode.training) probs = dropout(probs, c.dropout_p, true, *mode.rng);
    heads.push_back(matmul(probs, vh));
  }
  return linear(concat_cols(heads), w.output_w, w.output_b);
}

Tensor apply_dropout(const Tensor& x, const ModelConfig& c, const ForwardMode& mode) {
  if (!mode.training || c.dropout_p == 0.0) return x;
  if (!mode.rng) throw ConfigError("training forward pass needs an rng");
  return dropout(x, c.dropout_p, true, *mode.rng);
}

// Post-norm transformer layer.
Tensor transformer_layer(const TransformerLayerWeights& l, const ModelConfig& c,
                         const Tensor& x, const Tensor* key_mask,
                         const ForwardMode& mode, AttentionTrace* trace) {
  const Tensor attended = multi_head_attention(l.attention, c, x, x, key_mask, mode, trace);
  const Tensor h = layer_norm(add(x, apply_dropout(attended, c, mode)), l.attention_norm_g,
                              l.attention_norm_b, c.layer_norm_eps);
  const Tensor ff = linear(gelu(linear(h, l.ff_in_w, l.ff_in_b)), l.ff_out_w, l.ff_out_b);
  return layer_norm(add(h, apply_dropout(ff, c, mode)), l.output_norm_g, l.output_norm_b,
                    c.layer_norm_eps);
}

}  // namespace

Tensor te_forward(const EncoderWeights& weights, const ModelConfig& config,
                  std::span<const TokenId> token_ids,
                  std::span<const bool> attention_mask, const ForwardMode& mode,
                  AttentionTrace* trace) {
  const std::size_t len = token_ids.size();
  if (len == 0) throw InputError("te_forward on an empty sequence");
  if (len > config.token_position_capacity()) {
    throw CapacityError("sequence of " + std::to_string(len) +
                        " tokens exceeds positional capacity " +
                        std::to_string(config.token_position_capacity()));
  }
  if (!attention_mask.empty() && attention_mask.size() != len) {
    throw DimensionError("attention mask length " + std::to_string(attention_mask.size()) +
                         " differs from sequence length " + std::to_string(len));
  }
  std::vector<std::size_t> rows(len);
  std::vector<double> mask(len, 0.0);
  bool any_masked = false;
  for (std::size_t i = 0; i < len; ++i) {
    const TokenId id = token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
    rows[i] = static_cast<std::size_t>(id);
    const bool real = attention_mask.empty() ? id != Vocab::kPad : attention_mask[i];
    if (!real) {
      mask[i] = kMaskedScore;
      any_masked = true;
    }
  }
  const Tensor key_mask = Tensor::from_vector({len}, std::move(mask));

  Tensor x = add(gather_rows(weights.token_embeddings, rows),
                 slice_rows(weights.token_position_embeddings, 0, len));
  x = layer_norm(x, weights.embedding_norm_g, weights.embedding_norm_b, config.layer_norm_eps);
  x = apply_dropout(x, config, mode);
  for (const auto& layer : weights.layers) {
    x = transformer_layer(layer, config, x, any_masked ? &key_mask : nullptr, mode, trace);
  }
  return x;
}

Tensor tl_forward(const EncoderWeights& weights, const ModelConfig& config,
                  const Tensor& utterance_embeddings, const ForwardMode& mode) {
  if (utterance_embeddings.rank() != 2 || utterance_embeddings.dim(1) != config.hidden_size) {
    throw DimensionError("tl_forward expects [k, hidden], got " +
                         shape_string(utterance_embeddings.shape()));
  }
  const std::size_t k = utterance_embeddings.dim(0);
  if (k == 0) throw InputError("tl_forward on an empty sequence");
  if (k > config.utterance_position_capacity()) {
    throw CapacityError(std::to_string(k) + " utterance embeddings exceed capacity " +
                        std::to_string(config.utterance_position_capacity()));
  }
  Tensor x = utterance_embeddings;
  if (config.utterance_positions) {
    x = add(x, slice_rows(weights.utterance_position_embeddings, 0, k));
  }
  x = transformer_layer(weights.tl1, config, x, nullptr, mode, nullptr);
  return transformer_layer(weights.tl2, config, x, nullptr, mode, nullptr);
}

Tensor mha_forward(const EncoderWeights& weights, const ModelConfig& config,
                   const Tensor& question_tokens, const Tensor& utterance_tokens,
                   const ForwardMode& mode, AttentionTrace* trace) {
  if (question_tokens.rank() != 2 || utterance_tokens.rank() != 2 ||
      question_tokens.dim(0) == 0 || utterance_tokens.dim(0) == 0) {
    throw InputError("mha_forward needs non-empty question and utterance token matrices");
  }
  const auto& m = weights.mha;
  const Tensor queries =
      layer_norm(utterance_tokens, m.query_norm_g, m.query_norm_b, config.layer_norm_eps);
  const Tensor memory =
      layer_norm(question_tokens, m.memory_norm_g, m.memory_norm_b, config.layer_norm_eps);
  const Tensor attended =
      multi_head_attention(m.attention, config, queries, memory, nullptr, mode, trace);
  return add(utterance_tokens, apply_dropout(attended, config, mode));
}

}  // namespace dialqa
