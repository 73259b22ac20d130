#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dialqa/encoder.hpp"
#include "dialqa/errors.hpp"
#include "dialqa/grad_check.hpp"
#include "dialqa/ops.hpp"

using namespace dialqa;

namespace {

ModelConfig toy(std::size_t hidden = 8) {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_size = hidden;
  c.intermediate_size = 2 * hidden;
  c.max_tokens = 6;
  c.max_utterances = 4;
  c.vocab_size = 50;
  c.dropout_p = 0.0;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n) {
  std::vector<TokenId> ids{Vocab::kCls};
  for (std::size_t i = 1; i < n; ++i) ids.push_back(4 + static_cast<TokenId>(rng.uniform_index(46)));
  return ids;
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_vector({rows, cols}, std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(ModelConfig, Validation) {
  auto c = toy();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(toy().token_position_capacity(), 4u * 7u + 1u);
}

TEST(Weights, ShapesAndTying) {
  auto c = toy();
  Rng rng(1);
  auto w = EncoderWeights::create(c, rng);
  const auto expected = parameter_shapes(c);
  const auto params = w.parameters();
  ASSERT_EQ(params.size(), expected.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(params[i].name, expected[i].first);
    EXPECT_EQ(params[i].tensor.shape(), expected[i].second) << params[i].name;
    for (double x : params[i].tensor.data()) EXPECT_TRUE(std::isfinite(x));
  }
  EXPECT_EQ(w.token_embeddings.shape(), (Shape{50, 8}));
  EXPECT_EQ(w.mlm_bias.shape(), (Shape{50}));
  EXPECT_EQ(w.utterance_position_embeddings.shape(), (Shape{5, 8}));
}

TEST(Weights, InitializationStatistics) {
  ModelConfig c = toy(64);
  c.vocab_size = 2000;
  Rng rng(3);
  auto w = EncoderWeights::create(c, rng);
  double s = 0.0, s2 = 0.0;
  for (double x : w.token_embeddings.data()) {
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(w.token_embeddings.size());
  EXPECT_LT(std::abs(s / n), 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 5e-4);
  for (double x : w.layers[0].ff_in_b.data()) EXPECT_EQ(x, 0.0);
  for (double x : w.layers[0].attention_norm_g.data()) EXPECT_EQ(x, 1.0);
}

// Utterance positions are added to layer-normed vectors, so they start at unit
// scale regardless of init_std.
TEST(Weights, UtterancePositionsStartAtUnitScale) {
  ModelConfig c = toy(64);
  c.max_utterances = 200;
  Rng rng(5);
  auto w = EncoderWeights::create(c, rng);
  double s2 = 0.0;
  for (double x : w.utterance_position_embeddings.data()) s2 += x * x;
  const double n = static_cast<double>(w.utterance_position_embeddings.size());
  EXPECT_NEAR(std::sqrt(s2 / n), 1.0, 0.02);
}

TEST(TeForward, ShapeAndCapacity) {
  auto c = toy(32);
  Rng rng(2);
  auto w = EncoderWeights::create(c, rng);
  auto ids = random_ids(rng, 16);
  auto out = te_forward(w, c, ids, {}, ForwardMode::inference());
  EXPECT_EQ(out.shape(), (Shape{16, 32}));
  auto too_long = random_ids(rng, c.token_position_capacity() + 1);
  EXPECT_THROW(te_forward(w, c, too_long, {}, ForwardMode::inference()), CapacityError);
}

TEST(TeForward, AttentionRowsSumToOneAndSkipPad) {
  auto c = toy();
  Rng rng(4);
  auto w = EncoderWeights::create(c, rng);
  auto ids = random_ids(rng, 9);
  ids[7] = ids[8] = Vocab::kPad;
  AttentionTrace trace;
  te_forward(w, c, ids, {}, ForwardMode::inference(), &trace);
  ASSERT_EQ(trace.size(), c.num_layers * c.num_heads);
  for (const auto& probs : trace) {
    ASSERT_EQ(probs.shape(), (Shape{9, 9}));
    for (std::size_t q = 0; q < 7; ++q) {
      double total = 0.0;
      for (std::size_t k = 0; k < 9; ++k) total += probs.at(q, k);
      EXPECT_NEAR(total, 1.0, 1e-9);
      EXPECT_EQ(probs.at(q, 7), 0.0);
      EXPECT_EQ(probs.at(q, 8), 0.0);
    }
  }
}

TEST(TeForward, PaddingInvariance) {
  auto c = toy();
  Rng rng(5);
  auto w = EncoderWeights::create(c, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 2 + rng.uniform_index(10);
    const std::size_t pad = 1 + rng.uniform_index(6);
    auto ids = random_ids(rng, len);
    auto padded = ids;
    padded.insert(padded.end(), pad, Vocab::kPad);
    auto a = te_forward(w, c, ids, {}, ForwardMode::inference());
    auto b = te_forward(w, c, padded, {}, ForwardMode::inference());
    EXPECT_LT(max_abs_diff(a, slice_rows(b, 0, len)), 1e-9);
  }
}

TEST(TeForward, DropoutDeterministicGivenSeed) {
  auto c = toy();
  c.dropout_p = 0.3;
  Rng init(6);
  auto w = EncoderWeights::create(c, init);
  auto ids = random_ids(init, 8);
  Rng r1(9), r2(9), r3(10);
  auto a = te_forward(w, c, ids, {}, {true, &r1});
  auto b = te_forward(w, c, ids, {}, {true, &r2});
  auto d = te_forward(w, c, ids, {}, {true, &r3});
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  EXPECT_GT(max_abs_diff(a, d), 0.0);
}

TEST(TlForward, ShapeAndCapacity) {
  auto c = toy();
  Rng rng(7);
  auto w = EncoderWeights::create(c, rng);
  auto e = random_matrix(rng, 5, 8);
  EXPECT_EQ(tl_forward(w, c, e, ForwardMode::inference()).shape(), (Shape{5, 8}));
  EXPECT_THROW(tl_forward(w, c, random_matrix(rng, 6, 8), ForwardMode::inference()),
               CapacityError);
}

TEST(TlForward, EquivariantWithoutPositions) {
  auto c = toy();
  Rng rng(8);
  auto w = EncoderWeights::create(c, rng);
  for (auto& x : w.utterance_position_embeddings.mutable_data()) x = 0.0;
  auto e = random_matrix(rng, 5, 8);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto direct = tl_forward(w, c, gather_rows(e, perm), ForwardMode::inference());
  auto permuted = gather_rows(tl_forward(w, c, e, ForwardMode::inference()), perm);
  EXPECT_LT(max_abs_diff(direct, permuted), 1e-12);
}

TEST(TlForward, OrderSensitiveWithPositions) {
  auto c = toy();
  Rng rng(8);
  auto w = EncoderWeights::create(c, rng);
  for (auto& x : w.utterance_position_embeddings.mutable_data()) x = rng.normal();
  auto e = random_matrix(rng, 5, 8);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto direct = tl_forward(w, c, gather_rows(e, perm), ForwardMode::inference());
  auto permuted = gather_rows(tl_forward(w, c, e, ForwardMode::inference()), perm);
  EXPECT_GT(max_abs_diff(direct, permuted), 1e-3);
}

TEST(TlForward, AblationFlagMatchesZeroedEmbeddings) {
  auto c = toy();
  Rng rng(11);
  auto w = EncoderWeights::create(c, rng);
  auto e = random_matrix(rng, 4, 8);
  auto off = c;
  off.utterance_positions = false;
  auto zeroed = w.clone();
  for (auto& x : zeroed.utterance_position_embeddings.mutable_data()) x = 0.0;
  EXPECT_EQ(max_abs_diff(tl_forward(w, off, e, ForwardMode::inference()),
                         tl_forward(zeroed, c, e, ForwardMode::inference())),
            0.0);
}

TEST(MhaForward, ShapeAndAttentionRows) {
  auto c = toy();
  Rng rng(12);
  auto w = EncoderWeights::create(c, rng);
  auto q = random_matrix(rng, 3, 8);
  auto u = random_matrix(rng, 6, 8);
  AttentionTrace trace;
  auto out = mha_forward(w, c, q, u, ForwardMode::inference(), &trace);
  EXPECT_EQ(out.shape(), (Shape{6, 8}));
  ASSERT_EQ(trace.size(), c.num_heads);
  for (const auto& probs : trace) {
    ASSERT_EQ(probs.shape(), (Shape{6, 3}));
    for (std::size_t r = 0; r < 6; ++r) {
      EXPECT_NEAR(probs.at(r, 0) + probs.at(r, 1) + probs.at(r, 2), 1.0, 1e-9);
    }
  }
}

TEST(MhaForward, ResidualIdentityUnderZeroOutput) {
  auto c = toy();
  Rng rng(13);
  auto w = EncoderWeights::create(c, rng);
  for (auto& x : w.mha.attention.output_w.mutable_data()) x = 0.0;
  for (auto& x : w.mha.attention.output_b.mutable_data()) x = 0.0;
  auto q = random_matrix(rng, 3, 8);
  auto u = random_matrix(rng, 6, 8);
  auto out = mha_forward(w, c, q, u, ForwardMode::inference());
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(out[i], u[i]);
}

TEST(GradCheck, TeForwardCrossEntropy) {
  auto c = toy();
  Rng rng(14);
  c.init_std = 0.1;
  auto w = EncoderWeights::create(c, rng);
  auto ids = random_ids(rng, 7);
  std::vector<std::size_t> targets{5, 9, 17, 3, 44, 0, 8};
  auto f = [&] {
    auto h = te_forward(w, c, ids, {}, ForwardMode::inference());
    return cross_entropy_rows(matmul(h, transpose(w.token_embeddings)), targets);
  };
  const std::vector<ParamGroup> groups{ParamGroup::kEncoder};
  const auto report = grad_check(f, named_tensors(w.parameters(groups)), {});
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_tensor;
}

TEST(Weights, CloneIsDeep) {
  auto c = toy();
  Rng rng(15);
  auto w = EncoderWeights::create(c, rng);
  auto copy = w.clone();
  copy.token_embeddings.mutable_data()[0] += 1.0;
  EXPECT_NE(copy.token_embeddings[0], w.token_embeddings[0]);
}

TEST(Weights, InitializeGroupTouchesOnlyGroup) {
  auto c = toy();
  Rng rng(16);
  auto w = EncoderWeights::create(c, rng);
  auto before = w.clone();
  Rng other(99);
  w.initialize_group(ParamGroup::kUopHead, c, other);
  EXPECT_NE(w.uop_w[0], before.uop_w[0]);
  EXPECT_EQ(w.token_embeddings[0], before.token_embeddings[0]);
  EXPECT_EQ(w.tl1.ff_in_w[0], before.tl1.ff_in_w[0]);
}
