#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dialqa/errors.hpp"
#include "dialqa/optim.hpp"
#include "dialqa/pretrain.hpp"
#include "dialqa/synth.hpp"

using namespace dialqa;

namespace {

struct Fixture {
  Corpus corpus;
  std::vector<Dialogue> dialogues;
  Vocab vocab;
  ModelConfig config;

  Fixture() {
    SynthOptions o;
    o.episodes = 3;
    o.scenes_per_episode = 4;
    corpus = generate_synthetic_corpus(o);
    dialogues = dialogues_of(corpus);
    vocab = Vocab::build(dialogues);
    config.hidden_size = 16;
    config.intermediate_size = 32;
    config.vocab_size = vocab.size();
    config.dropout_p = 0.0;
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

Dialogue make_dialogue(std::size_t utterances, std::size_t words) {
  Dialogue d;
  for (std::size_t i = 0; i < utterances; ++i) {
    Utterance u{i % 2 ? "Monica" : "Ross", {}};
    for (std::size_t j = 0; j < words; ++j) u.tokens.push_back("w" + std::to_string(i * words + j));
    d.utterances.push_back(u);
  }
  return d;
}

template <typename LossFn>
double overfit(EncoderWeights& w, LossFn loss_fn, int steps, double lr) {
  auto refs = w.parameters();
  std::vector<Tensor> params;
  for (auto& r : refs) {
    r.tensor.set_requires_grad(true);
    params.push_back(r.tensor);
  }
  AdamState st;
  st.weight_decay = 0.0;
  for (int s = 0; s < steps; ++s) {
    for (auto& p : params) p.zero_grad();
    auto loss = loss_fn();
    loss.backward();
    adam_step(params, st, lr);
  }
  return loss_fn().item();
}

}  // namespace

TEST(Masking, RatioZeroWithoutForcing) {
  const auto& f = fx();
  std::vector<TokenId> ids(20, f.vocab.first_word_id());
  std::vector<std::size_t> pos(20);
  for (std::size_t i = 0; i < 20; ++i) pos[i] = i;
  Rng rng(1);
  auto m = mask_tokens(ids, pos, f.vocab, rng, {0.0, false});
  EXPECT_TRUE(m.positions.empty());
  EXPECT_EQ(m.token_ids, ids);
  auto forced = mask_tokens(ids, pos, f.vocab, rng, {0.0, true});
  EXPECT_EQ(forced.positions.size(), 1u);
  EXPECT_THROW(mask_tokens(ids, std::span<const std::size_t>{}, f.vocab, rng), InputError);
}

TEST(Masking, MonteCarloRates) {
  const auto& f = fx();
  const std::size_t n = 1000000;
  std::vector<TokenId> ids(n);
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = f.vocab.first_word_id() + static_cast<TokenId>(i % 7);
    pos[i] = i;
  }
  Rng rng(2024);
  auto m = mask_tokens(ids, pos, f.vocab, rng);
  const double selected = static_cast<double>(m.positions.size());
  EXPECT_NEAR(selected / n, 0.15, 0.002);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t k = 0; k < m.kinds.size(); ++k) {
    ++counts[static_cast<int>(m.kinds[k])];
    const TokenId t = m.token_ids[m.positions[k]];
    EXPECT_FALSE(f.vocab.is_special(m.labels[k]));
    switch (m.kinds[k]) {
      case MaskKind::kMask: EXPECT_EQ(t, Vocab::kMask); break;
      case MaskKind::kRandom: EXPECT_GE(t, f.vocab.first_word_id()); break;
      case MaskKind::kKeep: EXPECT_EQ(t, m.labels[k]); break;
    }
  }
  EXPECT_NEAR(counts[0] / selected, 0.8, 0.02);
  EXPECT_NEAR(counts[1] / selected, 0.1, 0.02);
  EXPECT_NEAR(counts[2] / selected, 0.1, 0.02);
}

TEST(Masking, StaticRepeatsDynamicVaries) {
  const auto& f = fx();
  std::vector<TokenId> ids(100, f.vocab.first_word_id());
  std::vector<std::size_t> pos(100);
  for (std::size_t i = 0; i < 100; ++i) pos[i] = i;
  Rng a(5), b(5);
  EXPECT_EQ(mask_tokens(ids, pos, f.vocab, a).positions, mask_tokens(ids, pos, f.vocab, b).positions);

  TmlmDataset stat(f.vocab, f.config, f.dialogues, MaskingMode::kStatic, 3);
  TmlmDataset dyn(f.vocab, f.config, f.dialogues, MaskingMode::kDynamic, 3);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < stat.size(); ++i) {
    EXPECT_EQ(stat.instance(i, 0).mask_positions, stat.instance(i, 5).mask_positions);
    EXPECT_EQ(dyn.instance(i, 1).mask_positions, dyn.instance(i, 1).mask_positions);
    if (dyn.instance(i, 0).mask_positions != dyn.instance(i, 1).mask_positions) ++differing;
  }
  EXPECT_GT(differing, stat.size() / 2);
}

TEST(Tmlm, SequenceLayout) {
  auto d = make_dialogue(2, 2);
  auto v = Vocab::build(std::vector<Dialogue>{d});
  auto seq = encode_dialogue(v, d);
  EXPECT_EQ(seq.token_ids.size(), 7u);
  EXPECT_EQ(seq.token_ids[0], Vocab::kCls);
  EXPECT_TRUE(v.is_speaker(seq.token_ids[1]));
  EXPECT_TRUE(v.is_speaker(seq.token_ids[4]));
  EXPECT_EQ(seq.word_positions, (std::vector<std::size_t>{2, 3, 5, 6}));
}

TEST(Tmlm, NeverMasksClsOrSpeakers) {
  const auto& f = fx();
  Rng rng(8);
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (const auto& d : f.dialogues) {
      auto inst = build_tmlm_instance(f.vocab, f.config, d, rng, {0.5, true});
      ASSERT_FALSE(inst.mask_positions.empty());
      for (std::size_t k = 0; k < inst.mask_positions.size(); ++k) {
        const auto p = inst.mask_positions[k];
        EXPECT_NE(p, 0u);
        EXPECT_FALSE(f.vocab.is_special(inst.mask_labels[k]));
        EXPECT_FALSE(f.vocab.is_speaker(inst.mask_labels[k]));
      }
    }
  }
}

TEST(Tmlm, UnmaskedDecodeReproducesDialogue) {
  const auto& f = fx();
  for (const auto& d : f.dialogues) {
    auto seq = encode_dialogue(f.vocab, d);
    auto text = f.vocab.decode(seq.token_ids);
    std::vector<std::string> expected{"[CLS]"};
    for (const auto& u : d.utterances) {
      expected.push_back(speaker_token(u.speaker));
      expected.insert(expected.end(), u.tokens.begin(), u.tokens.end());
    }
    EXPECT_EQ(text, expected);
  }
}

TEST(Tmlm, CapacityError) {
  auto c = fx().config;
  c.max_utterances = 1;
  c.max_tokens = 2;
  auto d = make_dialogue(3, 3);
  auto v = Vocab::build(std::vector<Dialogue>{d});
  Rng rng(1);
  EXPECT_THROW(build_tmlm_instance(v, c, d, rng), CapacityError);
}

TEST(Tmlm, MeanReduction) {
  const auto& f = fx();
  Rng rng(3);
  auto w = EncoderWeights::create(f.config, rng);
  auto seq = encode_dialogue(f.vocab, f.dialogues[0]);
  TmlmInstance one{seq.token_ids, {seq.word_positions[0]}, {seq.token_ids[seq.word_positions[0]]}};
  TmlmInstance two = one;
  two.mask_positions.push_back(seq.word_positions[1]);
  two.mask_labels.push_back(seq.token_ids[seq.word_positions[1]]);
  TmlmInstance second{seq.token_ids, {seq.word_positions[1]}, {seq.token_ids[seq.word_positions[1]]}};
  const auto m = ForwardMode::inference();
  EXPECT_NEAR(tmlm_loss(w, f.config, two, m).item(),
              0.5 * (tmlm_loss(w, f.config, one, m).item() + tmlm_loss(w, f.config, second, m).item()),
              1e-12);
}

TEST(Tmlm, OverfitsOneInstance) {
  const auto& f = fx();
  Rng rng(4);
  auto w = EncoderWeights::create(f.config, rng);
  auto inst = build_tmlm_instance(f.vocab, f.config, f.dialogues[0], rng);
  const double loss = overfit(w, [&] { return tmlm_loss(w, f.config, inst, ForwardMode::inference()); }, 200, 1e-2);
  EXPECT_LT(loss, 0.01);
}

TEST(Umlm, EnumeratesAllPositions) {
  auto d = make_dialogue(1, 3);
  auto v = Vocab::build(std::vector<Dialogue>{d});
  Rng rng(1);
  auto insts = build_umlm_instances(v, d, rng, 3);
  ASSERT_EQ(insts.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& i : insts) {
    EXPECT_EQ(i.token_ids.size(), 5u);
    EXPECT_EQ(i.token_ids[0], Vocab::kCls);
    EXPECT_EQ(i.token_ids[i.mask_position], Vocab::kMask);
    EXPECT_EQ(std::count(i.token_ids.begin(), i.token_ids.end(), Vocab::kMask), 1);
    seen.insert(i.mask_position);
  }
  EXPECT_EQ(seen, (std::set<std::size_t>{2, 3, 4}));
  EXPECT_THROW(build_umlm_instances(v, d, rng, 0), ConfigError);
}

TEST(Umlm, SkipsEmptyUtterancesAndCoversOverEpochs) {
  Dialogue d = make_dialogue(2, 6);
  d.utterances.push_back({"Ross", {}});
  auto v = Vocab::build(std::vector<Dialogue>{d});
  std::set<std::pair<std::size_t, std::size_t>> covered;
  for (std::uint64_t epoch = 0; epoch < 50; ++epoch) {
    Rng rng = Rng::derive(1, epoch);
    auto insts = build_umlm_instances(v, d, rng, 2);
    ASSERT_EQ(insts.size(), 4u);
    for (std::size_t k = 0; k < insts.size(); ++k) covered.insert({k / 2, insts[k].mask_position});
  }
  EXPECT_EQ(covered.size(), 12u);
}

TEST(Umlm, OverfitsOneInstance) {
  const auto& f = fx();
  Rng rng(6);
  auto w = EncoderWeights::create(f.config, rng);
  auto inst = build_umlm_instances(f.vocab, f.dialogues[1], rng, 1).front();
  const double loss = overfit(w, [&] { return umlm_loss(w, f.config, inst, ForwardMode::inference()); }, 200, 1e-2);
  EXPECT_LT(loss, 0.01);
}

TEST(Uop, LabelsFollowPermutation) {
  auto d = make_dialogue(4, 2);
  auto v = Vocab::build(std::vector<Dialogue>{d});
  const std::size_t identity[] = {0, 1};
  const std::size_t swapped[] = {1, 0};
  auto a = make_uop_instance(v, d, identity);
  auto b = make_uop_instance(v, d, swapped);
  EXPECT_EQ(a.label, UopLabel::kInOrder);
  EXPECT_EQ(b.label, UopLabel::kShuffled);
  EXPECT_EQ(b.order, (std::vector<std::size_t>{0, 1, 3, 2}));
  EXPECT_EQ(b.utterance_token_ids[2][0], Vocab::kCls);
  EXPECT_EQ(uop_split_point(5), 3u);
  EXPECT_EQ(uop_split_point(4), 2u);
  const std::size_t bad[] = {0, 0};
  EXPECT_THROW(make_uop_instance(v, d, bad), InputError);
  Rng rng(1);
  EXPECT_FALSE(build_uop_instance(v, make_dialogue(3, 2), rng).has_value());
}

TEST(Uop, MonteCarloBalanceAndNonIdentity) {
  auto d = make_dialogue(6, 1);
  auto v = Vocab::build(std::vector<Dialogue>{d});
  Rng rng(77);
  std::size_t shuffled = 0;
  std::set<std::vector<std::size_t>> perms;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    auto inst = build_uop_instance(v, d, rng);
    ASSERT_TRUE(inst.has_value());
    std::vector<std::size_t> second(inst->order.begin() + 3, inst->order.end());
    std::vector<std::size_t> sorted = second;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<std::size_t>{3, 4, 5}));
    const bool identity = second == sorted;
    EXPECT_EQ(identity, inst->label == UopLabel::kInOrder);
    if (!identity) {
      ++shuffled;
      perms.insert(second);
    }
  }
  EXPECT_NEAR(static_cast<double>(shuffled) / trials, 0.5, 0.02);
  EXPECT_EQ(perms.size(), 5u);
}

TEST(Uop, LogitsShape) {
  const auto& f = fx();
  Rng rng(9);
  auto w = EncoderWeights::create(f.config, rng);
  auto inst = build_uop_instance(f.vocab, f.dialogues[0], rng);
  ASSERT_TRUE(inst.has_value());
  EXPECT_EQ(uop_logits(w, f.config, *inst, ForwardMode::inference()).shape(), (Shape{2}));
}

TEST(InitBands, LossesNearUniform) {
  const auto& f = fx();
  double tm = 0.0, um = 0.0, uo = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    auto w = EncoderWeights::create(f.config, rng);
    double t = 0.0, u = 0.0, o = 0.0;
    int nt = 0, nu = 0, no = 0;
    for (const auto& d : f.dialogues) {
      t += tmlm_loss(w, f.config, build_tmlm_instance(f.vocab, f.config, d, rng), {}).item();
      ++nt;
      for (const auto& inst : build_umlm_instances(f.vocab, d, rng, 1)) {
        u += umlm_loss(w, f.config, inst, {}).item();
        ++nu;
      }
      if (auto inst = build_uop_instance(f.vocab, d, rng)) {
        o += uop_loss(w, f.config, *inst, {}).item();
        ++no;
      }
    }
    tm += t / nt / seeds;
    um += u / nu / seeds;
    uo += o / no / seeds;
  }
  const double lnv = std::log(static_cast<double>(f.vocab.size()));
  EXPECT_LT(std::abs(tm - lnv) / lnv, 0.15);
  EXPECT_LT(std::abs(um - lnv) / lnv, 0.15);
  EXPECT_LT(std::abs(uo - std::log(2.0)) / std::log(2.0), 0.15);
}
