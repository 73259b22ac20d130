#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dialqa/checkpoint.hpp"
#include "dialqa/errors.hpp"
#include "dialqa/pipeline.hpp"
#include "dialqa/synth.hpp"

using namespace dialqa;

namespace {

RunConfig small_config() {
  RunConfig rc;
  rc.model.hidden_size = 16;
  rc.model.intermediate_size = 32;
  rc.model.max_tokens = 12;
  rc.batch_size = 4;
  rc.base_lr = 1e-3;
  for (Stage s : {Stage::kTmlm, Stage::kUmlm, Stage::kUop, Stage::kFinetuned}) {
    rc.budget(s).max_steps = 12;
    rc.budget(s).eval_every = 5;
    rc.budget(s).patience = 100;
  }
  return rc;
}

const PreparedData& small_data() {
  static const PreparedData data = [] {
    SynthOptions o;
    o.episodes = 24;
    o.scenes_per_episode = 1;
    o.questions_per_scene = 2;
    return prepare_data(small_config(), generate_synthetic_corpus(o));
  }();
  return data;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dialqa_test_" + name);
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool same_groups(const EncoderWeights& a, const EncoderWeights& b, std::vector<ParamGroup> groups) {
  auto pa = a.parameters(groups), pb = b.parameters(groups);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!same_tensor(pa[i].tensor, pb[i].tensor)) return false;
  return true;
}

const StageResult& tmlm_run() {
  static const StageResult r = run_stage(Stage::kTmlm, small_config(), small_data(), std::nullopt);
  return r;
}

const StageResult& umlm_run() {
  static const StageResult r = run_stage(Stage::kUmlm, small_config(), small_data(), tmlm_run().best);
  return r;
}

const StageResult& uop_run() {
  static const StageResult r = run_stage(Stage::kUop, small_config(), small_data(), umlm_run().best);
  return r;
}

}  // namespace

TEST(RunConfig, DefaultSnapshot) {
  const RunConfig rc;
  EXPECT_EQ(rc.batch_size, 32u);
  EXPECT_EQ(rc.base_lr, 5e-5);
  EXPECT_EQ(rc.beta1, 0.9);
  EXPECT_EQ(rc.beta2, 0.999);
  EXPECT_EQ(rc.weight_decay, 0.01);
  EXPECT_EQ(rc.warmup_fraction, 0.10);
  EXPECT_EQ(rc.model.dropout_p, 0.1);
  EXPECT_EQ(rc.finetune_loss, "sum");
  EXPECT_EQ(rc.train_max_episode, 20);
  EXPECT_EQ(rc.dev_max_episode, 22);
  EXPECT_EQ(rc.model.init_std, 0.02);
  EXPECT_EQ(rc.tmlm.patience, 3u);
  EXPECT_NO_THROW(rc.validate());
  EXPECT_EQ(parse_run_config("").base_lr, 5e-5);
}

TEST(RunConfig, ParsesSectionsAndComments) {
  const auto rc = parse_run_config(
      "# comment\nseed = 9\nbase_lr = 1e-3  # trailing\n[model]\nhidden_size = 16\n[uop]\nmax_steps = 77\n");
  EXPECT_EQ(rc.seed, 9u);
  EXPECT_EQ(rc.base_lr, 1e-3);
  EXPECT_EQ(rc.model.hidden_size, 16u);
  EXPECT_EQ(rc.uop.max_steps, 77u);
}

TEST(RunConfig, ErrorsNameLineAndKey) {
  try {
    parse_run_config("seed = 1\nnot a pair\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("batch_size = many\n"), ConfigError);
  EXPECT_THROW(parse_run_config("finetune_loss = mean\n").validate(), ConfigError);
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig rc = small_config();
  rc.seed = 123;
  rc.masking = MaskingMode::kDynamic;
  rc.model.utterance_positions = false;
  const auto text = run_config_to_text(rc);
  EXPECT_EQ(run_config_to_text(parse_run_config(text)), text);
}

TEST(Data, EpisodeBoundaries) {
  const auto& d = small_data();
  for (const auto& r : d.split.training) EXPECT_LE(r.dialogue.episode_id, 20);
  std::set<int> dev;
  for (const auto& r : d.split.development) dev.insert(r.dialogue.episode_id);
  EXPECT_EQ(dev, (std::set<int>{21, 22}));
  for (const auto& r : d.split.evaluation) EXPECT_GT(r.dialogue.episode_id, 22);
  EXPECT_EQ(&split_records(d, parse_split("dev")), &d.split.development);
  EXPECT_THROW(parse_split("validation"), ConfigError);
}

TEST(Data, VocabularyCoversTrainingQuestions) {
  const auto& d = small_data();
  for (const auto& r : d.split.training)
    for (const auto& q : r.questions)
      for (const auto& t : q.question_tokens) EXPECT_NE(d.vocab.word_id(t), Vocab::kUnk) << t;
}

TEST(StageGate, TotalTable) {
  const std::vector<std::optional<Stage>> sources{std::nullopt, Stage::kNone, Stage::kTmlm,
                                                  Stage::kUmlm, Stage::kUop, Stage::kFinetuned};
  const std::set<std::pair<int, int>> allowed{
      {-1, 1}, {0, 1}, {1, 1},  // t-MLM from scratch or resumed
      {1, 2}, {2, 2},           // u-MLM after t-MLM
      {2, 3}, {3, 3},           // UOP after u-MLM
      {3, 4}, {1, 4}, {4, 4},   // fine-tuning after UOP or the t-MLM baseline
  };
  for (const auto& src : sources) {
    for (Stage target : {Stage::kTmlm, Stage::kUmlm, Stage::kUop, Stage::kFinetuned}) {
      const int s = src ? static_cast<int>(*src) : -1;
      const int t = static_cast<int>(target);
      if (allowed.count({s, t})) {
        EXPECT_NO_THROW(check_stage_transition(src, target)) << s << "->" << t;
      } else {
        EXPECT_THROW(check_stage_transition(src, target), SequencingError) << s << "->" << t;
      }
    }
  }
}

TEST(StageGate, UmlmFromFreshCheckpointRejected) {
  const auto& d = small_data();
  auto rc = small_config();
  ModelConfig mc = rc.model;
  mc.vocab_size = d.vocab.size();
  EXPECT_THROW(run_stage(Stage::kUmlm, rc, d, initial_checkpoint(mc, d.vocab, 1)), SequencingError);
  EXPECT_THROW(run_stage(Stage::kUmlm, rc, d, std::nullopt), SequencingError);
}

TEST(Checkpoint, ByteIdenticalRoundTrip) {
  const auto& ck = tmlm_run().last;
  ASSERT_TRUE(ck.adam.has_value());
  ASSERT_TRUE(ck.best_weights.has_value());
  const auto bytes = serialize_checkpoint(ck);
  EXPECT_EQ(serialize_checkpoint(deserialize_checkpoint(bytes)), bytes);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(ck, path);
  const auto loaded = load_checkpoint(path);
  const auto path2 = temp_file("roundtrip2.ckpt");
  save_checkpoint(loaded, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string fa((std::istreambuf_iterator<char>(a)), {}), fb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(fa, fb);
  EXPECT_EQ(loaded.progress, ck.progress);
  EXPECT_EQ(loaded.rng_state, ck.rng_state);
  EXPECT_EQ(loaded.config, ck.config);
  EXPECT_TRUE(same_groups(loaded.weights, ck.weights, stage_groups(Stage::kTmlm)));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto bytes = serialize_checkpoint(tmlm_run().best);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 12)), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.ckpt")), CheckpointError);
}

TEST(Checkpoint, StoredShapesMatchConfig) {
  const auto ck = deserialize_checkpoint(serialize_checkpoint(uop_run().best));
  const auto shapes = parameter_shapes(ck.config);
  for (const auto& ref : ck.weights.parameters(ck.groups)) {
    bool found = false;
    for (const auto& [name, shape] : shapes)
      if (name == ref.name) {
        EXPECT_EQ(ref.tensor.shape(), shape) << name;
        found = true;
      }
    EXPECT_TRUE(found) << ref.name;
  }
}

TEST(Training, TmlmPerplexityDrops) {
  const auto& h = tmlm_run().history;
  ASSERT_GE(h.size(), 2u);
  EXPECT_EQ(h.front().step, 0u);
  EXPECT_LT(h.back().score, h.front().score);
  EXPECT_EQ(tmlm_run().last.stage, Stage::kTmlm);
  EXPECT_EQ(tmlm_run().last.progress.global_step, 12u);
}

TEST(Transfer, UmlmToUopKeepsEncoderFreshensUtteranceLayers) {
  const auto& src = umlm_run().best;
  Rng rng(5);
  auto w = transfer_weights(src, Stage::kUop, src.config, rng);
  EXPECT_TRUE(same_groups(w, src.weights, {ParamGroup::kEncoder}));
  EXPECT_TRUE(same_tensor(w.token_embeddings, src.weights.token_embeddings));
  EXPECT_FALSE(same_groups(w, src.weights, {ParamGroup::kUtterance}));
  // The first recorded evaluation of the next stage runs on the transferred
  // weights, before any update.
  EXPECT_EQ(uop_run().history.front().step, 0u);
}

TEST(Transfer, UopToFinetuneCopiesUtteranceLayers) {
  const auto& src = uop_run().best;
  Rng rng(6);
  auto w = transfer_weights(src, Stage::kFinetuned, src.config, rng);
  EXPECT_TRUE(same_groups(w, src.weights, {ParamGroup::kEncoder, ParamGroup::kUtterance}));
  EXPECT_TRUE(same_tensor(w.tl1.attention.query_w, src.weights.tl1.attention.query_w));
  EXPECT_TRUE(same_tensor(w.tl2.ff_out_w, src.weights.tl2.ff_out_w));
}

TEST(Transfer, TmlmBaselineFreshensUtteranceLayers) {
  const auto& src = tmlm_run().best;
  Rng rng(7);
  auto w = transfer_weights(src, Stage::kFinetuned, src.config, rng);
  EXPECT_TRUE(same_groups(w, src.weights, {ParamGroup::kEncoder}));
  auto r = run_finetune(small_config(), small_data(), src);
  EXPECT_EQ(r.last.stage, Stage::kFinetuned);
}

TEST(Transfer, HiddenSizeChangeIsIncompatible) {
  const auto& src = umlm_run().best;
  ModelConfig other = src.config;
  other.hidden_size = 8;
  other.intermediate_size = 16;
  Rng rng(8);
  try {
    transfer_weights(src, Stage::kUop, other, rng);
    FAIL();
  } catch (const IncompatibilityError& e) {
    EXPECT_NE(std::string(e.what()).find("token_embeddings"), std::string::npos) << e.what();
  }
  RunConfig rc = small_config();
  rc.model.hidden_size = 8;
  rc.model.intermediate_size = 16;
  EXPECT_THROW(run_stage(Stage::kUop, rc, small_data(), src), IncompatibilityError);
}

TEST(Resume, TmlmReplaysBitExactly) {
  const auto rc = small_config();
  RunOptions half;
  half.stop_after_step = 7;
  auto first = run_stage(Stage::kTmlm, rc, small_data(), std::nullopt, half);
  EXPECT_EQ(first.last.progress.global_step, 7u);
  const auto reloaded = deserialize_checkpoint(serialize_checkpoint(first.last));
  auto resumed = run_stage(Stage::kTmlm, rc, small_data(), reloaded);
  EXPECT_EQ(serialize_checkpoint(resumed.last), serialize_checkpoint(tmlm_run().last));
  EXPECT_EQ(serialize_checkpoint(resumed.best), serialize_checkpoint(tmlm_run().best));
}

TEST(Resume, FinetuneReplaysBitExactly) {
  const auto rc = small_config();
  const auto& init = uop_run().best;
  auto full = run_finetune(rc, small_data(), init);
  RunOptions half;
  half.stop_after_step = 6;
  auto first = run_finetune(rc, small_data(), init, half);
  auto resumed = run_finetune(rc, small_data(), deserialize_checkpoint(serialize_checkpoint(first.last)));
  EXPECT_EQ(serialize_checkpoint(resumed.last), serialize_checkpoint(full.last));
  ASSERT_FALSE(full.history.empty());
  EXPECT_EQ(resumed.history.back().score, full.history.back().score);
}

TEST(Eval, GateCoverageAndDeterminism) {
  const auto rc = small_config();
  EXPECT_THROW(run_eval(rc, small_data(), uop_run().best, Split::kDev), StageError);
  auto ft = run_finetune(rc, small_data(), uop_run().best);
  auto a = run_eval(rc, small_data(), ft.best, Split::kTest);
  auto b = run_eval(rc, small_data(), ft.best, Split::kTest);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  EXPECT_EQ(a.predictions, b.predictions);
  std::set<std::string> want, got;
  for (const auto& r : small_data().split.evaluation)
    for (const auto& q : r.questions) want.insert(q.qid);
  for (const auto& p : a.predictions) got.insert(p.qid);
  EXPECT_EQ(want, got);
  EXPECT_EQ(a.predictions.size(), want.size());
}

TEST(Uop, AblatedModelScoresExactlyChanceOnPairs) {
  const auto& d = small_data();
  ModelConfig mc = uop_run().best.config;
  mc.utterance_positions = false;
  const auto pretrain = d.pretrain_dialogues;
  const auto s = evaluate_uop(uop_run().best.weights, mc, d.vocab, pretrain, 3);
  ASSERT_GT(s.count, 0u);
  EXPECT_EQ(s.count % 2, 0u);
  EXPECT_DOUBLE_EQ(s.accuracy, 50.0);
}
