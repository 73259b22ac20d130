#ifndef DIALQA_PIPELINE_HPP
#define DIALQA_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dialqa/checkpoint.hpp"
#include "dialqa/dialogue.hpp"
#include "dialqa/encoder.hpp"
#include "dialqa/evaluation.hpp"
#include "dialqa/finetune.hpp"
#include "dialqa/pretrain.hpp"

namespace dialqa {

struct StageBudget {
  std::uint64_t max_steps = 1000;
  std::uint64_t patience = 3;    // evaluations without improvement
  std::uint64_t eval_every = 0;  // steps; 0 evaluates at every epoch end
};

struct RunConfig {
  std::string corpus_path;
  std::string pretrain_corpus_path;  // optional extra dialogues for pre-training
  int train_max_episode = 20;
  int dev_max_episode = 22;

  ModelConfig model;  // vocab_size is filled from the vocabulary
  std::size_t min_freq = 1;

  std::size_t batch_size = 32;
  double base_lr = 5e-5;
  double warmup_fraction = 0.10;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // The fine-tuning objective adds the UID and span cross-entropies.
  std::string finetune_loss = "sum";

  MaskingMode masking = MaskingMode::kStatic;
  double mask_ratio = 0.15;
  std::size_t umlm_samples = 2;
  double uop_shuffle_prob = 0.5;

  StageBudget tmlm, umlm, uop, finetune;
  std::uint64_t seed = 42;

  const StageBudget& budget(Stage stage) const;
  StageBudget& budget(Stage stage);
  void validate() const;
};

// `key = value` lines; `#` starts a comment and `[section]` prefixes the
// following keys with "section.". Unknown keys are configuration errors.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Applies one key (e.g. "model.hidden_size" or "uop.max_steps").
void set_run_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string run_config_to_text(const RunConfig& config);

// Corpus after splitting and truncation, plus the shared vocabulary.
struct PreparedData {
  Vocab vocab;
  CorpusSplit split;
  std::vector<Dialogue> pretrain_dialogues;  // training split + extra corpus
};

// Builds the vocabulary from every dialogue and question unless one is given
// (a checkpoint's vocabulary must be reused across stages).
PreparedData prepare_data(const RunConfig& config, const Corpus& corpus,
                          const std::vector<Dialogue>& extra_pretrain = {},
                          const Vocab* vocab = nullptr);
PreparedData load_data(const RunConfig& config, const Vocab* vocab = nullptr);

enum class Split { kTrain, kDev, kTest };
Split parse_split(std::string_view name);
const Corpus& split_records(const PreparedData& data, Split split);

// Throws SequencingError unless `target` may start from a checkpoint tagged
// `source` (same stage means resume). nullopt stands for no checkpoint.
void check_stage_transition(std::optional<Stage> source, Stage target);

// Weights for the first update of `target`: groups the source stores are
// copied bit-exactly, everything else (and the new stage's heads) freshly
// initialized from `rng`. Shape disagreements raise IncompatibilityError.
EncoderWeights transfer_weights(const Checkpoint& source, Stage target,
                                const ModelConfig& target_config, Rng& rng);

struct EvalRecord {
  Stage stage = Stage::kNone;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double loss = 0.0;
  double score = 0.0;  // perplexity, accuracy (percent) or dev SM
  bool improved = false;
  std::optional<MetricReport> report;  // fine-tuning only

  std::string to_json() const;
};

struct RunOptions {
  // Return after this many global steps without marking the run finished.
  std::optional<std::uint64_t> stop_after_step;
  std::function<void(const EvalRecord&)> on_eval;
};

struct StageResult {
  Checkpoint last;  // carries optimizer state and progress for resuming
  Checkpoint best;  // early-stopping choice, no optimizer state
  std::vector<EvalRecord> history;
};

// stage is one of tmlm, umlm, uop.
StageResult run_stage(Stage stage, const RunConfig& config, const PreparedData& data,
                      const std::optional<Checkpoint>& init, const RunOptions& options = {});
StageResult run_finetune(const RunConfig& config, const PreparedData& data,
                         const Checkpoint& init, const RunOptions& options = {});

struct EvalResult {
  MetricReport report;
  std::vector<PredictionRecord> predictions;  // in corpus order
};

// StageError unless the checkpoint is fine-tuned.
EvalResult run_eval(const RunConfig& config, const PreparedData& data,
                    const Checkpoint& checkpoint, Split split);
EvalResult evaluate_records(const EncoderWeights& weights, const ModelConfig& config,
                            const Vocab& vocab, const Corpus& records);

// Held-out UOP accuracy (percent) and mean loss on paired instances: every
// eligible dialogue once in order and once with its second half reordered.
struct UopScore {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
};
UopScore evaluate_uop(const EncoderWeights& weights, const ModelConfig& config,
                      const Vocab& vocab, const std::vector<Dialogue>& dialogues,
                      std::uint64_t seed);

}  // namespace dialqa

#endif  // DIALQA_PIPELINE_HPP
