#ifndef DIALQA_CHECKPOINT_HPP
#define DIALQA_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dialqa/encoder.hpp"
#include "dialqa/optim.hpp"
#include "dialqa/vocab.hpp"

namespace dialqa {

// kNone tags a freshly initialized model that no stage has trained yet.
enum class Stage { kNone, kTmlm, kUmlm, kUop, kFinetuned };

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);  // ConfigError on unknown names
// Groups a stage trains and stores.
std::vector<ParamGroup> stage_groups(Stage stage);

// Where a training run stands, enough to continue it bit-exactly.
struct TrainingProgress {
  std::uint64_t global_step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t epoch_position = 0;  // examples of `epoch` already consumed
  std::uint64_t evals = 0;
  std::uint64_t evals_without_improvement = 0;
  std::optional<double> best_score;  // perplexity, accuracy or SM
  std::optional<double> best_loss;   // UOP dev loss
  std::uint64_t best_step = 0;
  bool stopped = false;

  bool operator==(const TrainingProgress&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Stage stage = Stage::kNone;
  std::uint64_t seed = 0;
  ModelConfig config;
  Vocab vocab;
  EncoderWeights weights;        // groups outside `groups` hold placeholders
  std::vector<ParamGroup> groups;  // stored groups, in ParamGroup order
  std::optional<AdamState> adam;   // moments follow weights.parameters(groups)
  std::optional<EncoderWeights> best_weights;  // snapshot kept for early stopping
  std::string rng_state;
  TrainingProgress progress;
};

// Fresh weights tagged kNone.
Checkpoint initial_checkpoint(const ModelConfig& config, const Vocab& vocab,
                              std::uint64_t seed);

// 8-byte magic, little-endian u64 header length, JSON header (config, vocab,
// tensor directory with name, shape and byte offset, optimizer scalars,
// progress), then the little-endian f64 payload.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json);

}  // namespace dialqa

#endif  // DIALQA_CHECKPOINT_HPP
