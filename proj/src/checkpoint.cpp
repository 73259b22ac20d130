#include "dialqa/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dialqa/errors.hpp"

namespace dialqa {
namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'D', 'Q', 'A', 'C', 'K', 'P', 'T', '\x01'};
constexpr std::string_view kBestPrefix = "best/";
constexpr std::string_view kFirstMomentPrefix = "adam.m/";
constexpr std::string_view kSecondMomentPrefix = "adam.v/";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order");

constexpr ParamGroup kAllGroups[] = {
    ParamGroup::kEncoder,        ParamGroup::kMlmHead, ParamGroup::kUtterance,
    ParamGroup::kUopHead,        ParamGroup::kCrossAttention,
    ParamGroup::kUidHead,        ParamGroup::kSpanHeads};

ParamGroup parse_group(const std::string& name) {
  for (ParamGroup g : kAllGroups) {
    if (param_group_name(g) == name) return g;
  }
  throw CheckpointError("unknown parameter group '" + name + "'");
}

json config_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"hidden_size", c.hidden_size},
              {"intermediate_size", c.intermediate_size},
              {"max_tokens", c.max_tokens},
              {"max_utterances", c.max_utterances},
              {"vocab_size", c.vocab_size},
              {"dropout_p", c.dropout_p},
              {"layer_norm_eps", c.layer_norm_eps},
              {"init_std", c.init_std},
              {"utterance_positions", c.utterance_positions}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.intermediate_size = j.at("intermediate_size").get<std::size_t>();
  c.max_tokens = j.at("max_tokens").get<std::size_t>();
  c.max_utterances = j.at("max_utterances").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.utterance_positions = j.at("utterance_positions").get<bool>();
  return c;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json progress_json(const TrainingProgress& p) {
  return json{{"global_step", p.global_step},
              {"epoch", p.epoch},
              {"epoch_position", p.epoch_position},
              {"evals", p.evals},
              {"evals_without_improvement", p.evals_without_improvement},
              {"best_score", optional_json(p.best_score)},
              {"best_loss", optional_json(p.best_loss)},
              {"best_step", p.best_step},
              {"stopped", p.stopped}};
}

TrainingProgress progress_from(const json& j) {
  TrainingProgress p;
  p.global_step = j.at("global_step").get<std::uint64_t>();
  p.epoch = j.at("epoch").get<std::uint64_t>();
  p.epoch_position = j.at("epoch_position").get<std::uint64_t>();
  p.evals = j.at("evals").get<std::uint64_t>();
  p.evals_without_improvement = j.at("evals_without_improvement").get<std::uint64_t>();
  p.best_score = optional_from(j.at("best_score"));
  p.best_loss = optional_from(j.at("best_loss"));
  p.best_step = j.at("best_step").get<std::uint64_t>();
  p.stopped = j.at("stopped").get<bool>();
  return p;
}

struct PayloadWriter {
  json directory = json::array();
  std::string bytes;

  void add(const std::string& name, const Shape& shape, std::span<const double> values) {
    directory.push_back(json{{"name", name}, {"shape", shape}, {"offset", bytes.size()}});
    const std::size_t n = values.size() * sizeof(double);
    const std::size_t at = bytes.size();
    bytes.resize(at + n);
    if (n > 0) std::memcpy(bytes.data() + at, values.data(), n);
  }
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

std::uint64_t read_u64(std::string_view bytes, std::size_t at) {
  std::uint64_t v = 0;
  std::memcpy(&v, bytes.data() + at, sizeof v);
  return v;
}

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kNone: return "none";
    case Stage::kTmlm: return "tmlm";
    case Stage::kUmlm: return "umlm";
    case Stage::kUop: return "uop";
    case Stage::kFinetuned: return "finetuned";
  }
  return "none";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::kNone, Stage::kTmlm, Stage::kUmlm, Stage::kUop, Stage::kFinetuned}) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::vector<ParamGroup> stage_groups(Stage stage) {
  switch (stage) {
    case Stage::kNone:
    case Stage::kTmlm:
    case Stage::kUmlm: return {ParamGroup::kEncoder, ParamGroup::kMlmHead};
    case Stage::kUop:
      return {ParamGroup::kEncoder, ParamGroup::kUtterance, ParamGroup::kUopHead};
    case Stage::kFinetuned:
      return {ParamGroup::kEncoder, ParamGroup::kUtterance, ParamGroup::kCrossAttention,
              ParamGroup::kUidHead, ParamGroup::kSpanHeads};
  }
  return {};
}

Checkpoint initial_checkpoint(const ModelConfig& config, const Vocab& vocab,
                              std::uint64_t seed) {
  ModelConfig c = config;
  c.vocab_size = vocab.size();
  c.validate();
  Checkpoint ck;
  ck.stage = Stage::kNone;
  ck.seed = seed;
  ck.config = c;
  ck.vocab = vocab;
  Rng rng = Rng::derive(seed, 0x1417);
  ck.weights = EncoderWeights::create(c, rng);
  ck.groups = stage_groups(Stage::kNone);
  ck.rng_state = rng.state();
  return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  if (ck.config.vocab_size != ck.vocab.size()) {
    throw CheckpointError("config vocab_size " + std::to_string(ck.config.vocab_size) +
                          " disagrees with the vocabulary (" +
                          std::to_string(ck.vocab.size()) + " tokens)");
  }
  PayloadWriter payload;
  const auto refs = ck.weights.parameters(ck.groups);
  for (const auto& ref : refs) payload.add(ref.name, ref.tensor.shape(), ref.tensor.data());
  if (ck.best_weights) {
    for (const auto& ref : ck.best_weights->parameters(ck.groups)) {
      payload.add(std::string(kBestPrefix) + ref.name, ref.tensor.shape(), ref.tensor.data());
    }
  }
  json adam = nullptr;
  if (ck.adam) {
    const AdamState& a = *ck.adam;
    const bool sized = !a.first_moment.empty();
    if (sized && (a.first_moment.size() != refs.size() || a.second_moment.size() != refs.size())) {
      throw CheckpointError("optimizer moments do not match the stored parameters");
    }
    adam = json{{"step", a.step},
                {"beta1", a.beta1},
                {"beta2", a.beta2},
                {"epsilon", a.epsilon},
                {"weight_decay", a.weight_decay},
                {"has_moments", sized}};
    if (sized) {
      for (std::size_t i = 0; i < refs.size(); ++i) {
        payload.add(std::string(kFirstMomentPrefix) + refs[i].name, refs[i].tensor.shape(),
                    a.first_moment[i]);
        payload.add(std::string(kSecondMomentPrefix) + refs[i].name, refs[i].tensor.shape(),
                    a.second_moment[i]);
      }
    }
  }
  json groups = json::array();
  for (ParamGroup g : ck.groups) groups.push_back(std::string(param_group_name(g)));

  const json header{{"format_version", Checkpoint::kFormatVersion},
                    {"stage", std::string(stage_name(ck.stage))},
                    {"seed", ck.seed},
                    {"config", config_json(ck.config)},
                    {"vocab", ck.vocab.tokens()},
                    {"groups", groups},
                    {"has_best", ck.best_weights.has_value()},
                    {"adam", adam},
                    {"rng_state", ck.rng_state},
                    {"progress", progress_json(ck.progress)},
                    {"tensors", payload.directory}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t length = text.size();
  out.append(reinterpret_cast<const char*>(&length), sizeof length);
  out += text;
  out += payload.bytes;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 8 || bytes.substr(0, sizeof kMagic) !=
                                              std::string_view(kMagic, sizeof kMagic)) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint64_t length = read_u64(bytes, sizeof kMagic);
  const std::size_t header_at = sizeof kMagic + 8;
  if (length > bytes.size() - header_at) throw CheckpointError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(header_at, length));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(header_at + length);

  try {
    const auto version = header.at("format_version").get<std::uint32_t>();
    if (version != Checkpoint::kFormatVersion) {
      throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.stage = parse_stage(header.at("stage").get<std::string>());
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.config = config_from(header.at("config"));
    ck.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    if (ck.config.vocab_size != ck.vocab.size()) {
      throw CheckpointError("config vocab_size disagrees with the stored vocabulary");
    }
    ck.config.validate();
    for (const auto& g : header.at("groups")) ck.groups.push_back(parse_group(g.get<std::string>()));
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.progress = progress_from(header.at("progress"));

    std::map<std::string, StoredTensor> stored;
    std::size_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      StoredTensor t;
      const auto name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(t.shape);
      if (offset != expected_offset || offset + n * sizeof(double) > payload.size()) {
        throw CheckpointError("tensor '" + name + "' lies outside the payload");
      }
      t.values.resize(n);
      if (n > 0) std::memcpy(t.values.data(), payload.data() + offset, n * sizeof(double));
      expected_offset = offset + n * sizeof(double);
      if (!stored.emplace(name, std::move(t)).second) {
        throw CheckpointError("duplicate tensor '" + name + "'");
      }
    }
    if (expected_offset != payload.size()) throw CheckpointError("trailing bytes after payload");

    // Placeholders for groups that are not stored, then overwrite the rest.
    Rng placeholder(0);
    ck.weights = EncoderWeights::create(ck.config, placeholder);
    auto take = [&](const std::string& name, const Tensor& slot) {
      auto it = stored.find(name);
      if (it == stored.end()) throw CheckpointError("missing tensor '" + name + "'");
      if (it->second.shape != slot.shape()) {
        throw CheckpointError("tensor '" + name + "' has shape " +
                              shape_string(it->second.shape) + ", config expects " +
                              shape_string(slot.shape()));
      }
      std::vector<double> values = std::move(it->second.values);
      stored.erase(it);
      return values;
    };
    auto fill = [&](EncoderWeights& w, std::string_view prefix) {
      for (auto& ref : w.parameters(ck.groups)) {
        auto values = take(std::string(prefix) + ref.name, ref.tensor);
        std::copy(values.begin(), values.end(), ref.tensor.mutable_data().begin());
      }
    };
    fill(ck.weights, "");
    if (header.at("has_best").get<bool>()) {
      ck.best_weights = ck.weights.clone();
      fill(*ck.best_weights, kBestPrefix);
    }
    const json& adam = header.at("adam");
    if (!adam.is_null()) {
      AdamState a;
      a.step = adam.at("step").get<std::uint64_t>();
      a.beta1 = adam.at("beta1").get<double>();
      a.beta2 = adam.at("beta2").get<double>();
      a.epsilon = adam.at("epsilon").get<double>();
      a.weight_decay = adam.at("weight_decay").get<double>();
      if (adam.at("has_moments").get<bool>()) {
        for (const auto& ref : ck.weights.parameters(ck.groups)) {
          a.first_moment.push_back(take(std::string(kFirstMomentPrefix) + ref.name, ref.tensor));
          a.second_moment.push_back(take(std::string(kSecondMomentPrefix) + ref.name, ref.tensor));
        }
      }
      ck.adam = std::move(a);
    }
    if (!stored.empty()) {
      throw CheckpointError("unexpected tensor '" + stored.begin()->first + "'");
    }
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig model_config_from_json(std::string_view text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
}

}  // namespace dialqa
