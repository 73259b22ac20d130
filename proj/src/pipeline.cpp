#include "dialqa/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dialqa/errors.hpp"
#include "dialqa/log.hpp"
#include "dialqa/ops.hpp"
#include "dialqa/optim.hpp"

namespace dialqa {

// ---- configuration -----------------------------------------------------------

const StageBudget& RunConfig::budget(Stage stage) const {
  switch (stage) {
    case Stage::kTmlm: return tmlm;
    case Stage::kUmlm: return umlm;
    case Stage::kUop: return uop;
    case Stage::kFinetuned: return finetune;
    case Stage::kNone: break;
  }
  throw ConfigError("no training budget for stage 'none'");
}

StageBudget& RunConfig::budget(Stage stage) {
  return const_cast<StageBudget&>(static_cast<const RunConfig&>(*this).budget(stage));
}

void RunConfig::validate() const {
  if (train_max_episode >= dev_max_episode) {
    throw ConfigError("train_max_episode must be below dev_max_episode");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (finetune_loss != "sum") throw ConfigError("finetune_loss supports only 'sum'");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio must lie in [0, 1]");
  if (umlm_samples == 0) throw ConfigError("umlm_samples must be positive");
  if (!(uop_shuffle_prob >= 0.0 && uop_shuffle_prob <= 1.0)) {
    throw ConfigError("uop_shuffle_prob must lie in [0, 1]");
  }
  if (min_freq == 0) throw ConfigError("min_freq must be positive");
  for (Stage s : {Stage::kTmlm, Stage::kUmlm, Stage::kUop, Stage::kFinetuned}) {
    if (budget(s).max_steps == 0) {
      throw ConfigError(std::string(stage_name(s)) + ".max_steps must be positive");
    }
  }
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = Vocab::kNumSpecial + 1;
  m.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void set_run_config_value(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string v = unquote(trim(raw));
  auto size = [&](std::size_t& field) { field = parse_integer<std::size_t>(key, v); };
  auto u64 = [&](std::uint64_t& field) { field = parse_integer<std::uint64_t>(key, v); };
  auto num = [&](double& field) { field = parse_double(key, v); };

  if (key == "corpus") c.corpus_path = v;
  else if (key == "pretrain_corpus") c.pretrain_corpus_path = v;
  else if (key == "train_max_episode") c.train_max_episode = parse_integer<int>(key, v);
  else if (key == "dev_max_episode") c.dev_max_episode = parse_integer<int>(key, v);
  else if (key == "seed") u64(c.seed);
  else if (key == "batch_size") size(c.batch_size);
  else if (key == "base_lr") num(c.base_lr);
  else if (key == "warmup_fraction") num(c.warmup_fraction);
  else if (key == "weight_decay") num(c.weight_decay);
  else if (key == "beta1") num(c.beta1);
  else if (key == "beta2") num(c.beta2);
  else if (key == "adam_epsilon") num(c.adam_epsilon);
  else if (key == "dropout") num(c.model.dropout_p);
  else if (key == "finetune_loss") c.finetune_loss = v;
  else if (key == "min_freq") size(c.min_freq);
  else if (key == "masking") {
    if (v == "static") c.masking = MaskingMode::kStatic;
    else if (v == "dynamic") c.masking = MaskingMode::kDynamic;
    else throw ConfigError("masking must be static or dynamic, got '" + v + "'");
  }
  else if (key == "mask_ratio") num(c.mask_ratio);
  else if (key == "umlm_samples") size(c.umlm_samples);
  else if (key == "uop_shuffle_prob") num(c.uop_shuffle_prob);
  else if (key == "model.num_layers") size(c.model.num_layers);
  else if (key == "model.num_heads") size(c.model.num_heads);
  else if (key == "model.hidden_size") size(c.model.hidden_size);
  else if (key == "model.intermediate_size") size(c.model.intermediate_size);
  else if (key == "model.max_tokens") size(c.model.max_tokens);
  else if (key == "model.max_utterances") size(c.model.max_utterances);
  else if (key == "model.layer_norm_eps") num(c.model.layer_norm_eps);
  else if (key == "model.init_std") num(c.model.init_std);
  else if (key == "model.utterance_positions") c.model.utterance_positions = parse_bool(key, v);
  else if (key == "model.dropout") num(c.model.dropout_p);
  else {
    const auto dot = key.find('.');
    if (dot != std::string_view::npos) {
      const std::string_view section = key.substr(0, dot);
      const std::string_view field = key.substr(dot + 1);
      Stage stage = Stage::kNone;
      if (section == "tmlm") stage = Stage::kTmlm;
      else if (section == "umlm") stage = Stage::kUmlm;
      else if (section == "uop") stage = Stage::kUop;
      else if (section == "finetune") stage = Stage::kFinetuned;
      if (stage != Stage::kNone) {
        StageBudget& b = c.budget(stage);
        if (field == "max_steps") return u64(b.max_steps);
        if (field == "patience") return u64(b.patience);
        if (field == "eval_every") return u64(b.eval_every);
      }
    }
    throw ConfigError("unknown configuration key '" + std::string(key) + "'");
  }
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // '#' inside quotes is not expected in this format.
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set_run_config_value(base, key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string run_config_to_text(const RunConfig& c) {
  std::ostringstream out;
  out << "corpus = \"" << c.corpus_path << "\"\n"
      << "pretrain_corpus = \"" << c.pretrain_corpus_path << "\"\n"
      << "train_max_episode = " << c.train_max_episode << '\n'
      << "dev_max_episode = " << c.dev_max_episode << '\n'
      << "seed = " << c.seed << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "base_lr = " << format_double(c.base_lr) << '\n'
      << "warmup_fraction = " << format_double(c.warmup_fraction) << '\n'
      << "weight_decay = " << format_double(c.weight_decay) << '\n'
      << "beta1 = " << format_double(c.beta1) << '\n'
      << "beta2 = " << format_double(c.beta2) << '\n'
      << "adam_epsilon = " << format_double(c.adam_epsilon) << '\n'
      << "dropout = " << format_double(c.model.dropout_p) << '\n'
      << "finetune_loss = \"" << c.finetune_loss << "\"\n"
      << "min_freq = " << c.min_freq << '\n'
      << "masking = \"" << (c.masking == MaskingMode::kStatic ? "static" : "dynamic") << "\"\n"
      << "mask_ratio = " << format_double(c.mask_ratio) << '\n'
      << "umlm_samples = " << c.umlm_samples << '\n'
      << "uop_shuffle_prob = " << format_double(c.uop_shuffle_prob) << '\n'
      << "\n[model]\n"
      << "num_layers = " << c.model.num_layers << '\n'
      << "num_heads = " << c.model.num_heads << '\n'
      << "hidden_size = " << c.model.hidden_size << '\n'
      << "intermediate_size = " << c.model.intermediate_size << '\n'
      << "max_tokens = " << c.model.max_tokens << '\n'
      << "max_utterances = " << c.model.max_utterances << '\n'
      << "layer_norm_eps = " << format_double(c.model.layer_norm_eps) << '\n'
      << "init_std = " << format_double(c.model.init_std) << '\n'
      << "utterance_positions = " << (c.model.utterance_positions ? "true" : "false") << '\n';
  for (Stage s : {Stage::kTmlm, Stage::kUmlm, Stage::kUop, Stage::kFinetuned}) {
    const StageBudget& b = c.budget(s);
    out << "\n[" << (s == Stage::kFinetuned ? "finetune" : std::string(stage_name(s))) << "]\n"
        << "max_steps = " << b.max_steps << '\n'
        << "patience = " << b.patience << '\n'
        << "eval_every = " << b.eval_every << '\n';
  }
  return out.str();
}

// ---- data --------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& config, const Corpus& corpus,
                          const std::vector<Dialogue>& extra_pretrain, const Vocab* vocab) {
  config.validate();
  const std::size_t m = config.model.max_utterances;
  const std::size_t n = config.model.max_tokens;
  PreparedData data;
  CorpusSplit raw = split_by_episode(corpus, config.train_max_episode, config.dev_max_episode);
  auto cut = [&](const Corpus& records) {
    Corpus out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(truncate(r, m, n));
    return out;
  };
  data.split.training = cut(raw.training);
  data.split.development = cut(raw.development);
  data.split.evaluation = cut(raw.evaluation);
  for (const auto& d : extra_pretrain) data.split.pretrain_extra.push_back(truncate(d, m, n));

  data.pretrain_dialogues = dialogues_of(data.split.training);
  data.pretrain_dialogues.insert(data.pretrain_dialogues.end(), data.split.pretrain_extra.begin(),
                                 data.split.pretrain_extra.end());
  if (vocab != nullptr) {
    data.vocab = *vocab;
  } else {
    // Training questions contribute words; dev/test text stays unseen.
    std::vector<std::vector<std::string>> questions;
    for (const auto& r : data.split.training) {
      for (const auto& q : r.questions) questions.push_back(q.question_tokens);
    }
    data.vocab = Vocab::build(data.pretrain_dialogues, config.min_freq, questions);
  }
  return data;
}

PreparedData load_data(const RunConfig& config, const Vocab* vocab) {
  if (config.corpus_path.empty()) throw ConfigError("no corpus path configured");
  const Corpus corpus = load_corpus(config.corpus_path);
  std::vector<Dialogue> extra;
  if (!config.pretrain_corpus_path.empty()) {
    extra = dialogues_of(load_corpus(config.pretrain_corpus_path));
  }
  return prepare_data(config, corpus, extra, vocab);
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw ConfigError("split must be train, dev or test, got '" + std::string(name) + "'");
}

const Corpus& split_records(const PreparedData& data, Split split) {
  switch (split) {
    case Split::kTrain: return data.split.training;
    case Split::kDev: return data.split.development;
    case Split::kTest: return data.split.evaluation;
  }
  return data.split.evaluation;
}

// ---- stages and transfer -----------------------------------------------------

void check_stage_transition(std::optional<Stage> source, Stage target) {
  auto allowed = [&]() -> std::vector<std::optional<Stage>> {
    switch (target) {
      case Stage::kTmlm: return {std::nullopt, Stage::kNone, Stage::kTmlm};
      case Stage::kUmlm: return {Stage::kTmlm, Stage::kUmlm};
      case Stage::kUop: return {Stage::kUmlm, Stage::kUop};
      case Stage::kFinetuned: return {Stage::kUop, Stage::kTmlm, Stage::kFinetuned};
      case Stage::kNone: return {};
    }
    return {};
  }();
  if (std::find(allowed.begin(), allowed.end(), source) != allowed.end()) return;
  std::string expected;
  for (const auto& s : allowed) {
    if (!expected.empty()) expected += " or ";
    expected += s ? std::string(stage_name(*s)) : std::string("no checkpoint");
  }
  if (expected.empty()) expected = "nothing (stage cannot be trained)";
  const std::string got = source ? "a checkpoint tagged '" + std::string(stage_name(*source)) + "'"
                                 : std::string("no checkpoint");
  throw SequencingError("stage '" + std::string(stage_name(target)) + "' needs " + expected +
                        ", got " + got);
}

namespace {

std::vector<ParamGroup> fresh_heads(Stage target) {
  switch (target) {
    case Stage::kUop: return {ParamGroup::kUopHead};
    case Stage::kFinetuned:
      return {ParamGroup::kCrossAttention, ParamGroup::kUidHead, ParamGroup::kSpanHeads};
    default: return {};
  }
}

bool contains(const std::vector<ParamGroup>& groups, ParamGroup g) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

void check_shapes(const Checkpoint& source, const ModelConfig& target_config) {
  std::map<std::string, Shape> expected;
  for (auto& [name, shape] : parameter_shapes(target_config)) expected.emplace(name, shape);
  std::vector<std::string> bad;
  for (const auto& ref : source.weights.parameters(source.groups)) {
    auto it = expected.find(ref.name);
    if (it == expected.end()) {
      bad.push_back(ref.name + " (absent from the target model)");
    } else if (it->second != ref.tensor.shape()) {
      bad.push_back(ref.name + " " + shape_string(ref.tensor.shape()) + " vs " +
                    shape_string(it->second));
    }
  }
  if (source.weights.layers.size() != target_config.num_layers) {
    bad.push_back("te.layers (" + std::to_string(source.weights.layers.size()) + " vs " +
                  std::to_string(target_config.num_layers) + ")");
  }
  if (!bad.empty()) {
    std::string msg = "checkpoint does not fit the configured model:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw IncompatibilityError(msg);
  }
}

void copy_into(EncoderWeights& dst, const EncoderWeights& src, const std::vector<ParamGroup>& groups) {
  auto d = dst.parameters(groups);
  auto s = src.parameters(groups);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto out = d[i].tensor.mutable_data();
    auto in = s[i].tensor.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

std::uint64_t stage_code(Stage s) { return static_cast<std::uint64_t>(s) + 1; }

}  // namespace

EncoderWeights transfer_weights(const Checkpoint& source, Stage target,
                                const ModelConfig& target_config, Rng& rng) {
  check_stage_transition(source.stage, target);
  check_shapes(source, target_config);
  EncoderWeights weights = EncoderWeights::create(target_config, rng);
  const auto needed = stage_groups(target);
  const auto heads = source.stage == target ? std::vector<ParamGroup>{} : fresh_heads(target);
  std::vector<ParamGroup> copy;
  for (ParamGroup g : source.groups) {
    if (contains(needed, g) && !contains(heads, g)) copy.push_back(g);
  }
  copy_into(weights, source.weights, copy);
  return weights;
}

std::string EvalRecord::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = std::string(stage_name(stage));
  j["step"] = step;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["score"] = score;
  j["improved"] = improved;
  if (report) j["report"] = nlohmann::json::parse(report->to_json());
  return j.dump();
}

// ---- evaluation helpers --------------------------------------------------------

EvalResult evaluate_records(const EncoderWeights& weights, const ModelConfig& config,
                            const Vocab& vocab, const Corpus& records) {
  EvalResult result;
  std::vector<QAExample> gold;
  for (const auto& r : records) {
    for (const auto& q : r.questions) {
      const QAEncoding enc = encode_for_qa(vocab, config, q, r.dialogue);
      result.predictions.push_back(to_record(predict(weights, config, enc), q, r.dialogue));
      gold.push_back(q);
    }
  }
  result.report = evaluate(result.predictions, gold);
  return result;
}

UopScore evaluate_uop(const EncoderWeights& weights, const ModelConfig& config,
                      const Vocab& vocab, const std::vector<Dialogue>& dialogues,
                      std::uint64_t seed) {
  UopScore score;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const Dialogue& d = dialogues[i];
    if (d.utterances.size() < kMinUopUtterances) continue;
    const std::size_t k = d.utterances.size() - uop_split_point(d.utterances.size());
    std::vector<std::size_t> identity(k);
    std::iota(identity.begin(), identity.end(), 0);
    std::vector<std::size_t> shuffled = identity;
    Rng rng = Rng::derive(seed, 0x00d0, i);
    while (shuffled == identity) rng.shuffle(shuffled);
    for (const auto* order : {&identity, &shuffled}) {
      const UopInstance inst = make_uop_instance(vocab, d, *order);
      const Tensor logits = uop_logits(weights, config, inst, ForwardMode::inference());
      const std::size_t target = static_cast<std::size_t>(inst.label);
      loss_sum += cross_entropy(logits, target).item();
      const std::size_t predicted = logits[1] > logits[0] ? 1 : 0;
      correct += predicted == target ? 1 : 0;
      ++score.count;
    }
  }
  if (score.count > 0) {
    score.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(score.count);
    score.loss = loss_sum / static_cast<double>(score.count);
  }
  return score;
}

// ---- training loop -------------------------------------------------------------

namespace {

struct DevScore {
  double loss = 0.0;
  double score = 0.0;
  std::optional<MetricReport> report;
};

struct Task {
  std::function<std::size_t(std::uint64_t epoch)> epoch_size;
  std::function<Tensor(const EncoderWeights&, std::uint64_t epoch, std::size_t index,
                       const ForwardMode&)>
      loss;
  std::function<DevScore(const EncoderWeights&)> dev;  // empty: no held-out data
};

bool improves(Stage stage, const TrainingProgress& p, const DevScore& s) {
  if (!p.best_score) return true;
  switch (stage) {
    case Stage::kTmlm:
    case Stage::kUmlm: return s.score < *p.best_score;  // perplexity
    case Stage::kUop: return s.score > *p.best_score || s.loss < *p.best_loss;
    default: return s.score > *p.best_score;  // SM
  }
}

void record_best(Stage stage, TrainingProgress& p, const DevScore& s) {
  if (stage == Stage::kUop) {
    p.best_score = p.best_score ? std::max(*p.best_score, s.score) : s.score;
    p.best_loss = p.best_loss ? std::min(*p.best_loss, s.loss) : s.loss;
  } else {
    p.best_score = s.score;
    p.best_loss = s.loss;
  }
}

// Starting checkpoint of a stage: a resume keeps everything, a transfer
// starts a new optimizer, progress and generator.
Checkpoint start_checkpoint(Stage stage, const RunConfig& rc, const PreparedData& data,
                            const std::optional<Checkpoint>& init) {
  check_stage_transition(init ? std::optional<Stage>(init->stage) : std::nullopt, stage);
  ModelConfig mc = rc.model;
  mc.vocab_size = data.vocab.size();
  mc.validate();
  if (init && !(init->vocab == data.vocab)) {
    throw IncompatibilityError("the prepared data uses a different vocabulary than the checkpoint");
  }
  Checkpoint ck;
  if (init && init->stage == stage) {
    check_shapes(*init, mc);
    ck = *init;
    ck.weights = init->weights.clone();
    if (init->best_weights) ck.best_weights = init->best_weights->clone();
    ck.config = mc;
    return ck;
  }
  const Checkpoint base = init ? *init : initial_checkpoint(mc, data.vocab, rc.seed);
  Rng rng = Rng::derive(rc.seed, stage_code(stage), 0x1417);
  ck.stage = stage;
  ck.seed = rc.seed;
  ck.config = mc;
  ck.vocab = data.vocab;
  ck.weights = transfer_weights(base, stage, mc, rng);
  ck.groups = stage_groups(stage);
  ck.rng_state = Rng::derive(rc.seed, stage_code(stage), 0xd209).state();
  ck.progress = {};
  return ck;
}

StageResult train(Stage stage, const RunConfig& rc, Checkpoint ck, const Task& task,
                  const RunOptions& options) {
  const StageBudget& budget = rc.budget(stage);
  StageResult result;
  auto params_refs = ck.weights.parameters(ck.groups);
  std::vector<Tensor> params;
  for (auto& r : params_refs) {
    r.tensor.set_requires_grad(true);
    params.push_back(r.tensor);
  }
  if (!ck.adam) {
    AdamState a;
    a.beta1 = rc.beta1;
    a.beta2 = rc.beta2;
    a.epsilon = rc.adam_epsilon;
    a.weight_decay = rc.weight_decay;
    ck.adam = std::move(a);
  }
  Rng rng;
  rng.set_state(ck.rng_state);
  const LRSchedule schedule{rc.base_lr, budget.max_steps, rc.warmup_fraction};
  TrainingProgress& p = ck.progress;

  auto evaluate_now = [&]() {
    if (!task.dev) return;
    const DevScore s = task.dev(ck.weights);
    EvalRecord rec;
    rec.stage = stage;
    rec.step = p.global_step;
    rec.epoch = p.epoch;
    rec.loss = s.loss;
    rec.score = s.score;
    rec.report = s.report;
    rec.improved = improves(stage, p, s);
    ++p.evals;
    if (rec.improved) {
      record_best(stage, p, s);
      p.best_step = p.global_step;
      p.evals_without_improvement = 0;
      ck.best_weights = ck.weights.clone();
    } else {
      ++p.evals_without_improvement;
    }
    log_message(LogLevel::kInfo, std::string(stage_name(stage)) + " step " +
                                     std::to_string(p.global_step) + " dev loss " +
                                     format_double(s.loss) + " score " + format_double(s.score) +
                                     (rec.improved ? " (best)" : ""));
    if (options.on_eval) options.on_eval(rec);
    result.history.push_back(std::move(rec));
    if (p.evals_without_improvement >= budget.patience) p.stopped = true;
  };

  if (p.global_step == 0 && p.evals == 0) evaluate_now();

  std::uint64_t perm_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  while (!p.stopped && p.global_step < budget.max_steps) {
    if (options.stop_after_step && p.global_step >= *options.stop_after_step) break;
    const std::size_t n = task.epoch_size(p.epoch);
    if (n == 0) throw InputError("no training examples for stage " + std::string(stage_name(stage)));
    if (perm_epoch != p.epoch) {
      order.resize(n);
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle = Rng::derive(rc.seed ^ 0x5eed, stage_code(stage), p.epoch);
      shuffle.shuffle(order);
      perm_epoch = p.epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(p.epoch_position);
    const std::size_t take = std::min(rc.batch_size, n - begin);
    for (auto& t : params) t.zero_grad();
    const ForwardMode mode{true, &rng};
    const double scale = 1.0 / static_cast<double>(take);
    for (std::size_t j = 0; j < take; ++j) {
      const Tensor loss = task.loss(ck.weights, p.epoch, order[begin + j], mode);
      loss.backward(scale);
    }
    ++p.global_step;
    adam_step(params, *ck.adam, lr_at_step(schedule, p.global_step));
    p.epoch_position += take;
    bool epoch_end = false;
    if (p.epoch_position == n) {
      ++p.epoch;
      p.epoch_position = 0;
      epoch_end = true;
    }
    const bool due = budget.eval_every > 0 ? p.global_step % budget.eval_every == 0 : epoch_end;
    if (due || p.global_step == budget.max_steps) evaluate_now();
  }
  if (p.global_step >= budget.max_steps) p.stopped = true;
  for (auto& t : params) t.zero_grad();
  ck.rng_state = rng.state();

  result.best = ck;
  result.best.weights = ck.best_weights ? ck.best_weights->clone() : ck.weights.clone();
  result.best.best_weights.reset();
  result.best.adam.reset();
  result.best.progress = {};
  result.last = std::move(ck);
  return result;
}

std::vector<Dialogue> maskable_only(const Vocab& vocab, const std::vector<Dialogue>& dialogues) {
  std::vector<Dialogue> out;
  for (const auto& d : dialogues) {
    if (!encode_dialogue(vocab, d).word_positions.empty()) out.push_back(d);
  }
  return out;
}

std::vector<Dialogue> uop_eligible(const std::vector<Dialogue>& dialogues) {
  std::vector<Dialogue> out;
  for (const auto& d : dialogues) {
    if (d.utterances.size() >= kMinUopUtterances) out.push_back(d);
  }
  return out;
}

}  // namespace

StageResult run_stage(Stage stage, const RunConfig& rc, const PreparedData& data,
                      const std::optional<Checkpoint>& init, const RunOptions& options) {
  if (stage != Stage::kTmlm && stage != Stage::kUmlm && stage != Stage::kUop) {
    if (stage == Stage::kFinetuned) {
      if (!init) check_stage_transition(std::nullopt, stage);
      return run_finetune(rc, data, *init, options);
    }
    throw SequencingError("stage '" + std::string(stage_name(stage)) + "' cannot be trained");
  }
  Checkpoint ck = start_checkpoint(stage, rc, data, init);
  const ModelConfig mc = ck.config;
  const Vocab& vocab = data.vocab;
  const std::vector<Dialogue> dev_dialogues = dialogues_of(data.split.development);
  const MaskingOptions masking{rc.mask_ratio, true};
  Task task;

  if (stage == Stage::kTmlm) {
    auto train_set = std::make_shared<TmlmDataset>(vocab, mc, maskable_only(vocab, data.pretrain_dialogues),
                                                   rc.masking, mix_seed(rc.seed ^ 0x7131), masking);
    task.epoch_size = [train_set](std::uint64_t) { return train_set->size(); };
    task.loss = [train_set, mc](const EncoderWeights& w, std::uint64_t epoch, std::size_t i,
                                const ForwardMode& mode) {
      return tmlm_loss(w, mc, train_set->instance(i, epoch), mode);
    };
    auto dev_set = std::make_shared<TmlmDataset>(vocab, mc, maskable_only(vocab, dev_dialogues),
                                                 MaskingMode::kStatic, mix_seed(rc.seed ^ 0xde71),
                                                 masking);
    if (dev_set->size() > 0) {
      task.dev = [dev_set, mc](const EncoderWeights& w) {
        double sum = 0.0;
        for (std::size_t i = 0; i < dev_set->size(); ++i) {
          sum += tmlm_loss(w, mc, dev_set->instance(i, 0), ForwardMode::inference()).item();
        }
        DevScore s;
        s.loss = sum / static_cast<double>(dev_set->size());
        s.score = std::exp(s.loss);
        return s;
      };
    }
  } else if (stage == Stage::kUmlm) {
    struct EpochCache {
      std::uint64_t epoch = ~std::uint64_t{0};
      std::vector<UmlmInstance> instances;
    };
    auto cache = std::make_shared<EpochCache>();
    const auto dialogues = std::make_shared<std::vector<Dialogue>>(data.pretrain_dialogues);
    const std::size_t samples = rc.umlm_samples;
    const std::uint64_t seed = mix_seed(rc.seed ^ 0x0717);
    auto fill = [cache, dialogues, &vocab, samples, seed](std::uint64_t epoch) {
      if (cache->epoch == epoch) return;
      cache->instances.clear();
      for (std::size_t i = 0; i < dialogues->size(); ++i) {
        Rng rng = Rng::derive(seed, epoch + 1, i);
        auto built = build_umlm_instances(vocab, (*dialogues)[i], rng, samples);
        cache->instances.insert(cache->instances.end(), built.begin(), built.end());
      }
      cache->epoch = epoch;
    };
    task.epoch_size = [cache, fill](std::uint64_t epoch) {
      fill(epoch);
      return cache->instances.size();
    };
    task.loss = [cache, fill, mc](const EncoderWeights& w, std::uint64_t epoch, std::size_t i,
                                  const ForwardMode& mode) {
      fill(epoch);
      return umlm_loss(w, mc, cache->instances[i], mode);
    };
    auto dev = std::make_shared<std::vector<UmlmInstance>>();
    for (std::size_t i = 0; i < dev_dialogues.size(); ++i) {
      Rng rng = Rng::derive(mix_seed(rc.seed ^ 0xde72), 0, i);
      auto built = build_umlm_instances(vocab, dev_dialogues[i], rng, samples);
      dev->insert(dev->end(), built.begin(), built.end());
    }
    if (!dev->empty()) {
      task.dev = [dev, mc](const EncoderWeights& w) {
        double sum = 0.0;
        for (const auto& inst : *dev) sum += umlm_loss(w, mc, inst, ForwardMode::inference()).item();
        DevScore s;
        s.loss = sum / static_cast<double>(dev->size());
        s.score = std::exp(s.loss);
        return s;
      };
    }
  } else {
    const auto dialogues = std::make_shared<std::vector<Dialogue>>(uop_eligible(data.pretrain_dialogues));
    const std::uint64_t seed = mix_seed(rc.seed ^ 0x00da);
    const double prob = rc.uop_shuffle_prob;
    task.epoch_size = [dialogues](std::uint64_t) { return dialogues->size(); };
    task.loss = [dialogues, &vocab, mc, seed, prob](const EncoderWeights& w, std::uint64_t epoch,
                                                     std::size_t i, const ForwardMode& mode) {
      Rng rng = Rng::derive(seed, epoch + 1, i);
      const auto inst = build_uop_instance(vocab, (*dialogues)[i], rng, prob);
      return uop_loss(w, mc, *inst, mode);
    };
    auto dev = std::make_shared<std::vector<Dialogue>>(uop_eligible(dev_dialogues));
    if (!dev->empty()) {
      const std::uint64_t dev_seed = mix_seed(rc.seed ^ 0xde73);
      task.dev = [dev, &vocab, mc, dev_seed](const EncoderWeights& w) {
        const UopScore u = evaluate_uop(w, mc, vocab, *dev, dev_seed);
        DevScore s;
        s.loss = u.loss;
        s.score = u.accuracy;
        return s;
      };
    }
  }
  return train(stage, rc, std::move(ck), task, options);
}

StageResult run_finetune(const RunConfig& rc, const PreparedData& data, const Checkpoint& init,
                         const RunOptions& options) {
  Checkpoint ck = start_checkpoint(Stage::kFinetuned, rc, data, init);
  const ModelConfig mc = ck.config;
  auto encodings = std::make_shared<std::vector<QAEncoding>>();
  for (const auto& r : data.split.training) {
    for (const auto& q : r.questions) encodings->push_back(encode_for_qa(data.vocab, mc, q, r.dialogue));
  }
  Task task;
  task.epoch_size = [encodings](std::uint64_t) { return encodings->size(); };
  task.loss = [encodings, mc](const EncoderWeights& w, std::uint64_t, std::size_t i,
                              const ForwardMode& mode) { return joint_loss(w, mc, (*encodings)[i], mode); };
  bool has_dev = false;
  for (const auto& r : data.split.development) has_dev = has_dev || !r.questions.empty();
  if (has_dev) {
    const Corpus* dev = &data.split.development;
    const Vocab* vocab = &data.vocab;
    task.dev = [dev, vocab, mc](const EncoderWeights& w) {
      EvalResult e = evaluate_records(w, mc, *vocab, *dev);
      DevScore s;
      s.score = e.report.sm;
      s.report = e.report;
      return s;
    };
  }
  return train(Stage::kFinetuned, rc, std::move(ck), task, options);
}

EvalResult run_eval(const RunConfig& rc, const PreparedData& data, const Checkpoint& checkpoint,
                    Split split) {
  if (checkpoint.stage != Stage::kFinetuned) {
    throw StageError("evaluation needs a fine-tuned checkpoint, got one tagged '" +
                     std::string(stage_name(checkpoint.stage)) + "'");
  }
  if (!(checkpoint.vocab == data.vocab)) {
    throw IncompatibilityError("the prepared data uses a different vocabulary than the checkpoint");
  }
  (void)rc;
  return evaluate_records(checkpoint.weights, checkpoint.config, data.vocab,
                          split_records(data, split));
}

}  // namespace dialqa
