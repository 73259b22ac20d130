#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialqa/checkpoint.hpp"
#include "dialqa/errors.hpp"
#include "dialqa/log.hpp"
#include "dialqa/pipeline.hpp"
#include "dialqa/synth.hpp"

namespace fs = std::filesystem;
using namespace dialqa;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string init;
  std::string out;
  std::string corpus;
  std::string pretrain_corpus;
  std::optional<std::uint64_t> max_steps;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--seed", c.seed, "overrides the configured seed");
  cmd->add_option("--init", c.init, "checkpoint to start from");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--corpus", c.corpus, "overrides the configured corpus path");
  cmd->add_option("--pretrain-corpus", c.pretrain_corpus, "overrides the extra pre-training corpus");
}

RunConfig resolve_config(const Common& c) {
  RunConfig rc = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) rc.seed = *c.seed;
  if (!c.corpus.empty()) rc.corpus_path = c.corpus;
  if (!c.pretrain_corpus.empty()) rc.pretrain_corpus_path = c.pretrain_corpus;
  rc.validate();
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void write_training_outputs(const fs::path& dir, const RunConfig& rc, const StageResult& r) {
  fs::create_directories(dir);
  save_checkpoint(r.last, dir / "last.ckpt");
  save_checkpoint(r.best, dir / "best.ckpt");
  r.last.vocab.save(dir / "vocab.txt");
  write_text(dir / "config.txt", run_config_to_text(rc));
  std::string history;
  for (const auto& e : r.history) history += e.to_json() + "\n";
  write_text(dir / "history.jsonl", history);
  nlohmann::ordered_json summary;
  summary["stage"] = std::string(stage_name(r.last.stage));
  summary["steps"] = r.last.progress.global_step;
  summary["best_step"] = r.last.progress.best_step;
  summary["best_score"] = r.last.progress.best_score ? nlohmann::json(*r.last.progress.best_score)
                                                     : nlohmann::json(nullptr);
  summary["early_stopped"] = r.last.progress.global_step < rc.budget(r.last.stage).max_steps;
  std::cout << summary.dump() << '\n';
}

int run_train(Stage stage, const Common& c) {
  RunConfig rc = resolve_config(c);
  if (c.max_steps) rc.budget(stage).max_steps = *c.max_steps;
  std::optional<Checkpoint> init;
  if (!c.init.empty()) init = load_checkpoint(c.init);
  const PreparedData data = load_data(rc, init ? &init->vocab : nullptr);
  if (!init) check_stage_transition(std::nullopt, stage);
  const StageResult r = stage == Stage::kFinetuned ? run_finetune(rc, data, *init)
                                                   : run_stage(stage, rc, data, init);
  write_training_outputs(c.out, rc, r);
  return 0;
}

int run_evaluate(const Common& c, const std::string& split_name) {
  const RunConfig rc = resolve_config(c);
  if (c.init.empty()) throw InputError("evaluate needs --init <fine-tuned checkpoint>");
  const Checkpoint ck = load_checkpoint(c.init);
  if (ck.stage != Stage::kFinetuned) {
    throw StageError("evaluation needs a fine-tuned checkpoint, got one tagged '" +
                     std::string(stage_name(ck.stage)) + "'");
  }
  const PreparedData data = load_data(rc, &ck.vocab);
  const EvalResult r = run_eval(rc, data, ck, parse_split(split_name));
  fs::create_directories(c.out);
  save_predictions(r.predictions, (fs::path(c.out) / "predictions.jsonl").string());
  write_text(fs::path(c.out) / "report.json", r.report.to_json() + "\n");
  write_text(fs::path(c.out) / "report.txt", r.report.to_table());
  std::cout << r.report.to_table();
  return 0;
}

struct SynthArgs {
  SynthOptions corpus;
  int pretrain_episodes = 0;
};

int run_synth(const Common& c, SynthArgs args) {
  if (c.seed) args.corpus.seed = *c.seed;
  fs::create_directories(c.out);
  save_corpus(generate_synthetic_corpus(args.corpus), fs::path(c.out) / "corpus.json");
  if (args.pretrain_episodes > 0) {
    SynthOptions extra = args.corpus;
    extra.first_episode = args.corpus.first_episode + args.corpus.episodes;
    extra.episodes = args.pretrain_episodes;
    extra.with_questions = false;
    save_corpus(generate_synthetic_corpus(extra), fs::path(c.out) / "pretrain.json");
  }
  return 0;
}

void report_error(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical dialogue QA: staged pre-training, fine-tuning and evaluation"};
  app.require_subcommand(1);

  Common pretrain_opts, finetune_opts, eval_opts, synth_opts;
  std::string stage_name_arg;
  auto* pretrain = app.add_subcommand("pretrain", "run one pre-training stage");
  pretrain->add_option("--stage", stage_name_arg, "tmlm, umlm or uop")
      ->required()
      ->check(CLI::IsMember({"tmlm", "umlm", "uop"}));
  add_common(pretrain, pretrain_opts);
  pretrain->add_option("--max-steps", pretrain_opts.max_steps, "overrides the stage step budget");

  auto* finetune = app.add_subcommand("finetune", "multi-task fine-tuning");
  add_common(finetune, finetune_opts);
  finetune->add_option("--max-steps", finetune_opts.max_steps, "overrides the step budget");

  std::string split = "dev";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "predict and score one split");
  add_common(evaluate_cmd, eval_opts);
  evaluate_cmd->add_option("--split", split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic corpus");
  add_common(synth, synth_opts);
  synth->add_option("--episodes", synth_args.corpus.episodes, "episodes with questions");
  synth->add_option("--scenes", synth_args.corpus.scenes_per_episode, "scenes per episode");
  synth->add_option("--questions", synth_args.corpus.questions_per_scene, "questions per scene");
  synth->add_option("--unanswerable", synth_args.corpus.unanswerable_fraction,
                    "fraction of unanswerable questions");
  synth->add_option("--pretrain-episodes", synth_args.pretrain_episodes,
                    "extra question-free episodes written to pretrain.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 64;
  }

  try {
    if (*pretrain) return run_train(parse_stage(stage_name_arg), pretrain_opts);
    if (*finetune) return run_train(Stage::kFinetuned, finetune_opts);
    if (*evaluate_cmd) return run_evaluate(eval_opts, split);
    if (*synth) return run_synth(synth_opts, synth_args);
  } catch (const Error& e) {
    report_error(e.kind(), e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
