#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dialqa/checkpoint.hpp"
#include "dialqa/errors.hpp"
#include "dialqa/evaluation.hpp"
#include "dialqa/finetune.hpp"
#include "dialqa/pipeline.hpp"
#include "dialqa/synth.hpp"
#include "dialqa/vocab.hpp"

namespace py = pybind11;
using namespace dialqa;

namespace {

py::dict metric_row(double em, double sm, double um, std::size_t count) {
  py::dict d;
  d["em"] = em;
  d["sm"] = sm;
  d["um"] = um;
  d["count"] = count;
  return d;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d = metric_row(r.em, r.sm, r.um, r.total);
  py::dict per_type;
  for (const auto& [type, row] : r.per_type)
    per_type[py::str(type)] = metric_row(row.em, row.sm, row.um, row.count);
  d["per_type"] = per_type;
  return d;
}

py::dict prediction_dict(const Prediction& p) {
  py::dict d;
  d["utterance_index"] = p.utterance_index;
  d["token_start"] = p.token_start;
  d["token_end"] = p.token_end;
  d["uid_scores"] = p.uid_scores;
  return d;
}

Stage run_stage_named(const std::string& name) {
  const Stage s = parse_stage(name);
  if (s == Stage::kNone || s == Stage::kFinetuned)
    throw ConfigError("run_stage takes tmlm, umlm or uop, not " + name);
  return s;
}

}  // namespace

PYBIND11_MODULE(_dialqa, m) {
  m.doc() = "Bindings for the dialqa C++ core";
  m.attr("__version__") = "0.1.0";

  static py::exception<Error> error(m, "DialqaError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
      exc.attr("kind") = e.kind();
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  // ---- data ----

  py::class_<Utterance>(m, "Utterance")
      .def(py::init<>())
      .def(py::init([](std::string speaker, std::vector<std::string> tokens) {
             return Utterance{std::move(speaker), std::move(tokens)};
           }),
           py::arg("speaker"), py::arg("tokens"))
      .def_readwrite("speaker", &Utterance::speaker)
      .def_readwrite("tokens", &Utterance::tokens);

  py::class_<Dialogue>(m, "Dialogue")
      .def(py::init<>())
      .def_readwrite("episode_id", &Dialogue::episode_id)
      .def_readwrite("scene_id", &Dialogue::scene_id)
      .def_readwrite("utterances", &Dialogue::utterances);

  py::class_<AnswerSpan>(m, "AnswerSpan")
      .def(py::init<>())
      .def_readwrite("utterance_index", &AnswerSpan::utterance_index)
      .def_readwrite("token_start", &AnswerSpan::token_start)
      .def_readwrite("token_end", &AnswerSpan::token_end)
      .def_readwrite("text", &AnswerSpan::text);

  py::class_<QAExample>(m, "QAExample")
      .def(py::init<>())
      .def_readwrite("qid", &QAExample::qid)
      .def_readwrite("question_tokens", &QAExample::question_tokens)
      .def_readwrite("answers", &QAExample::answers)
      .def_property_readonly("question_type",
                             [](const QAExample& q) {
                               return std::string(question_type_name(q.question_type));
                             })
      .def("answerable", &QAExample::answerable);

  py::class_<DialogueRecord>(m, "DialogueRecord")
      .def(py::init<>())
      .def_readwrite("dialogue", &DialogueRecord::dialogue)
      .def_readwrite("questions", &DialogueRecord::questions);

  m.def("tokenize", &tokenize);
  m.def("parse_corpus", [](const std::string& text) { return parse_corpus(text); });
  m.def("load_corpus", &load_corpus);
  m.def("save_corpus", &save_corpus);
  m.def(
      "generate_synthetic_corpus",
      [](std::uint64_t seed, int first_episode, int episodes, std::size_t scenes_per_episode,
         std::size_t questions_per_scene, double unanswerable_fraction, bool with_questions) {
        SynthOptions o;
        o.seed = seed;
        o.first_episode = first_episode;
        o.episodes = episodes;
        o.scenes_per_episode = scenes_per_episode;
        o.questions_per_scene = questions_per_scene;
        o.unanswerable_fraction = unanswerable_fraction;
        o.with_questions = with_questions;
        return generate_synthetic_corpus(o);
      },
      py::arg("seed") = 7, py::arg("first_episode") = 1, py::arg("episodes") = 30,
      py::arg("scenes_per_episode") = 4, py::arg("questions_per_scene") = 3,
      py::arg("unanswerable_fraction") = 0.0, py::arg("with_questions") = true);

  py::class_<Vocab>(m, "Vocab")
      .def_static("build",
                  [](const std::vector<Dialogue>& dialogues, std::size_t min_freq) {
                    return Vocab::build(dialogues, min_freq);
                  },
                  py::arg("dialogues"), py::arg("min_freq") = 1)
      .def_static("from_tokens", &Vocab::from_tokens)
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save)
      .def("__len__", &Vocab::size)
      .def_property_readonly("tokens", &Vocab::tokens)
      .def("word_id", &Vocab::word_id)
      .def("speaker_id", &Vocab::speaker_id)
      .def("encode_utterance", &Vocab::encode_utterance)
      .def("decode",
           [](const Vocab& v, const std::vector<TokenId>& ids) { return v.decode(ids); });

  // ---- answer selection and metrics ----

  m.def(
      "select_answer",
      [](const std::vector<double>& uid,
         const std::vector<std::pair<std::vector<double>, std::vector<double>>>& spans) {
        std::vector<UtteranceSpanScores> s;
        for (const auto& [l, r] : spans) s.push_back({l, r});
        return prediction_dict(select_answer(uid, s));
      },
      py::arg("uid_scores"), py::arg("span_scores"));

  m.def("normalize_answer", &normalize_answer);
  m.def("exact_match", [](std::optional<std::string> p, const std::vector<std::string>& g) {
    return exact_match(p, g);
  });
  m.def("span_f1", [](std::optional<std::string> p, const std::vector<std::string>& g) {
    return span_f1(p, g);
  });

  py::class_<PredictionRecord>(m, "PredictionRecord")
      .def(py::init<>())
      .def_readwrite("qid", &PredictionRecord::qid)
      .def_readwrite("utterance_index", &PredictionRecord::utterance_index)
      .def_readwrite("token_start", &PredictionRecord::token_start)
      .def_readwrite("token_end", &PredictionRecord::token_end)
      .def_readwrite("text", &PredictionRecord::text)
      .def("to_json", &to_json_line);

  m.def("load_predictions", &load_predictions);
  m.def("save_predictions", [](const std::vector<PredictionRecord>& p, const std::string& path) {
    save_predictions(p, path);
  });
  m.def("evaluate",
        [](const std::vector<PredictionRecord>& predictions, const Corpus& gold) {
          std::vector<QAExample> questions;
          for (const auto& r : gold)
            questions.insert(questions.end(), r.questions.begin(), r.questions.end());
          return report_dict(evaluate(predictions, questions));
        },
        py::arg("predictions"), py::arg("gold"));

  // ---- configuration, training, checkpoints ----

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return parse_run_config(text); })
      .def_static("load", &load_run_config)
      .def("set", [](RunConfig& c, const std::string& key, const std::string& value) {
        set_run_config_value(c, key, value);
      })
      .def("validate", &RunConfig::validate)
      .def("to_text", &run_config_to_text)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("batch_size", &RunConfig::batch_size)
      .def_readwrite("base_lr", &RunConfig::base_lr);

  py::class_<PreparedData>(m, "PreparedData")
      .def_readonly("vocab", &PreparedData::vocab)
      .def_property_readonly("train", [](const PreparedData& d) { return d.split.training; })
      .def_property_readonly("dev", [](const PreparedData& d) { return d.split.development; })
      .def_property_readonly("test", [](const PreparedData& d) { return d.split.evaluation; });

  m.def("prepare_data",
        [](const RunConfig& c, const Corpus& corpus, const std::vector<Dialogue>& extra) {
          return prepare_data(c, corpus, extra);
        },
        py::arg("config"), py::arg("corpus"), py::arg("extra_pretrain") = std::vector<Dialogue>{});

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint)
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def_property_readonly("stage", [](const Checkpoint& c) { return std::string(stage_name(c.stage)); })
      .def_property_readonly("global_step", [](const Checkpoint& c) { return c.progress.global_step; })
      .def_property_readonly("vocab", [](const Checkpoint& c) { return c.vocab; })
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(serialize_checkpoint(c)); })
      .def_static("from_bytes", [](const py::bytes& b) {
        return deserialize_checkpoint(static_cast<std::string>(b));
      });

  py::class_<StageResult>(m, "StageResult")
      .def_readonly("last", &StageResult::last)
      .def_readonly("best", &StageResult::best)
      .def_property_readonly("history", [](const StageResult& r) {
        py::list out;
        for (const auto& e : r.history) {
          py::dict d;
          d["stage"] = std::string(stage_name(e.stage));
          d["step"] = e.step;
          d["epoch"] = e.epoch;
          d["loss"] = e.loss;
          d["score"] = e.score;
          d["improved"] = e.improved;
          out.append(d);
        }
        return out;
      });

  m.def("run_stage",
        [](const std::string& stage, const RunConfig& c, const PreparedData& d,
           std::optional<Checkpoint> init) {
          py::gil_scoped_release release;
          return run_stage(run_stage_named(stage), c, d, init);
        },
        py::arg("stage"), py::arg("config"), py::arg("data"), py::arg("init") = py::none());
  m.def("run_finetune",
        [](const RunConfig& c, const PreparedData& d, const Checkpoint& init) {
          py::gil_scoped_release release;
          return run_finetune(c, d, init);
        },
        py::arg("config"), py::arg("data"), py::arg("init"));
  m.def("run_eval",
        [](const RunConfig& c, const PreparedData& d, const Checkpoint& ck, const std::string& split) {
          auto r = run_eval(c, d, ck, parse_split(split));
          return py::make_tuple(report_dict(r.report), r.predictions);
        },
        py::arg("config"), py::arg("data"), py::arg("checkpoint"), py::arg("split") = "dev");
}
