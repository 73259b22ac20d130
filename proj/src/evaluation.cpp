#include "dialqa/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "dialqa/errors.hpp"

namespace dialqa {

std::string normalize_answer(std::string_view text) {
  return join_tokens(tokenize(text));
}

double exact_match(const std::optional<std::string>& prediction,
                   std::span<const std::string> gold_texts) {
  if (!prediction) return gold_texts.empty() ? 1.0 : 0.0;
  const std::string pred = normalize_answer(*prediction);
  for (const auto& g : gold_texts) {
    if (normalize_answer(g) == pred) return 1.0;
  }
  return 0.0;
}

namespace {

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : gold) ++counts[t];
  long common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double span_f1(const std::optional<std::string>& prediction,
               std::span<const std::string> gold_texts) {
  if (gold_texts.empty()) {
    return prediction ? token_f1(tokenize(*prediction), {}) : 1.0;
  }
  if (!prediction) return 0.0;
  const auto pred = tokenize(*prediction);
  double best = 0.0;
  for (const auto& g : gold_texts) best = std::max(best, token_f1(pred, tokenize(g)));
  return best;
}

double utterance_match(std::optional<std::size_t> predicted_utterance,
                       std::span<const AnswerSpan> gold_answers) {
  if (!predicted_utterance) return gold_answers.empty() ? 1.0 : 0.0;
  for (const auto& a : gold_answers) {
    if (a.utterance_index == *predicted_utterance) return 1.0;
  }
  return 0.0;
}

MetricReport evaluate(std::span<const PredictionRecord> predictions,
                      std::span<const QAExample> gold) {
  std::unordered_map<std::string, const PredictionRecord*> by_qid;
  std::vector<std::string> extra, duplicate, missing;
  for (const auto& p : predictions) {
    if (!by_qid.emplace(p.qid, &p).second) duplicate.push_back(p.qid);
  }
  std::unordered_map<std::string, bool> gold_ids;
  for (const auto& q : gold) {
    if (!gold_ids.emplace(q.qid, true).second) duplicate.push_back(q.qid);
    if (!by_qid.count(q.qid)) missing.push_back(q.qid);
  }
  for (const auto& p : predictions) {
    if (!gold_ids.count(p.qid)) extra.push_back(p.qid);
  }
  if (!missing.empty() || !extra.empty() || !duplicate.empty()) {
    auto list = [](std::vector<std::string> ids) {
      std::sort(ids.begin(), ids.end());
      std::string s;
      for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
      return s;
    };
    std::string message = "predictions and gold questions are misaligned:";
    if (!missing.empty()) message += " missing [" + list(missing) + "]";
    if (!extra.empty()) message += " extra [" + list(extra) + "]";
    if (!duplicate.empty()) message += " duplicate [" + list(duplicate) + "]";
    throw AlignmentError(message);
  }

  // Accumulate in qid order so the float sums are independent of input order.
  std::vector<const QAExample*> ordered;
  for (const auto& q : gold) ordered.push_back(&q);
  std::sort(ordered.begin(), ordered.end(),
            [](const QAExample* a, const QAExample* b) { return a->qid < b->qid; });
  struct Sums { double em = 0, sm = 0, um = 0; std::size_t n = 0; };
  Sums all;
  std::map<std::string, Sums> per_type;
  for (const QAExample* qp : ordered) {
    const QAExample& q = *qp;
    const PredictionRecord& p = *by_qid.at(q.qid);
    std::vector<std::string> golds;
    for (const auto& a : q.answers) golds.push_back(a.text);
    const std::optional<std::string> text =
        p.has_answer() ? std::optional<std::string>(p.text) : std::nullopt;
    const std::optional<std::size_t> utt =
        p.has_answer() ? std::optional<std::size_t>(static_cast<std::size_t>(p.utterance_index))
                       : std::nullopt;
    // A textual match only counts inside the predicted utterance.
    std::vector<std::string> same_utterance;
    for (const auto& a : q.answers) {
      if (utt && a.utterance_index == *utt) same_utterance.push_back(a.text);
    }
    const double em = exact_match(text, utt ? same_utterance : golds);
    const double sm = span_f1(text, golds);
    const double um = utterance_match(utt, q.answers);
    for (Sums* s : {&all, &per_type[std::string(question_type_name(q.question_type))]}) {
      s->em += em;
      s->sm += sm;
      s->um += um;
      s->n += 1;
    }
  }
  auto pct = [](double v, std::size_t n) { return n ? 100.0 * v / static_cast<double>(n) : 0.0; };
  MetricReport report;
  report.total = all.n;
  report.em = pct(all.em, all.n);
  report.sm = pct(all.sm, all.n);
  report.um = pct(all.um, all.n);
  for (const auto& [type, s] : per_type) {
    report.per_type[type] = {pct(s.em, s.n), pct(s.sm, s.n), pct(s.um, s.n), s.n};
  }
  return report;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["em"] = em;
  j["sm"] = sm;
  j["um"] = um;
  j["total"] = total;
  j["per_type"] = nlohmann::ordered_json::object();
  for (const auto& [type, r] : per_type) {
    j["per_type"][type] = {{"em", r.em}, {"sm", r.sm}, {"um", r.um}, {"count", r.count}};
  }
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << std::left << std::setw(8) << "Type" << std::right << std::setw(8) << "Dist."
      << std::setw(8) << "EM" << std::setw(8) << "SM" << std::setw(8) << "UM" << '\n';
  std::vector<std::pair<std::string, MetricRow>> rows(per_type.begin(), per_type.end());
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.second.sm > b.second.sm; });
  for (const auto& [type, r] : rows) {
    const double dist = total ? 100.0 * static_cast<double>(r.count) / static_cast<double>(total) : 0.0;
    out << std::left << std::setw(8) << type << std::right << std::setw(8) << dist
        << std::setw(8) << r.em << std::setw(8) << r.sm << std::setw(8) << r.um << '\n';
  }
  out << std::left << std::setw(8) << "all" << std::right << std::setw(8) << 100.0
      << std::setw(8) << em << std::setw(8) << sm << std::setw(8) << um << '\n';
  return out.str();
}

}  // namespace dialqa
