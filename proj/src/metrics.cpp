// SPDX-License-Identifier: Apache-2.0
#include "raggym/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "raggym/error.hpp"

namespace raggym {

namespace {

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string strip_punct_lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace

std::vector<std::string> normalized_tokens(std::string_view s) {
  std::vector<std::string> tokens;
  for (auto& t : split_ws(strip_punct_lower(s))) {
    if (t == "a" || t == "an" || t == "the") continue;
    tokens.push_back(std::move(t));
  }
  return tokens;
}

std::string normalize_text(std::string_view s) { return join(normalized_tokens(s)); }

int em(std::string_view prediction, std::string_view gold) {
  return normalize_text(prediction) == normalize_text(gold) ? 1 : 0;
}

double f1(std::string_view prediction, std::string_view gold) {
  const auto pred = normalized_tokens(prediction);
  const auto ref = normalized_tokens(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

int cem(std::string_view prediction, std::string_view gold) {
  const auto pred = normalized_tokens(prediction);
  const auto ref = normalized_tokens(gold);
  if (ref.empty()) return pred.empty() ? 1 : 0;
  return std::search(pred.begin(), pred.end(), ref.begin(), ref.end()) != pred.end() ? 1 : 0;
}

std::string normalize_label(std::string_view s) { return join(split_ws(strip_punct_lower(s))); }

int accuracy(std::string_view prediction_label, std::string_view gold_label) {
  return normalize_label(prediction_label) == normalize_label(gold_label) ? 1 : 0;
}

std::string extract_choice_label(std::string_view answer, const std::vector<Choice>& choices) {
  const std::string norm = normalize_label(answer);
  for (const auto& c : choices) {
    if (norm == normalize_label(c.label)) return c.label;
  }
  const auto tokens = split_ws(norm);
  if (!tokens.empty()) {
    for (const auto& c : choices) {
      if (tokens.front() == normalize_label(c.label)) return c.label;
    }
  }
  for (const auto& c : choices) {
    if (!c.text.empty() && normalize_text(answer) == normalize_text(c.text)) return c.label;
  }
  return norm;
}

QuestionMetrics score_answer(const Question& question, std::string_view prediction) {
  if (!question.gold) throw Error(ErrorKind::unscorable, "question has no gold answer", question.id);
  QuestionMetrics m;
  m.question_id = question.id;
  if (question.task_kind == TaskKind::multiple_choice) {
    const std::string label = extract_choice_label(prediction, question.choices);
    const double a = accuracy(label, *question.gold);
    m.acc = a;
    m.em = a;
    m.f1 = a;
    m.cem = a;
  } else {
    m.em = em(prediction, *question.gold);
    m.f1 = f1(prediction, *question.gold);
    m.cem = cem(prediction, *question.gold);
  }
  return m;
}

void MetricReport::finalize() {
  const double n = static_cast<double>(per_question.size());
  mean_em = mean_f1 = mean_cem = 0;
  mean_acc.reset();
  if (per_question.empty()) return;
  double acc_sum = 0;
  std::size_t acc_n = 0;
  for (const auto& q : per_question) {
    mean_em += q.em;
    mean_f1 += q.f1;
    mean_cem += q.cem;
    if (q.acc) acc_sum += *q.acc, ++acc_n;
  }
  mean_em /= n;
  mean_f1 /= n;
  mean_cem /= n;
  if (acc_n > 0) mean_acc = acc_sum / static_cast<double>(acc_n);
}

void to_json(json& j, const MetricReport& r) {
  json rows = json::array();
  for (const auto& q : r.per_question) {
    json row{{"question_id", q.question_id}, {"em", q.em}, {"f1", q.f1}, {"cem", q.cem}};
    row["acc"] = q.acc ? json(*q.acc) : json(nullptr);
    rows.push_back(std::move(row));
  }
  j = json{{"schema", "raggym.metrics.v1"},
           {"dataset_id", r.dataset_id},
           {"run_id", r.run_id},
           {"multiple_choice", r.multiple_choice},
           {"per_question", rows},
           {"aggregates",
            {{"em", r.mean_em}, {"f1", r.mean_f1}, {"cem", r.mean_cem},
             {"acc", r.mean_acc ? json(*r.mean_acc) : json(nullptr)}}}};
}

void from_json(const json& j, MetricReport& r) {
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.run_id = j.value("run_id", std::string());
  r.multiple_choice = j.value("multiple_choice", false);
  r.per_question.clear();
  for (const auto& row : j.at("per_question")) {
    QuestionMetrics q;
    q.question_id = row.at("question_id").get<std::string>();
    q.em = row.at("em").get<double>();
    q.f1 = row.at("f1").get<double>();
    q.cem = row.at("cem").get<double>();
    if (row.contains("acc") && !row.at("acc").is_null()) q.acc = row.at("acc").get<double>();
    r.per_question.push_back(std::move(q));
  }
  r.finalize();
}

std::string report_csv(const MetricReport& r) {
  std::string out = "question_id,em,f1,cem,acc\n";
  for (const auto& q : r.per_question) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{}\n", q.question_id, q.em, q.f1, q.cem,
                       q.acc ? fmt::format("{:.6f}", *q.acc) : std::string());
  }
  out += fmt::format("mean,{:.6f},{:.6f},{:.6f},{}\n", r.mean_em, r.mean_f1, r.mean_cem,
                     r.mean_acc ? fmt::format("{:.6f}", *r.mean_acc) : std::string());
  return out;
}

CrossTaskAverage aggregate(std::span<const MetricReport> reports) {
  CrossTaskAverage avg;
  if (reports.empty()) return avg;
  for (const auto& r : reports) {
    if (r.multiple_choice && r.mean_acc) {
      avg.em += *r.mean_acc;
      avg.f1 += *r.mean_acc;
    } else {
      avg.em += r.mean_em;
      avg.f1 += r.mean_f1;
    }
  }
  avg.tasks = reports.size();
  avg.em /= static_cast<double>(avg.tasks);
  avg.f1 /= static_cast<double>(avg.tasks);
  return avg;
}

QueryStats query_stats(std::span<const int> counts) {
  if (counts.empty()) throw Error(ErrorKind::invalid_input, "query_stats needs at least one result");
  QueryStats s;
  s.min = *std::min_element(counts.begin(), counts.end());
  s.max = *std::max_element(counts.begin(), counts.end());
  s.mean = static_cast<double>(std::accumulate(counts.begin(), counts.end(), 0LL)) /
           static_cast<double>(counts.size());
  return s;
}

}  // namespace raggym
