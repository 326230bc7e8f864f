// SPDX-License-Identifier: Apache-2.0
#include "raggym/evaluation.hpp"

#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

MetricReport evaluate(std::span<const RunResult> results, std::span<const Question> gold, std::string dataset_id,
                      std::string run_id) {
  std::map<std::string, const RunResult*> by_id;
  for (const auto& r : results) {
    if (!by_id.emplace(r.question_id(), &r).second) {
      throw Error(ErrorKind::invalid_input, "duplicate result for question", r.question_id());
    }
  }
  MetricReport report;
  report.dataset_id = std::move(dataset_id);
  report.run_id = std::move(run_id);
  bool any_mc = false, any_open = false;
  for (const auto& q : gold) {
    if (!q.gold) throw Error(ErrorKind::unscorable, "gold file question without an answer", q.id);
    (q.task_kind == TaskKind::multiple_choice ? any_mc : any_open) = true;
    const auto it = by_id.find(q.id);
    std::string prediction;
    if (it != by_id.end() && !it->second->failed && it->second->trajectory.final_answer) {
      prediction = *it->second->trajectory.final_answer;
    }
    report.per_question.push_back(score_answer(q, prediction));
  }
  if (any_mc && any_open) throw Error(ErrorKind::invalid_input, "a dataset mixes multiple-choice and open questions");
  report.multiple_choice = any_mc;
  report.finalize();
  return report;
}

QueryStats query_stats(std::span<const RunResult> results) {
  std::vector<int> counts;
  counts.reserve(results.size());
  for (const auto& r : results) counts.push_back(r.n_search_queries);
  return query_stats(std::span<const int>(counts));
}

void to_json(json& j, const QueryStats& s) { j = json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}}; }

std::string_view to_string(SweepAxis a) { return a == SweepAxis::inference_n ? "inference_n" : "train_size"; }

std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> grid, const SweepPoint& point) {
  if (grid.empty()) throw Error(ErrorKind::invalid_input, "sweep grid is empty");
  std::vector<SweepRow> rows;
  for (double x : grid) {
    SweepRow row;
    row.x = x;
    try {
      row.report = point(x);
    } catch (const std::exception& e) {
      row.error = e.what();
      spdlog::warn("sweep point {}={} failed: {}", to_string(axis), x, e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(SweepAxis axis, std::span<const SweepRow> rows) {
  std::string out = "axis,x,status,em,f1,cem,acc,questions\n";
  for (const auto& r : rows) {
    if (!r.report) {
      out += fmt::format("{},{},failed,,,,,\n", to_string(axis), r.x);
      continue;
    }
    const auto& m = *r.report;
    out += fmt::format("{},{},ok,{:.6f},{:.6f},{:.6f},{},{}\n", to_string(axis), r.x, m.mean_em, m.mean_f1, m.mean_cem,
                       m.mean_acc ? fmt::format("{:.6f}", *m.mean_acc) : std::string(), m.per_question.size());
  }
  return out;
}

json sweep_plot(std::span<const SweepRow> rows) {
  json x = json::array(), em = json::array(), f1 = json::array(), cem = json::array(), acc = json::array();
  for (const auto& r : rows) {
    x.push_back(r.x);
    if (!r.report) {
      em.push_back(nullptr), f1.push_back(nullptr), cem.push_back(nullptr), acc.push_back(nullptr);
      continue;
    }
    em.push_back(r.report->mean_em);
    f1.push_back(r.report->mean_f1);
    cem.push_back(r.report->mean_cem);
    acc.push_back(r.report->mean_acc ? json(*r.report->mean_acc) : json(nullptr));
  }
  return json{{"x", x}, {"series", {{"em", em}, {"f1", f1}, {"cem", cem}, {"acc", acc}}}};
}

}  // namespace raggym
