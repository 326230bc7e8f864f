// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raggym/inference.hpp"
#include "raggym/metrics.hpp"

namespace raggym {

/// Scores run results against gold questions. A question without a
/// result, or whose episode failed or never answered, scores zero.
MetricReport evaluate(std::span<const RunResult> results, std::span<const Question> gold, std::string dataset_id,
                      std::string run_id);

QueryStats query_stats(std::span<const RunResult> results);
void to_json(json& j, const QueryStats& s);

enum class SweepAxis { inference_n, train_size };
std::string_view to_string(SweepAxis a);

struct SweepRow {
  double x = 0;
  std::optional<MetricReport> report;
  std::optional<std::string> error;
};

using SweepPoint = std::function<MetricReport(double x)>;

/// Evaluates `point` at every grid value in order. A failing point is
/// recorded and the sweep continues.
std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> grid, const SweepPoint& point);

/// axis,x,status,em,f1,cem,acc,questions
std::string sweep_csv(SweepAxis axis, std::span<const SweepRow> rows);
/// {x: [...], series: {em: [...], f1: [...], cem: [...], acc: [...]}};
/// failed points are null.
json sweep_plot(std::span<const SweepRow> rows);

}  // namespace raggym
