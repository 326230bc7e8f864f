// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "raggym/mdp.hpp"

namespace raggym {

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the and
/// collapse whitespace.
std::string normalize_text(std::string_view s);
std::vector<std::string> normalized_tokens(std::string_view s);

int em(std::string_view prediction, std::string_view gold);
double f1(std::string_view prediction, std::string_view gold);
/// 1 iff the normalized gold tokens occur contiguously in the prediction.
int cem(std::string_view prediction, std::string_view gold);
/// Label comparison (lowercase, punctuation stripped; articles kept so
/// that a choice labelled "A" survives).
int accuracy(std::string_view prediction_label, std::string_view gold_label);
std::string normalize_label(std::string_view s);

/// Maps a free-form multiple-choice answer ("(C)", "C. Aspirin",
/// "aspirin") onto one of the choice labels when possible; otherwise the
/// normalized answer is returned unchanged.
std::string extract_choice_label(std::string_view answer, const std::vector<Choice>& choices);

struct QuestionMetrics {
  std::string question_id;
  double em = 0;
  double f1 = 0;
  double cem = 0;
  std::optional<double> acc;
  bool operator==(const QuestionMetrics&) const = default;
};

QuestionMetrics score_answer(const Question& question, std::string_view prediction);

struct MetricReport {
  std::string dataset_id;
  std::string run_id;
  bool multiple_choice = false;
  std::vector<QuestionMetrics> per_question;
  double mean_em = 0;
  double mean_f1 = 0;
  double mean_cem = 0;
  std::optional<double> mean_acc;

  /// Recomputes the means from per_question.
  void finalize();
  bool operator==(const MetricReport&) const = default;
};

void to_json(json& j, const MetricReport& r);
void from_json(const json& j, MetricReport& r);
std::string report_csv(const MetricReport& r);

struct CrossTaskAverage {
  double em = 0;
  double f1 = 0;
  std::size_t tasks = 0;
};

/// Averages EM and F1 over tasks; a multiple-choice task contributes its
/// accuracy to both columns.
CrossTaskAverage aggregate(std::span<const MetricReport> reports);

struct QueryStats {
  int min = 0;
  int max = 0;
  double mean = 0;
  bool operator==(const QueryStats&) const = default;
};

QueryStats query_stats(std::span<const int> counts);

}  // namespace raggym
