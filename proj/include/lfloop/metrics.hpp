#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "lfloop/aggregate.hpp"
#include "lfloop/downstream.hpp"
#include "lfloop/labelfns.hpp"

namespace lfloop {

/// End-of-run metric suite. Unavailable values are nullopt.
struct Metrics {
  std::optional<double> plm_acc;
  std::size_t lf_num = 0;
  std::optional<double> lf_acc_avg;
  std::optional<double> lf_cov_avg;
  std::optional<double> train_acc;  // on covered train instances only
  std::optional<double> train_cov;
  std::optional<double> test_score;
  MetricKind test_metric = MetricKind::Accuracy;

  bool operator==(const Metrics&) const = default;
};

/// What compute_metrics reads from a finished run.
struct MetricInputs {
  /// Per iteration: the (aggregated) PLM label, nullopt when unparseable, and
  /// the query's gold label when known.
  std::vector<std::optional<ClassIndex>> plm_labels;
  std::vector<std::optional<ClassIndex>> query_gold;
  /// Outputs of each final LF on the train split, in train order.
  std::vector<std::vector<ClassIndex>> lf_train_columns;
  /// Train gold labels, in train order (nullopt where absent).
  std::vector<std::optional<ClassIndex>> train_gold;
  /// Label-model output on train.
  ProbLabels train_labels;
  /// Downstream predictions on test and their gold labels; absent when no
  /// model could be trained.
  std::optional<std::vector<ClassIndex>> test_predicted;
  std::vector<ClassIndex> test_gold;
  MetricSpec test_metric;
};

Metrics compute_metrics(const MetricInputs& in);

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

}  // namespace lfloop
