#include "lfloop/metrics.hpp"

#include "lfloop/errors.hpp"

namespace lfloop {

using nlohmann::json;

Metrics compute_metrics(const MetricInputs& in) {
  Metrics m;
  m.test_metric = in.test_metric.kind;
  const std::size_t n_train = in.train_gold.size();

  if (in.plm_labels.size() != in.query_gold.size()) throw UsageError("compute_metrics: iteration lists differ in length");
  if (!in.plm_labels.empty()) {
    std::size_t correct = 0;
    bool known = true;
    for (std::size_t t = 0; t < in.plm_labels.size(); ++t) {
      if (!in.query_gold[t]) {
        known = false;
        break;
      }
      correct += in.plm_labels[t] == in.query_gold[t];
    }
    if (known) m.plm_acc = static_cast<double>(correct) / static_cast<double>(in.plm_labels.size());
  }

  m.lf_num = in.lf_train_columns.size();
  if (m.lf_num > 0 && n_train > 0) {
    double cov_sum = 0.0, acc_sum = 0.0;
    std::size_t acc_n = 0;
    bool gold_complete = true;
    for (const auto& g : in.train_gold) gold_complete = gold_complete && g.has_value();
    for (const auto& col : in.lf_train_columns) {
      if (col.size() != n_train) throw UsageError("compute_metrics: LF column length != train size");
      std::size_t active = 0, correct = 0;
      for (std::size_t i = 0; i < n_train; ++i) {
        if (col[i] == kAbstain) continue;
        ++active;
        correct += in.train_gold[i] == col[i];
      }
      cov_sum += static_cast<double>(active) / static_cast<double>(n_train);
      if (active > 0) {
        acc_sum += static_cast<double>(correct) / static_cast<double>(active);
        ++acc_n;
      }
    }
    m.lf_cov_avg = cov_sum / static_cast<double>(m.lf_num);
    if (gold_complete && acc_n > 0) m.lf_acc_avg = acc_sum / static_cast<double>(acc_n);
  }

  if (n_train > 0) {
    if (static_cast<std::size_t>(in.train_labels.n()) != n_train || in.train_labels.covered.size() != n_train)
      throw UsageError("compute_metrics: label-model output does not match the train split");
    std::size_t covered = 0, scored = 0, correct = 0;
    bool gold_complete = true;
    for (std::size_t i = 0; i < n_train; ++i) {
      if (!in.train_labels.covered[i]) continue;
      ++covered;
      if (!in.train_gold[i]) {
        gold_complete = false;
        continue;
      }
      ++scored;
      correct += in.train_labels.argmax(static_cast<Eigen::Index>(i)) == *in.train_gold[i];
    }
    m.train_cov = static_cast<double>(covered) / static_cast<double>(n_train);
    if (gold_complete && scored > 0) m.train_acc = static_cast<double>(correct) / static_cast<double>(scored);
  }

  if (in.test_predicted && !in.test_gold.empty()) {
    if (in.test_predicted->size() != in.test_gold.size()) throw UsageError("compute_metrics: test sizes differ");
    m.test_score = in.test_metric.kind == MetricKind::Accuracy
                       ? accuracy(*in.test_predicted, in.test_gold)
                       : binary_f1(*in.test_predicted, in.test_gold, in.test_metric.positive_class);
  }
  return m;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

json to_json(const Metrics& m) {
  return {{"PLM_acc", opt(m.plm_acc)},
          {"LF_num", m.lf_num},
          {"LF_acc_avg", opt(m.lf_acc_avg)},
          {"LF_cov_avg", opt(m.lf_cov_avg)},
          {"Train_acc", opt(m.train_acc)},
          {"Train_cov", opt(m.train_cov)},
          {"Test_score", opt(m.test_score)},
          {"Test_metric", m.test_metric == MetricKind::Accuracy ? "accuracy" : "f1"}};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  m.plm_acc = opt_from(j, "PLM_acc");
  m.lf_num = j.at("LF_num").get<std::size_t>();
  m.lf_acc_avg = opt_from(j, "LF_acc_avg");
  m.lf_cov_avg = opt_from(j, "LF_cov_avg");
  m.train_acc = opt_from(j, "Train_acc");
  m.train_cov = opt_from(j, "Train_cov");
  m.test_score = opt_from(j, "Test_score");
  m.test_metric = j.value("Test_metric", "accuracy") == "f1" ? MetricKind::BinaryF1 : MetricKind::Accuracy;
  return m;
}

}  // namespace lfloop
