#include "lfloop/lfgate.hpp"

#include <algorithm>
#include <cstdio>

#include "lfloop/errors.hpp"

namespace lfloop {

namespace {
std::string fmt_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
}  // namespace

void FilterConfig::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(accuracy_threshold) || !in01(redundancy_threshold))
    throw ConfigError("filter thresholds must lie in [0, 1]");
}

std::string_view to_string(FilterStage stage) {
  switch (stage) {
    case FilterStage::Validity:
      return "validity";
    case FilterStage::Accuracy:
      return "accuracy";
    case FilterStage::Redundancy:
      return "redundancy";
  }
  return "?";
}

GateResult validity_filter(const LfSpec& candidate, const Dataset& dataset) {
  try {
    compile_lf(candidate, dataset);
    return {true, std::nullopt, {}, {}};
  } catch (const LfCompileError& e) {
    return {false, std::nullopt, e.reason(), e.what()};
  }
}

GateResult accuracy_filter(const LabelFunction& candidate, const PreparedSplit& valid,
                           const FilterConfig& config) {
  const LfStats s = lf_stats(candidate, valid);
  if (!s.accuracy) return {true, std::nullopt, {}, "inactive on validation split"};
  if (*s.accuracy < config.accuracy_threshold)
    return {false, s.accuracy, "accuracy_below_threshold",
            "validation accuracy " + fmt_fraction(*s.accuracy) + " < " +
                fmt_fraction(config.accuracy_threshold)};
  return {true, s.accuracy, {}, {}};
}

double consensus(const std::vector<ClassIndex>& a, const std::vector<ClassIndex>& b) {
  if (a.size() != b.size()) throw UsageError("consensus: column length mismatch");
  std::size_t agree = 0, either = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool aa = a[i] != kAbstain, bb = b[i] != kAbstain;
    if (aa || bb) ++either;
    if (aa && bb && a[i] == b[i]) ++agree;
  }
  return either ? static_cast<double>(agree) / static_cast<double>(either) : 0.0;
}

GateResult redundancy_filter(const std::vector<ClassIndex>& candidate,
                             const std::vector<std::vector<ClassIndex>>& admitted,
                             const FilterConfig& config) {
  double best = 0.0;
  for (const auto& col : admitted) best = std::max(best, consensus(candidate, col));
  if (best > config.redundancy_threshold)
    return {false, best, "redundant",
            "consensus " + fmt_fraction(best) + " > " + fmt_fraction(config.redundancy_threshold)};
  return {true, best, {}, {}};
}

AdmissionState::AdmissionState(const Dataset& dataset, FilterConfig config)
    : AdmissionState(dataset, PreparedSplit(dataset.train), PreparedSplit(dataset.valid), config) {}

AdmissionState::AdmissionState(const Dataset& dataset, PreparedSplit train, PreparedSplit valid,
                               FilterConfig config)
    : dataset_(&dataset), config_(config), train_(std::move(train)), valid_(std::move(valid)) {
  config_.validate();
}

void AdmissionState::force_add(const LabelFunction& lf) {
  lfs_.push_back(lf);
  train_columns_.push_back(apply_column(lf, train_));
}

AdmissionState::Batch AdmissionState::admit(const std::vector<LfSpec>& candidates) {
  Batch batch;
  for (const auto& spec : candidates) {
    FilterVerdict v;
    v.candidate = spec;

    std::optional<LabelFunction> lf;
    try {
      lf = compile_lf(spec, *dataset_);
    } catch (const LfCompileError& e) {
      v.stage = FilterStage::Validity;
      v.reason = e.reason();
      v.detail = e.what();
      batch.verdicts.push_back(std::move(v));
      continue;
    }

    v.stage = FilterStage::Validity;
    if (config_.enable_accuracy) {
      v.stage = FilterStage::Accuracy;
      const auto r = accuracy_filter(*lf, valid_, config_);
      v.measured = r.measured;
      if (!r.pass) {
        v.reason = r.reason;
        v.detail = r.detail;
        batch.verdicts.push_back(std::move(v));
        continue;
      }
    }

    auto column = apply_column(*lf, train_);
    if (config_.enable_redundancy) {
      v.stage = FilterStage::Redundancy;
      const auto r = redundancy_filter(column, train_columns_, config_);
      v.measured = r.measured;
      if (!r.pass) {
        v.reason = r.reason;
        v.detail = r.detail;
        batch.verdicts.push_back(std::move(v));
        continue;
      }
    }

    v.admitted = true;
    lfs_.push_back(*lf);
    train_columns_.push_back(std::move(column));
    batch.admitted.push_back(std::move(*lf));
    batch.verdicts.push_back(std::move(v));
  }
  return batch;
}

AdmissionState::Batch admit(const std::vector<LfSpec>& candidates,
                            const std::vector<LabelFunction>& admitted_lfs, const Dataset& dataset,
                            const FilterConfig& config) {
  AdmissionState state(dataset, config);
  for (const auto& lf : admitted_lfs) state.force_add(lf);
  return state.admit(candidates);
}

}  // namespace lfloop
