#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lfloop/labelfns.hpp"

namespace lfloop {

struct FilterConfig {
  double accuracy_threshold = 0.6;
  double redundancy_threshold = 0.95;
  bool enable_accuracy = true;
  bool enable_redundancy = true;

  void validate() const;
};

enum class FilterStage { Validity, Accuracy, Redundancy };
std::string_view to_string(FilterStage stage);

struct FilterVerdict {
  LfSpec candidate;
  bool admitted = false;
  FilterStage stage = FilterStage::Validity;  // rejecting stage, or last stage run
  std::string reason;                         // machine-readable code, empty when admitted
  std::string detail;                         // human-readable message
  std::optional<double> measured;             // accuracy or max consensus at `stage`
};

struct GateResult {
  bool pass = false;
  std::optional<double> measured;
  std::string reason;
  std::string detail;
};

/// Passes iff the LfSpec compiles for this dataset.
GateResult validity_filter(const LfSpec& candidate, const Dataset& dataset);

/// Fails iff accuracy over active validation instances is below the threshold
/// (equal passes). Zero validation activity passes with no measurement.
GateResult accuracy_filter(const LabelFunction& candidate, const PreparedSplit& valid,
                           const FilterConfig& config);

/// |both active and equal| / |either active|; 0 when neither is ever active.
double consensus(const std::vector<ClassIndex>& a, const std::vector<ClassIndex>& b);

/// Fails iff max consensus against any admitted column is strictly above the threshold.
GateResult redundancy_filter(const std::vector<ClassIndex>& candidate_train_column,
                             const std::vector<std::vector<ClassIndex>>& admitted_train_columns,
                             const FilterConfig& config);

/// Admitted LF set plus the train-split outputs needed for redundancy checks.
/// The set only grows.
class AdmissionState {
 public:
  AdmissionState(const Dataset& dataset, FilterConfig config);
  AdmissionState(const Dataset& dataset, PreparedSplit train, PreparedSplit valid, FilterConfig config);

  struct Batch {
    std::vector<LabelFunction> admitted;
    std::vector<FilterVerdict> verdicts;
  };

  /// Runs candidates in order through validity -> accuracy -> redundancy.
  /// Each admitted candidate joins the set before the next one is checked.
  Batch admit(const std::vector<LfSpec>& candidates);

  /// Adds an already-vetted LF without filtering (used to seed a state).
  void force_add(const LabelFunction& lf);

  const std::vector<LabelFunction>& lfs() const { return lfs_; }
  const std::vector<std::vector<ClassIndex>>& train_columns() const { return train_columns_; }
  const PreparedSplit& train() const { return train_; }
  const PreparedSplit& valid() const { return valid_; }
  const FilterConfig& config() const { return config_; }

 private:
  const Dataset* dataset_;
  FilterConfig config_;
  PreparedSplit train_;
  PreparedSplit valid_;
  std::vector<LabelFunction> lfs_;
  std::vector<std::vector<ClassIndex>> train_columns_;
};

/// Stateless form: filters `candidates` against `admitted_lfs`.
AdmissionState::Batch admit(const std::vector<LfSpec>& candidates,
                            const std::vector<LabelFunction>& admitted_lfs, const Dataset& dataset,
                            const FilterConfig& config);

}  // namespace lfloop
