#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lfloop/labelfns.hpp"

namespace lfloop {

/// Per-instance class distributions from a label model. Uncovered rows (no
/// vote at all) carry the uniform distribution as a placeholder.
struct ProbLabels {
  Eigen::MatrixXd probs;  // n x C
  std::vector<bool> covered;

  Eigen::Index n() const { return probs.rows(); }
  int num_classes() const { return static_cast<int>(probs.cols()); }
  std::size_t n_covered() const;
  /// Row argmax, ties to the lowest class index.
  ClassIndex argmax(Eigen::Index row) const;
};

/// Index of the largest entry, ties to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::DenseBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

enum class LabelModelVariant { MajorityVote, WeightedVote, DawidSkeneEM };

struct LabelModelConfig {
  LabelModelVariant variant = LabelModelVariant::DawidSkeneEM;
  int em_max_iters = 100;
  double em_tol = 1e-6;
  double smoothing = 1.0;
  // Treat ABSTAIN as an observed outcome of each LF's confusion row. When
  // false, the likelihood only sees actual votes.
  bool abstain_as_outcome = true;
  // Extra EM runs from seeded random posteriors, kept only when they reach a
  // strictly higher objective.
  int em_restarts = 4;

  void validate() const;
};

ProbLabels majority_vote(const LabelMatrix& votes, int num_classes);

/// Accuracy-weighted vote: LF j votes with ln(a_j (C-1) / (1 - a_j)), a_j
/// clipped into [0.05, 0.95]; softmax over the classes that received a vote.
ProbLabels weighted_vote(const LabelMatrix& votes, int num_classes, std::span<const double> accuracies);

struct DawidSkeneFit {
  ProbLabels labels;
  /// Per LF: C x C matrix of P(vote = l | true class = c, LF votes).
  std::vector<Eigen::MatrixXd> confusions;
  /// Per LF: C x K outcome table, K = C + 1 (last column abstain) when abstain
  /// is modelled, otherwise K = C.
  std::vector<Eigen::MatrixXd> outcome_tables;
  Eigen::VectorXd prior;
  /// Penalized log-likelihood of each parameter iterate of the returned run, in order. Equals the
  /// plain observed-data log-likelihood when smoothing is 0.
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

/// Dawid-Skene EM over covered rows, initialized from majority vote (plus
/// config.em_restarts seeded restarts). Classes of the returned fit are
/// aligned with the majority vote.
DawidSkeneFit dawid_skene_em(const LabelMatrix& votes, int num_classes, const LabelModelConfig& config);

/// Penalized log-likelihood of (prior, outcome_tables) on the covered rows of
/// `votes`. Exposed for oracle tests.
double dawid_skene_objective(const LabelMatrix& votes, int num_classes, const Eigen::VectorXd& prior,
                             const std::vector<Eigen::MatrixXd>& outcome_tables, double smoothing,
                             bool abstain_as_outcome);

/// Dispatches on config.variant. `accuracies` is only read by WeightedVote.
ProbLabels fit_label_model(const LabelMatrix& votes, int num_classes, const LabelModelConfig& config,
                           std::span<const double> accuracies = {});

/// Covered rows -> argmax; uncovered rows -> default class, or dropped when
/// there is none. `ids` gives the instance id of each row.
std::vector<std::pair<InstanceId, ClassIndex>> resolve_training_labels(
    const ProbLabels& labels, const std::vector<InstanceId>& ids, std::optional<ClassIndex> default_class);
std::vector<std::pair<InstanceId, ClassIndex>> resolve_training_labels(const ProbLabels& labels,
                                                                       const Dataset& dataset);

}  // namespace lfloop
