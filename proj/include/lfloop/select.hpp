#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lfloop/aggregate.hpp"
#include "lfloop/downstream.hpp"
#include "lfloop/labelfns.hpp"
#include "lfloop/math.hpp"
#include "lfloop/rng.hpp"

namespace lfloop {

/// Unqueried pool (kept sorted by id) and the ordered list of queried ids.
class SelectionState {
 public:
  SelectionState(std::vector<InstanceId> pool, std::uint64_t seed);

  const std::vector<InstanceId>& pool() const { return pool_; }
  const std::vector<InstanceId>& queried() const { return queried_; }
  std::uint64_t seed() const { return seed_; }
  bool empty() const { return pool_.empty(); }

  /// Moves `id` from the pool to the queried list.
  void take(InstanceId id);

 private:
  std::vector<InstanceId> pool_;
  std::vector<InstanceId> queried_;
  std::uint64_t seed_;
};

InstanceId random_sampler(SelectionState& state, Rng& rng);

/// Highest score wins, ties to the lowest id; the winner is taken from the pool.
InstanceId select_max(SelectionState& state, std::span<const InstanceId> candidates,
                      const std::function<double(InstanceId)>& score);

using PosteriorFn = std::function<Eigen::VectorXd(InstanceId)>;

/// Most uncertain pool instance by predictive entropy.
InstanceId uncertainty_sampler(SelectionState& state, const PosteriorFn& posterior);
InstanceId uncertainty_sampler(SelectionState& state, const LinearModel& model, const FeatureMatrix& features,
                               const std::unordered_map<InstanceId, Eigen::Index>& row_of);

/// One candidate LF for a query instance.
struct SeuCandidate {
  double accuracy = 0.5;     // estimated accuracy, in [0, 1]
  double new_coverage = 0;   // uncovered train instances it would label
  double weight = 1.0;       // extra proposal weight (class posterior in weighted mode)
};

/// Sum over candidates of P(lf|x) * utility(lf), with P proportional to
/// weight * accuracy and utility = accuracy * new_coverage.
double expected_utility(std::span<const SeuCandidate> candidates);

/// Candidate-LF model behind the expected-utility sampler: keyword LFs built
/// from each instance's 1-3-grams, accuracy estimated on the validation split,
/// utility measured as new coverage of the train split.
class SeuModel {
 public:
  SeuModel(const PreparedSplit& train, const PreparedSplit& valid, int num_classes,
           bool posterior_weighted = false);

  /// `covered` and `posteriors` are indexed by train row.
  void update(const std::vector<bool>& covered, const ProbLabels& posteriors);

  std::vector<SeuCandidate> candidates(InstanceId id) const;
  double utility(InstanceId id) const { return expected_utility(candidates(id)); }

  /// Validation accuracy of keyword `ngram` for class `c`; 0.5 when inactive.
  double accuracy_estimate(const std::string& ngram, ClassIndex c) const;
  std::size_t uncovered_matches(const std::string& ngram) const;

 private:
  int num_classes_;
  bool posterior_weighted_;
  std::unordered_map<InstanceId, std::size_t> train_row_;
  std::vector<std::vector<std::string>> train_ngrams_;
  std::unordered_map<std::string, std::vector<std::uint32_t>> postings_;  // n-gram -> train rows
  std::unordered_map<std::string, std::vector<int>> valid_counts_;         // n-gram -> per-class counts
  std::vector<bool> covered_;
  Eigen::MatrixXd posteriors_;
};

/// Expected-utility query selection. When `pool_cap` > 0 and the pool is
/// larger, a seeded subsample of that size is scanned.
InstanceId seu_sampler(SelectionState& state, const SeuModel& model, std::size_t pool_cap = 0,
                       Rng* rng = nullptr);

}  // namespace lfloop
