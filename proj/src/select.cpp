#include "lfloop/select.hpp"

#include <algorithm>

#include "lfloop/errors.hpp"

namespace lfloop {

SelectionState::SelectionState(std::vector<InstanceId> pool, std::uint64_t seed)
    : pool_(std::move(pool)), seed_(seed) {
  std::sort(pool_.begin(), pool_.end());
  if (std::adjacent_find(pool_.begin(), pool_.end()) != pool_.end())
    throw UsageError("selection pool contains duplicate ids");
}

void SelectionState::take(InstanceId id) {
  auto it = std::lower_bound(pool_.begin(), pool_.end(), id);
  if (it == pool_.end() || *it != id) throw UsageError("instance " + std::to_string(id) + " not in pool");
  pool_.erase(it);
  queried_.push_back(id);
}

InstanceId random_sampler(SelectionState& state, Rng& rng) {
  if (state.empty()) throw PoolExhausted();
  const InstanceId id = state.pool()[rng.below(state.pool().size())];
  state.take(id);
  return id;
}

InstanceId select_max(SelectionState& state, std::span<const InstanceId> candidates,
                      const std::function<double(InstanceId)>& score) {
  if (state.empty() || candidates.empty()) throw PoolExhausted();
  InstanceId best = candidates.front();
  double best_score = score(best);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const InstanceId id = candidates[i];
    const double s = score(id);
    if (s > best_score || (s == best_score && id < best)) {
      best = id;
      best_score = s;
    }
  }
  state.take(best);
  return best;
}

InstanceId uncertainty_sampler(SelectionState& state, const PosteriorFn& posterior) {
  if (state.empty()) throw PoolExhausted();
  const std::vector<InstanceId> pool = state.pool();
  return select_max(state, pool, [&](InstanceId id) { return entropy(posterior(id)); });
}

InstanceId uncertainty_sampler(SelectionState& state, const LinearModel& model, const FeatureMatrix& features,
                               const std::unordered_map<InstanceId, Eigen::Index>& row_of) {
  return uncertainty_sampler(state, [&](InstanceId id) -> Eigen::VectorXd {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw UsageError("no features for instance " + std::to_string(id));
    const FeatureVector row = features.row(it->second);
    return predict_proba(model, row);
  });
}

double expected_utility(std::span<const SeuCandidate> candidates) {
  double z = 0.0, num = 0.0;
  for (const auto& c : candidates) {
    const double p = c.weight * c.accuracy;
    z += p;
    num += p * (c.accuracy * c.new_coverage);
  }
  return z > 0.0 ? num / z : 0.0;
}

SeuModel::SeuModel(const PreparedSplit& train, const PreparedSplit& valid, int num_classes,
                   bool posterior_weighted)
    : num_classes_(num_classes), posterior_weighted_(posterior_weighted) {
  train_ngrams_.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_row_.emplace(train.instance(i).id, i);
    train_ngrams_.push_back(extract_ngrams(train.tokens(i), 1, 3));
    for (const auto& g : train_ngrams_.back()) postings_[g].push_back(static_cast<std::uint32_t>(i));
  }
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const auto gold = valid.gold(i);
    if (!gold) continue;
    for (const auto& g : extract_ngrams(valid.tokens(i), 1, 3)) {
      auto& counts = valid_counts_[g];
      if (counts.empty()) counts.assign(static_cast<std::size_t>(num_classes_), 0);
      ++counts[static_cast<std::size_t>(*gold)];
    }
  }
  covered_.assign(train.size(), false);
  posteriors_ = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(train.size()), num_classes, 1.0 / num_classes);
}

void SeuModel::update(const std::vector<bool>& covered, const ProbLabels& posteriors) {
  if (covered.size() != covered_.size() || posteriors.n() != static_cast<Eigen::Index>(covered_.size()))
    throw UsageError("SeuModel::update: size mismatch with train split");
  covered_ = covered;
  posteriors_ = posteriors.probs;
}

double SeuModel::accuracy_estimate(const std::string& ngram, ClassIndex c) const {
  auto it = valid_counts_.find(ngram);
  if (it == valid_counts_.end()) return 0.5;
  int total = 0;
  for (int v : it->second) total += v;
  return static_cast<double>(it->second[static_cast<std::size_t>(c)]) / total;
}

std::size_t SeuModel::uncovered_matches(const std::string& ngram) const {
  auto it = postings_.find(ngram);
  if (it == postings_.end()) return 0;
  std::size_t n = 0;
  for (auto r : it->second) n += !covered_[r];
  return n;
}

std::vector<SeuCandidate> SeuModel::candidates(InstanceId id) const {
  auto it = train_row_.find(id);
  if (it == train_row_.end()) throw UsageError("SeuModel: instance " + std::to_string(id) + " not in train split");
  const auto row = static_cast<Eigen::Index>(it->second);
  std::vector<SeuCandidate> out;
  const auto& grams = train_ngrams_[it->second];
  if (posterior_weighted_) {
    for (const auto& g : grams) {
      const double ncov = static_cast<double>(uncovered_matches(g));
      for (int c = 0; c < num_classes_; ++c)
        out.push_back({accuracy_estimate(g, c), ncov, posteriors_(row, c)});
    }
  } else {
    const auto c = static_cast<ClassIndex>(argmax_lowest(posteriors_.row(row)));
    for (const auto& g : grams) out.push_back({accuracy_estimate(g, c), static_cast<double>(uncovered_matches(g))});
  }
  return out;
}

InstanceId seu_sampler(SelectionState& state, const SeuModel& model, std::size_t pool_cap, Rng* rng) {
  if (state.empty()) throw PoolExhausted();
  std::vector<InstanceId> scan = state.pool();
  if (pool_cap > 0 && scan.size() > pool_cap) {
    if (!rng) throw UsageError("seu_sampler: pool cap needs an rng");
    rng->shuffle(scan);
    scan.resize(pool_cap);
  }
  return select_max(state, scan, [&](InstanceId id) { return model.utility(id); });
}

}  // namespace lfloop
